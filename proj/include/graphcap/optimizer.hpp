// Copyright 2026 The Graphcap Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "graphcap/autodiff.hpp"
#include "graphcap/random.hpp"

namespace graphcap {

// Named trainable parameters in insertion order. Order is the iteration and
// update order, which keeps optimizer arithmetic deterministic.
template <typename S>
class ParameterStore {
 public:
  Variable<S>& add(const std::string& name, Array<S> init) {
    return add(name, Variable<S>::leaf(std::move(init), true));
  }

  // Registers an existing leaf so external handles keep seeing updates.
  Variable<S>& add(const std::string& name, Variable<S> param) {
    if (index_.count(name))
      throw std::invalid_argument("parameter store: duplicate name " + name);
    if (!param.requires_grad())
      throw std::invalid_argument("parameter store: " + name +
                                  " does not require gradients");
    index_[name] = entries_.size();
    entries_.emplace_back(name, std::move(param));
    return entries_.back().second;
  }

  Variable<S>& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end())
      throw std::out_of_range("parameter store: unknown parameter " + name);
    return entries_[it->second].second;
  }

  const Variable<S>& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end())
      throw std::out_of_range("parameter store: unknown parameter " + name);
    return entries_[it->second].second;
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  std::size_t size() const { return entries_.size(); }

  std::vector<std::pair<std::string, Variable<S>>>& entries() { return entries_; }
  const std::vector<std::pair<std::string, Variable<S>>>& entries() const {
    return entries_;
  }

  std::size_t numel() const {
    std::size_t n = 0;
    for (const auto& [name, v] : entries_) n += v.value().numel();
    return n;
  }

  void clear_grads() {
    for (auto& [name, v] : entries_) v.clear_grad();
  }

 private:
  std::vector<std::pair<std::string, Variable<S>>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

template <typename S>
struct AdamState {
  S lr = S(1e-4);
  S beta1 = S(0.9);
  S beta2 = S(0.999);
  S epsilon = S(1e-8);
  std::size_t step_count = 0;
  std::vector<Array<S>> first_moment;
  std::vector<Array<S>> second_moment;
};

// One Adam update with bias correction over every parameter in store order.
// Consumes and clears the accumulated gradients.
template <typename S>
void adam_step(ParameterStore<S>& params, AdamState<S>& state) {
  auto& entries = params.entries();
  if (state.first_moment.empty()) {
    state.first_moment.reserve(entries.size());
    state.second_moment.reserve(entries.size());
    for (auto& [name, v] : entries) {
      state.first_moment.emplace_back(v.value().shape());
      state.second_moment.emplace_back(v.value().shape());
    }
  }
  if (state.first_moment.size() != entries.size())
    throw std::runtime_error("adam_step: state does not match parameter store");
  for (auto& [name, v] : entries)
    if (!v.has_grad())
      throw std::runtime_error("adam_step: missing gradient for " + name);

  state.step_count += 1;
  const S bc1 = S(1) - static_cast<S>(std::pow(static_cast<double>(state.beta1),
                                               static_cast<double>(state.step_count)));
  const S bc2 = S(1) - static_cast<S>(std::pow(static_cast<double>(state.beta2),
                                               static_cast<double>(state.step_count)));
  for (std::size_t p = 0; p < entries.size(); ++p) {
    Variable<S>& v = entries[p].second;
    const Array<S>& g = v.grad();
    Array<S>& m = state.first_moment[p];
    Array<S>& r = state.second_moment[p];
    Array<S>& theta = v.value_mut();
    for (std::size_t i = 0; i < theta.numel(); ++i) {
      m[i] = state.beta1 * m[i] + (S(1) - state.beta1) * g[i];
      r[i] = state.beta2 * r[i] + (S(1) - state.beta2) * g[i] * g[i];
      const S m_hat = m[i] / bc1;
      const S r_hat = r[i] / bc2;
      theta[i] -= state.lr * m_hat / (std::sqrt(r_hat) + state.epsilon);
    }
    v.clear_grad();
  }
}

// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
template <typename S>
Array<S> xavier_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out,
                        Rng& rng) {
  Array<S> out(std::move(shape));
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (std::size_t i = 0; i < out.numel(); ++i)
    out[i] = static_cast<S>(rng.uniform(-a, a));
  return out;
}

// Uniform(-a, a) with a = sqrt(12 / ((1 + slope^2) * fan_in)): keeps the
// activation scale steady through a LeakyReLU layer, where Xavier's
// fan-average bound shrinks it a little at every block.
template <typename S>
Array<S> he_uniform(Shape shape, std::size_t fan_in, double negative_slope,
                    Rng& rng) {
  Array<S> out(std::move(shape));
  const double a = std::sqrt(
      12.0 / ((1.0 + negative_slope * negative_slope) *
              static_cast<double>(fan_in)));
  for (std::size_t i = 0; i < out.numel(); ++i)
    out[i] = static_cast<S>(rng.uniform(-a, a));
  return out;
}

}  // namespace graphcap
