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
#include <functional>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "graphcap/autodiff.hpp"
#include "graphcap/optimizer.hpp"

namespace graphcap {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Central-difference check of d loss / d theta for every coordinate of every
// parameter. The loss function must rebuild its graph from the current
// parameter values on each call and be deterministic; determinism is probed
// by a repeated evaluation. 64-bit only: 32-bit differences drown in rounding
// noise at useful step sizes.
template <typename S>
GradCheckReport finite_difference_check(
    const std::function<Variable<S>()>& loss_fn, ParameterStore<S>& params,
    S h = S(1e-5)) {
  static_assert(std::is_same_v<S, double>,
                "finite_difference_check requires 64-bit precision");
  if (!(h > S(0))) throw std::invalid_argument("gradcheck: h must be positive");

  auto eval = [&]() -> S {
    Variable<S> loss = loss_fn();
    if (loss.value().numel() != 1)
      throw std::invalid_argument("gradcheck: loss must be scalar");
    return loss.value()[0];
  };

  const S probe1 = eval();
  const S probe2 = eval();
  if (probe1 != probe2)
    throw std::runtime_error(
        "gradcheck: loss function is not deterministic (repeated evaluation "
        "differs)");

  params.clear_grads();
  Variable<S> loss = loss_fn();
  if (loss.value().numel() != 1)
    throw std::invalid_argument("gradcheck: loss must be scalar");
  loss.backward();
  std::vector<Array<S>> analytic;
  analytic.reserve(params.size());
  for (auto& [name, v] : params.entries()) {
    if (!v.has_grad())
      throw std::runtime_error("gradcheck: parameter " + name +
                               " received no gradient");
    analytic.push_back(v.grad());
  }
  params.clear_grads();

  GradCheckReport report;
  auto& entries = params.entries();
  for (std::size_t p = 0; p < entries.size(); ++p) {
    Array<S>& theta = entries[p].second.value_mut();
    for (std::size_t i = 0; i < theta.numel(); ++i) {
      const S saved = theta[i];
      theta[i] = saved + h;
      const S up = eval();
      theta[i] = saved - h;
      const S down = eval();
      theta[i] = saved;
      const S numeric = (up - down) / (S(2) * h);
      const S a = analytic[p][i];
      const S denom = std::max({std::fabs(a), std::fabs(numeric), S(1e-8)});
      const S rel = std::fabs(a - numeric) / denom;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = entries[p].first;
        report.worst_index = i;
        report.analytic = a;
        report.numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace graphcap
