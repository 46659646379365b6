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
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace graphcap {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ")";
  return os.str();
}

// Dense array of real values in row-major order. Zero extents are rejected:
// every axis must be positive.
template <typename S>
class Array {
 public:
  Array() = default;

  explicit Array(Shape shape) : shape_(std::move(shape)) {
    validate_shape();
    data_.assign(shape_numel(shape_), S(0));
  }

  Array(Shape shape, std::vector<S> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape();
    if (data_.size() != shape_numel(shape_))
      throw std::invalid_argument("array: data size " +
                                  std::to_string(data_.size()) +
                                  " does not match shape " + shape_str(shape_));
  }

  Array(std::size_t rows, std::size_t cols) : Array(Shape{rows, cols}) {}

  static Array full(Shape shape, S value) {
    Array a(std::move(shape));
    a.data_.assign(a.data_.size(), value);
    return a;
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }

  std::size_t rows() const { return shape_.at(0); }
  std::size_t cols() const { return shape_.at(1); }

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }
  std::vector<S>& vec() { return data_; }
  const std::vector<S>& vec() const { return data_; }

  S& operator[](std::size_t i) { return data_[i]; }
  S operator[](std::size_t i) const { return data_[i]; }

  S& at2(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  S at2(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  bool same_shape(const Array& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (S v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  void require_finite(const char* what) const {
    if (!all_finite())
      throw std::runtime_error(std::string(what) + ": non-finite value");
  }

  void fill(S v) { data_.assign(data_.size(), v); }

  template <typename T>
  Array<T> cast() const {
    std::vector<T> out(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i)
      out[i] = static_cast<T>(data_[i]);
    return Array<T>(shape_, std::move(out));
  }

 private:
  void validate_shape() const {
    if (shape_.empty()) throw std::invalid_argument("array: empty shape");
    for (std::size_t e : shape_)
      if (e == 0)
        throw std::invalid_argument("array: zero extent in shape " +
                                    shape_str(shape_));
  }

  Shape shape_;
  std::vector<S> data_;
};

}  // namespace graphcap
