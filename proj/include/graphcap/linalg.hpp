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

#include <Eigen/Core>
#include <cstddef>

namespace graphcap::detail {

template <typename S>
using EMat =
    Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using EMap = Eigen::Map<EMat<S>>;
template <typename S>
using ECMap = Eigen::Map<const EMat<S>>;

// C = A(m x k) * B(k x n), row-major raw buffers.
template <typename S>
void gemm_nn(S* c, const S* a, const S* b, std::size_t m, std::size_t k,
             std::size_t n) {
  EMap<S>(c, m, n).noalias() = ECMap<S>(a, m, k) * ECMap<S>(b, k, n);
}

// C = A(m x k) * B(n x k)^T
template <typename S>
void gemm_nt(S* c, const S* a, const S* b, std::size_t m, std::size_t k,
             std::size_t n) {
  EMap<S>(c, m, n).noalias() =
      ECMap<S>(a, m, k) * ECMap<S>(b, n, k).transpose();
}

// C = A(k x m)^T * B(k x n)
template <typename S>
void gemm_tn(S* c, const S* a, const S* b, std::size_t m, std::size_t k,
             std::size_t n) {
  EMap<S>(c, m, n).noalias() =
      ECMap<S>(a, k, m).transpose() * ECMap<S>(b, k, n);
}

}  // namespace graphcap::detail
