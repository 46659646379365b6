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
#include <limits>
#include <stdexcept>

#include "graphcap/autodiff.hpp"

namespace graphcap {

// Directed graph attention over the audio feature nodes. Every ordered node
// pair (i, j), self-pairs included, gets a relation score
//   e_ij = LeakyReLU(w_theta . [W_phi x_i ; W_phi x_j]),
// the scores are row-softmaxed, each row keeps only its top-k weights (no
// renormalization afterwards), and nodes are aggregated through the surviving
// edges with a residual path:
//   X_hat = A_hat X W_phi^T + X.
// The score matrix is asymmetric in general, so the graph is directed.

template <typename S>
struct GraphAttentionWeights {
  Variable<S> w_phi;      // D x D projection used in scoring
  Variable<S> w_theta;    // 1 x 2D pair-scoring map
  Variable<S> w_phi_agg;  // optional separate D x D projection for aggregation;
                          // leave undefined to reuse w_phi in both roles
};

template <typename S>
struct AdjacencyGraph {
  Variable<S> values;  // T x T, each row has exactly k_used nonzeros
  std::size_t k_used = 0;
};

template <typename S>
struct GraphAttentionResult {
  Variable<S> relation;   // E, T x T, pre-softmax
  Variable<S> attention;  // row-softmaxed scores
  AdjacencyGraph<S> adjacency;
  Variable<S> x_hat;  // T x D aggregated nodes
};

namespace detail {

template <typename S>
void check_graph_shapes(const Variable<S>& x,
                        const GraphAttentionWeights<S>& w) {
  check_rank2(x.value(), "graph_attention");
  const std::size_t d = x.value().cols();
  if (w.w_phi.value().rank() != 2 || w.w_phi.value().rows() != d ||
      w.w_phi.value().cols() != d)
    throw std::invalid_argument(
        "graph_attention: projection must be D x D with D matching the nodes, "
        "got " +
        shape_str(w.w_phi.value().shape()));
  if (w.w_theta.value().rank() != 2 || w.w_theta.value().rows() != 1 ||
      w.w_theta.value().cols() != 2 * d)
    throw std::invalid_argument(
        "graph_attention: pair-scoring map must be 1 x 2D, got " +
        shape_str(w.w_theta.value().shape()));
  if (w.w_phi_agg.defined() &&
      (w.w_phi_agg.value().rank() != 2 || w.w_phi_agg.value().rows() != d ||
       w.w_phi_agg.value().cols() != d))
    throw std::invalid_argument(
        "graph_attention: aggregation projection must be D x D, got " +
        shape_str(w.w_phi_agg.value().shape()));
}

}  // namespace detail

// Full T x T relation score matrix E. The pairwise concatenation reduces to
// an outer sum: with U = X W_phi^T and w_theta = [w_a ; w_b],
// e_ij = LeakyReLU(w_a . u_i + w_b . u_j).
template <typename S>
Variable<S> relation_coefficients(const Variable<S>& x,
                                  const GraphAttentionWeights<S>& w,
                                  S leaky_slope) {
  detail::check_graph_shapes(x, w);
  const std::size_t d = x.value().cols();
  Variable<S> u = matmul(x, transpose(w.w_phi));
  Variable<S> s = matmul(u, transpose(slice_cols(w.w_theta, 0, d)));
  Variable<S> t = matmul(u, transpose(slice_cols(w.w_theta, d, d)));
  return leaky_relu(outer_sum(s, t), leaky_slope);
}

// Keeps the k largest weights of each attention row verbatim and zeroes the
// rest; survivors are not renormalized, so masked rows sum to at most 1.
// Requires softmax-normalized input rows.
template <typename S>
AdjacencyGraph<S> topk_mask(const Variable<S>& attention_rows, std::size_t k) {
  detail::check_rank2(attention_rows.value(), "topk_mask");
  if (attention_rows.value().rows() != attention_rows.value().cols())
    throw std::invalid_argument("topk_mask: attention matrix must be square");
  if (k < 1) throw std::invalid_argument("topk_mask: k must be >= 1");
  const std::size_t t = attention_rows.value().rows();
  // Row sums accumulate one rounding error per entry, so the normalization
  // guard scales with the element type's precision (~1e-9 in double for the
  // sizes here, proportionally looser in float).
  const double tol = std::max(
      1e-9, 8.0 * static_cast<double>(t) *
                static_cast<double>(std::numeric_limits<S>::epsilon()));
  for (std::size_t r = 0; r < t; ++r) {
    S sum = S(0);
    for (std::size_t c = 0; c < t; ++c) sum += attention_rows.value().at2(r, c);
    if (std::fabs(static_cast<double>(sum) - 1.0) > tol)
      throw std::invalid_argument(
          "topk_mask: input row " + std::to_string(r) +
          " is not softmax-normalized (sum " + std::to_string(sum) + ")");
  }
  AdjacencyGraph<S> out;
  out.k_used = std::min(k, t);
  out.values = topk_rows(attention_rows, k);
  return out;
}

// Same selection rule without the normalization precondition, for inspecting
// how the kept-edge pattern responds to raw weight perturbations.
template <typename S>
AdjacencyGraph<S> topk_mask_unchecked_rows(const Array<S>& rows,
                                           std::size_t k) {
  detail::check_rank2(rows, "topk_mask");
  if (rows.rows() != rows.cols())
    throw std::invalid_argument("topk_mask: attention matrix must be square");
  if (k < 1) throw std::invalid_argument("topk_mask: k must be >= 1");
  AdjacencyGraph<S> out;
  out.k_used = std::min(k, rows.rows());
  out.values = topk_rows(Variable<S>::constant(rows), k);
  return out;
}

// X_hat = A_hat X P^T + X where P is the aggregation projection.
template <typename S>
Variable<S> aggregate(const AdjacencyGraph<S>& adj, const Variable<S>& x,
                      const Variable<S>& projection) {
  detail::check_rank2(x.value(), "aggregate");
  if (adj.values.value().rows() != x.value().rows())
    throw std::invalid_argument(
        "aggregate: adjacency and node counts differ, " +
        shape_str(adj.values.value().shape()) + " vs " +
        shape_str(x.value().shape()));
  return add(matmul(adj.values, matmul(x, transpose(projection))), x);
}

template <typename S>
GraphAttentionResult<S> graph_attention_forward(
    const Variable<S>& x, const GraphAttentionWeights<S>& w, S leaky_slope,
    std::size_t k) {
  detail::check_graph_shapes(x, w);
  if (k < 1)
    throw std::invalid_argument("graph_attention: k must be >= 1");
  GraphAttentionResult<S> out;
  out.relation = relation_coefficients(x, w, leaky_slope);
  out.attention = softmax_rows(out.relation);
  out.adjacency = topk_mask(out.attention, k);
  const Variable<S>& projection = w.w_phi_agg.defined() ? w.w_phi_agg : w.w_phi;
  out.x_hat = aggregate(out.adjacency, x, projection);
  return out;
}

}  // namespace graphcap
