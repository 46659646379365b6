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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <unordered_set>
#include <utility>
#include <vector>

#include "graphcap/array.hpp"
#include "graphcap/linalg.hpp"

namespace graphcap {

namespace detail {
inline bool& grad_mode_flag() {
  static bool enabled = true;
  return enabled;
}
inline bool grad_mode_enabled() { return grad_mode_flag(); }
}  // namespace detail

// Disables graph construction for its lifetime; ops then produce plain
// values with no parents or closures regardless of input flags.
class NoGradScope {
 public:
  NoGradScope() : prev_(detail::grad_mode_flag()) {
    detail::grad_mode_flag() = false;
  }
  ~NoGradScope() { detail::grad_mode_flag() = prev_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  bool prev_;
};

// Reverse-mode autodiff over dense arrays. A Variable is a handle to a node
// in a dynamically built acyclic graph; ops record a gradient closure that
// routes the upstream gradient to the op inputs. A graph instance belongs to
// one thread; leaf values may be shared read-only across threads.
template <typename S>
class Variable {
 public:
  using GradFn =
      std::function<void(const Array<S>& grad_out, std::vector<Variable>&)>;

  Variable() = default;

  static Variable leaf(Array<S> v, bool requires_grad) {
    return leaf(std::make_shared<Array<S>>(std::move(v)), requires_grad);
  }

  static Variable leaf(std::shared_ptr<Array<S>> v, bool requires_grad) {
    Variable out;
    out.n_ = std::make_shared<Node>();
    out.n_->value = std::move(v);
    out.n_->requires_grad = requires_grad;
    return out;
  }

  static Variable constant(Array<S> v) { return leaf(std::move(v), false); }

  // Result of an op. Parents and the gradient closure are dropped when no
  // input needs gradients (or a NoGradScope is active), so inference builds
  // no graph.
  static Variable from_op(Array<S> out, std::vector<Variable> parents,
                          GradFn fn) {
    bool needs = false;
    if (detail::grad_mode_enabled())
      for (const auto& p : parents) needs |= p.requires_grad();
    Variable v;
    v.n_ = std::make_shared<Node>();
    v.n_->value = std::make_shared<Array<S>>(std::move(out));
    v.n_->requires_grad = needs;
    if (needs) {
      v.n_->parents = std::move(parents);
      v.n_->backward = std::move(fn);
    }
    return v;
  }

  bool defined() const { return n_ != nullptr; }
  const Array<S>& value() const { return *n_->value; }
  Array<S>& value_mut() { return *n_->value; }
  const std::shared_ptr<Array<S>>& value_ptr() const { return n_->value; }
  bool requires_grad() const { return n_->requires_grad; }
  bool has_grad() const { return n_->grad.numel() > 0; }
  void clear_grad() { n_->grad = Array<S>(); }

  const Array<S>& grad() const {
    if (!has_grad()) throw std::runtime_error("variable: gradient not set");
    return n_->grad;
  }

  void accumulate_grad(Array<S>&& g) {
    if (!n_->requires_grad) return;
    if (g.numel() != n_->value->numel())
      throw std::runtime_error("variable: gradient shape mismatch");
    if (!has_grad()) {
      n_->grad = std::move(g);
    } else {
      S* dst = n_->grad.data();
      const S* src = g.data();
      for (std::size_t i = 0; i < g.numel(); ++i) dst[i] += src[i];
    }
  }

  // Backpropagate from a scalar root. `seed` is the gradient of the overall
  // objective with respect to this value (1 for a plain loss).
  void backward(S seed = S(1)) {
    if (value().numel() != 1)
      throw std::runtime_error("backward: root must be scalar");
    std::vector<Node*> order;
    topo_order(order);
    Array<S> root_seed(Shape{1});
    root_seed[0] = seed;
    accumulate_grad(std::move(root_seed));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node* node = *it;
      if (node->backward && node->grad.numel() > 0)
        node->backward(node->grad, node->parents);
    }
  }

 private:
  struct Node {
    std::shared_ptr<Array<S>> value;
    Array<S> grad;
    std::vector<Variable> parents;
    GradFn backward;
    bool requires_grad = false;
  };

  void topo_order(std::vector<Node*>& order) {
    std::unordered_set<Node*> seen;
    // Iterative post-order DFS; the graph is acyclic by construction.
    std::vector<std::pair<Node*, std::size_t>> stack;
    if (n_->requires_grad) stack.emplace_back(n_.get(), 0);
    seen.insert(n_.get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        Node* p = node->parents[next++].n_.get();
        if (p->requires_grad && seen.insert(p).second)
          stack.emplace_back(p, 0);
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
  }

  std::shared_ptr<Node> n_;
};

namespace detail {

template <typename S>
void check_same_shape(const Array<S>& a, const Array<S>& b, const char* op) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
}

template <typename S>
void check_rank2(const Array<S>& a, const char* op) {
  if (a.rank() != 2)
    throw std::invalid_argument(std::string(op) + ": expected 2-D array, got " +
                                shape_str(a.shape()));
}

}  // namespace detail

template <typename S>
Variable<S> add(const Variable<S>& a, const Variable<S>& b) {
  detail::check_same_shape(a.value(), b.value(), "add");
  Array<S> out = a.value();
  const S* bp = b.value().data();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bp[i];
  return Variable<S>::from_op(
      std::move(out), {a, b},
      [](const Array<S>& g, std::vector<Variable<S>>& ps) {
        ps[0].accumulate_grad(Array<S>(g));
        ps[1].accumulate_grad(Array<S>(g));
      });
}

template <typename S>
Variable<S> sub(const Variable<S>& a, const Variable<S>& b) {
  detail::check_same_shape(a.value(), b.value(), "sub");
  Array<S> out = a.value();
  const S* bp = b.value().data();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= bp[i];
  return Variable<S>::from_op(
      std::move(out), {a, b},
      [](const Array<S>& g, std::vector<Variable<S>>& ps) {
        ps[0].accumulate_grad(Array<S>(g));
        Array<S> gb = g;
        for (std::size_t i = 0; i < gb.numel(); ++i) gb[i] = -gb[i];
        ps[1].accumulate_grad(std::move(gb));
      });
}

template <typename S>
Variable<S> mul(const Variable<S>& a, const Variable<S>& b) {
  detail::check_same_shape(a.value(), b.value(), "mul");
  Array<S> out = a.value();
  const S* bp = b.value().data();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= bp[i];
  return Variable<S>::from_op(
      std::move(out), {a, b},
      [](const Array<S>& g, std::vector<Variable<S>>& ps) {
        const Array<S>& av = ps[0].value();
        const Array<S>& bv = ps[1].value();
        Array<S> ga(g.shape()), gb(g.shape());
        for (std::size_t i = 0; i < g.numel(); ++i) {
          ga[i] = g[i] * bv[i];
          gb[i] = g[i] * av[i];
        }
        ps[0].accumulate_grad(std::move(ga));
        ps[1].accumulate_grad(std::move(gb));
      });
}

template <typename S>
Variable<S> scale(const Variable<S>& a, S c) {
  Array<S> out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= c;
  return Variable<S>::from_op(
      std::move(out), {a},
      [c](const Array<S>& g, std::vector<Variable<S>>& ps) {
        Array<S> ga = g;
        for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] *= c;
        ps[0].accumulate_grad(std::move(ga));
      });
}

// y[r, :] = a[r, :] + b  for a row vector b of length cols(a).
template <typename S>
Variable<S> add_bias_row(const Variable<S>& a, const Variable<S>& b) {
  detail::check_rank2(a.value(), "add_bias_row");
  const std::size_t n = a.value().rows(), m = a.value().cols();
  if (b.value().numel() != m)
    throw std::invalid_argument("add_bias_row: bias length mismatch");
  Array<S> out = a.value();
  const S* bp = b.value().data();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < m; ++c) out[r * m + c] += bp[c];
  return Variable<S>::from_op(
      std::move(out), {a, b},
      [n, m](const Array<S>& g, std::vector<Variable<S>>& ps) {
        ps[0].accumulate_grad(Array<S>(g));
        Array<S> gb(ps[1].value().shape());
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t c = 0; c < m; ++c) gb[c] += g[r * m + c];
        ps[1].accumulate_grad(std::move(gb));
      });
}

template <typename S>
Variable<S> matmul(const Variable<S>& a, const Variable<S>& b) {
  detail::check_rank2(a.value(), "matmul");
  detail::check_rank2(b.value(), "matmul");
  const std::size_t n = a.value().rows(), k = a.value().cols(),
                    m = b.value().cols();
  if (b.value().rows() != k)
    throw std::invalid_argument("matmul: inner extents differ, " +
                                shape_str(a.value().shape()) + " vs " +
                                shape_str(b.value().shape()));
  Array<S> out(n, m);
  detail::gemm_nn(out.data(), a.value().data(), b.value().data(), n, k, m);
  return Variable<S>::from_op(
      std::move(out), {a, b},
      [n, k, m](const Array<S>& g, std::vector<Variable<S>>& ps) {
        if (ps[0].requires_grad()) {
          Array<S> ga(n, k);
          detail::gemm_nt(ga.data(), g.data(), ps[1].value().data(), n, m, k);
          ps[0].accumulate_grad(std::move(ga));
        }
        if (ps[1].requires_grad()) {
          Array<S> gb(k, m);
          detail::gemm_tn(gb.data(), ps[0].value().data(), g.data(), k, n, m);
          ps[1].accumulate_grad(std::move(gb));
        }
      });
}

template <typename S>
Variable<S> reshape(const Variable<S>& a, Shape shape) {
  if (shape_numel(shape) != a.value().numel())
    throw std::invalid_argument("reshape: element count mismatch, " +
                                shape_str(a.value().shape()) + " vs " +
                                shape_str(shape));
  Array<S> out(shape, a.value().vec());
  return Variable<S>::from_op(
      std::move(out), {a},
      [](const Array<S>& g, std::vector<Variable<S>>& ps) {
        ps[0].accumulate_grad(Array<S>(ps[0].value().shape(), g.vec()));
      });
}

template <typename S>
Variable<S> transpose(const Variable<S>& a) {
  detail::check_rank2(a.value(), "transpose");
  const std::size_t n = a.value().rows(), m = a.value().cols();
  Array<S> out(m, n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < m; ++c) out[c * n + r] = a.value()[r * m + c];
  return Variable<S>::from_op(
      std::move(out), {a},
      [n, m](const Array<S>& g, std::vector<Variable<S>>& ps) {
        Array<S> ga(n, m);
        for (std::size_t c = 0; c < m; ++c)
          for (std::size_t r = 0; r < n; ++r) ga[r * m + c] = g[c * n + r];
        ps[0].accumulate_grad(std::move(ga));
      });
}

// out[i, j] = s[i, 0] + t[j, 0] for column vectors s, t of equal length.
template <typename S>
Variable<S> outer_sum(const Variable<S>& s, const Variable<S>& t) {
  detail::check_rank2(s.value(), "outer_sum");
  detail::check_rank2(t.value(), "outer_sum");
  if (s.value().cols() != 1 || t.value().cols() != 1 ||
      s.value().rows() != t.value().rows())
    throw std::invalid_argument("outer_sum: expected equal-length columns");
  const std::size_t n = s.value().rows();
  Array<S> out(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      out[i * n + j] = s.value()[i] + t.value()[j];
  return Variable<S>::from_op(
      std::move(out), {s, t},
      [n](const Array<S>& g, std::vector<Variable<S>>& ps) {
        Array<S> gs(n, 1), gt(n, 1);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            gs[i] += g[i * n + j];
            gt[j] += g[i * n + j];
          }
        ps[0].accumulate_grad(std::move(gs));
        ps[1].accumulate_grad(std::move(gt));
      });
}

// Elementwise y = x for x >= 0, slope * x otherwise. The subgradient at the
// kink is `slope`. Rejects non-finite input and slope outside (0, 1).
template <typename S>
Variable<S> leaky_relu(const Variable<S>& a, S slope) {
  if (!(slope > S(0) && slope < S(1)))
    throw std::invalid_argument("leaky_relu: slope must be in (0,1)");
  a.value().require_finite("leaky_relu input");
  Array<S> out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i)
    if (out[i] < S(0)) out[i] *= slope;
  return Variable<S>::from_op(
      std::move(out), {a},
      [slope](const Array<S>& g, std::vector<Variable<S>>& ps) {
        const Array<S>& x = ps[0].value();
        Array<S> ga = g;
        for (std::size_t i = 0; i < ga.numel(); ++i)
          if (x[i] <= S(0)) ga[i] *= slope;
        ps[0].accumulate_grad(std::move(ga));
      });
}

// tanh-approximation GELU; smooth everywhere, which keeps finite-difference
// checks clean.
template <typename S>
Variable<S> gelu(const Variable<S>& a) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  Array<S> out(a.value().shape());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    const double x = static_cast<double>(a.value()[i]);
    out[i] = static_cast<S>(0.5 * x * (1.0 + std::tanh(kC * (x + kA * x * x * x))));
  }
  return Variable<S>::from_op(
      std::move(out), {a},
      [](const Array<S>& g, std::vector<Variable<S>>& ps) {
        const Array<S>& xv = ps[0].value();
        Array<S> ga(g.shape());
        for (std::size_t i = 0; i < ga.numel(); ++i) {
          const double x = static_cast<double>(xv[i]);
          const double th = std::tanh(kC * (x + kA * x * x * x));
          const double d = 0.5 * (1.0 + th) +
                           0.5 * x * (1.0 - th * th) * kC * (1.0 + 3.0 * kA * x * x);
          ga[i] = static_cast<S>(static_cast<double>(g[i]) * d);
        }
        ps[0].accumulate_grad(std::move(ga));
      });
}

// Row-wise softmax with per-row max subtraction.
template <typename S>
Variable<S> softmax_rows(const Variable<S>& a) {
  detail::check_rank2(a.value(), "softmax_rows");
  a.value().require_finite("softmax_rows input");
  const std::size_t n = a.value().rows(), m = a.value().cols();
  Array<S> out(n, m);
  for (std::size_t r = 0; r < n; ++r) {
    const S* x = a.value().data() + r * m;
    S* y = out.data() + r * m;
    S mx = x[0];
    for (std::size_t c = 1; c < m; ++c) mx = std::max(mx, x[c]);
    S sum = S(0);
    for (std::size_t c = 0; c < m; ++c) {
      y[c] = std::exp(x[c] - mx);
      sum += y[c];
    }
    for (std::size_t c = 0; c < m; ++c) y[c] /= sum;
  }
  auto out_ptr = std::make_shared<Array<S>>(out);
  return Variable<S>::from_op(
      std::move(out), {a},
      [n, m, out_ptr](const Array<S>& g, std::vector<Variable<S>>& ps) {
        Array<S> ga(n, m);
        for (std::size_t r = 0; r < n; ++r) {
          const S* y = out_ptr->data() + r * m;
          const S* gr = g.data() + r * m;
          S dot = S(0);
          for (std::size_t c = 0; c < m; ++c) dot += gr[c] * y[c];
          S* d = ga.data() + r * m;
          for (std::size_t c = 0; c < m; ++c) d[c] = y[c] * (gr[c] - dot);
        }
        ps[0].accumulate_grad(std::move(ga));
      });
}

// Per-row top-k mask: the k_used = min(k, cols) largest entries of each row
// are kept verbatim, everything else becomes 0. Ties keep the lower column
// index. Survivors are not renormalized. Gradients flow through kept entries
// only.
template <typename S>
Variable<S> topk_rows(const Variable<S>& a, std::size_t k) {
  detail::check_rank2(a.value(), "topk_rows");
  if (k < 1) throw std::invalid_argument("topk_rows: k must be >= 1");
  const std::size_t n = a.value().rows(), m = a.value().cols();
  const std::size_t k_used = std::min(k, m);
  Array<S> out(n, m);
  auto kept = std::make_shared<std::vector<std::uint32_t>>();
  kept->reserve(n * k_used);
  std::vector<std::uint32_t> idx(m);
  for (std::size_t r = 0; r < n; ++r) {
    const S* x = a.value().data() + r * m;
    for (std::size_t c = 0; c < m; ++c) idx[c] = static_cast<std::uint32_t>(c);
    std::partial_sort(idx.begin(), idx.begin() + k_used, idx.end(),
                      [x](std::uint32_t i, std::uint32_t j) {
                        return x[i] != x[j] ? x[i] > x[j] : i < j;
                      });
    for (std::size_t i = 0; i < k_used; ++i) {
      out[r * m + idx[i]] = x[idx[i]];
      kept->push_back(static_cast<std::uint32_t>(r * m + idx[i]));
    }
  }
  return Variable<S>::from_op(
      std::move(out), {a},
      [n, m, kept](const Array<S>& g, std::vector<Variable<S>>& ps) {
        Array<S> ga(n, m);
        for (std::uint32_t pos : *kept) ga[pos] = g[pos];
        ps[0].accumulate_grad(std::move(ga));
      });
}

template <typename S>
Variable<S> slice_cols(const Variable<S>& a, std::size_t start,
                       std::size_t len) {
  detail::check_rank2(a.value(), "slice_cols");
  const std::size_t n = a.value().rows(), m = a.value().cols();
  if (start + len > m)
    throw std::invalid_argument("slice_cols: range out of bounds");
  Array<S> out(n, len);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < len; ++c)
      out[r * len + c] = a.value()[r * m + start + c];
  return Variable<S>::from_op(
      std::move(out), {a},
      [n, m, start, len](const Array<S>& g, std::vector<Variable<S>>& ps) {
        Array<S> ga(n, m);
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t c = 0; c < len; ++c)
            ga[r * m + start + c] = g[r * len + c];
        ps[0].accumulate_grad(std::move(ga));
      });
}

template <typename S>
Variable<S> concat_cols(const std::vector<Variable<S>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const std::size_t n = parts[0].value().rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::check_rank2(p.value(), "concat_cols");
    if (p.value().rows() != n)
      throw std::invalid_argument("concat_cols: row extents differ");
    total += p.value().cols();
  }
  Array<S> out(n, total);
  std::size_t off = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    const std::size_t w = p.value().cols();
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < w; ++c)
        out[r * total + off + c] = p.value()[r * w + c];
    widths.push_back(w);
    off += w;
  }
  return Variable<S>::from_op(
      std::move(out), parts,
      [n, total, widths](const Array<S>& g, std::vector<Variable<S>>& ps) {
        std::size_t off = 0;
        for (std::size_t i = 0; i < ps.size(); ++i) {
          const std::size_t w = widths[i];
          Array<S> gp(n, w);
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < w; ++c)
              gp[r * w + c] = g[r * total + off + c];
          ps[i].accumulate_grad(std::move(gp));
          off += w;
        }
      });
}

// Row gather from a (V x D) table; backward scatter-adds into the table.
template <typename S>
Variable<S> gather_rows(const Variable<S>& table,
                        const std::vector<std::int32_t>& ids) {
  detail::check_rank2(table.value(), "gather_rows");
  const std::size_t v = table.value().rows(), d = table.value().cols();
  if (ids.empty()) throw std::invalid_argument("gather_rows: empty id list");
  for (std::int32_t id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= v)
      throw std::out_of_range("gather_rows: token index " +
                              std::to_string(id) + " outside vocabulary of " +
                              std::to_string(v));
  Array<S> out(ids.size(), d);
  for (std::size_t r = 0; r < ids.size(); ++r)
    for (std::size_t c = 0; c < d; ++c)
      out[r * d + c] = table.value()[static_cast<std::size_t>(ids[r]) * d + c];
  auto ids_copy = std::make_shared<std::vector<std::int32_t>>(ids);
  return Variable<S>::from_op(
      std::move(out), {table},
      [v, d, ids_copy](const Array<S>& g, std::vector<Variable<S>>& ps) {
        Array<S> gt(v, d);
        for (std::size_t r = 0; r < ids_copy->size(); ++r) {
          const std::size_t row = static_cast<std::size_t>((*ids_copy)[r]);
          for (std::size_t c = 0; c < d; ++c) gt[row * d + c] += g[r * d + c];
        }
        ps[0].accumulate_grad(std::move(gt));
      });
}

// Row-wise layer normalization with learnable gain/shift of length cols.
template <typename S>
Variable<S> layer_norm_rows(const Variable<S>& x, const Variable<S>& gamma,
                            const Variable<S>& beta, S eps = S(1e-5)) {
  detail::check_rank2(x.value(), "layer_norm_rows");
  const std::size_t n = x.value().rows(), d = x.value().cols();
  if (gamma.value().numel() != d || beta.value().numel() != d)
    throw std::invalid_argument("layer_norm_rows: gain/shift length mismatch");
  Array<S> out(n, d);
  auto xhat = std::make_shared<Array<S>>(n, d);
  auto inv_std = std::make_shared<std::vector<S>>(n);
  for (std::size_t r = 0; r < n; ++r) {
    const S* xr = x.value().data() + r * d;
    S mean = S(0);
    for (std::size_t c = 0; c < d; ++c) mean += xr[c];
    mean /= static_cast<S>(d);
    S var = S(0);
    for (std::size_t c = 0; c < d; ++c) var += (xr[c] - mean) * (xr[c] - mean);
    var /= static_cast<S>(d);
    const S is = S(1) / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < d; ++c) {
      const S xh = (xr[c] - mean) * is;
      (*xhat)[r * d + c] = xh;
      out[r * d + c] = gamma.value()[c] * xh + beta.value()[c];
    }
  }
  return Variable<S>::from_op(
      std::move(out), {x, gamma, beta},
      [n, d, xhat, inv_std](const Array<S>& g, std::vector<Variable<S>>& ps) {
        Array<S> gx(n, d);
        Array<S> ggamma(ps[1].value().shape());
        Array<S> gbeta(ps[2].value().shape());
        const Array<S>& gamma_v = ps[1].value();
        for (std::size_t r = 0; r < n; ++r) {
          const S* gr = g.data() + r * d;
          const S* xh = xhat->data() + r * d;
          S sum_gh = S(0), sum_ghx = S(0);
          for (std::size_t c = 0; c < d; ++c) {
            const S gh = gr[c] * gamma_v[c];
            sum_gh += gh;
            sum_ghx += gh * xh[c];
            ggamma[c] += gr[c] * xh[c];
            gbeta[c] += gr[c];
          }
          const S inv_d = S(1) / static_cast<S>(d);
          for (std::size_t c = 0; c < d; ++c) {
            const S gh = gr[c] * gamma_v[c];
            gx[r * d + c] = (*inv_std)[r] *
                            (gh - sum_gh * inv_d - xh[c] * sum_ghx * inv_d);
          }
        }
        ps[0].accumulate_grad(std::move(gx));
        ps[1].accumulate_grad(std::move(ggamma));
        ps[2].accumulate_grad(std::move(gbeta));
      });
}

template <typename S>
Variable<S> sum_all(const Variable<S>& a) {
  Array<S> out(Shape{1});
  S acc = S(0);
  for (std::size_t i = 0; i < a.value().numel(); ++i) acc += a.value()[i];
  out[0] = acc;
  return Variable<S>::from_op(
      std::move(out), {a},
      [](const Array<S>& g, std::vector<Variable<S>>& ps) {
        ps[0].accumulate_grad(Array<S>::full(ps[0].value().shape(), g[0]));
      });
}

// Label-smoothed cross entropy, averaged over unmasked rows. The smoothed
// target puts 1 - epsilon on the target class and epsilon / (V - 1) on each
// other class. An empty mask counts every row.
template <typename S>
Variable<S> cross_entropy_label_smoothed(
    const Variable<S>& logits, const std::vector<std::int32_t>& targets,
    S epsilon, const std::vector<std::uint8_t>& mask = {}) {
  detail::check_rank2(logits.value(), "cross_entropy");
  const std::size_t n = logits.value().rows(), v = logits.value().cols();
  if (targets.size() != n)
    throw std::invalid_argument("cross_entropy: target count mismatch");
  if (!mask.empty() && mask.size() != n)
    throw std::invalid_argument("cross_entropy: mask length mismatch");
  if (!(epsilon >= S(0) && epsilon < S(1)))
    throw std::invalid_argument("cross_entropy: epsilon must be in [0,1)");
  if (v < 2 && epsilon > S(0))
    throw std::invalid_argument("cross_entropy: smoothing needs V >= 2");
  std::size_t counted = 0;
  for (std::size_t r = 0; r < n; ++r) {
    if (!mask.empty() && !mask[r]) continue;
    ++counted;
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= v)
      throw std::out_of_range("cross_entropy: target index " +
                              std::to_string(targets[r]) +
                              " outside vocabulary of " + std::to_string(v));
  }
  if (counted == 0)
    throw std::invalid_argument("cross_entropy: no unmasked positions");

  auto probs = std::make_shared<Array<S>>(n, v);
  const S off_mass = v > 1 ? epsilon / static_cast<S>(v - 1) : S(0);
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    if (!mask.empty() && !mask[r]) continue;
    const S* x = logits.value().data() + r * v;
    S mx = x[0];
    for (std::size_t c = 1; c < v; ++c) mx = std::max(mx, x[c]);
    double sum = 0.0;
    for (std::size_t c = 0; c < v; ++c)
      sum += std::exp(static_cast<double>(x[c] - mx));
    const double lse = static_cast<double>(mx) + std::log(sum);
    double row_loss = 0.0;
    for (std::size_t c = 0; c < v; ++c) {
      const double logp = static_cast<double>(x[c]) - lse;
      (*probs)[r * v + c] = static_cast<S>(std::exp(logp));
      const double q = (c == static_cast<std::size_t>(targets[r]))
                           ? static_cast<double>(S(1) - epsilon)
                           : static_cast<double>(off_mass);
      row_loss -= q * logp;
    }
    total += row_loss;
  }
  Array<S> out(Shape{1});
  out[0] = static_cast<S>(total / static_cast<double>(counted));

  auto targets_copy = std::make_shared<std::vector<std::int32_t>>(targets);
  auto mask_copy = std::make_shared<std::vector<std::uint8_t>>(mask);
  return Variable<S>::from_op(
      std::move(out), {logits},
      [n, v, counted, epsilon, off_mass, probs, targets_copy,
       mask_copy](const Array<S>& g, std::vector<Variable<S>>& ps) {
        Array<S> gl(n, v);
        const S scale = g[0] / static_cast<S>(counted);
        for (std::size_t r = 0; r < n; ++r) {
          if (!mask_copy->empty() && !(*mask_copy)[r]) continue;
          const std::size_t t = static_cast<std::size_t>((*targets_copy)[r]);
          for (std::size_t c = 0; c < v; ++c) {
            const S q = (c == t) ? S(1) - epsilon : off_mass;
            gl[r * v + c] = ((*probs)[r * v + c] - q) * scale;
          }
        }
        ps[0].accumulate_grad(std::move(gl));
      });
}

}  // namespace graphcap
