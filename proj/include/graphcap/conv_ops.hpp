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

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "graphcap/autodiff.hpp"

namespace graphcap {

// Feature maps are rank-3 arrays shaped {channels, bands, time}; convolutions
// run along the time axis only, zero-padded to keep the time extent ("same"
// padding, odd kernel widths).

namespace detail {

template <typename S>
void check_rank3(const Array<S>& a, const char* op) {
  if (a.rank() != 3)
    throw std::invalid_argument(std::string(op) +
                                ": expected {channels, bands, time} array, got " +
                                shape_str(a.shape()));
}

// Gathers the time-window neighborhood of every (band, t) column into a
// {c_in * kw, time} matrix for one band.
template <typename S>
void im2col_band(const Array<S>& x, std::size_t f, std::size_t kw, S* col) {
  const std::size_t c_in = x.extent(0), bands = x.extent(1), t_len = x.extent(2);
  const std::size_t pad = kw / 2;
  for (std::size_t ci = 0; ci < c_in; ++ci)
    for (std::size_t k = 0; k < kw; ++k) {
      S* row = col + (ci * kw + k) * t_len;
      const S* src = x.data() + (ci * bands + f) * t_len;
      for (std::size_t t = 0; t < t_len; ++t) {
        const std::ptrdiff_t tau =
            static_cast<std::ptrdiff_t>(t + k) - static_cast<std::ptrdiff_t>(pad);
        row[t] = (tau >= 0 && tau < static_cast<std::ptrdiff_t>(t_len))
                     ? src[tau]
                     : S(0);
      }
    }
}

// Scatter-add transpose of im2col_band.
template <typename S>
void col2im_band(const S* col, std::size_t f, std::size_t kw, Array<S>& gx) {
  const std::size_t c_in = gx.extent(0), bands = gx.extent(1),
                    t_len = gx.extent(2);
  const std::size_t pad = kw / 2;
  for (std::size_t ci = 0; ci < c_in; ++ci)
    for (std::size_t k = 0; k < kw; ++k) {
      const S* row = col + (ci * kw + k) * t_len;
      S* dst = gx.data() + (ci * bands + f) * t_len;
      for (std::size_t t = 0; t < t_len; ++t) {
        const std::ptrdiff_t tau =
            static_cast<std::ptrdiff_t>(t + k) - static_cast<std::ptrdiff_t>(pad);
        if (tau >= 0 && tau < static_cast<std::ptrdiff_t>(t_len))
          dst[tau] += row[t];
      }
    }
}

}  // namespace detail

// Time convolution with weights shared across bands. x: {c_in, bands, time},
// w: {c_out, c_in * kw}, b: {c_out}; kw odd. Output {c_out, bands, time}.
template <typename S>
Variable<S> conv_time(const Variable<S>& x, const Variable<S>& w,
                      const Variable<S>& b, std::size_t kw) {
  detail::check_rank3(x.value(), "conv_time");
  const std::size_t c_in = x.value().extent(0), bands = x.value().extent(1),
                    t_len = x.value().extent(2);
  if (kw % 2 == 0 || kw == 0)
    throw std::invalid_argument("conv_time: kernel width must be odd");
  if (w.value().rank() != 2 || w.value().cols() != c_in * kw)
    throw std::invalid_argument("conv_time: weight shape mismatch, got " +
                                shape_str(w.value().shape()));
  const std::size_t c_out = w.value().rows();
  if (b.value().numel() != c_out)
    throw std::invalid_argument("conv_time: bias length mismatch");

  Array<S> out(Shape{c_out, bands, t_len});
  std::vector<S> col(c_in * kw * t_len);
  std::vector<S> y(c_out * t_len);
  for (std::size_t f = 0; f < bands; ++f) {
    detail::im2col_band(x.value(), f, kw, col.data());
    detail::gemm_nn(y.data(), w.value().data(), col.data(), c_out, c_in * kw,
                    t_len);
    for (std::size_t co = 0; co < c_out; ++co) {
      S* dst = out.data() + (co * bands + f) * t_len;
      const S* src = y.data() + co * t_len;
      const S bias = b.value()[co];
      for (std::size_t t = 0; t < t_len; ++t) dst[t] = src[t] + bias;
    }
  }
  return Variable<S>::from_op(
      std::move(out), {x, w, b},
      [c_in, bands, t_len, c_out, kw](const Array<S>& g,
                                      std::vector<Variable<S>>& ps) {
        Array<S> gx(Shape{c_in, bands, t_len});
        Array<S> gw(c_out, c_in * kw);
        Array<S> gb(ps[2].value().shape());
        std::vector<S> col(c_in * kw * t_len);
        std::vector<S> gf(c_out * t_len);
        std::vector<S> gwf(c_out * c_in * kw);
        std::vector<S> gcol(c_in * kw * t_len);
        for (std::size_t f = 0; f < bands; ++f) {
          for (std::size_t co = 0; co < c_out; ++co) {
            const S* src = g.data() + (co * bands + f) * t_len;
            S* dst = gf.data() + co * t_len;
            S acc = S(0);
            for (std::size_t t = 0; t < t_len; ++t) {
              dst[t] = src[t];
              acc += src[t];
            }
            gb[co] += acc;
          }
          detail::im2col_band(ps[0].value(), f, kw, col.data());
          detail::gemm_nt(gwf.data(), gf.data(), col.data(), c_out, t_len,
                          c_in * kw);
          for (std::size_t i = 0; i < gwf.size(); ++i) gw[i] += gwf[i];
          detail::gemm_tn(gcol.data(), ps[1].value().data(), gf.data(),
                          c_in * kw, c_out, t_len);
          detail::col2im_band(gcol.data(), f, kw, gx);
        }
        ps[0].accumulate_grad(std::move(gx));
        ps[1].accumulate_grad(std::move(gw));
        ps[2].accumulate_grad(std::move(gb));
      });
}

// Time convolution with a separate kernel per band (no weight sharing across
// bands). w: {bands, c_out, c_in * kw}, b: {bands, c_out}.
template <typename S>
Variable<S> conv_time_per_band(const Variable<S>& x, const Variable<S>& w,
                               const Variable<S>& b, std::size_t kw) {
  detail::check_rank3(x.value(), "conv_time_per_band");
  const std::size_t c_in = x.value().extent(0), bands = x.value().extent(1),
                    t_len = x.value().extent(2);
  if (kw % 2 == 0 || kw == 0)
    throw std::invalid_argument("conv_time_per_band: kernel width must be odd");
  if (w.value().rank() != 3 || w.value().extent(0) != bands ||
      w.value().extent(2) != c_in * kw)
    throw std::invalid_argument(
        "conv_time_per_band: weight shape mismatch, got " +
        shape_str(w.value().shape()));
  const std::size_t c_out = w.value().extent(1);
  if (b.value().rank() != 2 || b.value().rows() != bands ||
      b.value().cols() != c_out)
    throw std::invalid_argument("conv_time_per_band: bias shape mismatch");

  Array<S> out(Shape{c_out, bands, t_len});
  std::vector<S> col(c_in * kw * t_len);
  std::vector<S> y(c_out * t_len);
  for (std::size_t f = 0; f < bands; ++f) {
    detail::im2col_band(x.value(), f, kw, col.data());
    const S* wf = w.value().data() + f * c_out * c_in * kw;
    detail::gemm_nn(y.data(), wf, col.data(), c_out, c_in * kw, t_len);
    for (std::size_t co = 0; co < c_out; ++co) {
      S* dst = out.data() + (co * bands + f) * t_len;
      const S* src = y.data() + co * t_len;
      const S bias = b.value()[f * c_out + co];
      for (std::size_t t = 0; t < t_len; ++t) dst[t] = src[t] + bias;
    }
  }
  return Variable<S>::from_op(
      std::move(out), {x, w, b},
      [c_in, bands, t_len, c_out, kw](const Array<S>& g,
                                      std::vector<Variable<S>>& ps) {
        Array<S> gx(Shape{c_in, bands, t_len});
        Array<S> gw(ps[1].value().shape());
        Array<S> gb(ps[2].value().shape());
        std::vector<S> col(c_in * kw * t_len);
        std::vector<S> gf(c_out * t_len);
        std::vector<S> gcol(c_in * kw * t_len);
        for (std::size_t f = 0; f < bands; ++f) {
          for (std::size_t co = 0; co < c_out; ++co) {
            const S* src = g.data() + (co * bands + f) * t_len;
            S* dst = gf.data() + co * t_len;
            S acc = S(0);
            for (std::size_t t = 0; t < t_len; ++t) {
              dst[t] = src[t];
              acc += src[t];
            }
            gb[f * c_out + co] += acc;
          }
          detail::im2col_band(ps[0].value(), f, kw, col.data());
          detail::gemm_nt(gw.data() + f * c_out * c_in * kw, gf.data(),
                          col.data(), c_out, t_len, c_in * kw);
          const S* wf = ps[1].value().data() + f * c_out * c_in * kw;
          detail::gemm_tn(gcol.data(), wf, gf.data(), c_in * kw, c_out, t_len);
          detail::col2im_band(gcol.data(), f, kw, gx);
        }
        ps[0].accumulate_grad(std::move(gx));
        ps[1].accumulate_grad(std::move(gw));
        ps[2].accumulate_grad(std::move(gb));
      });
}

// 1x1 convolution (pure channel mixing): equivalent to conv_time with kw=1
// but computed as a single GEMM over the flattened {bands * time} axis.
// x: {c_in, bands, time}, w: {c_out, c_in}, b: {c_out}.
template <typename S>
Variable<S> conv_pointwise(const Variable<S>& x, const Variable<S>& w,
                           const Variable<S>& b) {
  detail::check_rank3(x.value(), "conv_pointwise");
  const std::size_t c_in = x.value().extent(0), bands = x.value().extent(1),
                    t_len = x.value().extent(2);
  if (w.value().rank() != 2 || w.value().cols() != c_in)
    throw std::invalid_argument("conv_pointwise: weight shape mismatch, got " +
                                shape_str(w.value().shape()));
  const std::size_t c_out = w.value().rows();
  if (b.value().numel() != c_out)
    throw std::invalid_argument("conv_pointwise: bias length mismatch");
  const std::size_t cols = bands * t_len;

  Array<S> out(Shape{c_out, bands, t_len});
  detail::gemm_nn(out.data(), w.value().data(), x.value().data(), c_out, c_in,
                  cols);
  for (std::size_t co = 0; co < c_out; ++co) {
    S* row = out.data() + co * cols;
    const S bias = b.value()[co];
    for (std::size_t i = 0; i < cols; ++i) row[i] += bias;
  }
  return Variable<S>::from_op(
      std::move(out), {x, w, b},
      [c_in, bands, t_len, c_out, cols](const Array<S>& g,
                                        std::vector<Variable<S>>& ps) {
        Array<S> gx(Shape{c_in, bands, t_len});
        Array<S> gw(c_out, c_in);
        Array<S> gb(ps[2].value().shape());
        detail::gemm_tn(gx.data(), ps[1].value().data(), g.data(), c_in, c_out,
                        cols);
        detail::gemm_nt(gw.data(), g.data(), ps[0].value().data(), c_out, cols,
                        c_in);
        for (std::size_t co = 0; co < c_out; ++co) {
          const S* row = g.data() + co * cols;
          S acc = S(0);
          for (std::size_t i = 0; i < cols; ++i) acc += row[i];
          gb[co] = acc;
        }
        ps[0].accumulate_grad(std::move(gx));
        ps[1].accumulate_grad(std::move(gw));
        ps[2].accumulate_grad(std::move(gb));
      });
}

// Average pooling along time. A trailing partial window is averaged over the
// frames it actually covers, so the output time extent is ceil(time / factor).
template <typename S>
Variable<S> avg_pool_time(const Variable<S>& x, std::size_t factor) {
  detail::check_rank3(x.value(), "avg_pool_time");
  if (factor < 1) throw std::invalid_argument("avg_pool_time: factor must be >= 1");
  const std::size_t c = x.value().extent(0), bands = x.value().extent(1),
                    t_len = x.value().extent(2);
  const std::size_t t_out = (t_len + factor - 1) / factor;
  Array<S> out(Shape{c, bands, t_out});
  for (std::size_t cf = 0; cf < c * bands; ++cf) {
    const S* src = x.value().data() + cf * t_len;
    S* dst = out.data() + cf * t_out;
    for (std::size_t o = 0; o < t_out; ++o) {
      const std::size_t lo = o * factor;
      const std::size_t hi = std::min(lo + factor, t_len);
      S acc = S(0);
      for (std::size_t t = lo; t < hi; ++t) acc += src[t];
      dst[o] = acc / static_cast<S>(hi - lo);
    }
  }
  return Variable<S>::from_op(
      std::move(out), {x},
      [c, bands, t_len, t_out, factor](const Array<S>& g,
                                       std::vector<Variable<S>>& ps) {
        Array<S> gx(Shape{c, bands, t_len});
        for (std::size_t cf = 0; cf < c * bands; ++cf) {
          const S* gsrc = g.data() + cf * t_out;
          S* dst = gx.data() + cf * t_len;
          for (std::size_t o = 0; o < t_out; ++o) {
            const std::size_t lo = o * factor;
            const std::size_t hi = std::min(lo + factor, t_len);
            const S share = gsrc[o] / static_cast<S>(hi - lo);
            for (std::size_t t = lo; t < hi; ++t) dst[t] = share;
          }
        }
        ps[0].accumulate_grad(std::move(gx));
      });
}

// Learnable per-channel scale and shift, the normalization-free stand-in for
// batch norm.
template <typename S>
Variable<S> channel_affine(const Variable<S>& x, const Variable<S>& gamma,
                           const Variable<S>& beta) {
  detail::check_rank3(x.value(), "channel_affine");
  const std::size_t c = x.value().extent(0), bands = x.value().extent(1),
                    t_len = x.value().extent(2);
  if (gamma.value().numel() != c || beta.value().numel() != c)
    throw std::invalid_argument("channel_affine: parameter length mismatch");
  Array<S> out(x.value().shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    const S gm = gamma.value()[ch], bt = beta.value()[ch];
    const S* src = x.value().data() + ch * bands * t_len;
    S* dst = out.data() + ch * bands * t_len;
    for (std::size_t i = 0; i < bands * t_len; ++i) dst[i] = gm * src[i] + bt;
  }
  return Variable<S>::from_op(
      std::move(out), {x, gamma, beta},
      [c, bands, t_len](const Array<S>& g, std::vector<Variable<S>>& ps) {
        Array<S> gx(ps[0].value().shape());
        Array<S> ggamma(ps[1].value().shape());
        Array<S> gbeta(ps[2].value().shape());
        const Array<S>& xv = ps[0].value();
        for (std::size_t ch = 0; ch < c; ++ch) {
          const S gm = ps[1].value()[ch];
          const std::size_t base = ch * bands * t_len;
          S acc_g = S(0), acc_gx = S(0);
          for (std::size_t i = 0; i < bands * t_len; ++i) {
            const S gi = g[base + i];
            gx[base + i] = gi * gm;
            acc_g += gi;
            acc_gx += gi * xv[base + i];
          }
          ggamma[ch] = acc_gx;
          gbeta[ch] = acc_g;
        }
        ps[0].accumulate_grad(std::move(gx));
        ps[1].accumulate_grad(std::move(ggamma));
        ps[2].accumulate_grad(std::move(gbeta));
      });
}

// Mean over the band axis: {c, bands, time} -> {c, time}.
template <typename S>
Variable<S> band_mean(const Variable<S>& x) {
  detail::check_rank3(x.value(), "band_mean");
  const std::size_t c = x.value().extent(0), bands = x.value().extent(1),
                    t_len = x.value().extent(2);
  Array<S> out(c, t_len);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t f = 0; f < bands; ++f) {
      const S* src = x.value().data() + (ch * bands + f) * t_len;
      S* dst = out.data() + ch * t_len;
      for (std::size_t t = 0; t < t_len; ++t) dst[t] += src[t];
    }
  const S inv = S(1) / static_cast<S>(bands);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= inv;
  return Variable<S>::from_op(
      std::move(out), {x},
      [c, bands, t_len, inv](const Array<S>& g, std::vector<Variable<S>>& ps) {
        Array<S> gx(ps[0].value().shape());
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t f = 0; f < bands; ++f) {
            S* dst = gx.data() + (ch * bands + f) * t_len;
            const S* src = g.data() + ch * t_len;
            for (std::size_t t = 0; t < t_len; ++t) dst[t] = src[t] * inv;
          }
        ps[0].accumulate_grad(std::move(gx));
      });
}

}  // namespace graphcap
