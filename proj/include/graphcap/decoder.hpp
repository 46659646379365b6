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

// Autoregressive transformer decoder over an encoded audio sequence, plus
// beam-search decoding.  Pre-norm layers: masked self-attention, cross
// attention over the audio memory, then a GELU feed-forward block.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "graphcap/array.hpp"
#include "graphcap/autodiff.hpp"
#include "graphcap/optimizer.hpp"
#include "graphcap/random.hpp"

namespace graphcap {

struct DecoderConfig {
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t model_dim = 128;
  std::size_t ff_dim = 512;
  std::size_t vocab_size = 0;  // must be set by the caller
  std::size_t max_tokens = 22;  // generated tokens per caption, <sos> excluded
  bool memory_pos_encoding = true;

  void validate() const {
    if (n_layers < 1) throw std::invalid_argument("decoder: n_layers < 1");
    if (n_heads < 1) throw std::invalid_argument("decoder: n_heads < 1");
    if (model_dim % n_heads != 0)
      throw std::invalid_argument(
          "decoder: model_dim " + std::to_string(model_dim) +
          " not divisible by n_heads " + std::to_string(n_heads));
    if (ff_dim < 1) throw std::invalid_argument("decoder: ff_dim < 1");
    if (vocab_size < 2)
      throw std::invalid_argument("decoder: vocab_size must be >= 2");
    if (max_tokens < 1)
      throw std::invalid_argument("decoder: max_tokens must be >= 1");
  }
};

// Interleaved sine/cosine position table: even columns sin, odd columns cos,
// wavelengths geometric in 10000^(2i/d).
template <typename S>
Array<S> positional_encoding(std::size_t n, std::size_t d) {
  if (n == 0 || d == 0)
    throw std::invalid_argument("positional_encoding: zero extent");
  Array<S> pe(n, d);
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t i = 0; i < d; ++i) {
      const double exponent = double(2 * (i / 2)) / double(d);
      const double angle = double(p) / std::pow(10000.0, exponent);
      pe.at2(p, i) = static_cast<S>(i % 2 == 0 ? std::sin(angle)
                                               : std::cos(angle));
    }
  return pe;
}

// Additive mask with 0 on and below the diagonal; blocked entries get a
// constant whose exp underflows to exactly zero, so future positions
// contribute nothing at all to the attention average.
template <typename S>
Array<S> causal_mask(std::size_t n) {
  Array<S> mask(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) mask.at2(i, j) = S(-1e30);
  return mask;
}

template <typename S>
struct AttentionParams {
  Variable<S> wq, bq, wk, bk, wv, bv, wo, bo;
};

template <typename S>
struct DecoderLayerParams {
  AttentionParams<S> self_attn;
  AttentionParams<S> cross_attn;
  Variable<S> ln1_g, ln1_b, ln2_g, ln2_b, ln3_g, ln3_b;
  Variable<S> ff1_w, ff1_b, ff2_w, ff2_b;
};

template <typename S>
struct DecoderParams {
  Variable<S> embedding;  // {vocab_size, model_dim}
  std::vector<DecoderLayerParams<S>> layers;
  Variable<S> final_g, final_b;
  Variable<S> out_w, out_b;  // {vocab_size, model_dim}, {vocab_size}

  static DecoderParams init(const DecoderConfig& cfg, Rng& rng, S gain = S(1)) {
    cfg.validate();
    const std::size_t d = cfg.model_dim;
    auto weight = [&](Shape shape, std::size_t fi, std::size_t fo) {
      Array<S> w = xavier_uniform<S>(std::move(shape), fi, fo, rng);
      for (std::size_t i = 0; i < w.numel(); ++i) w[i] *= gain;
      return Variable<S>::leaf(std::move(w), true);
    };
    auto zeros = [&](std::size_t len) {
      return Variable<S>::leaf(Array<S>(Shape{len}), true);
    };
    auto ones = [&](std::size_t len) {
      return Variable<S>::leaf(Array<S>::full(Shape{len}, S(1)), true);
    };
    auto attention = [&]() {
      AttentionParams<S> a;
      a.wq = weight(Shape{d, d}, d, d);
      a.wk = weight(Shape{d, d}, d, d);
      a.wv = weight(Shape{d, d}, d, d);
      a.wo = weight(Shape{d, d}, d, d);
      a.bq = zeros(d);
      a.bk = zeros(d);
      a.bv = zeros(d);
      a.bo = zeros(d);
      return a;
    };
    DecoderParams p;
    p.embedding = weight(Shape{cfg.vocab_size, d}, d, d);
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      DecoderLayerParams<S> layer;
      layer.self_attn = attention();
      layer.cross_attn = attention();
      layer.ln1_g = ones(d);
      layer.ln1_b = zeros(d);
      layer.ln2_g = ones(d);
      layer.ln2_b = zeros(d);
      layer.ln3_g = ones(d);
      layer.ln3_b = zeros(d);
      layer.ff1_w = weight(Shape{cfg.ff_dim, d}, d, cfg.ff_dim);
      layer.ff1_b = zeros(cfg.ff_dim);
      layer.ff2_w = weight(Shape{d, cfg.ff_dim}, cfg.ff_dim, d);
      layer.ff2_b = zeros(d);
      p.layers.push_back(std::move(layer));
    }
    p.final_g = ones(d);
    p.final_b = zeros(d);
    p.out_w = weight(Shape{cfg.vocab_size, d}, d, cfg.vocab_size);
    p.out_b = zeros(cfg.vocab_size);
    return p;
  }

  void register_in(ParameterStore<S>& store, const std::string& prefix) const {
    auto add_attention = [&](const AttentionParams<S>& a,
                             const std::string& name) {
      store.add(name + ".wq", a.wq);
      store.add(name + ".bq", a.bq);
      store.add(name + ".wk", a.wk);
      store.add(name + ".bk", a.bk);
      store.add(name + ".wv", a.wv);
      store.add(name + ".bv", a.bv);
      store.add(name + ".wo", a.wo);
      store.add(name + ".bo", a.bo);
    };
    store.add(prefix + ".embedding", embedding);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const std::string base = prefix + ".layer" + std::to_string(l);
      add_attention(layers[l].self_attn, base + ".self");
      add_attention(layers[l].cross_attn, base + ".cross");
      store.add(base + ".ln1.g", layers[l].ln1_g);
      store.add(base + ".ln1.b", layers[l].ln1_b);
      store.add(base + ".ln2.g", layers[l].ln2_g);
      store.add(base + ".ln2.b", layers[l].ln2_b);
      store.add(base + ".ln3.g", layers[l].ln3_g);
      store.add(base + ".ln3.b", layers[l].ln3_b);
      store.add(base + ".ff1.w", layers[l].ff1_w);
      store.add(base + ".ff1.b", layers[l].ff1_b);
      store.add(base + ".ff2.w", layers[l].ff2_w);
      store.add(base + ".ff2.b", layers[l].ff2_b);
    }
    store.add(prefix + ".final_ln.g", final_g);
    store.add(prefix + ".final_ln.b", final_b);
    store.add(prefix + ".out.w", out_w);
    store.add(prefix + ".out.b", out_b);
  }
};

template <typename S>
Variable<S> multi_head_attention(
    const Variable<S>& query, const Variable<S>& keys_values,
    const AttentionParams<S>& p, std::size_t n_heads,
    const std::type_identity_t<Array<S>>* additive_mask) {
  const std::size_t d = query.value().cols();
  if (d % n_heads != 0)
    throw std::invalid_argument("attention: width not divisible by heads");
  const std::size_t dh = d / n_heads;
  Variable<S> q = add_bias_row(matmul(query, transpose(p.wq)), p.bq);
  Variable<S> k = add_bias_row(matmul(keys_values, transpose(p.wk)), p.bk);
  Variable<S> v = add_bias_row(matmul(keys_values, transpose(p.wv)), p.bv);
  const S inv_sqrt = S(1) / static_cast<S>(std::sqrt(double(dh)));
  std::vector<Variable<S>> heads;
  heads.reserve(n_heads);
  for (std::size_t h = 0; h < n_heads; ++h) {
    Variable<S> qh = slice_cols(q, h * dh, dh);
    Variable<S> kh = slice_cols(k, h * dh, dh);
    Variable<S> vh = slice_cols(v, h * dh, dh);
    Variable<S> scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
    if (additive_mask)
      scores = add(scores, Variable<S>::constant(*additive_mask));
    heads.push_back(matmul(softmax_rows(scores), vh));
  }
  return add_bias_row(matmul(concat_cols(heads), transpose(p.wo)), p.bo);
}

// Runs the decoder over a token prefix (which must start with the caller's
// start token) against the encoded audio memory; returns one row of vocab
// logits per input position.
template <typename S>
Variable<S> decode_teacher_forced(const Variable<S>& memory,
                                  const std::vector<std::int32_t>& tokens_in,
                                  const DecoderParams<S>& p,
                                  const DecoderConfig& cfg) {
  cfg.validate();
  detail::check_rank2(memory.value(), "decode");
  if (memory.value().cols() != cfg.model_dim)
    throw std::invalid_argument(
        "decode: memory width " + std::to_string(memory.value().cols()) +
        " does not match model_dim " + std::to_string(cfg.model_dim));
  if (tokens_in.empty()) throw std::invalid_argument("decode: empty prefix");
  if (tokens_in.size() > cfg.max_tokens)
    throw std::invalid_argument(
        "decode: prefix of " + std::to_string(tokens_in.size()) +
        " tokens exceeds max_tokens " + std::to_string(cfg.max_tokens));
  const std::size_t n = tokens_in.size();
  const std::size_t d = cfg.model_dim;

  Variable<S> h = scale(gather_rows(p.embedding, tokens_in),
                        static_cast<S>(std::sqrt(double(d))));
  h = add(h, Variable<S>::constant(positional_encoding<S>(n, d)));
  Variable<S> mem = memory;
  if (cfg.memory_pos_encoding)
    mem = add(mem, Variable<S>::constant(
                       positional_encoding<S>(memory.value().rows(), d)));
  const Array<S> mask = causal_mask<S>(n);
  for (const DecoderLayerParams<S>& layer : p.layers) {
    Variable<S> normed = layer_norm_rows(h, layer.ln1_g, layer.ln1_b);
    h = add(h, multi_head_attention(normed, normed, layer.self_attn,
                                    cfg.n_heads, &mask));
    normed = layer_norm_rows(h, layer.ln2_g, layer.ln2_b);
    h = add(h, multi_head_attention(normed, mem, layer.cross_attn, cfg.n_heads,
                                    nullptr));
    normed = layer_norm_rows(h, layer.ln3_g, layer.ln3_b);
    Variable<S> ff = gelu(add_bias_row(matmul(normed, transpose(layer.ff1_w)),
                                       layer.ff1_b));
    h = add(h, add_bias_row(matmul(ff, transpose(layer.ff2_w)), layer.ff2_b));
  }
  h = layer_norm_rows(h, p.final_g, p.final_b);
  return add_bias_row(matmul(h, transpose(p.out_w)), p.out_b);
}

struct Hypothesis {
  std::vector<std::int32_t> tokens;  // starts with the start token
  double log_prob = 0.0;             // sum over generated tokens
  bool finished = false;
};

struct BeamConfig {
  std::size_t beam_size = 5;
  bool length_normalize = true;
};

inline double hypothesis_score(const Hypothesis& h, bool length_normalize) {
  const double generated = double(h.tokens.size()) - 1.0;
  if (!length_normalize || generated < 1.0) return h.log_prob;
  return h.log_prob / generated;
}

namespace detail {

template <typename S>
std::vector<double> row_log_probs(const Array<S>& logits, std::size_t row) {
  const std::size_t v = logits.cols();
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < v; ++c)
    mx = std::max(mx, double(logits.at2(row, c)));
  double sum = 0.0;
  for (std::size_t c = 0; c < v; ++c)
    sum += std::exp(double(logits.at2(row, c)) - mx);
  const double lse = mx + std::log(sum);
  std::vector<double> out(v);
  for (std::size_t c = 0; c < v; ++c)
    out[c] = double(logits.at2(row, c)) - lse;
  return out;
}

}  // namespace detail

// Deterministic beam search. Ties in score break toward the earlier parent
// beam, then the smaller token id. Hypotheses finish on the end token or on
// reaching max_tokens generated tokens; all returned sequences are finished
// and sorted best-first.
template <typename S>
std::vector<Hypothesis> beam_search(
    const Variable<S>& memory, const DecoderParams<S>& p,
    const DecoderConfig& cfg, const BeamConfig& beam, std::int32_t sos_id,
    std::int32_t eos_id, const std::vector<std::int32_t>& banned_ids = {}) {
  cfg.validate();
  if (beam.beam_size < 1)
    throw std::invalid_argument("beam_search: beam_size must be >= 1");
  const auto in_vocab = [&](std::int32_t id) {
    return id >= 0 && std::size_t(id) < cfg.vocab_size;
  };
  if (!in_vocab(sos_id) || !in_vocab(eos_id))
    throw std::invalid_argument("beam_search: start/end token outside vocab");
  std::vector<bool> banned(cfg.vocab_size, false);
  for (std::int32_t id : banned_ids) {
    if (!in_vocab(id))
      throw std::invalid_argument("beam_search: banned id outside vocab");
    banned[std::size_t(id)] = true;
  }
  if (banned[std::size_t(eos_id)])
    throw std::invalid_argument("beam_search: end token cannot be banned");

  NoGradScope no_grad;
  struct Candidate {
    Hypothesis hyp;
    double score;
    std::size_t parent;
    std::int32_t token;
  };
  std::vector<Hypothesis> beams{Hypothesis{{sos_id}, 0.0, false}};
  for (std::size_t step = 0; step < cfg.max_tokens; ++step) {
    bool any_open = false;
    for (const Hypothesis& h : beams) any_open |= !h.finished;
    if (!any_open) break;
    std::vector<Candidate> pool;
    for (std::size_t i = 0; i < beams.size(); ++i) {
      const Hypothesis& hyp = beams[i];
      if (hyp.finished) {
        pool.push_back(
            {hyp, hypothesis_score(hyp, beam.length_normalize), i, -1});
        continue;
      }
      Variable<S> logits = decode_teacher_forced(memory, hyp.tokens, p, cfg);
      const std::vector<double> lp =
          detail::row_log_probs(logits.value(), hyp.tokens.size() - 1);
      for (std::size_t tok = 0; tok < cfg.vocab_size; ++tok) {
        if (banned[tok]) continue;
        Hypothesis next = hyp;
        next.tokens.push_back(std::int32_t(tok));
        next.log_prob += lp[tok];
        next.finished = std::int32_t(tok) == eos_id ||
                        next.tokens.size() - 1 == cfg.max_tokens;
        const double score = hypothesis_score(next, beam.length_normalize);
        pool.push_back({std::move(next), score, i, std::int32_t(tok)});
      }
    }
    std::sort(pool.begin(), pool.end(),
              [](const Candidate& a, const Candidate& b) {
                if (a.score != b.score) return a.score > b.score;
                if (a.parent != b.parent) return a.parent < b.parent;
                return a.token < b.token;
              });
    const std::size_t keep = std::min(beam.beam_size, pool.size());
    beams.clear();
    for (std::size_t i = 0; i < keep; ++i)
      beams.push_back(std::move(pool[i].hyp));
  }
  std::sort(beams.begin(), beams.end(),
            [&](const Hypothesis& a, const Hypothesis& b) {
              const double sa = hypothesis_score(a, beam.length_normalize);
              const double sb = hypothesis_score(b, beam.length_normalize);
              if (sa != sb) return sa > sb;
              return a.tokens < b.tokens;
            });
  return beams;
}

}  // namespace graphcap
