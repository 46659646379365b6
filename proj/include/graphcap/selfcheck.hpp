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

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "graphcap/decoder.hpp"
#include "graphcap/frontend.hpp"
#include "graphcap/gradcheck.hpp"
#include "graphcap/graph_attention.hpp"
#include "graphcap/optimizer.hpp"
#include "graphcap/random.hpp"

// Canned finite-difference checks over each differentiable module, sized so a
// full sweep stays under a minute. All run in 64-bit; the loss in every case
// is a fixed random linear functional of the module output, which exercises
// every output coordinate without favoring any.

namespace graphcap {

namespace detail {

inline Array<double> random_matrix(std::size_t rows, std::size_t cols,
                                   double scale, Rng& rng) {
  Array<double> m(rows, cols);
  for (std::size_t i = 0; i < m.numel(); ++i)
    m[i] = scale * rng.uniform(-1.0, 1.0);
  return m;
}

}  // namespace detail

// Relation scores -> softmax -> top-k mask -> aggregation, with the node
// features included as a checked input.
inline GradCheckReport gradcheck_graph_attention(std::uint64_t seed) {
  const std::size_t t = 6, d = 4, k = 3;
  Rng rng(seed);
  ParameterStore<double> params;
  // Copies, not references: the store reallocates as parameters are added,
  // but a Variable is a shared handle so a copy still tracks perturbations.
  Variable<double> x = params.add("x", detail::random_matrix(t, d, 1.0, rng));
  GraphAttentionWeights<double> w;
  w.w_phi = params.add("w_phi", detail::random_matrix(d, d, 0.6, rng));
  w.w_theta = params.add("w_theta", detail::random_matrix(1, 2 * d, 0.6, rng));
  const Array<double> probe = detail::random_matrix(t, d, 1.0, rng);

  auto loss_fn = [&, probe]() {
    const GraphAttentionResult<double> res =
        graph_attention_forward(x, w, 0.2, k);
    return sum_all(mul(res.x_hat, Variable<double>::constant(probe)));
  };
  return finite_difference_check<double>(loss_fn, params);
}

// Two-block frontend, eight output channels, with the spectrogram itself as
// one of the checked inputs.
inline GradCheckReport gradcheck_frontend(std::uint64_t seed) {
  FrontendConfig cfg;
  cfg.mel_bins = 6;
  cfg.channels = {4, 8};
  Rng rng(seed);
  ParameterStore<double> params;
  FrontendParams<double> p = FrontendParams<double>::init(cfg, rng);
  p.register_in(params, "frontend");
  Variable<double> mel =
      params.add("input", detail::random_matrix(6, 8, 1.0, rng));
  const Array<double> probe =
      detail::random_matrix(cfg.output_frames(8), cfg.output_dim(), 1.0, rng);

  auto loss_fn = [&, cfg, probe]() {
    return sum_all(mul(frontend_forward(mel, p, cfg),
                       Variable<double>::constant(probe)));
  };
  return finite_difference_check<double>(loss_fn, params);
}

// Single-layer decoder against a short memory, through the label-smoothed
// training loss. The memory is a checked input, standing in for the encoder.
inline GradCheckReport gradcheck_decoder(std::uint64_t seed) {
  DecoderConfig cfg;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.model_dim = 8;
  cfg.ff_dim = 16;
  cfg.vocab_size = 11;
  cfg.max_tokens = 8;
  Rng rng(seed);
  ParameterStore<double> params;
  DecoderParams<double> p = DecoderParams<double>::init(cfg, rng);
  p.register_in(params, "decoder");
  Variable<double> memory =
      params.add("memory", detail::random_matrix(3, 8, 1.0, rng));
  const std::vector<std::int32_t> inputs{1, 4, 7};
  const std::vector<std::int32_t> targets{4, 7, 2};

  auto loss_fn = [&, cfg, inputs, targets]() {
    Variable<double> logits = decode_teacher_forced(memory, inputs, p, cfg);
    return cross_entropy_label_smoothed(logits, targets, 0.1);
  };
  return finite_difference_check<double>(loss_fn, params);
}

struct ModuleGradCheck {
  std::string module;
  GradCheckReport report;
};

// Runs the named module check, or all of them for "all".
inline std::vector<ModuleGradCheck> run_gradchecks(const std::string& module,
                                                   std::uint64_t seed) {
  std::vector<ModuleGradCheck> out;
  if (module == "all" || module == "graph-attention")
    out.push_back({"graph-attention", gradcheck_graph_attention(seed)});
  if (module == "all" || module == "frontend")
    out.push_back({"frontend", gradcheck_frontend(seed)});
  if (module == "all" || module == "decoder")
    out.push_back({"decoder", gradcheck_decoder(seed)});
  if (out.empty())
    throw std::invalid_argument(
        "gradcheck: unknown module '" + module +
        "' (expected all, graph-attention, frontend, or decoder)");
  return out;
}

}  // namespace graphcap
