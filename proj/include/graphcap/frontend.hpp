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

// Convolutional frontend that turns a mel spectrogram (bands x frames) into a
// sequence of frame embeddings (frames/16 x model dim).  The first block runs
// a short temporal convolution separately per band so band identity survives
// until the final mean across bands; the remaining blocks are pointwise
// channel mixers.  Every block halves the time axis with average pooling.

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "graphcap/array.hpp"
#include "graphcap/autodiff.hpp"
#include "graphcap/conv_ops.hpp"
#include "graphcap/optimizer.hpp"
#include "graphcap/random.hpp"

namespace graphcap {

struct FrontendConfig {
  std::size_t mel_bins = 64;
  std::vector<std::size_t> channels = {32, 64, 128, 128};
  std::size_t kernel_width = 3;  // temporal kernel of the per-band block
  std::size_t pool_factor = 2;   // time downsampling per block
  double leaky_slope = 0.2;

  std::size_t output_dim() const { return channels.back(); }

  std::size_t min_frames() const {
    std::size_t frames = 1;
    for (std::size_t i = 0; i < channels.size(); ++i) frames *= pool_factor;
    return frames;
  }

  std::size_t output_frames(std::size_t input_frames) const {
    std::size_t t = input_frames;
    for (std::size_t i = 0; i < channels.size(); ++i)
      t = (t + pool_factor - 1) / pool_factor;
    return t;
  }

  void validate() const {
    if (mel_bins == 0) throw std::invalid_argument("frontend: mel_bins == 0");
    if (channels.empty())
      throw std::invalid_argument("frontend: no blocks configured");
    for (std::size_t c : channels)
      if (c == 0) throw std::invalid_argument("frontend: zero-channel block");
    if (kernel_width % 2 == 0)
      throw std::invalid_argument("frontend: kernel width must be odd");
    if (pool_factor < 1)
      throw std::invalid_argument("frontend: pool factor must be >= 1");
    if (leaky_slope <= 0.0 || leaky_slope >= 1.0)
      throw std::invalid_argument("frontend: leaky slope outside (0, 1)");
  }
};

template <typename S>
struct FrontendParams {
  Variable<S> band_conv_w;  // {mel_bins, channels[0], kernel_width}
  Variable<S> band_conv_b;  // {mel_bins, channels[0]}
  std::vector<Variable<S>> mix_w;  // {channels[i], channels[i-1]} per block
  std::vector<Variable<S>> mix_b;  // {channels[i]}
  std::vector<Variable<S>> gamma;  // {channels[i]} per block
  std::vector<Variable<S>> beta;   // {channels[i]}

  static FrontendParams init(const FrontendConfig& cfg, Rng& rng,
                             S gain = S(1)) {
    cfg.validate();
    FrontendParams p;
    const std::size_t kw = cfg.kernel_width;
    // He-style fan-in bounds matched to the LeakyReLU slope: every block
    // feeds another LeakyReLU, and with four of them in sequence the Xavier
    // fan-average bound would shrink the features block after block, leaving
    // the encoder output far quieter than the decoder expects.
    Array<S> bw = he_uniform<S>(Shape{cfg.mel_bins, cfg.channels[0], kw}, kw,
                                cfg.leaky_slope, rng);
    for (std::size_t i = 0; i < bw.numel(); ++i) bw[i] *= gain;
    p.band_conv_w = Variable<S>::leaf(std::move(bw), true);
    p.band_conv_b = Variable<S>::leaf(
        Array<S>(Shape{cfg.mel_bins, cfg.channels[0]}), true);
    for (std::size_t i = 1; i < cfg.channels.size(); ++i) {
      Array<S> w = he_uniform<S>(Shape{cfg.channels[i], cfg.channels[i - 1]},
                                 cfg.channels[i - 1], cfg.leaky_slope, rng);
      for (std::size_t j = 0; j < w.numel(); ++j) w[j] *= gain;
      p.mix_w.push_back(Variable<S>::leaf(std::move(w), true));
      p.mix_b.push_back(
          Variable<S>::leaf(Array<S>(Shape{cfg.channels[i]}), true));
    }
    for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
      p.gamma.push_back(Variable<S>::leaf(
          Array<S>::full(Shape{cfg.channels[i]}, S(1)), true));
      p.beta.push_back(
          Variable<S>::leaf(Array<S>(Shape{cfg.channels[i]}), true));
    }
    return p;
  }

  void register_in(ParameterStore<S>& store, const std::string& prefix) const {
    store.add(prefix + ".band_conv.w", band_conv_w);
    store.add(prefix + ".band_conv.b", band_conv_b);
    for (std::size_t i = 0; i < mix_w.size(); ++i) {
      const std::string block = prefix + ".mix" + std::to_string(i + 2);
      store.add(block + ".w", mix_w[i]);
      store.add(block + ".b", mix_b[i]);
    }
    for (std::size_t i = 0; i < gamma.size(); ++i) {
      const std::string block = prefix + ".block" + std::to_string(i + 1);
      store.add(block + ".gamma", gamma[i]);
      store.add(block + ".beta", beta[i]);
    }
  }
};

// mel is {mel_bins, frames}; returns {output_frames, output_dim}.
template <typename S>
Variable<S> frontend_forward(const Variable<S>& mel,
                             const FrontendParams<S>& p,
                             const FrontendConfig& cfg) {
  detail::check_rank2(mel.value(), "frontend");
  if (mel.value().rows() != cfg.mel_bins)
    throw std::invalid_argument(
        "frontend: input has " + std::to_string(mel.value().rows()) +
        " mel bands, expected " + std::to_string(cfg.mel_bins));
  const std::size_t frames = mel.value().cols();
  if (frames < cfg.min_frames())
    throw std::invalid_argument(
        "frontend: input has " + std::to_string(frames) +
        " frames but at least " + std::to_string(cfg.min_frames()) +
        " are required");
  const S slope = static_cast<S>(cfg.leaky_slope);

  Variable<S> h = reshape(mel, Shape{1, cfg.mel_bins, frames});
  h = conv_time_per_band(h, p.band_conv_w, p.band_conv_b, cfg.kernel_width);
  h = leaky_relu(channel_affine(h, p.gamma[0], p.beta[0]), slope);
  h = avg_pool_time(h, cfg.pool_factor);
  for (std::size_t i = 1; i < cfg.channels.size(); ++i) {
    h = conv_pointwise(h, p.mix_w[i - 1], p.mix_b[i - 1]);
    h = leaky_relu(channel_affine(h, p.gamma[i], p.beta[i]), slope);
    h = avg_pool_time(h, cfg.pool_factor);
  }
  return transpose(band_mean(h));
}

}  // namespace graphcap
