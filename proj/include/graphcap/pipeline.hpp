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
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <type_traits>
#include <utility>
#include <vector>

#include "graphcap/autodiff.hpp"
#include "graphcap/decoder.hpp"
#include "graphcap/frontend.hpp"
#include "graphcap/graph_attention.hpp"
#include "graphcap/image.hpp"
#include "graphcap/io.hpp"
#include "graphcap/metrics.hpp"
#include "graphcap/optimizer.hpp"
#include "graphcap/random.hpp"

// End-to-end captioner: convolutional frontend over a mel spectrogram,
// optional graph-attention re-encoding of the frame sequence, and an
// autoregressive transformer decoder. This header owns everything around the
// math: configuration, parameter bundling, the training loop, beam-search
// evaluation, checkpoints, and adjacency-matrix export.

namespace graphcap {

struct GraphConfig {
  bool enabled = true;
  std::size_t k = 25;            // surviving edges per node
  double leaky_slope = 0.2;
  bool separate_aggregation = false;  // second projection for the residual mix

  void validate() const {
    if (k < 1) throw std::invalid_argument("graph: k must be >= 1");
    if (leaky_slope <= 0.0 || leaky_slope >= 1.0)
      throw std::invalid_argument("graph: leaky slope outside (0, 1)");
  }
};

struct ModelConfig {
  FrontendConfig frontend;
  GraphConfig graph;
  DecoderConfig decoder;
  double label_smoothing = 0.1;
  double init_gain = 1.0;
  std::uint64_t seed = 42;

  void validate() const {
    frontend.validate();
    graph.validate();
    decoder.validate();
    if (frontend.output_dim() != decoder.model_dim)
      throw std::invalid_argument(
          "model: frontend emits " + std::to_string(frontend.output_dim()) +
          "-dim frames but the decoder expects " +
          std::to_string(decoder.model_dim));
    if (!(label_smoothing >= 0.0 && label_smoothing < 1.0))
      throw std::invalid_argument("model: label_smoothing outside [0, 1)");
    if (!(init_gain > 0.0))
      throw std::invalid_argument("model: init_gain must be positive");
  }

  KeyValues to_kv() const;
  static ModelConfig from_kv(const KeyValues& kv);
};

namespace detail {

inline std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

inline std::string format_size_list(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out.push_back(',');
    out += std::to_string(v[i]);
  }
  return out;
}

inline std::size_t parse_size(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const unsigned long long n = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return static_cast<std::size_t>(n);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: " + key +
                                " expects a non-negative integer, got '" + v +
                                "'");
  }
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw std::invalid_argument("config: " + key + " expects a number, got '" +
                                v + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("config: " + key +
                              " expects true or false, got '" + v + "'");
}

inline std::vector<std::size_t> parse_size_list(const std::string& key,
                                                const std::string& v) {
  std::vector<std::size_t> out;
  std::string item;
  std::istringstream is(v);
  while (std::getline(is, item, ','))
    out.push_back(parse_size(key, item));
  if (out.empty())
    throw std::invalid_argument("config: " + key + " must not be empty");
  return out;
}

}  // namespace detail

inline KeyValues ModelConfig::to_kv() const {
  using detail::format_double;
  KeyValues kv;
  kv.emplace_back("frontend.mel_bins", std::to_string(frontend.mel_bins));
  kv.emplace_back("frontend.channels",
                  detail::format_size_list(frontend.channels));
  kv.emplace_back("frontend.kernel_width",
                  std::to_string(frontend.kernel_width));
  kv.emplace_back("frontend.pool_factor", std::to_string(frontend.pool_factor));
  kv.emplace_back("frontend.leaky_slope", format_double(frontend.leaky_slope));
  kv.emplace_back("graph.enabled", graph.enabled ? "true" : "false");
  kv.emplace_back("graph.k", std::to_string(graph.k));
  kv.emplace_back("graph.leaky_slope", format_double(graph.leaky_slope));
  kv.emplace_back("graph.separate_aggregation",
                  graph.separate_aggregation ? "true" : "false");
  kv.emplace_back("decoder.n_layers", std::to_string(decoder.n_layers));
  kv.emplace_back("decoder.n_heads", std::to_string(decoder.n_heads));
  kv.emplace_back("decoder.model_dim", std::to_string(decoder.model_dim));
  kv.emplace_back("decoder.ff_dim", std::to_string(decoder.ff_dim));
  kv.emplace_back("decoder.vocab_size", std::to_string(decoder.vocab_size));
  kv.emplace_back("decoder.max_tokens", std::to_string(decoder.max_tokens));
  kv.emplace_back("decoder.memory_pos_encoding",
                  decoder.memory_pos_encoding ? "true" : "false");
  kv.emplace_back("label_smoothing", format_double(label_smoothing));
  kv.emplace_back("init_gain", format_double(init_gain));
  kv.emplace_back("seed", std::to_string(seed));
  return kv;
}

inline ModelConfig ModelConfig::from_kv(const KeyValues& kv) {
  ModelConfig cfg;
  for (const auto& [key, value] : kv) {
    if (key == "frontend.mel_bins")
      cfg.frontend.mel_bins = detail::parse_size(key, value);
    else if (key == "frontend.channels")
      cfg.frontend.channels = detail::parse_size_list(key, value);
    else if (key == "frontend.kernel_width")
      cfg.frontend.kernel_width = detail::parse_size(key, value);
    else if (key == "frontend.pool_factor")
      cfg.frontend.pool_factor = detail::parse_size(key, value);
    else if (key == "frontend.leaky_slope")
      cfg.frontend.leaky_slope = detail::parse_double(key, value);
    else if (key == "graph.enabled")
      cfg.graph.enabled = detail::parse_bool(key, value);
    else if (key == "graph.k")
      cfg.graph.k = detail::parse_size(key, value);
    else if (key == "graph.leaky_slope")
      cfg.graph.leaky_slope = detail::parse_double(key, value);
    else if (key == "graph.separate_aggregation")
      cfg.graph.separate_aggregation = detail::parse_bool(key, value);
    else if (key == "decoder.n_layers")
      cfg.decoder.n_layers = detail::parse_size(key, value);
    else if (key == "decoder.n_heads")
      cfg.decoder.n_heads = detail::parse_size(key, value);
    else if (key == "decoder.model_dim")
      cfg.decoder.model_dim = detail::parse_size(key, value);
    else if (key == "decoder.ff_dim")
      cfg.decoder.ff_dim = detail::parse_size(key, value);
    else if (key == "decoder.vocab_size")
      cfg.decoder.vocab_size = detail::parse_size(key, value);
    else if (key == "decoder.max_tokens")
      cfg.decoder.max_tokens = detail::parse_size(key, value);
    else if (key == "decoder.memory_pos_encoding")
      cfg.decoder.memory_pos_encoding = detail::parse_bool(key, value);
    else if (key == "label_smoothing")
      cfg.label_smoothing = detail::parse_double(key, value);
    else if (key == "init_gain")
      cfg.init_gain = detail::parse_double(key, value);
    else if (key == "seed")
      cfg.seed = detail::parse_size(key, value);
    else
      throw std::invalid_argument("config: unknown key '" + key + "'");
  }
  return cfg;
}

// Input conditioning: clips arrive at whatever loudness the source produced,
// and a conv stack trained at a fixed learning rate cannot rescale them
// quickly, so every mel enters the encoder standardized to zero mean and unit
// variance. Pretrained audio tagging stacks put a batch norm in this spot;
// here the statistics are per clip and treated as data, which keeps the
// forward pass deterministic. A constant clip comes out all zero.
template <typename S>
Array<S> standardized_mel(const Array<S>& mel) {
  double mean = 0.0;
  for (std::size_t i = 0; i < mel.numel(); ++i) mean += mel[i];
  mean /= static_cast<double>(mel.numel());
  double var = 0.0;
  for (std::size_t i = 0; i < mel.numel(); ++i) {
    const double d = mel[i] - mean;
    var += d * d;
  }
  var /= static_cast<double>(mel.numel());
  const double inv = var > 0.0 ? 1.0 / std::sqrt(var) : 0.0;
  Array<S> out(mel.shape());
  for (std::size_t i = 0; i < mel.numel(); ++i)
    out[i] = static_cast<S>((mel[i] - mean) * inv);
  return out;
}

template <typename S>
struct Encoded {
  Variable<S> memory;          // T x D decoder memory
  AdjacencyGraph<S> adjacency;  // empty handle when the graph is disabled
};

template <typename S>
struct ClipLossResult {
  Variable<S> loss;  // token-mean label-smoothed cross entropy
  std::size_t n_tokens = 0;
  std::size_t n_correct = 0;  // greedy argmax matches under teacher forcing
};

template <typename S>
struct CaptioningModel {
  ModelConfig config;
  FrontendParams<S> frontend;
  GraphAttentionWeights<S> graph;
  DecoderParams<S> decoder;
  ParameterStore<S> params;

  static CaptioningModel build(const ModelConfig& cfg) {
    cfg.validate();
    CaptioningModel m;
    m.config = cfg;
    Rng rng(cfg.seed);
    const S gain = static_cast<S>(cfg.init_gain);
    const std::size_t d = cfg.decoder.model_dim;
    m.frontend = FrontendParams<S>::init(cfg.frontend, rng, gain);
    // Graph weights are drawn even when the module is disabled so that an
    // ablated model and its full counterpart share every other initial value.
    auto graph_weight = [&](std::size_t rows, std::size_t cols) {
      Array<S> w = xavier_uniform<S>(Shape{rows, cols}, d, d, rng);
      for (std::size_t i = 0; i < w.numel(); ++i) w[i] *= gain;
      return Variable<S>::leaf(std::move(w), true);
    };
    m.graph.w_phi = graph_weight(d, d);
    m.graph.w_theta = graph_weight(1, 2 * d);
    if (cfg.graph.separate_aggregation) m.graph.w_phi_agg = graph_weight(d, d);
    m.decoder = DecoderParams<S>::init(cfg.decoder, rng, gain);

    m.frontend.register_in(m.params, "frontend");
    if (cfg.graph.enabled) {
      m.params.add("graph.w_phi", m.graph.w_phi);
      m.params.add("graph.w_theta", m.graph.w_theta);
      if (cfg.graph.separate_aggregation)
        m.params.add("graph.w_phi_agg", m.graph.w_phi_agg);
    }
    m.decoder.register_in(m.params, "decoder");
    return m;
  }

  // Frontend plus, when enabled, the graph-attention re-encoding. With the
  // graph disabled the memory IS the frontend output: same node, no extra op.
  Encoded<S> encode(const Array<S>& mel) const {
    Variable<S> frames = frontend_forward(
        Variable<S>::constant(standardized_mel(mel)), frontend,
        config.frontend);
    Encoded<S> out;
    if (!config.graph.enabled) {
      out.memory = frames;
      return out;
    }
    GraphAttentionResult<S> res = graph_attention_forward(
        frames, graph, static_cast<S>(config.graph.leaky_slope),
        config.graph.k);
    out.memory = res.x_hat;
    out.adjacency = res.adjacency;
    return out;
  }

  // Teacher-forced loss over one clip. `tokens` is the full encoded caption
  // [<sos>, words..., <eos>]; inputs are all but the last, targets all but
  // the first.
  ClipLossResult<S> clip_loss(const Array<S>& mel,
                              const std::vector<std::int32_t>& tokens) const {
    if (tokens.size() < 2)
      throw std::invalid_argument(
          "clip_loss: caption needs a start token and at least one target");
    const std::vector<std::int32_t> inputs(tokens.begin(), tokens.end() - 1);
    const std::vector<std::int32_t> targets(tokens.begin() + 1, tokens.end());
    const Encoded<S> enc = encode(mel);
    Variable<S> logits =
        decode_teacher_forced(enc.memory, inputs, decoder, config.decoder);
    ClipLossResult<S> out;
    out.loss = cross_entropy_label_smoothed(
        logits, targets, static_cast<S>(config.label_smoothing));
    out.n_tokens = targets.size();
    const Array<S>& l = logits.value();
    for (std::size_t r = 0; r < targets.size(); ++r) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < l.cols(); ++c)
        if (l.at2(r, c) > l.at2(r, best)) best = c;
      if (best == static_cast<std::size_t>(targets[r])) ++out.n_correct;
    }
    return out;
  }
};

// Deterministic held-out split: indices are shuffled by `seed` alone, and the
// leading ~fraction of the shuffle becomes the validation set (at least one
// clip whenever the fraction is positive and two or more clips exist).
struct DataSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

inline DataSplit train_val_split(std::size_t n_clips, double val_fraction,
                                 std::uint64_t seed) {
  if (n_clips == 0) throw std::invalid_argument("split: no clips");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0))
    throw std::invalid_argument("split: val_fraction outside [0, 1)");
  std::vector<std::size_t> order(n_clips);
  for (std::size_t i = 0; i < n_clips; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  std::size_t n_val = 0;
  if (val_fraction > 0.0 && n_clips >= 2) {
    n_val = static_cast<std::size_t>(
        std::llround(val_fraction * static_cast<double>(n_clips)));
    n_val = std::clamp<std::size_t>(n_val, 1, n_clips - 1);
  }
  DataSplit split;
  split.val.assign(order.begin(), order.begin() + n_val);
  split.train.assign(order.begin() + n_val, order.end());
  return split;
}

struct TrainOptions {
  std::size_t batch_size = 16;
  std::size_t epochs = 30;
  double learning_rate = 1e-4;
  double val_fraction = 0.1;
  std::ostream* log = nullptr;  // per-epoch progress lines when set
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::size_t train_clips = 0;
  std::size_t val_clips = 0;
  double wall_seconds = 0.0;
};

// One training record per epoch and split:
//   epoch \t split \t loss \t accuracy
inline std::string train_report_lines(const TrainReport& r) {
  std::ostringstream os;
  os << std::setprecision(12);
  for (const EpochRecord& e : r.epochs) {
    os << e.epoch << "\ttrain\t" << e.train_loss << "\t" << e.train_accuracy
       << "\n";
    if (r.val_clips > 0)
      os << e.epoch << "\tval\t" << e.val_loss << "\t" << e.val_accuracy
         << "\n";
  }
  return os.str();
}

inline void write_train_report(const std::filesystem::path& path,
                               const TrainReport& r) {
  detail::write_file_bytes(path, train_report_lines(r));
}

namespace detail {

template <typename S>
struct PreparedClip {
  Array<S> mel;
  std::vector<std::int32_t> tokens;  // [<sos>, words..., <eos>]
  std::string id;
};

template <typename S>
std::vector<PreparedClip<S>> prepare_clips(const Dataset& data,
                                           const Vocabulary& vocab,
                                           const DecoderConfig& dec) {
  std::vector<PreparedClip<S>> out;
  out.reserve(data.clips.size());
  for (const Clip& clip : data.clips) {
    if (clip.references.empty())
      throw std::invalid_argument("train: clip " + clip.id +
                                  " has no reference caption");
    PreparedClip<S> p;
    p.id = clip.id;
    p.mel = clip.mel.template cast<S>();
    p.tokens = vocab.encode(clip.references.front());
    if (p.tokens.size() - 1 > dec.max_tokens)
      throw std::invalid_argument(
          "train: caption for clip " + clip.id + " needs " +
          std::to_string(p.tokens.size() - 1) +
          " decoding steps but the decoder allows " +
          std::to_string(dec.max_tokens));
    out.push_back(std::move(p));
  }
  return out;
}

// Token-weighted mean loss and greedy accuracy over a fixed clip set, no
// parameter updates.
template <typename S>
std::pair<double, double> split_loss(const CaptioningModel<S>& model,
                                     const std::vector<PreparedClip<S>>& clips,
                                     const std::vector<std::size_t>& subset) {
  NoGradScope no_grad;
  double loss_sum = 0.0;
  std::size_t tokens = 0, correct = 0;
  for (std::size_t idx : subset) {
    const ClipLossResult<S> r = model.clip_loss(clips[idx].mel,
                                                clips[idx].tokens);
    loss_sum += static_cast<double>(r.loss.value()[0]) *
                static_cast<double>(r.n_tokens);
    tokens += r.n_tokens;
    correct += r.n_correct;
  }
  if (tokens == 0) return {0.0, 0.0};
  return {loss_sum / static_cast<double>(tokens),
          static_cast<double>(correct) / static_cast<double>(tokens)};
}

}  // namespace detail

// Batched Adam training with teacher forcing. Gradients are token-weighted so
// a batch step optimizes the mean loss per target token regardless of caption
// lengths. A non-finite loss aborts with the epoch, step, and clip named.
template <typename S>
TrainReport train_captioner(CaptioningModel<S>& model, const Vocabulary& vocab,
                            const Dataset& data, const TrainOptions& opts) {
  static_assert(std::is_floating_point_v<S>);
  if (opts.batch_size < 1)
    throw std::invalid_argument("train: batch_size must be >= 1");
  if (opts.epochs < 1)
    throw std::invalid_argument("train: epochs must be >= 1");
  if (!(opts.learning_rate > 0.0))
    throw std::invalid_argument("train: learning rate must be positive");
  if (data.clips.empty()) throw std::invalid_argument("train: no clips");
  if (vocab.size() != model.config.decoder.vocab_size)
    throw std::invalid_argument(
        "train: vocabulary has " + std::to_string(vocab.size()) +
        " tokens but the model expects " +
        std::to_string(model.config.decoder.vocab_size));

  const auto started = std::chrono::steady_clock::now();
  const std::vector<detail::PreparedClip<S>> clips =
      detail::prepare_clips<S>(data, vocab, model.config.decoder);
  const DataSplit split =
      train_val_split(clips.size(), opts.val_fraction, model.config.seed);

  AdamState<S> adam;
  adam.lr = static_cast<S>(opts.learning_rate);
  Rng order_rng(model.config.seed + 1);
  std::vector<std::size_t> order = split.train;

  TrainReport report;
  report.train_clips = split.train.size();
  report.val_clips = split.val.size();

  std::size_t global_step = 0;
  for (std::size_t epoch = 1; epoch <= opts.epochs; ++epoch) {
    order_rng.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t epoch_tokens = 0, epoch_correct = 0;
    for (std::size_t start = 0; start < order.size();
         start += opts.batch_size) {
      const std::size_t stop =
          std::min(order.size(), start + opts.batch_size);
      std::size_t batch_tokens = 0;
      for (std::size_t i = start; i < stop; ++i)
        batch_tokens += clips[order[i]].tokens.size() - 1;
      ++global_step;
      for (std::size_t i = start; i < stop; ++i) {
        const detail::PreparedClip<S>& clip = clips[order[i]];
        ClipLossResult<S> r = model.clip_loss(clip.mel, clip.tokens);
        const double loss = static_cast<double>(r.loss.value()[0]);
        if (!std::isfinite(loss))
          throw std::runtime_error(
              "train: non-finite loss at epoch " + std::to_string(epoch) +
              ", step " + std::to_string(global_step) + ", clip " + clip.id +
              "; aborting before the parameters are poisoned");
        const S weight = static_cast<S>(r.n_tokens) /
                         static_cast<S>(batch_tokens);
        r.loss.backward(weight);
        epoch_loss += loss * static_cast<double>(r.n_tokens);
        epoch_tokens += r.n_tokens;
        epoch_correct += r.n_correct;
      }
      adam_step(model.params, adam);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = epoch_loss / static_cast<double>(epoch_tokens);
    rec.train_accuracy = static_cast<double>(epoch_correct) /
                         static_cast<double>(epoch_tokens);
    if (!split.val.empty())
      std::tie(rec.val_loss, rec.val_accuracy) =
          detail::split_loss(model, clips, split.val);
    report.epochs.push_back(rec);
    if (opts.log)
      *opts.log << "epoch " << epoch << ": train_loss=" << rec.train_loss
                << " train_acc=" << rec.train_accuracy
                << " val_loss=" << rec.val_loss
                << " val_acc=" << rec.val_accuracy << "\n";
  }
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started)
          .count();
  return report;
}

// ---------------------------------------------------------------------------
// Checkpoints. A checkpoint directory holds:
//   config.txt    flat key=value model configuration
//   vocab.txt     one token per line, index order
//   manifest.tsv  parameter name \t shape (csv) \t relative payload path
//   arrays/*.fmat one payload per parameter, flattened row vector
// Values are stored in 32-bit floats, the training precision, so a save/load
// round trip reproduces the model bit for bit.

template <typename S>
void save_checkpoint(const CaptioningModel<S>& model, const Vocabulary& vocab,
                     const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "arrays");
  write_kv_file(dir / "config.txt", model.config.to_kv());
  vocab.save(dir / "vocab.txt");
  std::string manifest;
  std::set<std::string> used_names;
  for (const auto& [name, var] : model.params.entries()) {
    std::string file_name = name;
    for (char& c : file_name)
      if (c == '.') c = '_';
    if (!used_names.insert(file_name).second)
      throw std::runtime_error("checkpoint: payload name clash for " + name);
    const Array<S>& value = var.value();
    Array<S> flat(1, value.numel());
    for (std::size_t i = 0; i < value.numel(); ++i) flat[i] = value[i];
    const std::string rel = "arrays/" + file_name + ".fmat";
    write_feature_matrix(dir / rel, flat);
    manifest += name;
    manifest.push_back('\t');
    manifest += detail::format_size_list(value.shape());
    manifest.push_back('\t');
    manifest += rel;
    manifest.push_back('\n');
  }
  detail::write_file_bytes(dir / "manifest.tsv", manifest);
}

template <typename S>
struct LoadedCheckpoint {
  CaptioningModel<S> model;
  Vocabulary vocab;
};

template <typename S>
LoadedCheckpoint<S> load_checkpoint(const std::filesystem::path& dir) {
  const ModelConfig cfg = ModelConfig::from_kv(read_kv_file(dir / "config.txt"));
  Vocabulary vocab = Vocabulary::load(dir / "vocab.txt");
  if (vocab.size() != cfg.decoder.vocab_size)
    throw std::runtime_error(
        "checkpoint: vocabulary file has " + std::to_string(vocab.size()) +
        " tokens but the config says " +
        std::to_string(cfg.decoder.vocab_size));
  LoadedCheckpoint<S> out{CaptioningModel<S>::build(cfg), std::move(vocab)};

  const std::string manifest =
      detail::read_file_bytes(dir / "manifest.tsv");
  std::istringstream lines(manifest);
  std::string line;
  std::size_t loaded = 0, line_no = 0;
  while (std::getline(lines, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab1 = line.find('\t');
    const auto tab2 = tab1 == std::string::npos ? std::string::npos
                                                : line.find('\t', tab1 + 1);
    if (tab2 == std::string::npos)
      throw std::runtime_error("checkpoint: manifest line " +
                               std::to_string(line_no) +
                               " is not name<TAB>shape<TAB>file");
    const std::string name = line.substr(0, tab1);
    const std::string shape_str = line.substr(tab1 + 1, tab2 - tab1 - 1);
    const std::string rel = line.substr(tab2 + 1);
    const Shape shape = detail::parse_size_list("manifest shape", shape_str);
    Variable<S>& param = out.model.params.get(name);
    if (param.value().shape() != shape)
      throw std::runtime_error(
          "checkpoint: parameter " + name + " has shape " +
          detail::format_size_list(param.value().shape()) +
          " in the model but " + shape_str + " in the manifest");
    const Array<float> flat = read_feature_matrix(dir / rel);
    if (flat.numel() != param.value().numel())
      throw std::runtime_error("checkpoint: payload for " + name + " holds " +
                               std::to_string(flat.numel()) +
                               " values, expected " +
                               std::to_string(param.value().numel()));
    Array<S>& dst = param.value_mut();
    for (std::size_t i = 0; i < flat.numel(); ++i)
      dst[i] = static_cast<S>(flat[i]);
    ++loaded;
  }
  if (loaded != out.model.params.size())
    throw std::runtime_error(
        "checkpoint: manifest lists " + std::to_string(loaded) +
        " parameters but the model has " +
        std::to_string(out.model.params.size()));
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation: beam decoding plus caption metrics.

struct EvalOptions {
  std::size_t beam_size = 5;
  bool length_normalize = true;
};

struct ClipDecode {
  std::string clip_id;
  std::vector<std::string> caption;
  double log_prob = 0.0;
};

struct EvalResult {
  MetricReport metrics;
  std::vector<ClipDecode> decodes;
  std::size_t beam_size = 0;
  double token_accuracy = 0.0;  // position-exact match vs first reference
  double token_recall = 0.0;    // reference-word recall vs first reference
};

// Fraction of first-reference tokens reproduced at their exact positions,
// with length mismatches penalized through the max-length denominator.
inline double caption_token_accuracy(
    const std::vector<TokenSeq>& candidates,
    const std::vector<std::vector<TokenSeq>>& references) {
  detail::check_corpus(candidates, references, "token accuracy");
  std::size_t matched = 0, total = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const TokenSeq& cand = candidates[i];
    const TokenSeq& ref = references[i].front();
    for (std::size_t p = 0; p < std::min(cand.size(), ref.size()); ++p)
      if (cand[p] == ref[p]) ++matched;
    total += std::max(cand.size(), ref.size());
  }
  return total == 0 ? 0.0
                    : static_cast<double>(matched) / static_cast<double>(total);
}

// Multiset recall of first-reference tokens, position-free.
inline double caption_token_recall(
    const std::vector<TokenSeq>& candidates,
    const std::vector<std::vector<TokenSeq>>& references) {
  detail::check_corpus(candidates, references, "token recall");
  std::size_t matched = 0, total = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    std::map<std::string, std::size_t> available;
    for (const std::string& w : candidates[i]) ++available[w];
    for (const std::string& w : references[i].front()) {
      ++total;
      auto it = available.find(w);
      if (it != available.end() && it->second > 0) {
        ++matched;
        --it->second;
      }
    }
  }
  return total == 0 ? 0.0
                    : static_cast<double>(matched) / static_cast<double>(total);
}

template <typename S>
EvalResult evaluate_captioner(const CaptioningModel<S>& model,
                              const Vocabulary& vocab, const Dataset& data,
                              const EvalOptions& opts = {}) {
  if (data.clips.empty()) throw std::invalid_argument("evaluate: no clips");
  if (vocab.size() != model.config.decoder.vocab_size)
    throw std::runtime_error(
        "evaluate: vocabulary has " + std::to_string(vocab.size()) +
        " tokens but the model was trained with " +
        std::to_string(model.config.decoder.vocab_size) +
        "; refusing to decode with a mismatched token table");
  NoGradScope no_grad;
  BeamConfig beam{opts.beam_size, opts.length_normalize};
  const std::vector<std::int32_t> banned{Vocabulary::kPad, Vocabulary::kSos};

  EvalResult out;
  out.beam_size = opts.beam_size;
  std::vector<TokenSeq> candidates;
  std::vector<std::vector<TokenSeq>> references;
  std::vector<std::string> ids;
  for (const Clip& clip : data.clips) {
    const Encoded<S> enc = model.encode(clip.mel.template cast<S>());
    const std::vector<Hypothesis> hyps =
        beam_search(enc.memory, model.decoder, model.config.decoder, beam,
                    Vocabulary::kSos, Vocabulary::kEos, banned);
    ClipDecode dec;
    dec.clip_id = clip.id;
    dec.caption = vocab.decode(hyps.front().tokens);
    dec.log_prob = hyps.front().log_prob;
    candidates.push_back(dec.caption);
    references.push_back(clip.references);
    ids.push_back(clip.id);
    out.decodes.push_back(std::move(dec));
  }
  out.metrics = score_corpus(candidates, references, ids);
  out.token_accuracy = caption_token_accuracy(candidates, references);
  out.token_recall = caption_token_recall(candidates, references);
  return out;
}

// ---------------------------------------------------------------------------
// Adjacency export: the raw top-k adjacency of one clip, plus a min-max
// normalized and bilinearly upscaled copy for viewing. Normalization happens
// before interpolation, so the image corners equal the normalized matrix
// corners at any scale.

template <typename S>
struct AdjacencySnapshot {
  Array<S> values;  // T x T, straight from the forward pass
  Array<S> image;   // factor*T x factor*T, values in [0, 1]
};

template <typename S>
AdjacencySnapshot<S> adjacency_snapshot(const CaptioningModel<S>& model,
                                        const Array<S>& mel,
                                        std::size_t upscale_factor) {
  if (!model.config.graph.enabled)
    throw std::runtime_error(
        "adjacency export: the graph module is disabled in this model, so "
        "there is no adjacency matrix to export");
  NoGradScope no_grad;
  const Encoded<S> enc = model.encode(mel);
  AdjacencySnapshot<S> snap;
  snap.values = enc.adjacency.values.value();
  snap.image = bilinear_upscale(min_max_normalize(snap.values), upscale_factor);
  return snap;
}

template <typename S>
void write_adjacency_files(const AdjacencySnapshot<S>& snap,
                           const std::filesystem::path& fmat_path,
                           const std::filesystem::path& pgm_path) {
  write_feature_matrix(fmat_path, snap.values);
  write_pgm(pgm_path.string(), snap.image);
}

}  // namespace graphcap
