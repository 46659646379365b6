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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "graphcap/image.hpp"
#include "graphcap/pipeline.hpp"
#include "graphcap/synthetic.hpp"

namespace graphcap {
namespace {

namespace fs = std::filesystem;

class ScopedTempDir {
 public:
  explicit ScopedTempDir(const std::string& tag) {
    static int counter = 0;
    path_ = fs::temp_directory_path() /
            ("graphcap_pipe_" + tag + "_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter++));
    fs::create_directories(path_);
  }
  ~ScopedTempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

template <typename Fn>
void expect_error_contains(Fn fn, const std::string& needle) {
  try {
    fn();
    FAIL() << "expected an error mentioning \"" << needle << "\"";
  } catch (const std::exception& e) {
    EXPECT_NE(std::string(e.what()).find(needle), std::string::npos)
        << "actual message: " << e.what();
  }
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  EXPECT_TRUE(in) << p;
  return std::string(std::istreambuf_iterator<char>(in),
                     std::istreambuf_iterator<char>());
}

void write_bytes(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  ASSERT_TRUE(out) << p;
  out << bytes;
}

// Small model whose frontend output width matches the decoder.
ModelConfig tiny_config(std::size_t vocab_size) {
  ModelConfig cfg;
  cfg.frontend.mel_bins = 16;
  cfg.frontend.channels = {4, 6};
  cfg.graph.k = 3;
  cfg.decoder.n_layers = 1;
  cfg.decoder.n_heads = 2;
  cfg.decoder.model_dim = 6;
  cfg.decoder.ff_dim = 16;
  cfg.decoder.vocab_size = vocab_size;
  cfg.decoder.max_tokens = 8;
  cfg.seed = 7;
  return cfg;
}

SyntheticSpec tiny_task(std::size_t n_clips) {
  SyntheticSpec spec;
  spec.n_clips = n_clips;
  spec.n_event_types = 4;
  spec.mel_bins = 16;
  spec.frames = 64;
  spec.events_min = 1;
  spec.events_max = 3;
  spec.seed = 5;
  return spec;
}

// ---------------------------------------------------------------------------
// Image utilities.

TEST(Image, MinMaxNormalizeMapsRangeToUnitInterval) {
  Array<double> m(2, 2);
  m.at2(0, 0) = 2.0;
  m.at2(0, 1) = 4.0;
  m.at2(1, 0) = 6.0;
  m.at2(1, 1) = 10.0;
  const Array<double> n = min_max_normalize(m);
  EXPECT_DOUBLE_EQ(n.at2(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(n.at2(0, 1), 0.25);
  EXPECT_DOUBLE_EQ(n.at2(1, 0), 0.5);
  EXPECT_DOUBLE_EQ(n.at2(1, 1), 1.0);

  const Array<double> flat = min_max_normalize(Array<double>::full({3, 3}, 7.0));
  for (std::size_t i = 0; i < flat.numel(); ++i) EXPECT_EQ(flat[i], 0.0);
}

TEST(Image, BilinearFactorOneIsIdentity) {
  Rng rng(11);
  Array<float> src(4, 5);
  for (std::size_t i = 0; i < src.numel(); ++i)
    src[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
  const Array<float> out = bilinear_upscale(src, 1);
  ASSERT_EQ(out.shape(), src.shape());
  for (std::size_t i = 0; i < src.numel(); ++i) EXPECT_EQ(out[i], src[i]);
}

TEST(Image, BilinearCornersAlwaysLandOnSourceCorners) {
  Rng rng(12);
  Array<float> src(5, 7);
  for (std::size_t i = 0; i < src.numel(); ++i)
    src[i] = static_cast<float>(rng.uniform(0.0, 1.0));
  for (std::size_t factor : {2u, 3u, 4u}) {
    const Array<float> out = bilinear_upscale(src, factor);
    ASSERT_EQ(out.rows(), src.rows() * factor);
    ASSERT_EQ(out.cols(), src.cols() * factor);
    EXPECT_EQ(out.at2(0, 0), src.at2(0, 0));
    EXPECT_EQ(out.at2(0, out.cols() - 1), src.at2(0, src.cols() - 1));
    EXPECT_EQ(out.at2(out.rows() - 1, 0), src.at2(src.rows() - 1, 0));
    EXPECT_EQ(out.at2(out.rows() - 1, out.cols() - 1),
              src.at2(src.rows() - 1, src.cols() - 1));
  }
}

// Bilinear interpolation reproduces any affine function of the coordinates
// exactly, which pins the interpolation weights, not just the corner cases.
TEST(Image, BilinearReproducesLinearRampsExactly) {
  const std::size_t h = 4, w = 5, factor = 3;
  Array<double> src(h, w);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      src.at2(i, j) = 0.3 * double(i) + 0.15 * double(j) + 0.05;
  const Array<double> out = bilinear_upscale(src, factor);
  for (std::size_t y = 0; y < out.rows(); ++y)
    for (std::size_t x = 0; x < out.cols(); ++x) {
      const double sy = double(y) * double(h - 1) / double(out.rows() - 1);
      const double sx = double(x) * double(w - 1) / double(out.cols() - 1);
      EXPECT_NEAR(out.at2(y, x), 0.3 * sy + 0.15 * sx + 0.05, 1e-12);
    }
}

TEST(Image, BilinearStaysWithinSourceRange) {
  Rng rng(13);
  Array<double> src(6, 6);
  double lo = 1e9, hi = -1e9;
  for (std::size_t i = 0; i < src.numel(); ++i) {
    src[i] = rng.uniform(-5.0, 5.0);
    lo = std::min(lo, src[i]);
    hi = std::max(hi, src[i]);
  }
  const Array<double> out = bilinear_upscale(src, 4);
  for (std::size_t i = 0; i < out.numel(); ++i) {
    EXPECT_GE(out[i], lo - 1e-12);
    EXPECT_LE(out[i], hi + 1e-12);
  }
}

TEST(Image, PgmRoundTripMatchesQuantization) {
  ScopedTempDir tmp("pgm");
  Rng rng(14);
  Array<double> img(6, 9);
  for (std::size_t i = 0; i < img.numel(); ++i) img[i] = rng.uniform(0.0, 1.0);
  const std::string path = (tmp.path() / "img.pgm").string();
  write_pgm(path, img);

  const std::string bytes = read_bytes(path);
  EXPECT_EQ(bytes.substr(0, 11), "P5\n9 6\n255\n");

  const PgmImage back = read_pgm(path);
  ASSERT_EQ(back.width, 9u);
  ASSERT_EQ(back.height, 6u);
  ASSERT_EQ(back.pixels.size(), img.numel());
  for (std::size_t i = 0; i < img.numel(); ++i)
    EXPECT_EQ(back.pixels[i], std::uint8_t(std::lround(img[i] * 255.0)));
}

// ---------------------------------------------------------------------------
// key=value files and configuration.

TEST(KvFile, SkipsCommentsAndRoundTrips) {
  ScopedTempDir tmp("kv");
  const fs::path path = tmp.path() / "conf.txt";
  write_bytes(path,
              "# a comment\n\n  lr = 0.001 \nname=widget\nempty=\n");
  const KeyValues kv = read_kv_file(path);
  ASSERT_EQ(kv.size(), 3u);
  EXPECT_EQ(kv[0].first, "lr");
  EXPECT_EQ(kv[0].second, "0.001");
  EXPECT_EQ(kv[1].second, "widget");
  EXPECT_EQ(kv[2].second, "");

  const fs::path copy = tmp.path() / "copy.txt";
  write_kv_file(copy, kv);
  EXPECT_EQ(read_kv_file(copy), kv);
}

TEST(KvFile, RejectsDuplicatesAndMalformedLines) {
  ScopedTempDir tmp("kvbad");
  const fs::path dup = tmp.path() / "dup.txt";
  write_bytes(dup, "a=1\na=2\n");
  expect_error_contains([&] { read_kv_file(dup); }, "duplicate key a");

  const fs::path bad = tmp.path() / "bad.txt";
  write_bytes(bad, "a=1\nnot a pair\n");
  expect_error_contains([&] { read_kv_file(bad); }, ":2");
}

TEST(Config, KeyValueRoundTripIsExact) {
  ModelConfig cfg;
  cfg.frontend.mel_bins = 24;
  cfg.frontend.channels = {8, 16, 24};
  cfg.frontend.kernel_width = 5;
  cfg.frontend.pool_factor = 2;
  cfg.frontend.leaky_slope = 0.123456789012345;
  cfg.graph.enabled = false;
  cfg.graph.k = 7;
  cfg.graph.separate_aggregation = true;
  cfg.decoder.n_layers = 3;
  cfg.decoder.n_heads = 6;
  cfg.decoder.model_dim = 24;
  cfg.decoder.ff_dim = 48;
  cfg.decoder.vocab_size = 33;
  cfg.decoder.max_tokens = 17;
  cfg.decoder.memory_pos_encoding = false;
  cfg.label_smoothing = 0.07;
  cfg.init_gain = 1.25;
  cfg.seed = 123456789;

  const KeyValues kv = cfg.to_kv();
  const ModelConfig back = ModelConfig::from_kv(kv);
  EXPECT_EQ(back.to_kv(), kv);
  EXPECT_EQ(back.frontend.channels, cfg.frontend.channels);
  EXPECT_EQ(back.graph.enabled, false);
  EXPECT_EQ(back.decoder.memory_pos_encoding, false);
  EXPECT_EQ(back.seed, cfg.seed);
  EXPECT_EQ(back.frontend.leaky_slope, cfg.frontend.leaky_slope);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  expect_error_contains(
      [] { ModelConfig::from_kv({{"frontend.mel_bands", "64"}}); },
      "unknown key");
  expect_error_contains(
      [] { ModelConfig::from_kv({{"frontend.mel_bins", "sixty"}}); },
      "frontend.mel_bins");
  expect_error_contains(
      [] { ModelConfig::from_kv({{"graph.enabled", "maybe"}}); },
      "true or false");
  expect_error_contains(
      [] { ModelConfig::from_kv({{"label_smoothing", "0.1x"}}); },
      "label_smoothing");
}

TEST(Config, ValidatesCrossStageWidths) {
  ModelConfig cfg = tiny_config(9);
  cfg.decoder.model_dim = 8;  // frontend still emits 6
  cfg.decoder.n_heads = 2;
  expect_error_contains([&] { cfg.validate(); }, "frontend emits");
}

// ---------------------------------------------------------------------------
// Model assembly.

TEST(Model, RegistersEveryParameterOnce) {
  const auto model = CaptioningModel<float>::build(tiny_config(9));
  // frontend 8, graph 2, decoder 31 for one layer.
  EXPECT_EQ(model.params.size(), 41u);
  EXPECT_TRUE(model.params.contains("frontend.band_conv.w"));
  EXPECT_TRUE(model.params.contains("graph.w_phi"));
  EXPECT_TRUE(model.params.contains("graph.w_theta"));
  EXPECT_TRUE(model.params.contains("decoder.layer0.self.wq"));
  EXPECT_TRUE(model.params.contains("decoder.out.b"));
}

TEST(Model, SeparateAggregationAddsAParameter) {
  ModelConfig cfg = tiny_config(9);
  cfg.graph.separate_aggregation = true;
  const auto model = CaptioningModel<float>::build(cfg);
  EXPECT_EQ(model.params.size(), 42u);
  EXPECT_TRUE(model.params.contains("graph.w_phi_agg"));
}

// The ablation toggles the module without reshuffling everyone else's
// initial values, so the two models are a matched pair.
TEST(Model, AblationSharesEveryOtherInitialValue) {
  ModelConfig cfg = tiny_config(9);
  const auto full = CaptioningModel<float>::build(cfg);
  cfg.graph.enabled = false;
  const auto ablated = CaptioningModel<float>::build(cfg);

  EXPECT_EQ(ablated.params.size(), full.params.size() - 2);
  EXPECT_FALSE(ablated.params.contains("graph.w_phi"));
  for (const auto& [name, var] : ablated.params.entries()) {
    const Array<float>& a = var.value();
    const Array<float>& b = full.params.get(name).value();
    ASSERT_EQ(a.shape(), b.shape()) << name;
    for (std::size_t i = 0; i < a.numel(); ++i)
      ASSERT_EQ(a[i], b[i]) << name << "[" << i << "]";
  }
}

TEST(Model, DisabledGraphMemoryIsTheFrontendOutputExactly) {
  ModelConfig cfg = tiny_config(9);
  cfg.graph.enabled = false;
  const auto model = CaptioningModel<float>::build(cfg);

  Rng rng(21);
  Array<float> mel(16, 24);
  for (std::size_t i = 0; i < mel.numel(); ++i)
    mel[i] = static_cast<float>(rng.normal());

  const Encoded<float> enc = model.encode(mel);
  EXPECT_FALSE(enc.adjacency.values.defined());

  const Variable<float> direct = frontend_forward(
      Variable<float>::constant(standardized_mel(mel)), model.frontend,
      cfg.frontend);
  ASSERT_EQ(enc.memory.value().shape(), direct.value().shape());
  for (std::size_t i = 0; i < direct.value().numel(); ++i)
    ASSERT_EQ(enc.memory.value()[i], direct.value()[i]);
}

// The encoder conditions its input: gain and offset applied to a clip must
// not change what the decoder sees, and a flat clip must come through as
// silence rather than NaN from the zero-variance division.
TEST(Model, EncodeIgnoresInputGainAndOffset) {
  const auto model = CaptioningModel<float>::build(tiny_config(9));
  Rng rng(24);
  Array<float> mel(16, 24);
  for (std::size_t i = 0; i < mel.numel(); ++i)
    mel[i] = static_cast<float>(rng.normal());

  Array<float> loud(mel.shape());
  for (std::size_t i = 0; i < mel.numel(); ++i)
    loud[i] = 37.5f * mel[i] - 4.25f;

  const Encoded<float> base_enc = model.encode(mel);
  const Encoded<float> scaled_enc = model.encode(loud);
  const Array<float>& base = base_enc.memory.value();
  const Array<float>& scaled = scaled_enc.memory.value();
  ASSERT_EQ(base.shape(), scaled.shape());
  for (std::size_t i = 0; i < base.numel(); ++i)
    EXPECT_NEAR(base[i], scaled[i], 2e-3f) << "entry " << i;

  const Array<float> flat = Array<float>::full(Shape{16, 24}, 3.0f);
  const Encoded<float> quiet_enc = model.encode(flat);
  const Encoded<float> zero_enc = model.encode(Array<float>(16, 24));
  const Array<float>& quiet = quiet_enc.memory.value();
  const Array<float>& zero = zero_enc.memory.value();
  for (std::size_t i = 0; i < quiet.numel(); ++i) {
    ASSERT_TRUE(std::isfinite(quiet[i]));
    ASSERT_EQ(quiet[i], zero[i]);
  }
}

TEST(Model, EnabledGraphKeepsTopKRowOccupancy) {
  const auto model = CaptioningModel<float>::build(tiny_config(9));
  Rng rng(22);
  Array<float> mel(16, 24);  // 24 frames -> 6 after two halvings
  for (std::size_t i = 0; i < mel.numel(); ++i)
    mel[i] = static_cast<float>(rng.normal());

  const Encoded<float> enc = model.encode(mel);
  ASSERT_TRUE(enc.adjacency.values.defined());
  const Array<float>& adj = enc.adjacency.values.value();
  ASSERT_EQ(adj.rows(), 6u);
  ASSERT_EQ(adj.cols(), 6u);
  EXPECT_EQ(enc.adjacency.k_used, 3u);
  for (std::size_t i = 0; i < adj.rows(); ++i) {
    std::size_t nonzeros = 0;
    for (std::size_t j = 0; j < adj.cols(); ++j)
      if (adj.at2(i, j) != 0.0f) {
        ++nonzeros;
        EXPECT_GT(adj.at2(i, j), 0.0f);
        EXPECT_LE(adj.at2(i, j), 1.0f);
      }
    EXPECT_EQ(nonzeros, 3u) << "row " << i;
  }
  EXPECT_EQ(enc.memory.value().rows(), 6u);
  EXPECT_EQ(enc.memory.value().cols(), 6u);
}

TEST(Model, ClipLossCountsTargetsAndRejectsBareStart) {
  const auto model = CaptioningModel<float>::build(tiny_config(9));
  Rng rng(23);
  Array<float> mel(16, 16);
  for (std::size_t i = 0; i < mel.numel(); ++i)
    mel[i] = static_cast<float>(rng.normal());

  const ClipLossResult<float> r =
      model.clip_loss(mel, {Vocabulary::kSos, 5, Vocabulary::kEos});
  EXPECT_EQ(r.n_tokens, 2u);
  EXPECT_LE(r.n_correct, 2u);
  EXPECT_TRUE(std::isfinite(r.loss.value()[0]));
  EXPECT_GT(r.loss.value()[0], 0.0f);

  EXPECT_THROW(model.clip_loss(mel, {Vocabulary::kSos}), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Train/validation split.

TEST(Split, IsDeterministicDisjointAndCovering) {
  const DataSplit a = train_val_split(23, 0.1, 9);
  const DataSplit b = train_val_split(23, 0.1, 9);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.val, b.val);
  EXPECT_EQ(a.val.size(), 2u);  // round(2.3)
  EXPECT_EQ(a.train.size(), 21u);

  std::vector<std::size_t> all = a.train;
  all.insert(all.end(), a.val.begin(), a.val.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < all.size(); ++i) EXPECT_EQ(all[i], i);
}

TEST(Split, EdgeCases) {
  EXPECT_TRUE(train_val_split(8, 0.0, 1).val.empty());
  EXPECT_TRUE(train_val_split(1, 0.1, 1).val.empty());
  EXPECT_EQ(train_val_split(2, 0.5, 1).val.size(), 1u);
  EXPECT_EQ(train_val_split(512, 0.1, 42).val.size(), 51u);
  EXPECT_THROW(train_val_split(0, 0.1, 1), std::invalid_argument);
  EXPECT_THROW(train_val_split(4, 1.0, 1), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Training.

Dataset tiny_dataset(std::size_t n_clips) {
  return generate_synthetic_dataset(tiny_task(n_clips));
}

TEST(Train, RecordsContiguousEpochsAndHeldOutLoss) {
  const Dataset data = tiny_dataset(8);
  const Vocabulary vocab = build_vocabulary(data);
  auto model = CaptioningModel<float>::build(tiny_config(vocab.size()));

  TrainOptions opts;
  opts.batch_size = 4;
  opts.epochs = 2;
  const TrainReport report = train_captioner(model, vocab, data, opts);

  ASSERT_EQ(report.epochs.size(), 2u);
  EXPECT_EQ(report.epochs[0].epoch, 1u);
  EXPECT_EQ(report.epochs[1].epoch, 2u);
  EXPECT_EQ(report.train_clips, 7u);
  EXPECT_EQ(report.val_clips, 1u);
  for (const EpochRecord& e : report.epochs) {
    EXPECT_GT(e.train_loss, 0.0);
    EXPECT_GT(e.val_loss, 0.0);
    EXPECT_GE(e.train_accuracy, 0.0);
    EXPECT_LE(e.train_accuracy, 1.0);
  }
  EXPECT_GT(report.wall_seconds, 0.0);
}

TEST(Train, LossCurveIsSeedReproducible) {
  const Dataset data = tiny_dataset(6);
  const Vocabulary vocab = build_vocabulary(data);
  const ModelConfig cfg = tiny_config(vocab.size());

  TrainOptions opts;
  opts.batch_size = 2;
  opts.epochs = 3;

  auto model_a = CaptioningModel<float>::build(cfg);
  auto model_b = CaptioningModel<float>::build(cfg);
  const TrainReport a = train_captioner(model_a, vocab, data, opts);
  const TrainReport b = train_captioner(model_b, vocab, data, opts);

  ASSERT_EQ(a.epochs.size(), b.epochs.size());
  for (std::size_t i = 0; i < a.epochs.size(); ++i) {
    EXPECT_EQ(a.epochs[i].train_loss, b.epochs[i].train_loss) << "epoch " << i;
    EXPECT_EQ(a.epochs[i].val_loss, b.epochs[i].val_loss) << "epoch " << i;
    EXPECT_EQ(a.epochs[i].train_accuracy, b.epochs[i].train_accuracy);
    EXPECT_EQ(a.epochs[i].val_accuracy, b.epochs[i].val_accuracy);
  }
  const auto& pa = model_a.params.entries();
  const auto& pb = model_b.params.entries();
  for (std::size_t p = 0; p < pa.size(); ++p)
    for (std::size_t i = 0; i < pa[p].second.value().numel(); ++i)
      ASSERT_EQ(pa[p].second.value()[i], pb[p].second.value()[i])
          << pa[p].first;
}

TEST(Train, LossDropsOnEasyData) {
  const Dataset data = tiny_dataset(16);
  const Vocabulary vocab = build_vocabulary(data);
  auto model = CaptioningModel<float>::build(tiny_config(vocab.size()));

  TrainOptions opts;
  opts.batch_size = 8;
  opts.epochs = 6;
  opts.learning_rate = 1e-3;
  const TrainReport report = train_captioner(model, vocab, data, opts);
  EXPECT_LT(report.epochs.back().train_loss, report.epochs.front().train_loss);
}

TEST(Train, AbortsOnNonFiniteLossNamingTheStep) {
  const Dataset data = tiny_dataset(4);
  const Vocabulary vocab = build_vocabulary(data);
  auto model = CaptioningModel<float>::build(tiny_config(vocab.size()));
  model.params.get("decoder.out.b").value_mut()[0] =
      std::numeric_limits<float>::quiet_NaN();

  TrainOptions opts;
  opts.epochs = 1;
  opts.val_fraction = 0.0;
  try {
    train_captioner(model, vocab, data, opts);
    FAIL() << "expected divergence abort";
  } catch (const std::runtime_error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("epoch 1"), std::string::npos) << msg;
    EXPECT_NE(msg.find("step 1"), std::string::npos) << msg;
    EXPECT_NE(msg.find("clip"), std::string::npos) << msg;
  }
}

TEST(Train, RejectsMismatchedVocabulary) {
  const Dataset data = tiny_dataset(4);
  const Vocabulary vocab = build_vocabulary(data);
  auto model = CaptioningModel<float>::build(tiny_config(vocab.size() + 3));
  expect_error_contains(
      [&] {
        TrainOptions opts;
        train_captioner(model, vocab, data, opts);
      },
      "vocabulary has");
}

TEST(Train, RejectsCaptionsLongerThanTheDecoderWindow) {
  const Dataset data = tiny_dataset(4);
  const Vocabulary vocab = build_vocabulary(data);
  ModelConfig cfg = tiny_config(vocab.size());
  cfg.decoder.max_tokens = 2;  // a 2-event caption already needs 3 steps
  auto model = CaptioningModel<float>::build(cfg);
  expect_error_contains(
      [&] {
        TrainOptions opts;
        train_captioner(model, vocab, data, opts);
      },
      "decoding steps");
}

// Capacity probe: a handful of clips must be memorized almost perfectly.
TEST(Train, OverfitsFourCaptionsToMemorization) {
  const Dataset data = tiny_dataset(4);
  const Vocabulary vocab = build_vocabulary(data);
  ModelConfig cfg = tiny_config(vocab.size());
  auto model = CaptioningModel<float>::build(cfg);

  TrainOptions opts;
  opts.batch_size = 1;
  opts.epochs = 200;
  opts.learning_rate = 1e-3;
  opts.val_fraction = 0.0;
  const TrainReport report = train_captioner(model, vocab, data, opts);
  EXPECT_GE(report.epochs.back().train_accuracy, 0.99)
      << "final train loss " << report.epochs.back().train_loss;
}

TEST(Train, ReportLinesCarryEpochSplitLossAccuracy) {
  TrainReport r;
  r.train_clips = 7;
  r.val_clips = 1;
  r.epochs.push_back({1, 2.5, 0.25, 2.75, 0.2});
  r.epochs.push_back({2, 2.0, 0.5, 2.25, 0.4});
  const std::string lines = train_report_lines(r);
  EXPECT_EQ(lines,
            "1\ttrain\t2.5\t0.25\n1\tval\t2.75\t0.2\n"
            "2\ttrain\t2\t0.5\n2\tval\t2.25\t0.4\n");

  r.val_clips = 0;
  const std::string no_val = train_report_lines(r);
  EXPECT_EQ(no_val, "1\ttrain\t2.5\t0.25\n2\ttrain\t2\t0.5\n");
}

// ---------------------------------------------------------------------------
// Checkpoints.

TEST(Checkpoint, RoundTripReproducesParametersAndValLossBitExactly) {
  ScopedTempDir tmp("ckpt");
  const Dataset data = tiny_dataset(8);
  const Vocabulary vocab = build_vocabulary(data);
  auto model = CaptioningModel<float>::build(tiny_config(vocab.size()));

  TrainOptions opts;
  opts.batch_size = 4;
  opts.epochs = 1;
  const TrainReport report = train_captioner(model, vocab, data, opts);
  ASSERT_EQ(report.val_clips, 1u);

  save_checkpoint(model, vocab, tmp.path());
  const LoadedCheckpoint<float> loaded = load_checkpoint<float>(tmp.path());

  EXPECT_EQ(loaded.vocab.size(), vocab.size());
  EXPECT_EQ(loaded.model.config.to_kv(), model.config.to_kv());
  ASSERT_EQ(loaded.model.params.size(), model.params.size());
  for (const auto& [name, var] : model.params.entries()) {
    const Array<float>& a = var.value();
    const Array<float>& b = loaded.model.params.get(name).value();
    ASSERT_EQ(a.shape(), b.shape()) << name;
    for (std::size_t i = 0; i < a.numel(); ++i)
      ASSERT_EQ(a[i], b[i]) << name << "[" << i << "]";
  }

  // The held-out loss must come back bit for bit.
  const auto clips = detail::prepare_clips<float>(data, vocab,
                                                  model.config.decoder);
  const DataSplit split =
      train_val_split(data.clips.size(), opts.val_fraction, model.config.seed);
  const auto before = detail::split_loss(model, clips, split.val);
  const auto after = detail::split_loss(loaded.model, clips, split.val);
  EXPECT_EQ(before.first, after.first);
  EXPECT_EQ(before.second, after.second);
  EXPECT_EQ(before.first, report.epochs.back().val_loss);
}

TEST(Checkpoint, DetectsTamperedDirectories) {
  ScopedTempDir tmp("ckptbad");
  const Dataset data = tiny_dataset(4);
  const Vocabulary vocab = build_vocabulary(data);
  auto model = CaptioningModel<float>::build(tiny_config(vocab.size()));

  save_checkpoint(model, vocab, tmp.path());

  // Dropping a manifest line must be noticed.
  const fs::path manifest = tmp.path() / "manifest.tsv";
  const std::string original = read_bytes(manifest);
  const auto line_start = original.rfind('\n', original.rfind('\n') - 1);
  write_bytes(manifest, original.substr(0, line_start + 1));
  expect_error_contains([&] { load_checkpoint<float>(tmp.path()); },
                        "manifest lists");
  write_bytes(manifest, original);

  // A shape edit must be noticed before any payload is trusted.
  std::string reshaped = original;
  const auto tab = reshaped.find('\t');
  reshaped.replace(tab + 1, reshaped.find('\t', tab + 1) - tab - 1, "1,1");
  write_bytes(manifest, reshaped);
  expect_error_contains([&] { load_checkpoint<float>(tmp.path()); },
                        "has shape");
  write_bytes(manifest, original);

  // Vocabulary size must agree with the stored config.
  const fs::path vocab_file = tmp.path() / "vocab.txt";
  write_bytes(vocab_file, read_bytes(vocab_file) + "stowaway\n");
  expect_error_contains([&] { load_checkpoint<float>(tmp.path()); },
                        "vocabulary file has");
}

// ---------------------------------------------------------------------------
// Evaluation.

TEST(Evaluate, DecodesEveryClipAndReportsScores) {
  const Dataset data = tiny_dataset(3);
  const Vocabulary vocab = build_vocabulary(data);
  const auto model = CaptioningModel<float>::build(tiny_config(vocab.size()));

  EvalOptions opts;
  opts.beam_size = 2;
  const EvalResult result = evaluate_captioner(model, vocab, data, opts);

  EXPECT_EQ(result.beam_size, 2u);
  ASSERT_EQ(result.decodes.size(), 3u);
  ASSERT_EQ(result.metrics.per_clip.size(), 3u);
  for (std::size_t i = 0; i < data.clips.size(); ++i) {
    EXPECT_EQ(result.decodes[i].clip_id, data.clips[i].id);
    EXPECT_EQ(result.metrics.per_clip[i].clip_id, data.clips[i].id);
    for (const std::string& w : result.decodes[i].caption) {
      EXPECT_NE(w, "<pad>");
      EXPECT_NE(w, "<sos>");
      EXPECT_NE(w, "<eos>");
    }
  }
  EXPECT_GE(result.token_accuracy, 0.0);
  EXPECT_LE(result.token_accuracy, 1.0);
  EXPECT_GE(result.token_recall, 0.0);
  EXPECT_LE(result.token_recall, 1.0);
  EXPECT_EQ(result.metrics.spider_is_partial, true);
}

TEST(Evaluate, RejectsForeignVocabulary) {
  const Dataset data = tiny_dataset(3);
  Vocabulary vocab = build_vocabulary(data);
  const auto model = CaptioningModel<float>::build(tiny_config(vocab.size()));
  vocab.add_token("extra");
  expect_error_contains(
      [&] { evaluate_captioner(model, vocab, data, EvalOptions{}); },
      "mismatched token table");
}

TEST(Evaluate, TokenAccuracyAndRecallHelpers) {
  using Seqs = std::vector<TokenSeq>;
  using Refs = std::vector<std::vector<TokenSeq>>;

  // Perfect echo.
  EXPECT_DOUBLE_EQ(
      caption_token_accuracy(Seqs{{"a", "b", "c"}}, Refs{{{"a", "b", "c"}}}),
      1.0);
  EXPECT_DOUBLE_EQ(
      caption_token_recall(Seqs{{"a", "b", "c"}}, Refs{{{"a", "b", "c"}}}),
      1.0);

  // Rotation: every word present, none in place.
  EXPECT_DOUBLE_EQ(
      caption_token_accuracy(Seqs{{"c", "a", "b"}}, Refs{{{"a", "b", "c"}}}),
      0.0);
  EXPECT_DOUBLE_EQ(
      caption_token_recall(Seqs{{"c", "a", "b"}}, Refs{{{"a", "b", "c"}}}),
      1.0);

  // Truncation penalizes accuracy through the max-length denominator.
  EXPECT_DOUBLE_EQ(
      caption_token_accuracy(Seqs{{"a", "b"}}, Refs{{{"a", "b", "c", "d"}}}),
      0.5);
  EXPECT_DOUBLE_EQ(
      caption_token_recall(Seqs{{"a", "b"}}, Refs{{{"a", "b", "c", "d"}}}),
      0.5);

  // Repeated candidate words cannot double-claim one reference word.
  EXPECT_DOUBLE_EQ(
      caption_token_recall(Seqs{{"a", "a", "b"}}, Refs{{{"a", "b"}}}), 1.0);
  EXPECT_DOUBLE_EQ(
      caption_token_accuracy(Seqs{{"a", "a", "b"}}, Refs{{{"a", "b"}}}),
      1.0 / 3.0);

  // Corpus pooling weights clips by token counts, not uniformly.
  const double pooled = caption_token_recall(
      Seqs{{"a"}, {"x", "y", "z"}}, Refs{{{"a"}}, {{"p", "q", "r"}}});
  EXPECT_DOUBLE_EQ(pooled, 1.0 / 4.0);
}

// ---------------------------------------------------------------------------
// Adjacency export.

TEST(Adjacency, SnapshotMatchesForwardAndSurvivesTheFiles) {
  ScopedTempDir tmp("adj");
  const auto model = CaptioningModel<float>::build(tiny_config(9));
  Rng rng(31);
  Array<float> mel(16, 24);  // six frames after pooling
  for (std::size_t i = 0; i < mel.numel(); ++i)
    mel[i] = static_cast<float>(rng.normal());

  const AdjacencySnapshot<float> flat = adjacency_snapshot(model, mel, 1);
  ASSERT_EQ(flat.values.rows(), 6u);
  ASSERT_EQ(flat.values.cols(), 6u);
  ASSERT_EQ(flat.image.shape(), flat.values.shape());
  const Array<float> normalized = min_max_normalize(flat.values);
  for (std::size_t i = 0; i < normalized.numel(); ++i)
    EXPECT_EQ(flat.image[i], normalized[i]);

  const AdjacencySnapshot<float> big = adjacency_snapshot(model, mel, 4);
  ASSERT_EQ(big.image.rows(), 24u);
  ASSERT_EQ(big.image.cols(), 24u);
  EXPECT_EQ(big.image.at2(0, 0), normalized.at2(0, 0));
  EXPECT_EQ(big.image.at2(0, 23), normalized.at2(0, 5));
  EXPECT_EQ(big.image.at2(23, 0), normalized.at2(5, 0));
  EXPECT_EQ(big.image.at2(23, 23), normalized.at2(5, 5));

  const fs::path fmat = tmp.path() / "adj.fmat";
  const fs::path pgm = tmp.path() / "adj.pgm";
  write_adjacency_files(big, fmat, pgm);

  const Array<float> reread = read_feature_matrix(fmat);
  ASSERT_EQ(reread.shape(), big.values.shape());
  for (std::size_t i = 0; i < big.values.rows(); ++i) {
    std::size_t nonzeros = 0;
    for (std::size_t j = 0; j < big.values.cols(); ++j) {
      EXPECT_EQ(reread.at2(i, j), big.values.at2(i, j));
      if (reread.at2(i, j) != 0.0f) ++nonzeros;
    }
    EXPECT_EQ(nonzeros, 3u) << "row " << i;  // min(k, T) survives the file
  }
  const PgmImage img = read_pgm(pgm.string());
  EXPECT_EQ(img.width, 24u);
  EXPECT_EQ(img.height, 24u);
}

TEST(Adjacency, RequiresTheGraphModule) {
  ModelConfig cfg = tiny_config(9);
  cfg.graph.enabled = false;
  const auto model = CaptioningModel<float>::build(cfg);
  Array<float> mel = Array<float>::full({16, 16}, 0.5f);
  expect_error_contains([&] { adjacency_snapshot(model, mel, 2); },
                        "disabled");
}

}  // namespace
}  // namespace graphcap
