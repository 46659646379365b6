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

// Command-line front door: dataset generation, training, evaluation,
// gradient self-checks, and adjacency inspection. Every subcommand echoes its
// fully resolved configuration before doing any work, takes its defaults from
// an optional key=value --config file, and lets explicit flags override the
// file. Exit codes: 0 success, 1 bad arguments or validation failure, 2
// runtime failure.

#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "graphcap/image.hpp"
#include "graphcap/io.hpp"
#include "graphcap/metrics.hpp"
#include "graphcap/pipeline.hpp"
#include "graphcap/selfcheck.hpp"
#include "graphcap/synthetic.hpp"

namespace {

namespace fs = std::filesystem;
using namespace graphcap;

void echo_config(const std::string& command, const KeyValues& kv) {
  std::cout << "resolved configuration (" << command << "):\n";
  for (const auto& [key, value] : kv)
    std::cout << "  " << key << "=" << value << "\n";
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(12) << v;
  return os.str();
}

// ---------------------------------------------------------------------------
// gen-data

struct GenDataArgs {
  std::string config;
  std::string out_dir;
  SyntheticSpec spec;
};

void require_set(const std::string& command, const std::string& flag,
                 const std::string& value) {
  if (value.empty())
    throw std::invalid_argument(command + ": " + flag +
                                " is required (flag or config file)");
}

int run_gen_data(const GenDataArgs& args) {
  require_set("gen-data", "--out-dir", args.out_dir);
  echo_config("gen-data",
              {{"out-dir", args.out_dir},
               {"clips", std::to_string(args.spec.n_clips)},
               {"events", std::to_string(args.spec.n_event_types)},
               {"mel-bins", std::to_string(args.spec.mel_bins)},
               {"frames", std::to_string(args.spec.frames)},
               {"events-min", std::to_string(args.spec.events_min)},
               {"events-max", std::to_string(args.spec.events_max)},
               {"noise-std", fmt(args.spec.noise_std)},
               {"seed", std::to_string(args.spec.seed)}});
  const Dataset data = generate_synthetic_dataset(args.spec);
  save_dataset(args.out_dir, data);
  std::cout << "wrote " << data.clips.size() << " clips to " << args.out_dir
            << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string config;
  std::string data_dir;
  std::string out_dir;
  TrainOptions opts;
  std::uint64_t seed = 42;
  bool no_graph = false;
  std::size_t k = 25;
  std::string channels = "32,64,128,128";
  std::size_t kernel_width = 3;
  std::size_t pool_factor = 2;
  std::size_t model_dim = 128;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t ff_dim = 512;
  std::size_t max_tokens = 22;
  double label_smoothing = 0.1;
  double init_gain = 1.0;
  bool no_memory_pe = false;
};

int run_train(const TrainArgs& args) {
  require_set("train", "--data", args.data_dir);
  require_set("train", "--out-dir", args.out_dir);
  echo_config("train",
              {{"data", args.data_dir},
               {"out-dir", args.out_dir},
               {"epochs", std::to_string(args.opts.epochs)},
               {"batch-size", std::to_string(args.opts.batch_size)},
               {"lr", fmt(args.opts.learning_rate)},
               {"val-fraction", fmt(args.opts.val_fraction)},
               {"seed", std::to_string(args.seed)},
               {"no-graph", args.no_graph ? "true" : "false"},
               {"k", std::to_string(args.k)},
               {"channels", args.channels},
               {"kernel-width", std::to_string(args.kernel_width)},
               {"pool-factor", std::to_string(args.pool_factor)},
               {"model-dim", std::to_string(args.model_dim)},
               {"layers", std::to_string(args.layers)},
               {"heads", std::to_string(args.heads)},
               {"ff-dim", std::to_string(args.ff_dim)},
               {"max-tokens", std::to_string(args.max_tokens)},
               {"label-smoothing", fmt(args.label_smoothing)},
               {"init-gain", fmt(args.init_gain)},
               {"no-memory-pe", args.no_memory_pe ? "true" : "false"}});

  const Dataset data = load_dataset(args.data_dir);
  const Vocabulary vocab = build_vocabulary(data);

  ModelConfig cfg;
  cfg.frontend.mel_bins = data.clips.front().mel.rows();
  cfg.frontend.channels = detail::parse_size_list("channels", args.channels);
  cfg.frontend.kernel_width = args.kernel_width;
  cfg.frontend.pool_factor = args.pool_factor;
  cfg.graph.enabled = !args.no_graph;
  cfg.graph.k = args.k;
  cfg.decoder.n_layers = args.layers;
  cfg.decoder.n_heads = args.heads;
  cfg.decoder.model_dim = args.model_dim;
  cfg.decoder.ff_dim = args.ff_dim;
  cfg.decoder.vocab_size = vocab.size();
  cfg.decoder.max_tokens = args.max_tokens;
  cfg.decoder.memory_pos_encoding = !args.no_memory_pe;
  cfg.label_smoothing = args.label_smoothing;
  cfg.init_gain = args.init_gain;
  cfg.seed = args.seed;
  cfg.validate();
  echo_config("model", cfg.to_kv());

  auto model = CaptioningModel<float>::build(cfg);
  TrainOptions opts = args.opts;
  opts.log = &std::cout;
  const TrainReport report = train_captioner(model, vocab, data, opts);

  fs::create_directories(args.out_dir);
  const fs::path ckpt = fs::path(args.out_dir) / "checkpoint";
  save_checkpoint(model, vocab, ckpt);
  write_train_report(fs::path(args.out_dir) / "train_report.tsv", report);
  std::cout << "trained " << report.train_clips << " clips ("
            << report.val_clips << " held out) for " << report.epochs.size()
            << " epochs in " << fmt(report.wall_seconds) << " s\n"
            << "checkpoint: " << ckpt.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string config;
  std::string data_dir;
  std::string checkpoint;
  std::string out_dir;
  EvalOptions opts;
  bool no_length_norm = false;
};

int run_eval(const EvalArgs& args) {
  require_set("eval", "--data", args.data_dir);
  require_set("eval", "--checkpoint", args.checkpoint);
  echo_config("eval",
              {{"data", args.data_dir},
               {"checkpoint", args.checkpoint},
               {"out-dir", args.out_dir},
               {"beam", std::to_string(args.opts.beam_size)},
               {"no-length-norm", args.no_length_norm ? "true" : "false"}});

  const LoadedCheckpoint<float> loaded = load_checkpoint<float>(args.checkpoint);
  const Dataset data = load_dataset(args.data_dir);
  EvalOptions opts = args.opts;
  opts.length_normalize = !args.no_length_norm;
  const EvalResult result =
      evaluate_captioner(loaded.model, loaded.vocab, data, opts);

  std::cout << metric_table(result.metrics);
  std::cout << "token_accuracy=" << fmt(result.token_accuracy) << "\n"
            << "token_recall=" << fmt(result.token_recall) << "\n"
            << "beam_size=" << result.beam_size << "\n";

  if (!args.out_dir.empty()) {
    fs::create_directories(args.out_dir);
    std::string records =
        "eval\tbeam_size=" + std::to_string(result.beam_size) +
        "\tlength_normalize=" + (opts.length_normalize ? "true" : "false") +
        "\ttoken_accuracy=" + fmt(result.token_accuracy) +
        "\ttoken_recall=" + fmt(result.token_recall) + "\n";
    records += metric_records(result.metrics);
    detail::write_file_bytes(fs::path(args.out_dir) / "metrics.tsv", records);

    std::string captions;
    for (const ClipDecode& d : result.decodes)
      captions += d.clip_id + "\t" + join_tokens(d.caption) + "\n";
    detail::write_file_bytes(fs::path(args.out_dir) / "captions.tsv",
                             captions);
    std::cout << "wrote " << (fs::path(args.out_dir) / "metrics.tsv").string()
              << " and captions.tsv\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradcheckArgs {
  std::string config;
  std::string module = "all";
  std::uint64_t seed = 42;
  double threshold = 1e-4;
};

int run_gradcheck(const GradcheckArgs& args) {
  echo_config("gradcheck", {{"module", args.module},
                            {"seed", std::to_string(args.seed)},
                            {"threshold", fmt(args.threshold)}});
  const std::vector<ModuleGradCheck> checks =
      run_gradchecks(args.module, args.seed);
  bool all_ok = true;
  for (const ModuleGradCheck& c : checks) {
    const bool ok = c.report.max_rel_err < args.threshold;
    all_ok = all_ok && ok;
    std::cout << c.module << ": max relative error "
              << std::setprecision(6) << std::scientific
              << c.report.max_rel_err << std::defaultfloat << " (worst "
              << c.report.worst_param << "[" << c.report.worst_index << "]) "
              << (ok ? "PASS" : "FAIL") << "\n";
  }
  if (!all_ok) {
    std::cerr << "gradcheck failed against threshold " << args.threshold
              << "\n";
    return 2;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// inspect-graph

struct InspectArgs {
  std::string config;
  std::string checkpoint;
  std::string data_dir;
  std::string clip;
  std::string out_dir;
  std::size_t interp = 1;
};

int run_inspect(const InspectArgs& args) {
  require_set("inspect-graph", "--checkpoint", args.checkpoint);
  require_set("inspect-graph", "--data", args.data_dir);
  require_set("inspect-graph", "--clip", args.clip);
  require_set("inspect-graph", "--out-dir", args.out_dir);
  echo_config("inspect-graph", {{"checkpoint", args.checkpoint},
                                {"data", args.data_dir},
                                {"clip", args.clip},
                                {"out-dir", args.out_dir},
                                {"interp", std::to_string(args.interp)}});
  const LoadedCheckpoint<float> loaded = load_checkpoint<float>(args.checkpoint);
  const fs::path features =
      fs::path(args.data_dir) / "features" / (args.clip + ".fmat");
  if (!fs::exists(features))
    throw std::invalid_argument("inspect-graph: no features for clip '" +
                                args.clip + "' at " + features.string());
  const Array<float> mel = read_feature_matrix(features);
  const AdjacencySnapshot<float> snap =
      adjacency_snapshot(loaded.model, mel, args.interp);

  fs::create_directories(args.out_dir);
  const fs::path fmat = fs::path(args.out_dir) / (args.clip + "_adj.fmat");
  const fs::path pgm = fs::path(args.out_dir) / (args.clip + "_adj.pgm");
  write_adjacency_files(snap, fmat, pgm);
  std::cout << "adjacency " << snap.values.rows() << "x" << snap.values.cols()
            << " -> " << fmat.string() << "\n"
            << "image " << snap.image.rows() << "x" << snap.image.cols()
            << " -> " << pgm.string() << "\n";
  return 0;
}

// CLI11 only consults set_config() on the root application, so per-subcommand
// config files are wired up by hand: after parsing, every key in the file is
// pushed into the matching option unless the command line already set it.
void apply_config_file(CLI::App* cmd, const std::string& path) {
  KeyValues kv;
  try {
    kv = read_kv_file(path);
  } catch (const std::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  for (const auto& [key, value] : kv) {
    CLI::Option* op =
        (key == "help" || key == "config")
            ? nullptr
            : cmd->get_option_no_throw("--" + key);
    if (op == nullptr)
      throw std::invalid_argument("config: unknown key '" + key + "' in " +
                                  path);
    if (op->count() > 0) continue;  // explicit flags win
    try {
      op->add_result(value);
      op->run_callback();
    } catch (const CLI::Error& e) {
      throw std::invalid_argument("config: bad value for '" + key + "': " +
                                  e.what());
    }
  }
}

void add_config_option(CLI::App* cmd, std::string& path) {
  cmd->add_option("--config", path,
                  "key=value file with defaults for the flags below; "
                  "explicit flags win");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Graph-attention audio captioner", "graphcap"};
  app.require_subcommand(1);

  GenDataArgs gen;
  CLI::App* gen_cmd =
      app.add_subcommand("gen-data", "Generate a synthetic captioning dataset");
  add_config_option(gen_cmd, gen.config);
  gen_cmd->add_option("--out-dir", gen.out_dir, "Dataset directory to write");
  gen_cmd->add_option("--clips", gen.spec.n_clips, "Number of clips")
      ->capture_default_str();
  gen_cmd->add_option("--events", gen.spec.n_event_types,
                      "Number of event types")
      ->capture_default_str();
  gen_cmd->add_option("--mel-bins", gen.spec.mel_bins, "Mel bands per clip")
      ->capture_default_str();
  gen_cmd->add_option("--frames", gen.spec.frames, "Frames per clip")
      ->capture_default_str();
  gen_cmd->add_option("--events-min", gen.spec.events_min,
                      "Minimum events per clip")
      ->capture_default_str();
  gen_cmd->add_option("--events-max", gen.spec.events_max,
                      "Maximum events per clip")
      ->capture_default_str();
  gen_cmd->add_option("--noise-std", gen.spec.noise_std,
                      "Background noise level")
      ->capture_default_str();
  gen_cmd->add_option("--seed", gen.spec.seed, "Random seed")
      ->capture_default_str();

  TrainArgs train;
  CLI::App* train_cmd =
      app.add_subcommand("train", "Train a captioner on a dataset directory");
  add_config_option(train_cmd, train.config);
  train_cmd->add_option("--data", train.data_dir, "Dataset directory");
  train_cmd->add_option("--out-dir", train.out_dir,
                        "Directory for the checkpoint and training report");
  train_cmd->add_option("--epochs", train.opts.epochs, "Training epochs")
      ->capture_default_str();
  train_cmd->add_option("--batch-size", train.opts.batch_size, "Clips per step")
      ->capture_default_str();
  train_cmd->add_option("--lr", train.opts.learning_rate, "Adam learning rate")
      ->capture_default_str();
  train_cmd
      ->add_option("--val-fraction", train.opts.val_fraction,
                   "Held-out fraction for validation")
      ->capture_default_str();
  train_cmd->add_option("--seed", train.seed, "Random seed")
      ->capture_default_str();
  train_cmd->add_flag("--no-graph", train.no_graph,
                      "Disable the graph-attention module (ablation)");
  train_cmd->add_option("--k", train.k, "Edges kept per node")
      ->capture_default_str();
  train_cmd
      ->add_option("--channels", train.channels,
                   "Frontend channels per block, comma separated")
      ->capture_default_str();
  train_cmd
      ->add_option("--kernel-width", train.kernel_width,
                   "Temporal kernel width of the first block")
      ->capture_default_str();
  train_cmd
      ->add_option("--pool-factor", train.pool_factor,
                   "Time pooling per frontend block")
      ->capture_default_str();
  train_cmd->add_option("--model-dim", train.model_dim, "Decoder width")
      ->capture_default_str();
  train_cmd->add_option("--layers", train.layers, "Decoder layers")
      ->capture_default_str();
  train_cmd->add_option("--heads", train.heads, "Attention heads")
      ->capture_default_str();
  train_cmd->add_option("--ff-dim", train.ff_dim, "Feedforward width")
      ->capture_default_str();
  train_cmd
      ->add_option("--max-tokens", train.max_tokens,
                   "Longest generatable caption")
      ->capture_default_str();
  train_cmd
      ->add_option("--label-smoothing", train.label_smoothing,
                   "Cross-entropy smoothing mass")
      ->capture_default_str();
  train_cmd
      ->add_option("--init-gain", train.init_gain,
                   "Scale applied to initial weights")
      ->capture_default_str();
  train_cmd->add_flag("--no-memory-pe", train.no_memory_pe,
                      "Skip positional encoding on the encoder memory");

  EvalArgs eval;
  CLI::App* eval_cmd = app.add_subcommand(
      "eval", "Beam-decode a dataset and score the captions");
  add_config_option(eval_cmd, eval.config);
  eval_cmd->add_option("--data", eval.data_dir, "Dataset directory");
  eval_cmd->add_option("--checkpoint", eval.checkpoint,
                       "Checkpoint directory");
  eval_cmd
      ->add_option("--out-dir", eval.out_dir,
                   "Where to write metrics.tsv and captions.tsv (optional)")
      ->capture_default_str();
  eval_cmd->add_option("--beam", eval.opts.beam_size, "Beam size")
      ->capture_default_str();
  eval_cmd->add_flag("--no-length-norm", eval.no_length_norm,
                     "Rank hypotheses by raw log probability");

  GradcheckArgs grad;
  CLI::App* grad_cmd = app.add_subcommand(
      "gradcheck", "Finite-difference check of analytic gradients");
  add_config_option(grad_cmd, grad.config);
  grad_cmd
      ->add_option("--module", grad.module,
                   "all, graph-attention, frontend, or decoder")
      ->capture_default_str();
  grad_cmd->add_option("--seed", grad.seed, "Random seed")
      ->capture_default_str();
  grad_cmd
      ->add_option("--threshold", grad.threshold,
                   "Maximum tolerated relative error")
      ->capture_default_str();

  InspectArgs inspect;
  CLI::App* inspect_cmd = app.add_subcommand(
      "inspect-graph", "Export one clip's adjacency matrix and heatmap");
  add_config_option(inspect_cmd, inspect.config);
  inspect_cmd->add_option("--checkpoint", inspect.checkpoint,
                          "Checkpoint directory");
  inspect_cmd->add_option("--data", inspect.data_dir, "Dataset directory");
  inspect_cmd->add_option("--clip", inspect.clip, "Clip id to inspect");
  inspect_cmd->add_option("--out-dir", inspect.out_dir, "Output directory");
  inspect_cmd
      ->add_option("--interp", inspect.interp,
                   "Bilinear upscale factor for the heatmap")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen_cmd->parsed()) {
      if (!gen.config.empty()) apply_config_file(gen_cmd, gen.config);
      return run_gen_data(gen);
    }
    if (train_cmd->parsed()) {
      if (!train.config.empty()) apply_config_file(train_cmd, train.config);
      return run_train(train);
    }
    if (eval_cmd->parsed()) {
      if (!eval.config.empty()) apply_config_file(eval_cmd, eval.config);
      return run_eval(eval);
    }
    if (grad_cmd->parsed()) {
      if (!grad.config.empty()) apply_config_file(grad_cmd, grad.config);
      return run_gradcheck(grad);
    }
    if (inspect_cmd->parsed()) {
      if (!inspect.config.empty()) apply_config_file(inspect_cmd, inspect.config);
      return run_inspect(inspect);
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::out_of_range& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
