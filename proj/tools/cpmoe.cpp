// SPDX-FileCopyrightText: © 2026 The cpmoe Authors
//
// SPDX-License-Identifier: Apache-2.0

// Command-line front end: training, evaluation harnesses and parameter
// accounting. Exit codes: 0 success, 1 usage, 2 configuration, 3 numeric
// failure, 4 I/O.

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "cpmoe/checkpoint.hpp"
#include "cpmoe/config_io.hpp"
#include "cpmoe/corpus.hpp"
#include "cpmoe/errors.hpp"
#include "cpmoe/evaluation.hpp"
#include "cpmoe/metrics.hpp"
#include "cpmoe/model_config.hpp"
#include "cpmoe/param_count.hpp"
#include "cpmoe/run_dir.hpp"
#include "cpmoe/trainer.hpp"

namespace fs = std::filesystem;
using namespace cpmoe;

namespace {

// Flags shared by every subcommand that trains.
struct ExperimentFlags {
  std::string config;
  std::string preset;
  std::optional<std::string> data;
  std::optional<std::size_t> steps, batch_size, seq_len, eval_every;
  std::optional<std::uint64_t> seed;
  std::optional<double> lr;
  std::optional<std::string> out;

  void attach(CLI::App* app) {
    app->add_option("--config", config, "Experiment config file (key = value lines)");
    app->add_option("--preset", preset, "Model preset, applied before other flags");
    app->add_option("--data", data, "Corpus file or synthetic:<grammar|skewed>:<bytes>");
    app->add_option("--steps", steps, "Optimizer steps");
    app->add_option("--batch-size", batch_size, "Sequences per batch");
    app->add_option("--seq-len", seq_len, "Tokens per sequence");
    app->add_option("--eval-every", eval_every, "Held-out evaluation interval (0: end only)");
    app->add_option("--seed", seed, "Seed for data order and sampling");
    app->add_option("--lr", lr, "Peak learning rate");
    app->add_option("--out", out, "Output directory");
  }

  ExperimentConfig resolve() const {
    ExperimentConfig e = config.empty() ? ExperimentConfig{} : load_experiment_config(config);
    if (!preset.empty()) e.model = cpmoe::preset(preset);
    if (data) e.data_path = *data;
    if (steps) e.steps = *steps;
    if (batch_size) e.batch_size = *batch_size;
    if (seq_len) e.seq_len = *seq_len;
    if (eval_every) e.eval_every = *eval_every;
    if (seed) e.seed = *seed;
    if (lr) e.optim.lr = *lr;
    if (out) e.out_dir = *out;
    e.optim.total_steps = e.steps;
    e.validate();
    return e;
  }
};

// Flags for subcommands that evaluate a saved checkpoint.
struct EvalFlags {
  std::string checkpoint;
  std::string data = ExperimentConfig{}.data_path;
  std::uint64_t seed = ExperimentConfig{}.seed;
  double held_out_fraction = ExperimentConfig{}.held_out_fraction;
  std::size_t window = 0;
  std::string out;

  void attach(CLI::App* app, const std::string& default_out) {
    out = default_out;
    app->add_option("--checkpoint", checkpoint, "Checkpoint written by train")->required();
    app->add_option("--data", data, "Corpus the checkpoint was trained on")->capture_default_str();
    app->add_option("--seed", seed, "Corpus seed (synthetic corpora)")->capture_default_str();
    app->add_option("--held-out-fraction", held_out_fraction, "Tail fraction used for evaluation")->capture_default_str();
    app->add_option("--window", window, "Tokens per evaluation window (default max_seq_len + 1)");
    app->add_option("--out", out, "Output directory")->capture_default_str();
  }

  std::vector<std::int32_t> held_out() const {
    return split_corpus(load_corpus(data, seed), held_out_fraction).held_out;
  }
};

ModelConfig model_from(const std::string& preset_name, const std::string& config_path) {
  if (!preset_name.empty() && !config_path.empty()) {
    throw UsageError("give either --preset or --config, not both");
  }
  if (!config_path.empty()) return load_experiment_config(config_path).model;
  if (preset_name.empty()) throw UsageError("one of --preset or --config is required");
  return preset(preset_name);
}

// Owns the lock, the metrics stream and the summary of one run directory.
class Run {
 public:
  Run(const fs::path& dir, bool append)
      : lock_(dir), metrics_(dir / "metrics.txt", append), dir_(dir) {}

  void record(const MetricsRecord& r) { metrics_.write(r); }

  void summary(const MetricsRecord& r, const std::string& table = {}) {
    record(r);
    std::ofstream out(dir_ / "summary.txt", std::ios::trunc);
    if (!out) throw IoError("cannot write '" + (dir_ / "summary.txt").string() + "'");
    out << r.to_line() << "\n";
    if (!table.empty()) out << table;
    std::cout << r.to_line() << "\n";
    if (!table.empty()) std::cout << table;
  }

  const fs::path& dir() const noexcept { return dir_; }

 private:
  RunDirLock lock_;
  MetricsWriter metrics_;
  fs::path dir_;
};

void progress(const MetricsRecord& r) {
  if (r.kind() == "eval") {
    std::fprintf(stderr, "[%s] step %.0f eval ppl %.4f\n", r.text("run").value_or("train").c_str(),
                 r.require("step"), r.require("ppl"));
  } else if (r.kind() == "train") {
    const auto step = static_cast<std::size_t>(r.require("step"));
    if (step == 1 || step % 50 == 0) {
      std::fprintf(stderr, "[%s] step %zu lm_loss %.4f lr %.3g\n",
                   r.text("run").value_or("train").c_str(), step, r.require("lm_loss"),
                   r.require("lr"));
    }
  }
}

int cmd_train(const ExperimentFlags& flags, const std::string& resume) {
  const ExperimentConfig e = flags.resolve();
  Run run(e.out_dir, !resume.empty());
  save_experiment_config(e, run.dir() / "config.cfg");
  auto tokens = load_corpus(e.data_path, e.seed);
  Trainer trainer = resume.empty() ? Trainer(e, std::move(tokens))
                                   : Trainer::resume(e, std::move(tokens), resume);
  double last_lm = 0.0, ppl = 0.0;
  trainer.run([&](const MetricsRecord& r) {
    run.record(r);
    progress(r);
    if (r.kind() == "train") last_lm = r.require("lm_loss");
    if (r.kind() == "eval") ppl = r.require("ppl");
  });
  trainer.save(run.dir() / "checkpoint.bin");
  MetricsRecord s("summary");
  s.set("command", "train")
      .set("variant", to_string(e.model.variant))
      .set("steps", static_cast<std::uint64_t>(trainer.step()))
      .set("final_lm_loss", last_lm)
      .set("ppl", ppl)
      .set("params", count_params(e.model).total)
      .set("activated", count_params(e.model).activated);
  run.summary(s);
  return 0;
}

int cmd_eval_ppl(const EvalFlags& flags) {
  const auto model = model_from_checkpoint(read_checkpoint(flags.checkpoint));
  const auto stream = flags.held_out();
  const std::size_t window = flags.window ? flags.window : model.config().max_seq_len + 1;
  Run run(flags.out, true);
  const double ppl = perplexity(model, stream, window);
  MetricsRecord s("summary");
  s.set("command", "eval-ppl")
      .set("variant", to_string(model.config().variant))
      .set("tokens", static_cast<std::uint64_t>(stream.size()))
      .set("window", static_cast<std::uint64_t>(window))
      .set("ppl", ppl)
      .set("nll", std::log(ppl));
  run.summary(s);
  return 0;
}

int cmd_robustness(const EvalFlags& flags, std::uint64_t mask_seed) {
  const auto model = model_from_checkpoint(read_checkpoint(flags.checkpoint));
  const auto stream = flags.held_out();
  const std::size_t window = flags.window ? flags.window : model.config().max_seq_len + 1;
  Run run(flags.out, true);
  const auto r = disable_top1_eval(model, stream, window, mask_seed);
  MetricsRecord s("summary");
  s.set("command", "robustness")
      .set("variant", to_string(model.config().variant))
      .set("ppl_normal", r.ppl_normal)
      .set("ppl_masked", r.ppl_masked)
      .set("degradation", r.ppl_masked - r.ppl_normal);
  if (model.config().variant == MoeVariant::kCartesian) {
    s.set("sublayer_b_frequency", sublayer_choice_frequency(mask_seed, 0, 10000));
  }
  run.summary(s);
  return 0;
}

int cmd_sweep(const ExperimentFlags& flags, const std::vector<std::size_t>& ms) {
  const ExperimentConfig e = flags.resolve();
  const auto configs = granularity_configs(e.model, ms);  // fail fast on a bad m
  Run run(e.out_dir, false);
  save_experiment_config(e, run.dir() / "config.cfg");
  const auto tokens = load_corpus(e.data_path, e.seed);
  auto rows = granularity_sweep(e.model, ms, e, tokens, [&](const MetricsRecord& r) {
    run.record(r);
    progress(r);
  });
  const std::string table = sweep_table(rows);
  {
    std::ofstream out(run.dir() / "sweep.tsv", std::ios::trunc);
    out << table;
  }
  MetricsRecord s("summary");
  s.set("command", "sweep-granularity").set("rows", static_cast<std::uint64_t>(rows.size()));
  run.summary(s, table);
  return 0;
}

int cmd_compare(const ExperimentFlags& flags, const std::vector<std::string>& presets) {
  const ExperimentConfig e = flags.resolve();
  std::vector<std::pair<std::string, ModelConfig>> configs;
  for (const auto& p : presets) configs.emplace_back(p, preset(p));
  check_parity(configs);
  Run run(e.out_dir, false);
  save_experiment_config(e, run.dir() / "config.cfg");
  const auto tokens = load_corpus(e.data_path, e.seed);
  auto rows = compare_variants(configs, e, tokens, [&](const MetricsRecord& r) {
    run.record(r);
    progress(r);
  });
  const std::string table = compare_table(rows);
  {
    std::ofstream out(run.dir() / "compare.tsv", std::ios::trunc);
    out << table;
  }
  MetricsRecord s("summary");
  s.set("command", "compare").set("best", std::string_view(rows.front().name));
  run.summary(s, table);
  return 0;
}

int cmd_count_params(const std::string& preset_name, const std::string& config_path) {
  const ModelConfig c = model_from(preset_name, config_path);
  const auto r = count_params(c);
  std::cout << "model=" << (preset_name.empty() ? config_path : preset_name)
            << " variant=" << to_string(c.variant) << "\n"
            << "params " << human_count(r.total) << " / activated " << human_count(r.activated)
            << "\n"
            << format_report(r);
  return 0;
}

int cmd_grad_check(const std::string& preset_name, const std::string& config_path,
                   std::uint64_t seed, double tol) {
  const ModelConfig c = model_from(preset_name, config_path);
  const auto rep = model_grad_check(c, seed, 2, std::min<std::size_t>(4, c.max_seq_len), 1e-5, tol);
  std::cout << "grad-check " << (preset_name.empty() ? config_path : preset_name) << ": "
            << (rep.pass ? "pass" : "FAIL") << " checked=" << rep.checked
            << " max_rel_err=" << format_double(rep.max_rel_err)
            << " max_abs_err=" << format_double(rep.max_abs_err) << " tol=" << format_double(tol)
            << "\n";
  if (!rep.pass) {
    throw NumericError("gradient mismatch in tensor " + std::to_string(rep.worst_tensor) +
                       " at index " + std::to_string(rep.worst_index));
  }
  return 0;
}

std::string joined(const std::vector<std::string>& names) {
  std::string s;
  for (const auto& n : names) s += (s.empty() ? "" : ", ") + n;
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cpmoe: mixture-of-experts language models on the CPU"};
  app.require_subcommand(1);

  ExperimentFlags train_flags, sweep_flags, compare_flags;
  EvalFlags eval_flags, robust_flags;
  std::string resume, count_preset, count_config, gc_preset = "toy-cartesian", gc_config;
  std::uint64_t mask_seed = 1, gc_seed = 1;
  double gc_tol = 1e-4;
  std::vector<std::size_t> ms{1, 2, 4};
  std::vector<std::string> compare_presets{"desk-fine-grained", "desk-cartesian"};

  auto* train = app.add_subcommand("train", "Train a model and write metrics and a checkpoint");
  train_flags.attach(train);
  train->add_option("--resume", resume, "Continue from a checkpoint");

  auto* eval = app.add_subcommand("eval-ppl", "Held-out perplexity of a checkpoint");
  eval_flags.attach(eval, "runs/eval-ppl");

  auto* robust = app.add_subcommand("robustness", "Perplexity with the top-1 expert disabled");
  robust_flags.attach(robust, "runs/robustness");
  robust->add_option("--mask-seed", mask_seed, "Seed for the Cartesian sub-layer choice")->capture_default_str();

  auto* sweep = app.add_subcommand("sweep-granularity", "Train and compare expert granularities");
  sweep_flags.attach(sweep);
  sweep->add_option("--m", ms, "Split factors")->delimiter(',');

  auto* compare = app.add_subcommand("compare", "Train parameter-matched presets and rank them");
  compare_flags.attach(compare);
  compare->add_option("--presets", compare_presets, "Comma-separated preset names")
      ->delimiter(',');

  const auto names = preset_names();
  auto* count = app.add_subcommand("count-params", "Total and activated parameter counts");
  count->add_option("--preset", count_preset, "One of: " + joined(names));
  count->add_option("--config", count_config, "Experiment config file");

  auto* gc = app.add_subcommand("grad-check", "Finite-difference check of a model's gradients");
  gc->add_option("--preset", gc_preset, "Model preset (small ones only)")->capture_default_str();
  gc->add_option("--config", gc_config, "Experiment config file");
  gc->add_option("--seed", gc_seed, "Weight and token seed")->capture_default_str();
  gc->add_option("--tol", gc_tol, "Maximum relative error")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*train) return cmd_train(train_flags, resume);
    if (*eval) return cmd_eval_ppl(eval_flags);
    if (*robust) return cmd_robustness(robust_flags, mask_seed);
    if (*sweep) return cmd_sweep(sweep_flags, ms);
    if (*compare) return cmd_compare(compare_flags, compare_presets);
    if (*count) return cmd_count_params(count_preset, count_config);
    if (*gc) return cmd_grad_check(gc->count("--config") ? "" : gc_preset, gc_config, gc_seed, gc_tol);
  } catch (const Error& e) {
    std::cerr << "cpmoe: " << to_string(e.kind()) << ": " << e.what() << "\n";
    return e.exit_code();
  } catch (const fs::filesystem_error& e) {
    std::cerr << "cpmoe: io error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "cpmoe: internal error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
