// SPDX-FileCopyrightText: © 2026 The cpmoe Authors
//
// SPDX-License-Identifier: Apache-2.0

#include "cpmoe/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cpmoe/balance.hpp"
#include "cpmoe/errors.hpp"
#include "cpmoe/rng.hpp"
#include "cpmoe/routing.hpp"
#include "cpmoe/trainer.hpp"

namespace cpmoe {

GradCheckReport model_grad_check(const ModelConfig& config, std::uint64_t seed, std::size_t batch,
                                 std::size_t seq_len, double step, double tol,
                                 double weight_scale) {
  if (seq_len < 2 || seq_len > config.max_seq_len) {
    throw ConfigError("grad-check: seq_len must be in [2, " + std::to_string(config.max_seq_len) +
                      "]");
  }
  Model<double> model(config);
  Rng rng(seed, "grad-check");
  for (auto p : model.parameters()) {
    for (double& x : p.mutable_data()) x = weight_scale * rng.normal();
  }
  TokenBatch tb{batch, seq_len, {}};
  for (std::size_t i = 0; i < batch * seq_len; ++i) {
    tb.ids.push_back(static_cast<std::int32_t>(rng.below(config.vocab_size)));
  }
  RoutingTape tape;
  ForwardOptions opts;
  opts.tape = &tape;
  lm_loss(model, tb, opts);
  auto loss = [&] {
    tape.start_replay();
    auto r = lm_loss(model, tb, opts);
    return total_loss(r.loss, balance_loss(r.routing), config.alpha_balance);
  };
  // Rounding noise of a central difference on an O(1) loss is ~1e-11, so
  // gradients below 1e-5 are compared in absolute terms.
  return grad_check(loss, model.parameters(), step, tol, 1e-5);
}

RobustnessResult disable_top1_eval(const Model<float>& model, std::span<const std::int32_t> stream,
                                   std::size_t window, std::uint64_t seed) {
  const ModelConfig& c = model.config();
  if (!c.is_moe() || !c.has_router()) {
    throw ConfigError("disable-top-1 needs a probabilistic router; '" +
                      std::string(to_string(c.variant)) + "' has none");
  }
  if (c.activation_per_router() >= c.experts_per_router()) {
    throw ConfigError("disable-top-1: all " + std::to_string(c.experts_per_router()) +
                      " experts are active, nothing to reselect");
  }
  RobustnessResult r;
  r.ppl_normal = perplexity(model, stream, window);
  ForwardOptions masked;
  masked.disable_top1 = true;
  masked.robustness_seed = seed;
  r.ppl_masked = perplexity(model, stream, window, masked);
  return r;
}

double sublayer_choice_frequency(std::uint64_t seed, std::uint64_t layer, std::size_t draws) {
  if (draws == 0) return 0.0;
  std::size_t b = 0;
  for (std::size_t t = 0; t < draws; ++t) b += robustness_sublayer(seed, layer, t);
  return static_cast<double>(b) / static_cast<double>(draws);
}

TrainOutcome train_and_evaluate(const ExperimentConfig& config,
                                std::span<const std::int32_t> tokens, const std::string& run,
                                const MetricsSink& sink) {
  Trainer trainer(config, std::vector<std::int32_t>(tokens.begin(), tokens.end()));
  TrainOutcome out;
  trainer.run([&](const MetricsRecord& rec) {
    MetricsRecord tagged = rec;
    tagged.set("run", std::string_view(run));
    out.records.push_back(tagged);
    if (sink) sink(tagged);
  });
  std::vector<double> lm;
  for (const auto& rec : out.records) {
    if (rec.kind() == "train") lm.push_back(rec.require("lm_loss"));
  }
  const std::size_t tail = std::max<std::size_t>(1, lm.size() / 10);
  double acc = 0.0;
  for (std::size_t i = lm.size() - tail; i < lm.size(); ++i) acc += lm[i];
  out.final_lm_loss = acc / static_cast<double>(tail);
  for (auto it = out.records.rbegin(); it != out.records.rend(); ++it) {
    if (it->kind() == "eval") {
      out.ppl = it->require("ppl");
      break;
    }
  }
  return out;
}

std::vector<SweepEntry> granularity_configs(const ModelConfig& base,
                                            std::span<const std::size_t> m_values) {
  std::vector<std::size_t> bad;
  for (std::size_t m : m_values) {
    if (m == 0 || base.ffn_dim % m != 0) bad.push_back(m);
  }
  if (!bad.empty()) {
    std::string valid;
    for (std::size_t m = 1; m <= base.ffn_dim && m <= 64; ++m) {
      if (base.ffn_dim % m) continue;
      if (!valid.empty()) valid += ", ";
      valid += std::to_string(m);
    }
    throw ConfigError("ffn_dim " + std::to_string(base.ffn_dim) + " is not divisible by m=" +
                      std::to_string(bad.front()) + " (valid m: " + valid + ")");
  }
  std::vector<SweepEntry> out;
  auto add = [&](std::size_t m, MoeVariant variant, const char* mode) {
    ModelConfig c = base;
    c.variant = variant;
    c.split = m;
    c.validate();
    SweepEntry e;
    e.m = m;
    e.mode = mode;
    e.activation = variant == MoeVariant::kCartesian
                       ? std::to_string(c.activation_per_router()) + "+" +
                             std::to_string(c.activation_per_router())
                       : std::to_string(c.activation_per_router());
    e.config = c;
    e.counts = count_params(c);
    out.push_back(std::move(e));
  };
  for (std::size_t m : m_values) {
    add(m, m == 1 ? MoeVariant::kSmoe : MoeVariant::kFineGrained, "flattened");
  }
  for (std::size_t m : m_values) {
    if (m < 2 || (m * base.num_experts) % 2 || (m * base.top_k) % 2) continue;
    add(m, MoeVariant::kCartesian, "cartesian");
  }
  return out;
}

std::vector<SweepRow> granularity_sweep(const ModelConfig& base,
                                        std::span<const std::size_t> m_values,
                                        const ExperimentConfig& experiment,
                                        std::span<const std::int32_t> tokens,
                                        const MetricsSink& sink) {
  std::vector<SweepRow> rows;
  for (auto& entry : granularity_configs(base, m_values)) {
    ExperimentConfig ex = experiment;
    ex.model = entry.config;
    const std::string run = entry.mode + "-m" + std::to_string(entry.m);
    auto outcome = train_and_evaluate(ex, tokens, run, sink);
    rows.push_back({std::move(entry), outcome.ppl});
  }
  return rows;
}

std::string sweep_table(const std::vector<SweepRow>& rows) {
  std::vector<std::vector<std::string>> cells;
  for (const auto& r : rows) {
    const auto& e = r.entry;
    cells.push_back({std::to_string(e.config.expert_ffn_dim()), e.activation, std::to_string(e.m),
                     e.mode, std::to_string(e.counts.total), std::to_string(e.counts.activated),
                     std::to_string(e.counts.activated_expert()), format_double(r.ppl)});
  }
  return format_table(
      {"D/m", "TopK", "m", "mode", "params", "activated", "activated_expert", "ppl"}, cells);
}

void check_parity(const std::vector<std::pair<std::string, ModelConfig>>& configs,
                  double tolerance) {
  if (configs.size() < 2) return;
  const auto ref = count_params(configs.front().second);
  auto rel = [](std::uint64_t a, std::uint64_t b) {
    return (static_cast<double>(a) - static_cast<double>(b)) / static_cast<double>(b);
  };
  for (std::size_t i = 1; i < configs.size(); ++i) {
    const auto r = count_params(configs[i].second);
    const double dt = rel(r.total, ref.total), da = rel(r.activated, ref.activated);
    if (std::abs(dt) > tolerance || std::abs(da) > tolerance) {
      throw ConfigError(
          "parameter parity violated: '" + configs[i].first + "' has " + std::to_string(r.total) +
          " total / " + std::to_string(r.activated) + " activated, '" + configs.front().first +
          "' has " + std::to_string(ref.total) + " / " + std::to_string(ref.activated) +
          " (delta " + std::to_string(static_cast<long long>(r.total - ref.total)) + " total, " +
          std::to_string(static_cast<long long>(r.activated - ref.activated)) + " activated)");
    }
  }
}

std::vector<CompareRow> compare_variants(
    const std::vector<std::pair<std::string, ModelConfig>>& configs,
    const ExperimentConfig& experiment, std::span<const std::int32_t> tokens,
    const MetricsSink& sink) {
  if (configs.empty()) throw ConfigError("compare needs at least one config");
  check_parity(configs);
  std::vector<CompareRow> rows;
  for (const auto& [name, model] : configs) {
    ExperimentConfig ex = experiment;
    ex.model = model;
    auto outcome = train_and_evaluate(ex, tokens, name, sink);
    rows.push_back({name, count_params(model), outcome.ppl, outcome.final_lm_loss});
  }
  std::stable_sort(rows.begin(), rows.end(),
                   [](const CompareRow& a, const CompareRow& b) { return a.ppl < b.ppl; });
  return rows;
}

std::string compare_table(const std::vector<CompareRow>& rows) {
  std::vector<std::vector<std::string>> cells;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    cells.push_back({std::to_string(i + 1), r.name, std::to_string(r.counts.total),
                     std::to_string(r.counts.activated), format_double(r.final_lm_loss),
                     format_double(r.ppl)});
  }
  return format_table({"rank", "name", "params", "activated", "final_lm_loss", "ppl"}, cells);
}

}  // namespace cpmoe
