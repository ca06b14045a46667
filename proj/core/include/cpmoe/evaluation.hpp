// SPDX-FileCopyrightText: © 2026 The cpmoe Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cpmoe/config_io.hpp"
#include "cpmoe/grad_check.hpp"
#include "cpmoe/metrics.hpp"
#include "cpmoe/model_config.hpp"
#include "cpmoe/param_count.hpp"
#include "cpmoe/transformer.hpp"

namespace cpmoe {

using MetricsSink = std::function<void(const MetricsRecord&)>;

/// Finite-difference check of lm_loss + alpha * balance_loss with respect to
/// every parameter of a double-precision model built from `config`, with
/// weights redrawn from N(0, weight_scale) so gradients are not vanishingly
/// small. Routing is recorded on the first pass and replayed so the
/// perturbed evaluations keep the same expert selection.
GradCheckReport model_grad_check(const ModelConfig& config, std::uint64_t seed,
                                 std::size_t batch = 2, std::size_t seq_len = 4,
                                 double step = 1e-5, double tol = 1e-4,
                                 double weight_scale = 0.4);

struct RobustnessResult {
  double ppl_normal = 0.0;
  double ppl_masked = 0.0;
};

/// Perplexity with normal routing and with each token's top-1 expert masked
/// and the remaining experts reselected. In Cartesian layers one sub-layer
/// per (token, layer) is masked, chosen on stream "robustness". Dropless.
/// Throws ConfigError for hash routing or when every expert is already
/// active (nothing left to reselect).
RobustnessResult disable_top1_eval(const Model<float>& model, std::span<const std::int32_t> stream,
                                   std::size_t window, std::uint64_t seed);

/// Fraction of `draws` tokens for which sub-layer B is the masked one.
double sublayer_choice_frequency(std::uint64_t seed, std::uint64_t layer, std::size_t draws);

struct TrainOutcome {
  double ppl = 0.0;
  double final_lm_loss = 0.0;  // mean over the last tenth of the steps
  std::vector<MetricsRecord> records;
};

/// Trains `config` from scratch on `tokens` and evaluates held-out
/// perplexity. Every record also goes to `sink`, tagged with `run`.
TrainOutcome train_and_evaluate(const ExperimentConfig& config,
                                std::span<const std::int32_t> tokens, const std::string& run,
                                const MetricsSink& sink = {});

struct SweepEntry {
  std::size_t m = 1;
  std::string mode;        // "flattened" or "cartesian"
  std::string activation;  // "4" or "2+2"
  ModelConfig config;
  ParamReport counts;
};

/// Table rows for splitting each of the base's N full-sized experts into m
/// parts with m*K active: a flattened row for every m and a Cartesian row for
/// every m >= 2 the Cartesian constraints allow. Throws ConfigError listing
/// the valid factors when ffn_dim is not divisible by some m.
std::vector<SweepEntry> granularity_configs(const ModelConfig& base,
                                            std::span<const std::size_t> m_values);

struct SweepRow {
  SweepEntry entry;
  double ppl = 0.0;
};

std::vector<SweepRow> granularity_sweep(const ModelConfig& base,
                                        std::span<const std::size_t> m_values,
                                        const ExperimentConfig& experiment,
                                        std::span<const std::int32_t> tokens,
                                        const MetricsSink& sink = {});

/// Columns: D/m, TopK, m, mode, params, activated, activated_expert, ppl.
std::string sweep_table(const std::vector<SweepRow>& rows);

/// Throws ConfigError unless every config's total and activated counts lie
/// within `tolerance` (relative) of the first one's; the message lists the
/// offending config's counts and deltas.
void check_parity(const std::vector<std::pair<std::string, ModelConfig>>& configs,
                  double tolerance = 0.01);

struct CompareRow {
  std::string name;
  ParamReport counts;
  double ppl = 0.0;
  double final_lm_loss = 0.0;
};

/// Parity check, then identical-seed training of each config. Rows are sorted
/// by perplexity, best first.
std::vector<CompareRow> compare_variants(
    const std::vector<std::pair<std::string, ModelConfig>>& configs,
    const ExperimentConfig& experiment, std::span<const std::int32_t> tokens,
    const MetricsSink& sink = {});

/// Columns: rank, name, params, activated, final_lm_loss, ppl.
std::string compare_table(const std::vector<CompareRow>& rows);

}  // namespace cpmoe
