// SPDX-FileCopyrightText: © 2026 The cpmoe Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "cpmoe/model_config.hpp"
#include "cpmoe/optim.hpp"

namespace cpmoe {

struct ExperimentConfig {
  ModelConfig model;
  /// File path or synthetic:<grammar|skewed>:<bytes>.
  std::string data_path = "synthetic:grammar:200000";
  std::size_t steps = 500;
  std::size_t batch_size = 16;
  std::size_t seq_len = 256;
  /// Held-out perplexity every this many steps; zero means only at the end.
  std::size_t eval_every = 0;
  std::string out_dir = "runs/default";
  /// Data order and every other non-init stream.
  std::uint64_t seed = 1234;
  double held_out_fraction = 0.1;
  AdamWConfig optim;

  bool operator==(const ExperimentConfig&) const = default;
  /// Throws ConfigError on seq_len > model.max_seq_len, steps == 0 and the like.
  void validate() const;
};

/// Flat `key = value` lines; `#` starts a comment. Later keys win.
std::map<std::string, std::string, std::less<>> parse_key_values(std::string_view text);

/// Keys under `model.`; `model.preset` (if present) is applied first.
ModelConfig parse_model_config(const std::map<std::string, std::string, std::less<>>& kv);
std::string serialize_model_config(const ModelConfig& config);

/// Throws ConfigError naming unknown keys and malformed values, and when the
/// result fails validate().
ExperimentConfig parse_experiment_config(std::string_view text);
std::string serialize_experiment_config(const ExperimentConfig& config);

ExperimentConfig load_experiment_config(const std::filesystem::path& path);
void save_experiment_config(const ExperimentConfig& config, const std::filesystem::path& path);

/// Shortest decimal that parses back to the same double.
std::string format_double(double value);

}  // namespace cpmoe
