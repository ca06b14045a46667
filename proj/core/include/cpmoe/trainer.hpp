// SPDX-FileCopyrightText: © 2026 The cpmoe Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "cpmoe/config_io.hpp"
#include "cpmoe/metrics.hpp"
#include "cpmoe/model_config.hpp"
#include "cpmoe/optim.hpp"
#include "cpmoe/transformer.hpp"

namespace cpmoe {

/// Deterministic training loop over a token stream. Batches are windows of
/// seq_len + 1 tokens from the training part of the stream whose starts are
/// drawn on stream "data" at index step * batch_size + row, so the batch at a
/// step does not depend on anything that happened before it.
class Trainer {
 public:
  /// `config.model` is the architecture; `tokens` the whole corpus.
  Trainer(const ExperimentConfig& config, std::vector<std::int32_t> tokens);

  /// Continues from a checkpoint written by save(); the checkpoint's model
  /// config replaces `config.model`.
  static Trainer resume(const ExperimentConfig& config, std::vector<std::int32_t> tokens,
                        const std::filesystem::path& checkpoint);

  /// One optimizer update. Record fields: step (completed updates), lm_loss,
  /// bal_loss, loss, lr, grad_norm, then per MoE block b `drop_rate.b<b>` and
  /// per router j `max_w.b<b>.r<j>`. Throws NumericError naming the step
  /// when the loss is not finite.
  MetricsRecord train_step();

  /// Runs until `steps()` updates are done. `sink` sees every record,
  /// including `kind=eval` records every eval_every steps and at the end.
  void run(const std::function<void(const MetricsRecord&)>& sink = {});

  /// Held-out perplexity with windows of seq_len + 1 tokens.
  double held_out_perplexity() const;
  MetricsRecord eval_record() const;

  TokenBatch batch_at(std::size_t step) const;

  void save(const std::filesystem::path& path) const;

  std::size_t step() const noexcept { return optim_.state().step; }
  std::size_t steps() const noexcept { return config_.steps; }
  const ExperimentConfig& config() const noexcept { return config_; }
  Model<float>& model() noexcept { return model_; }
  const Model<float>& model() const noexcept { return model_; }
  std::span<const std::int32_t> train_tokens() const noexcept { return train_; }
  std::span<const std::int32_t> held_out_tokens() const noexcept { return held_out_; }

 private:
  Trainer(const ExperimentConfig& config, std::vector<std::int32_t> tokens, Model<float> model);

  ExperimentConfig config_;
  std::vector<std::int32_t> train_;
  std::vector<std::int32_t> held_out_;
  Model<float> model_;
  AdamW<float> optim_;
};

/// Adam settings filled in from an experiment (total steps).
AdamWConfig resolved_optim(const ExperimentConfig& config);

}  // namespace cpmoe
