// SPDX-FileCopyrightText: © 2026 The cpmoe Authors
//
// SPDX-License-Identifier: Apache-2.0

#include "cpmoe/trainer.hpp"

#include <cmath>
#include <string>

#include "cpmoe/balance.hpp"
#include "cpmoe/checkpoint.hpp"
#include "cpmoe/corpus.hpp"
#include "cpmoe/errors.hpp"
#include "cpmoe/rng.hpp"

namespace cpmoe {

AdamWConfig resolved_optim(const ExperimentConfig& config) {
  AdamWConfig o = config.optim;
  o.total_steps = config.steps;
  return o;
}

Trainer::Trainer(const ExperimentConfig& config, std::vector<std::int32_t> tokens)
    : Trainer(config, std::move(tokens), Model<float>(config.model)) {}

Trainer::Trainer(const ExperimentConfig& config, std::vector<std::int32_t> tokens,
                 Model<float> model)
    : config_(config),
      model_(std::move(model)),
      optim_(model_.parameters(), resolved_optim(config)) {
  config_.model = model_.config();
  config_.validate();
  auto split = split_corpus(tokens, config_.held_out_fraction);
  train_ = std::move(split.train);
  held_out_ = std::move(split.held_out);
  if (train_.size() < config_.seq_len + 2) {
    throw ConfigError("training corpus has " + std::to_string(train_.size()) +
                      " tokens, fewer than one window of " + std::to_string(config_.seq_len + 1));
  }
  if (held_out_.size() < 2) throw ConfigError("held-out corpus has fewer than two tokens");
}

Trainer Trainer::resume(const ExperimentConfig& config, std::vector<std::int32_t> tokens,
                        const std::filesystem::path& checkpoint) {
  auto ckpt = read_checkpoint(checkpoint);
  auto model = model_from_checkpoint(ckpt);
  auto state = optim_from_checkpoint(ckpt, model);
  ExperimentConfig c = config;
  c.model = ckpt.config;
  Trainer t(c, std::move(tokens), std::move(model));
  if (state) t.optim_.load_state(std::move(*state));
  return t;
}

TokenBatch Trainer::batch_at(std::size_t step) const {
  const std::size_t window = config_.seq_len + 1;
  const std::size_t starts = train_.size() - window + 1;
  Rng rng(config_.seed, "data");
  TokenBatch b{config_.batch_size, window, {}};
  b.ids.reserve(config_.batch_size * window);
  for (std::size_t row = 0; row < config_.batch_size; ++row) {
    const std::size_t start = rng.at(step * config_.batch_size + row) % starts;
    b.ids.insert(b.ids.end(), train_.begin() + static_cast<long>(start),
                 train_.begin() + static_cast<long>(start + window));
  }
  return b;
}

MetricsRecord Trainer::train_step() {
  const std::size_t step = optim_.state().step;
  const auto batch = batch_at(step);
  model_.zero_grad();
  ForwardOptions opts;
  opts.training = true;

  MetricsRecord rec("train");
  try {
    auto r = lm_loss(model_, batch, opts);
    auto bal = balance_loss(r.routing);
    auto loss = total_loss(r.loss, bal, config_.model.alpha_balance);
    const double lm = r.loss.item(), b = bal.item(), total = loss.item();
    if (!std::isfinite(lm) || !std::isfinite(total)) {
      throw NumericError("loss is not finite (lm_loss=" + std::to_string(lm) + ")");
    }
    backward(loss);
    const double norm = optim_.clip_grad_norm(optim_.config().grad_clip);
    const double lr = optim_.step();

    rec.set("step", static_cast<std::uint64_t>(step + 1));
    rec.set("lm_loss", lm).set("bal_loss", b).set("loss", total);
    rec.set("lr", lr).set("grad_norm", norm);
    for (const auto& layer : r.routing) {
      const std::string blk = "b" + std::to_string(layer.block);
      std::size_t slots = 0, dropped = 0;
      for (const auto& rr : layer.records) {
        slots += rr.decision.total_slots();
        dropped += rr.decision.dropped_slots();
      }
      rec.set("drop_rate." + blk,
              slots ? static_cast<double>(dropped) / static_cast<double>(slots) : 0.0);
      for (std::size_t j = 0; j < layer.records.size(); ++j) {
        if (layer.records[j].decision.probs.empty()) continue;
        rec.set("max_w." + blk + ".r" + std::to_string(j),
                balance_stats(layer.records[j].decision).max_w());
      }
    }
  } catch (const NumericError& e) {
    throw NumericError("step " + std::to_string(step + 1) + ": " + e.what());
  }
  return rec;
}

double Trainer::held_out_perplexity() const {
  return perplexity(model_, std::span<const std::int32_t>(held_out_), config_.seq_len + 1);
}

MetricsRecord Trainer::eval_record() const {
  MetricsRecord rec("eval");
  rec.set("step", static_cast<std::uint64_t>(step()));
  const double ppl = held_out_perplexity();
  rec.set("ppl", ppl).set("nll", std::log(ppl));
  return rec;
}

void Trainer::run(const std::function<void(const MetricsRecord&)>& sink) {
  while (step() < config_.steps) {
    auto rec = train_step();
    if (sink) sink(rec);
    const bool last = step() == config_.steps;
    if (sink && (last || (config_.eval_every && step() % config_.eval_every == 0))) {
      sink(eval_record());
    }
  }
}

void Trainer::save(const std::filesystem::path& path) const {
  save_checkpoint(path, model_, &optim_.state());
}

}  // namespace cpmoe
