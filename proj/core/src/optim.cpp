// SPDX-FileCopyrightText: © 2026 The cpmoe Authors
//
// SPDX-License-Identifier: Apache-2.0

#include "cpmoe/optim.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "cpmoe/errors.hpp"

namespace cpmoe {

std::size_t AdamWConfig::resolved_warmup() const noexcept {
  if (warmup_steps >= 0) return static_cast<std::size_t>(warmup_steps);
  return total_steps / 100;
}

double cosine_lr(std::size_t step, double base, double min, std::size_t warmup,
                 std::size_t total) noexcept {
  if (step >= total) return min;
  if (step < warmup) return base * static_cast<double>(step + 1) / static_cast<double>(warmup);
  const double progress =
      static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
  return min + 0.5 * (base - min) * (1.0 + std::cos(std::numbers::pi * progress));
}

template <typename T>
AdamW<T>::AdamW(std::vector<Tensor<T>> params, AdamWConfig config)
    : params_(std::move(params)), config_(config) {
  for (const auto& p : params_) {
    decay_.push_back(p.rank() >= 2);
    state_.m.emplace_back(p.numel(), T(0));
    state_.v.emplace_back(p.numel(), T(0));
  }
}

template <typename T>
double AdamW<T>::clip_grad_norm(double max_norm) {
  double sq = 0.0;
  for (const auto& p : params_) {
    for (T g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("gradient norm is not finite");
  if (max_norm > 0.0 && norm > max_norm) {
    const T factor = static_cast<T>(max_norm / norm);
    for (auto& p : params_) {
      for (T& g : p.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

template <typename T>
double AdamW<T>::current_lr() const noexcept {
  return cosine_lr(state_.step, config_.lr, config_.resolved_min_lr(), config_.resolved_warmup(),
                   config_.total_steps);
}

template <typename T>
double AdamW<T>::step() {
  const double lr = current_lr();
  state_.step += 1;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state_.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state_.step));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto values = params_[i].mutable_data();
    auto grads = params_[i].grad();
    auto& m = state_.m[i];
    auto& v = state_.v[i];
    const double shrink = decay_[i] ? 1.0 - lr * config_.weight_decay : 1.0;
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double g = grads[j];
      m[j] = static_cast<T>(b1 * m[j] + (1.0 - b1) * g);
      v[j] = static_cast<T>(b2 * v[j] + (1.0 - b2) * g * g);
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      values[j] = static_cast<T>(values[j] * shrink - lr * mhat / (std::sqrt(vhat) + config_.eps));
    }
  }
  return lr;
}

template <typename T>
void AdamW<T>::load_state(OptimState<T> state) {
  if (state.m.size() != params_.size() || state.v.size() != params_.size()) {
    throw ContractError("optimizer state covers " + std::to_string(state.m.size()) +
                        " tensors, model has " + std::to_string(params_.size()));
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (state.m[i].size() != params_[i].numel() || state.v[i].size() != params_[i].numel()) {
      throw ContractError("optimizer state for tensor " + std::to_string(i) +
                          " does not match its parameter");
    }
  }
  state_ = std::move(state);
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace cpmoe
