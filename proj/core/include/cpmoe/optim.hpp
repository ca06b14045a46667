// SPDX-FileCopyrightText: © 2026 The cpmoe Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <vector>

#include "cpmoe/tensor.hpp"

namespace cpmoe {

struct AdamWConfig {
  double lr = 1.5e-4;
  /// Negative selects 0.1 * lr.
  double min_lr = -1.0;
  /// Negative selects 1% of total_steps.
  long warmup_steps = -1;
  std::size_t total_steps = 1000;
  double weight_decay = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  /// Global gradient-norm clip; zero or negative disables it.
  double grad_clip = 1.0;

  double resolved_min_lr() const noexcept { return min_lr < 0.0 ? 0.1 * lr : min_lr; }
  std::size_t resolved_warmup() const noexcept;
  bool operator==(const AdamWConfig&) const = default;
};

/// Linear warmup to `base` over `warmup` steps, cosine decay to `min` at
/// `total`, and `min` from then on. `step` counts completed updates.
double cosine_lr(std::size_t step, double base, double min, std::size_t warmup,
                 std::size_t total) noexcept;

template <typename T>
struct OptimState {
  std::size_t step = 0;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
};

/// Adam with decoupled weight decay. Decay applies to parameters of rank two
/// or more; gains are left alone.
template <typename T>
class AdamW {
 public:
  AdamW(std::vector<Tensor<T>> params, AdamWConfig config);

  /// Scales every gradient so their global L2 norm is at most `max_norm`.
  /// Returns the norm before clipping. Throws NumericError when it is not
  /// finite.
  double clip_grad_norm(double max_norm);

  /// One update from the current gradients. Returns the learning rate used.
  double step();

  double current_lr() const noexcept;
  const AdamWConfig& config() const noexcept { return config_; }
  const OptimState<T>& state() const noexcept { return state_; }
  /// Throws ContractError when shapes do not match the parameters.
  void load_state(OptimState<T> state);

 private:
  std::vector<Tensor<T>> params_;
  std::vector<bool> decay_;
  AdamWConfig config_;
  OptimState<T> state_;
};

extern template class AdamW<float>;
extern template class AdamW<double>;

}  // namespace cpmoe
