// SPDX-FileCopyrightText: © 2026 The cpmoe Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <vector>

#include "cpmoe/moe.hpp"
#include "cpmoe/routing.hpp"
#include "cpmoe/tensor.hpp"
#include "cpmoe/transformer.hpp"

namespace cpmoe {

/// Per-router statistics over one mini-batch.
struct BalanceStats {
  /// Fraction of tokens whose argmax expert is i (lowest index on ties).
  std::vector<double> w;
  /// Mean routing probability of expert i.
  std::vector<double> R;
  std::size_t tokens = 0;

  double loss() const noexcept;
  double max_w() const noexcept;
};

/// Throws ContractError for an empty batch or a decision without probs.
BalanceStats balance_stats(const RoutingDecision& decision);

/// sum_i w_i * R_i for one router. w is a constant; gradients reach the
/// router only through R.
template <typename T>
Tensor<T> router_balance_loss(const RouterRecord<T>& record);

/// Sum of router_balance_loss over every router of every MoE layer. Routers
/// without probabilities (hash) contribute nothing; a model without any
/// yields a constant zero.
template <typename T>
Tensor<T> balance_loss(const std::vector<LayerRouting<T>>& routing);

/// lm + alpha * bal.
template <typename T>
Tensor<T> total_loss(const Tensor<T>& lm, const Tensor<T>& bal, double alpha);

}  // namespace cpmoe
