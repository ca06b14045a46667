// SPDX-FileCopyrightText: © 2026 The cpmoe Authors
//
// SPDX-License-Identifier: Apache-2.0

#include "cpmoe/balance.hpp"

#include <algorithm>

#include "cpmoe/errors.hpp"
#include "cpmoe/ops.hpp"

namespace cpmoe {

double BalanceStats::loss() const noexcept {
  double l = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) l += w[i] * R[i];
  return l;
}

double BalanceStats::max_w() const noexcept {
  return w.empty() ? 0.0 : *std::max_element(w.begin(), w.end());
}

BalanceStats balance_stats(const RoutingDecision& d) {
  if (d.num_tokens == 0) throw ContractError("balance loss over an empty batch");
  if (d.probs.size() != d.num_tokens * d.num_experts) {
    throw ContractError("balance loss needs full router probabilities");
  }
  BalanceStats s;
  s.tokens = d.num_tokens;
  s.w.assign(d.num_experts, 0.0);
  s.R.assign(d.num_experts, 0.0);
  for (std::size_t t = 0; t < d.num_tokens; ++t) {
    auto p = d.token_probs(t);
    s.w[argmax_lowest(p)] += 1.0;
    for (std::size_t i = 0; i < d.num_experts; ++i) s.R[i] += p[i];
  }
  const double n = static_cast<double>(d.num_tokens);
  for (std::size_t i = 0; i < d.num_experts; ++i) {
    s.w[i] /= n;
    s.R[i] /= n;
  }
  return s;
}

template <typename T>
Tensor<T> router_balance_loss(const RouterRecord<T>& record) {
  if (!record.probs.defined()) throw ContractError("balance loss needs router probabilities");
  const auto& d = record.decision;
  if (d.num_tokens == 0) throw ContractError("balance loss over an empty batch");
  std::vector<T> w(d.num_experts, T(0));
  auto probs = record.probs.data();
  for (std::size_t t = 0; t < d.num_tokens; ++t) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < d.num_experts; ++i) {
      if (probs[t * d.num_experts + i] > probs[t * d.num_experts + best]) best = i;
    }
    w[best] += T(1);
  }
  for (T& x : w) x /= static_cast<T>(d.num_tokens);
  // mean_t sum_i p[t,i] w_i = sum_i w_i R_i
  auto wc = Tensor<T>::from({d.num_experts, 1}, std::move(w));
  return ops::mean(ops::matmul(record.probs, wc));
}

template <typename T>
Tensor<T> balance_loss(const std::vector<LayerRouting<T>>& routing) {
  Tensor<T> total;
  for (const auto& layer : routing) {
    for (const auto& rec : layer.records) {
      if (!rec.probs.defined()) continue;
      auto l = router_balance_loss(rec);
      total = total.defined() ? ops::add(total, l) : l;
    }
  }
  return total.defined() ? total : Tensor<T>::scalar(T(0));
}

template <typename T>
Tensor<T> total_loss(const Tensor<T>& lm, const Tensor<T>& bal, double alpha) {
  return ops::add(lm, ops::scale(bal, static_cast<T>(alpha)));
}

#define CPMOE_INSTANTIATE_BALANCE(T)                                               \
  template Tensor<T> router_balance_loss(const RouterRecord<T>&);                 \
  template Tensor<T> balance_loss(const std::vector<LayerRouting<T>>&);           \
  template Tensor<T> total_loss(const Tensor<T>&, const Tensor<T>&, double);

CPMOE_INSTANTIATE_BALANCE(float)
CPMOE_INSTANTIATE_BALANCE(double)

#undef CPMOE_INSTANTIATE_BALANCE

}  // namespace cpmoe
