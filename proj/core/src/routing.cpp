// SPDX-FileCopyrightText: © 2026 The cpmoe Authors
//
// SPDX-License-Identifier: Apache-2.0

#include "cpmoe/routing.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "cpmoe/errors.hpp"
#include "cpmoe/rng.hpp"

namespace cpmoe {

std::size_t RoutingDecision::total_slots() const noexcept {
  std::size_t n = 0;
  for (const auto& s : selected) n += s.size();
  return n;
}

std::size_t RoutingDecision::dropped_slots() const noexcept {
  std::size_t n = 0;
  for (const auto& row : dropped) n += static_cast<std::size_t>(std::count(row.begin(), row.end(), true));
  return n;
}

std::size_t argmax_lowest(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

namespace {

void check_probs_shape(std::span<const double> probs, std::size_t tokens, std::size_t experts,
                       std::span<const std::uint8_t> mask) {
  if (experts == 0 || probs.size() != tokens * experts) {
    throw ConfigError("routing: " + std::to_string(probs.size()) + " probabilities for " +
                      std::to_string(tokens) + " tokens x " + std::to_string(experts) + " experts");
  }
  if (!mask.empty() && mask.size() != tokens) {
    throw ConfigError("routing: mask has " + std::to_string(mask.size()) + " entries for " +
                      std::to_string(tokens) + " tokens");
  }
}

RoutingDecision empty_decision(std::span<const double> probs, std::size_t tokens,
                               std::size_t experts) {
  RoutingDecision d;
  d.num_tokens = tokens;
  d.num_experts = experts;
  d.probs.assign(probs.begin(), probs.end());
  d.selected.resize(tokens);
  d.gates.resize(tokens);
  d.dropped.resize(tokens);
  d.top1.resize(tokens);
  return d;
}

/// Expert indices sorted by descending probability, lowest index first on
/// ties, optionally without the top-1 expert.
std::vector<std::size_t> ranked(std::span<const double> row, std::size_t top1, bool masked) {
  std::vector<std::size_t> order(row.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (masked) order.erase(order.begin() + static_cast<std::ptrdiff_t>(top1));
  std::stable_sort(order.begin(), order.end(),
                   [&row](std::size_t a, std::size_t b) { return row[a] > row[b]; });
  return order;
}

}  // namespace

RoutingDecision select_topk(std::span<const double> probs, std::size_t num_tokens,
                            std::size_t num_experts, std::size_t k,
                            std::span<const std::uint8_t> mask_top1) {
  check_probs_shape(probs, num_tokens, num_experts, mask_top1);
  const bool any_mask =
      std::any_of(mask_top1.begin(), mask_top1.end(), [](std::uint8_t m) { return m != 0; });
  const std::size_t selectable = any_mask ? num_experts - 1 : num_experts;
  if (k == 0 || k > selectable) {
    throw ConfigError("route_topk: K=" + std::to_string(k) + " but only " +
                      std::to_string(selectable) + " selectable experts");
  }
  RoutingDecision d = empty_decision(probs, num_tokens, num_experts);
  for (std::size_t t = 0; t < num_tokens; ++t) {
    const auto row = d.token_probs(t);
    d.top1[t] = argmax_lowest(row);
    const bool masked = !mask_top1.empty() && mask_top1[t] != 0;
    auto order = ranked(row, d.top1[t], masked);
    order.resize(k);
    for (std::size_t e : order) d.gates[t].push_back(row[e]);
    d.selected[t] = std::move(order);
    d.dropped[t].assign(k, false);
  }
  return d;
}

RoutingDecision select_topp(std::span<const double> probs, std::size_t num_tokens,
                            std::size_t num_experts, double threshold,
                            std::span<const std::uint8_t> mask_top1) {
  if (!(threshold > 0.0 && threshold <= 1.0)) {
    throw ConfigError("topp_route: threshold " + std::to_string(threshold) +
                      " outside (0, 1]");
  }
  check_probs_shape(probs, num_tokens, num_experts, mask_top1);
  const bool any_mask =
      std::any_of(mask_top1.begin(), mask_top1.end(), [](std::uint8_t m) { return m != 0; });
  if (any_mask && num_experts < 2) {
    throw ConfigError("topp_route: cannot mask the only expert");
  }
  RoutingDecision d = empty_decision(probs, num_tokens, num_experts);
  for (std::size_t t = 0; t < num_tokens; ++t) {
    const auto row = d.token_probs(t);
    d.top1[t] = argmax_lowest(row);
    const bool masked = !mask_top1.empty() && mask_top1[t] != 0;
    const auto order = ranked(row, d.top1[t], masked);
    double cumulative = 0.0;
    for (std::size_t e : order) {
      d.selected[t].push_back(e);
      d.gates[t].push_back(row[e]);
      cumulative += row[e];
      if (cumulative >= threshold) break;
    }
    d.dropped[t].assign(d.selected[t].size(), false);
  }
  return d;
}

RoutingDecision hash_route(std::span<const std::int32_t> token_ids, std::size_t num_experts,
                           std::size_t k, std::uint64_t seed) {
  if (k == 0 || k > num_experts) {
    throw ConfigError("hash_route: K=" + std::to_string(k) + " with " +
                      std::to_string(num_experts) + " experts");
  }
  const Rng rng(seed, "hash-router");
  RoutingDecision d;
  d.num_tokens = token_ids.size();
  d.num_experts = num_experts;
  d.selected.resize(token_ids.size());
  d.gates.resize(token_ids.size());
  d.dropped.resize(token_ids.size());
  std::vector<std::size_t> pool(num_experts);
  for (std::size_t t = 0; t < token_ids.size(); ++t) {
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    const auto id = static_cast<std::uint64_t>(static_cast<std::uint32_t>(token_ids[t]));
    // Partial Fisher-Yates keyed only on the token id.
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t r = j + rng.at((id << 8) + j) % (num_experts - j);
      std::swap(pool[j], pool[r]);
    }
    d.selected[t].assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k));
    d.gates[t].assign(k, 1.0 / static_cast<double>(k));
    d.dropped[t].assign(k, false);
  }
  return d;
}

std::size_t expert_capacity(double capacity_factor, std::size_t activation,
                            std::size_t num_tokens, std::size_t num_experts) {
  if (!(capacity_factor > 0.0)) {
    throw ConfigError("apply_capacity: capacity_factor must be positive, got " +
                      std::to_string(capacity_factor));
  }
  if (num_experts == 0) throw ConfigError("apply_capacity: no experts");
  return static_cast<std::size_t>(std::ceil(
      capacity_factor * static_cast<double>(activation * num_tokens) /
      static_cast<double>(num_experts)));
}

RoutingDecision apply_capacity(RoutingDecision decision, double capacity_factor,
                               std::size_t activation) {
  const std::size_t capacity = expert_capacity(capacity_factor, activation, decision.num_tokens,
                                               decision.num_experts);
  std::vector<std::size_t> load(decision.num_experts, 0);
  for (std::size_t t = 0; t < decision.num_tokens; ++t) {
    auto& drops = decision.dropped[t];
    drops.assign(decision.selected[t].size(), false);
    for (std::size_t s = 0; s < decision.selected[t].size(); ++s) {
      const std::size_t e = decision.selected[t][s];
      if (load[e] >= capacity) {
        drops[s] = true;
      } else {
        ++load[e];
      }
    }
  }
  return decision;
}

std::size_t robustness_sublayer(std::uint64_t seed, std::uint64_t layer, std::uint64_t token) {
  const Rng rng(seed, "robustness");
  return static_cast<std::size_t>(rng.at((layer << 40) ^ token) >> 63);
}

const RoutingDecision& RoutingTape::next() {
  if (cursor_ >= decisions_.size()) {
    throw ContractError("routing tape exhausted after " + std::to_string(cursor_) + " decisions");
  }
  return decisions_[cursor_++];
}

}  // namespace cpmoe
