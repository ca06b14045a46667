// SPDX-FileCopyrightText: © 2026 The cpmoe Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace cpmoe {

/// Per-token output of one router. Indices are local to the router's experts.
struct RoutingDecision {
  std::size_t num_tokens = 0;
  std::size_t num_experts = 0;
  /// Row-major [num_tokens, num_experts] softmax probabilities; empty for
  /// hash routing, which has no router.
  std::vector<double> probs;
  std::vector<std::vector<std::size_t>> selected;
  /// Raw probabilities at `selected` (no renormalization); 1/K for hash.
  std::vector<std::vector<double>> gates;
  /// Set per (token, slot) when the expert's capacity was exhausted.
  std::vector<std::vector<bool>> dropped;
  /// Highest-probability expert per token, lowest index on ties. Empty for
  /// hash routing.
  std::vector<std::size_t> top1;

  std::span<const double> token_probs(std::size_t token) const {
    return std::span<const double>(probs).subspan(token * num_experts, num_experts);
  }
  std::size_t total_slots() const noexcept;
  std::size_t dropped_slots() const noexcept;
};

/// Index of the largest entry; the lowest index wins ties.
std::size_t argmax_lowest(std::span<const double> values);

/// Top-K over each token's probability row. When `mask_top1` is non-empty,
/// tokens with a non-zero flag have their top-1 expert excluded before
/// selection (the disable-top-1 robustness probe). Throws ConfigError when K
/// is zero or exceeds the selectable experts.
RoutingDecision select_topk(std::span<const double> probs, std::size_t num_tokens,
                            std::size_t num_experts, std::size_t k,
                            std::span<const std::uint8_t> mask_top1 = {});

/// Minimal prefix of the descending-sorted probabilities whose sum reaches
/// `threshold`; at least one expert is always chosen. Throws ConfigError for a
/// threshold outside (0, 1].
RoutingDecision select_topp(std::span<const double> probs, std::size_t num_tokens,
                            std::size_t num_experts, double threshold,
                            std::span<const std::uint8_t> mask_top1 = {});

/// Fixed assignment of each token id to `k` distinct experts through a seeded
/// hash (stream "hash-router"). Gates are 1/k.
RoutingDecision hash_route(std::span<const std::int32_t> token_ids, std::size_t num_experts,
                           std::size_t k, std::uint64_t seed);

/// ceil(capacity_factor * activation * tokens / experts).
std::size_t expert_capacity(double capacity_factor, std::size_t activation,
                            std::size_t num_tokens, std::size_t num_experts);

/// Marks slots beyond each expert's capacity as dropped, filling in token
/// order then slot order. Training-time only.
RoutingDecision apply_capacity(RoutingDecision decision, double capacity_factor,
                               std::size_t activation);

/// Which Cartesian sub-layer (0 = A, 1 = B) has its top-1 expert masked for a
/// token in a layer during the robustness probe (stream "robustness").
std::size_t robustness_sublayer(std::uint64_t seed, std::uint64_t layer, std::uint64_t token);

/// Records routing decisions on one forward pass and replays the index
/// choices (selection, drops, argmax) on later passes, so that finite
/// differences see the same discrete routing as the analytic gradient.
class RoutingTape {
 public:
  enum class Mode { kRecord, kReplay };

  Mode mode() const noexcept { return mode_; }
  void start_replay() noexcept {
    mode_ = Mode::kReplay;
    cursor_ = 0;
  }
  void record(const RoutingDecision& d) { decisions_.push_back(d); }
  /// Next recorded decision; throws ContractError when the tape runs out.
  const RoutingDecision& next();
  std::size_t size() const noexcept { return decisions_.size(); }

 private:
  Mode mode_ = Mode::kRecord;
  std::size_t cursor_ = 0;
  std::vector<RoutingDecision> decisions_;
};

}  // namespace cpmoe
