// SPDX-FileCopyrightText: © 2026 The cpmoe Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "cpmoe/model_config.hpp"
#include "cpmoe/routing.hpp"
#include "cpmoe/tensor.hpp"

namespace cpmoe {

/// SwiGLU FFN: down(silu(x gate) * (x up)). gate/up are [d, h], down [h, d].
template <typename T>
struct FfnWeights {
  Tensor<T> gate;
  Tensor<T> up;
  Tensor<T> down;
};

template <typename T>
Tensor<T> ffn_forward(const FfnWeights<T>& w, const Tensor<T>& x);

/// Experts addressed by a single router: a whole flattened MoE layer, or one
/// sub-layer (A or B) of a Cartesian product layer.
template <typename T>
struct ExpertGroup {
  Tensor<T> router;  // [d, experts]; undefined under hash routing
  std::vector<FfnWeights<T>> experts;
  std::vector<FfnWeights<T>> shared;
};

template <typename T>
struct MoeLayerState {
  MoeVariant variant = MoeVariant::kSmoe;
  /// One group, or two for Cartesian layers (sub-layer A first, then B).
  std::vector<ExpertGroup<T>> groups;
  std::size_t activation = 2;  // per router
  double topp_threshold = 0.4;
  double capacity_factor = 1.0;
  std::uint64_t hash_seed = 0;
};

/// Routing settings for one forward pass.
struct RoutingContext {
  /// Apply expert capacity (training). Evaluation is dropless.
  bool training = false;
  /// Token ids of the flattened batch, required for hash routing.
  std::span<const std::int32_t> token_ids;
  /// Disable-top-1 robustness probe.
  bool disable_top1 = false;
  std::uint64_t robustness_seed = 0;
  std::uint64_t layer_index = 0;
  /// Global index of the first token, so masking draws differ across batches.
  std::uint64_t token_offset = 0;
  RoutingTape* tape = nullptr;
};

template <typename T>
struct RouterRecord {
  Tensor<T> probs;  // [tokens, experts]; undefined for hash routing
  RoutingDecision decision;
};

/// softmax(hidden x router) with top-K selection.
template <typename T>
RouterRecord<T> route_topk(const Tensor<T>& hidden, const Tensor<T>& router, std::size_t k);

/// softmax(hidden x router) with top-P selection.
template <typename T>
RouterRecord<T> topp_route(const Tensor<T>& hidden, const Tensor<T>& router, double threshold);

/// Routes `hidden` through group `group_index` of `layer` honoring the
/// context (capacity, masking, tape).
template <typename T>
RouterRecord<T> route_group(const Tensor<T>& hidden, const MoeLayerState<T>& layer,
                            std::size_t group_index, const RoutingContext& ctx);

/// sum over selected, non-dropped slots of gate * FFN_i(hidden) plus the
/// ungated shared experts. Gates are taken from `record.probs` so gradients
/// reach the router.
template <typename T>
Tensor<T> moe_forward(const Tensor<T>& hidden, const ExpertGroup<T>& group,
                      const RouterRecord<T>& record);

template <typename T>
struct CartesianOutput {
  Tensor<T> out;       // routed B sum + h_bar
  Tensor<T> h_bar;     // hidden + routed A sum
  Tensor<T> delta;     // routed A sum + routed B sum, i.e. out - hidden
  RouterRecord<T> first;
  RouterRecord<T> second;
};

/// Cartesian product layer: A routes and transforms `hidden`, an inner
/// residual forms h_bar, B routes and transforms h_bar, and the result is
/// added back to h_bar.
template <typename T>
CartesianOutput<T> cartesian_forward(const Tensor<T>& hidden, const MoeLayerState<T>& layer,
                                     const RoutingContext& ctx);

template <typename T>
struct FlattenedOutput {
  Tensor<T> out;  // hidden + routed sum
  Tensor<T> delta;
  RouterRecord<T> record;
};

/// Single-router layer over all experts with its residual.
template <typename T>
FlattenedOutput<T> flattened_forward(const Tensor<T>& hidden, const MoeLayerState<T>& layer,
                                     const RoutingContext& ctx);

template <typename T>
struct MoeLayerOutput {
  Tensor<T> delta;  // added to the residual stream by the block
  std::vector<RouterRecord<T>> records;
};

template <typename T>
MoeLayerOutput<T> moe_layer_forward(const Tensor<T>& hidden, const MoeLayerState<T>& layer,
                                    const RoutingContext& ctx);

}  // namespace cpmoe
