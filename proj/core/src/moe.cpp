// SPDX-FileCopyrightText: © 2026 The cpmoe Authors
//
// SPDX-License-Identifier: Apache-2.0

#include "cpmoe/moe.hpp"

#include <numeric>
#include <string>

#include "cpmoe/errors.hpp"
#include "cpmoe/ops.hpp"

namespace cpmoe {

template <typename T>
Tensor<T> ffn_forward(const FfnWeights<T>& w, const Tensor<T>& x) {
  auto gate = ops::silu(ops::matmul(x, w.gate));
  auto up = ops::matmul(x, w.up);
  return ops::matmul(ops::mul(gate, up), w.down);
}

namespace {

template <typename T>
std::vector<double> to_double(std::span<const T> values) {
  return std::vector<double>(values.begin(), values.end());
}

template <typename T>
RouterRecord<T> router_probs(const Tensor<T>& hidden, const Tensor<T>& router) {
  RouterRecord<T> rec;
  rec.probs = ops::softmax(ops::matmul(hidden, router));
  return rec;
}

void refresh_from_probs(RoutingDecision& d, std::vector<double> probs) {
  d.probs = std::move(probs);
  for (std::size_t t = 0; t < d.num_tokens; ++t) {
    for (std::size_t s = 0; s < d.selected[t].size(); ++s) {
      d.gates[t][s] = d.probs[t * d.num_experts + d.selected[t][s]];
    }
  }
}

}  // namespace

template <typename T>
RouterRecord<T> route_topk(const Tensor<T>& hidden, const Tensor<T>& router, std::size_t k) {
  auto rec = router_probs(hidden, router);
  rec.decision = select_topk(to_double<T>(rec.probs.data()), hidden.dim(0), router.dim(1), k);
  return rec;
}

template <typename T>
RouterRecord<T> topp_route(const Tensor<T>& hidden, const Tensor<T>& router, double threshold) {
  auto rec = router_probs(hidden, router);
  rec.decision =
      select_topp(to_double<T>(rec.probs.data()), hidden.dim(0), router.dim(1), threshold);
  return rec;
}

template <typename T>
RouterRecord<T> route_group(const Tensor<T>& hidden, const MoeLayerState<T>& layer,
                            std::size_t group_index, const RoutingContext& ctx) {
  const ExpertGroup<T>& group = layer.groups.at(group_index);
  const std::size_t tokens = hidden.dim(0);
  const std::size_t experts = group.experts.size();
  const bool replay = ctx.tape && ctx.tape->mode() == RoutingTape::Mode::kReplay;

  RouterRecord<T> rec;
  if (group.router.defined()) {
    if (group.router.dim(1) != experts) {
      throw ContractError("route: router addresses " + std::to_string(group.router.dim(1)) +
                          " experts but the group holds " + std::to_string(experts));
    }
    rec = router_probs(hidden, group.router);
    auto probs = to_double<T>(rec.probs.data());
    if (replay) {
      rec.decision = ctx.tape->next();
      if (rec.decision.num_tokens != tokens || rec.decision.num_experts != experts) {
        throw ContractError("route: replayed decision does not match this layer");
      }
      refresh_from_probs(rec.decision, std::move(probs));
      return rec;
    }
    std::vector<std::uint8_t> mask;
    if (ctx.disable_top1) {
      mask.assign(tokens, 1);
      if (layer.variant == MoeVariant::kCartesian) {
        for (std::size_t t = 0; t < tokens; ++t) {
          mask[t] = robustness_sublayer(ctx.robustness_seed, ctx.layer_index,
                                        ctx.token_offset + t) == group_index;
        }
      }
    }
    rec.decision = layer.variant == MoeVariant::kTopP
                       ? select_topp(probs, tokens, experts, layer.topp_threshold, mask)
                       : select_topk(probs, tokens, experts, layer.activation, mask);
  } else {
    if (ctx.disable_top1) {
      throw ConfigError("disable-top-1: hash routing assigns experts by token id; nothing to mask");
    }
    if (replay) {
      rec.decision = ctx.tape->next();
      return rec;
    }
    if (ctx.token_ids.size() != tokens) {
      throw ContractError("hash routing needs the token ids of all " + std::to_string(tokens) +
                          " tokens");
    }
    rec.decision = hash_route(ctx.token_ids, experts, layer.activation, layer.hash_seed);
  }
  if (ctx.training) {
    rec.decision = apply_capacity(std::move(rec.decision), layer.capacity_factor, layer.activation);
  }
  if (ctx.tape) ctx.tape->record(rec.decision);
  return rec;
}

template <typename T>
Tensor<T> moe_forward(const Tensor<T>& hidden, const ExpertGroup<T>& group,
                      const RouterRecord<T>& record) {
  const RoutingDecision& d = record.decision;
  const std::size_t tokens = hidden.dim(0), width = hidden.dim(1);
  if (d.num_experts != group.experts.size() || d.num_tokens != tokens) {
    throw ContractError("moe_forward: decision covers " + std::to_string(d.num_tokens) +
                        " tokens x " + std::to_string(d.num_experts) + " experts, layer has " +
                        std::to_string(tokens) + " tokens x " +
                        std::to_string(group.experts.size()) + " experts");
  }
  std::vector<std::vector<std::size_t>> rows(d.num_experts);
  std::vector<std::vector<T>> const_gates(d.num_experts);
  for (std::size_t t = 0; t < tokens; ++t) {
    for (std::size_t s = 0; s < d.selected[t].size(); ++s) {
      if (d.dropped[t][s]) continue;
      const std::size_t e = d.selected[t][s];
      rows[e].push_back(t);
      const_gates[e].push_back(static_cast<T>(d.gates[t][s]));
    }
  }
  std::vector<Tensor<T>> sources;
  std::vector<std::vector<std::size_t>> indices;
  for (std::size_t e = 0; e < d.num_experts; ++e) {
    if (rows[e].empty()) continue;
    auto y = ffn_forward(group.experts[e], ops::gather_rows(hidden, std::span(rows[e])));
    Tensor<T> gates;
    if (record.probs.defined()) {
      std::vector<std::size_t> cols(rows[e].size(), e);
      gates = ops::pick(record.probs, std::span(rows[e]), std::span(cols));
    } else {
      gates = Tensor<T>::from(Shape{rows[e].size()}, std::move(const_gates[e]));
    }
    sources.push_back(ops::scale_rows(y, gates));
    indices.push_back(std::move(rows[e]));
  }
  if (!group.shared.empty()) {
    std::vector<std::size_t> all(tokens);
    std::iota(all.begin(), all.end(), std::size_t{0});
    for (const auto& s : group.shared) {
      sources.push_back(ffn_forward(s, hidden));
      indices.push_back(all);
    }
  }
  return ops::scatter_add_rows(sources, indices, tokens, width);
}

template <typename T>
CartesianOutput<T> cartesian_forward(const Tensor<T>& hidden, const MoeLayerState<T>& layer,
                                     const RoutingContext& ctx) {
  if (layer.variant != MoeVariant::kCartesian || layer.groups.size() != 2) {
    throw ConfigError("cartesian_forward: layer is not a two-sub-layer Cartesian layer");
  }
  CartesianOutput<T> r;
  r.first = route_group(hidden, layer, 0, ctx);
  auto routed_a = moe_forward(hidden, layer.groups[0], r.first);
  r.h_bar = ops::add(hidden, routed_a);
  r.second = route_group(r.h_bar, layer, 1, ctx);
  auto routed_b = moe_forward(r.h_bar, layer.groups[1], r.second);
  r.out = ops::add(routed_b, r.h_bar);
  r.delta = ops::add(routed_a, routed_b);
  return r;
}

template <typename T>
FlattenedOutput<T> flattened_forward(const Tensor<T>& hidden, const MoeLayerState<T>& layer,
                                     const RoutingContext& ctx) {
  if (layer.groups.size() != 1) {
    throw ConfigError("flattened_forward: layer must have exactly one router group");
  }
  FlattenedOutput<T> r;
  r.record = route_group(hidden, layer, 0, ctx);
  r.delta = moe_forward(hidden, layer.groups[0], r.record);
  r.out = ops::add(hidden, r.delta);
  return r;
}

template <typename T>
MoeLayerOutput<T> moe_layer_forward(const Tensor<T>& hidden, const MoeLayerState<T>& layer,
                                    const RoutingContext& ctx) {
  MoeLayerOutput<T> out;
  if (layer.variant == MoeVariant::kCartesian) {
    auto c = cartesian_forward(hidden, layer, ctx);
    out.delta = c.delta;
    out.records.push_back(std::move(c.first));
    out.records.push_back(std::move(c.second));
    return out;
  }
  if (layer.groups.size() != 1) throw ConfigError("moe layer: expected one router group");
  auto rec = route_group(hidden, layer, 0, ctx);
  out.delta = moe_forward(hidden, layer.groups[0], rec);
  out.records.push_back(std::move(rec));
  return out;
}

#define CPMOE_INSTANTIATE_MOE(T)                                                                \
  template Tensor<T> ffn_forward(const FfnWeights<T>&, const Tensor<T>&);                      \
  template RouterRecord<T> route_topk(const Tensor<T>&, const Tensor<T>&, std::size_t);        \
  template RouterRecord<T> topp_route(const Tensor<T>&, const Tensor<T>&, double);             \
  template RouterRecord<T> route_group(const Tensor<T>&, const MoeLayerState<T>&, std::size_t, \
                                       const RoutingContext&);                                 \
  template Tensor<T> moe_forward(const Tensor<T>&, const ExpertGroup<T>&,                      \
                                 const RouterRecord<T>&);                                      \
  template CartesianOutput<T> cartesian_forward(const Tensor<T>&, const MoeLayerState<T>&,     \
                                                const RoutingContext&);                        \
  template FlattenedOutput<T> flattened_forward(const Tensor<T>&, const MoeLayerState<T>&,     \
                                                const RoutingContext&);                        \
  template MoeLayerOutput<T> moe_layer_forward(const Tensor<T>&, const MoeLayerState<T>&,      \
                                               const RoutingContext&);

CPMOE_INSTANTIATE_MOE(float)
CPMOE_INSTANTIATE_MOE(double)

#undef CPMOE_INSTANTIATE_MOE

}  // namespace cpmoe
