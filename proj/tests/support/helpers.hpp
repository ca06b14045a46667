// SPDX-FileCopyrightText: © 2026 The cpmoe Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "cpmoe/config_io.hpp"
#include "cpmoe/moe.hpp"
#include "cpmoe/rng.hpp"
#include "cpmoe/tensor.hpp"

namespace testing_support {

template <typename T>
cpmoe::Tensor<T> random_tensor(cpmoe::Shape shape, std::uint64_t seed, double scale = 1.0,
                               bool requires_grad = true) {
  cpmoe::Rng rng(seed, "test-tensor");
  std::vector<T> v(cpmoe::numel(shape));
  for (T& x : v) x = static_cast<T>(scale * rng.normal());
  return cpmoe::Tensor<T>::from(std::move(shape), std::move(v), requires_grad);
}

template <typename T>
void randomize(const std::vector<cpmoe::Tensor<T>>& params, std::uint64_t seed, double scale) {
  cpmoe::Rng rng(seed, "test-randomize");
  for (auto p : params) {
    for (T& x : p.mutable_data()) x = static_cast<T>(scale * rng.normal());
  }
}

template <typename T>
void fill(const std::vector<cpmoe::Tensor<T>>& params, T value) {
  for (auto p : params) std::fill(p.mutable_data().begin(), p.mutable_data().end(), value);
}

inline std::vector<std::int32_t> random_ids(std::size_t n, std::size_t vocab, std::uint64_t seed) {
  cpmoe::Rng rng(seed, "test-ids");
  std::vector<std::int32_t> ids(n);
  for (auto& id : ids) id = static_cast<std::int32_t>(rng.below(vocab));
  return ids;
}

/// max_i |a_i - b_i| / max_i |b_i|
template <typename A, typename B>
double max_rel_err(const A& a, const B& b) {
  double diff = 0, scale = 1e-300;
  for (std::size_t i = 0; i < b.size(); ++i) {
    diff = std::max(diff, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    scale = std::max(scale, std::abs(static_cast<double>(b[i])));
  }
  return diff / scale;
}

template <typename T>
cpmoe::FfnWeights<T> random_ffn(std::size_t d, std::size_t h, std::uint64_t seed, double scale) {
  return {random_tensor<T>({d, h}, seed, scale), random_tensor<T>({d, h}, seed + 1, scale),
          random_tensor<T>({h, d}, seed + 2, scale)};
}

/// Hand-built MoE layer with random weights: `groups` routers (2 for
/// Cartesian) over `experts` experts of width `hidden` each, plus `shared`
/// shared experts of width `shared_hidden` per group.
template <typename T>
cpmoe::MoeLayerState<T> make_layer(cpmoe::MoeVariant variant, std::size_t d, std::size_t experts,
                                   std::size_t hidden, std::size_t activation, std::size_t shared,
                                   std::size_t shared_hidden, std::uint64_t seed,
                                   double scale = 0.5) {
  cpmoe::MoeLayerState<T> layer;
  layer.variant = variant;
  layer.activation = activation;
  layer.hash_seed = seed;
  const std::size_t groups = variant == cpmoe::MoeVariant::kCartesian ? 2 : 1;
  std::uint64_t s = seed * 1000;
  for (std::size_t g = 0; g < groups; ++g) {
    cpmoe::ExpertGroup<T> group;
    if (variant != cpmoe::MoeVariant::kHash) group.router = random_tensor<T>({d, experts}, s++, 1.0);
    for (std::size_t e = 0; e < experts; ++e) {
      group.experts.push_back(random_ffn<T>(d, hidden, s, scale));
      s += 3;
    }
    for (std::size_t e = 0; e < shared; ++e) {
      group.shared.push_back(random_ffn<T>(d, shared_hidden, s, scale));
      s += 3;
    }
    layer.groups.push_back(std::move(group));
  }
  return layer;
}

template <typename T>
std::vector<cpmoe::Tensor<T>> ffn_params(const cpmoe::FfnWeights<T>& f) {
  return {f.gate, f.up, f.down};
}

template <typename T>
std::vector<cpmoe::Tensor<T>> group_params(const cpmoe::ExpertGroup<T>& g, bool router = true) {
  std::vector<cpmoe::Tensor<T>> out;
  if (router && g.router.defined()) out.push_back(g.router);
  for (const auto& e : g.experts)
    for (auto& t : ffn_params(e)) out.push_back(t);
  for (const auto& e : g.shared)
    for (auto& t : ffn_params(e)) out.push_back(t);
  return out;
}

/// Byte-vocabulary model small enough for sub-second training steps.
inline cpmoe::ExperimentConfig tiny_experiment(cpmoe::MoeVariant variant, std::size_t steps) {
  cpmoe::ExperimentConfig e;
  cpmoe::ModelConfig& c = e.model;
  c = cpmoe::desk_config(variant);
  c.d_model = 16;
  c.n_heads = 2;
  c.n_layers = 2;
  c.ffn_dim = variant == cpmoe::MoeVariant::kSmoeTop3 ? 36 : 32;
  c.max_seq_len = 32;
  c.num_experts = 4;
  e.data_path = "synthetic:grammar:10000";
  e.steps = steps;
  e.batch_size = 4;
  e.seq_len = 16;
  e.seed = 7;
  e.optim.lr = 3e-3;
  e.optim.total_steps = steps;
  return e;
}

}  // namespace testing_support
