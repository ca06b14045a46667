// SPDX-FileCopyrightText: © 2026 The cpmoe Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace cpmoe {

enum class MoeVariant {
  kDense,
  kSmoe,         // full-sized experts, top-K, shared expert
  kSmoeTop3,     // full-sized experts, top-3, no shared expert, widened D
  kHash,         // fixed token-id hash assignment, shared expert
  kFineGrained,  // mN experts of size D/m, top-mK, flattened
  kTopP,         // full-sized experts, dynamic top-P
  kCartesian,    // two sub-layers of e = mN/2 sub-experts, top-k each
};

std::string_view to_string(MoeVariant v) noexcept;
/// Parses the names printed by to_string; throws ConfigError listing the
/// valid names otherwise.
MoeVariant parse_variant(std::string_view name);
const std::vector<MoeVariant>& all_variants();

/// Full architecture description. `ffn_dim` is the full-sized FFN
/// intermediate size D; routed experts have D / split.
struct ModelConfig {
  std::size_t vocab_size = 257;
  std::size_t d_model = 64;
  std::size_t ffn_dim = 128;
  std::size_t n_layers = 4;
  std::size_t n_heads = 4;
  std::size_t max_seq_len = 256;
  MoeVariant variant = MoeVariant::kCartesian;
  bool moe_every_other = true;
  std::size_t num_experts = 8;  // N, full-sized experts before splitting
  std::size_t split = 2;        // m
  std::size_t top_k = 2;        // K, full-sized activation count
  double topp_threshold = 0.4;
  bool shared_experts = true;
  bool tied_embeddings = false;
  double alpha_balance = 0.01;
  double capacity_factor = 1.0;
  double rope_base = 10000.0;
  std::uint64_t seed = 1234;

  bool operator==(const ModelConfig&) const = default;

  /// Throws ConfigError on any violated invariant.
  void validate() const;

  bool is_moe() const noexcept { return variant != MoeVariant::kDense; }
  bool is_moe_block(std::size_t block) const noexcept;
  std::size_t num_moe_layers() const noexcept;
  std::size_t head_dim() const noexcept { return d_model / n_heads; }

  /// Routed experts per router: mN, or e = mN/2 per Cartesian sub-layer.
  std::size_t experts_per_router() const noexcept;
  std::size_t routers_per_layer() const noexcept;
  /// Routed activation per router: mK, k = mK/2 for Cartesian.
  std::size_t activation_per_router() const noexcept;
  std::size_t expert_ffn_dim() const noexcept { return ffn_dim / split; }
  /// Shared experts per router group and their intermediate size.
  std::size_t shared_per_group() const noexcept;
  std::size_t shared_ffn_dim() const noexcept;
  bool has_router() const noexcept { return variant != MoeVariant::kHash && is_moe(); }
};

/// Named configurations: the base and large sizes of every variant, the dense
/// baselines, the 7.25B pair, and desk/toy sizes for training.
std::optional<ModelConfig> find_preset(std::string_view name);
std::vector<std::string> preset_names();
/// find_preset or UsageError listing valid names.
ModelConfig preset(std::string_view name);

/// Desk-scale defaults for a variant (d=64, L=4, 2 MoE layers, 16 sub-experts
/// for Cartesian/fine-grained).
ModelConfig desk_config(MoeVariant variant);
/// Tiny configuration for finite-difference checks (d=8, L=2).
ModelConfig toy_config(MoeVariant variant);

}  // namespace cpmoe
