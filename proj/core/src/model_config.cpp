// SPDX-FileCopyrightText: © 2026 The cpmoe Authors
//
// SPDX-License-Identifier: Apache-2.0

#include "cpmoe/model_config.hpp"

#include <array>
#include <functional>
#include <map>
#include <string>

#include "cpmoe/errors.hpp"

namespace cpmoe {

namespace {

constexpr std::array<std::pair<MoeVariant, std::string_view>, 7> kVariantNames{{
    {MoeVariant::kDense, "dense"},
    {MoeVariant::kSmoe, "smoe"},
    {MoeVariant::kSmoeTop3, "smoe_top3"},
    {MoeVariant::kHash, "hash"},
    {MoeVariant::kFineGrained, "fine_grained"},
    {MoeVariant::kTopP, "topp"},
    {MoeVariant::kCartesian, "cartesian"},
}};

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError("model config: " + what);
}

}  // namespace

std::string_view to_string(MoeVariant v) noexcept {
  for (const auto& [variant, name] : kVariantNames) {
    if (variant == v) return name;
  }
  return "unknown";
}

MoeVariant parse_variant(std::string_view name) {
  for (const auto& [variant, n] : kVariantNames) {
    if (n == name) return variant;
  }
  std::string valid;
  for (const auto& [variant, n] : kVariantNames) {
    if (!valid.empty()) valid += ", ";
    valid += n;
  }
  throw ConfigError("unknown MoE variant '" + std::string(name) + "' (valid: " + valid + ")");
}

const std::vector<MoeVariant>& all_variants() {
  static const std::vector<MoeVariant> variants = [] {
    std::vector<MoeVariant> v;
    for (const auto& [variant, name] : kVariantNames) v.push_back(variant);
    return v;
  }();
  return variants;
}

bool ModelConfig::is_moe_block(std::size_t block) const noexcept {
  if (!is_moe()) return false;
  return moe_every_other ? block % 2 == 1 : true;
}

std::size_t ModelConfig::num_moe_layers() const noexcept {
  std::size_t n = 0;
  for (std::size_t b = 0; b < n_layers; ++b) n += is_moe_block(b) ? 1 : 0;
  return n;
}

std::size_t ModelConfig::experts_per_router() const noexcept {
  const std::size_t total = split * num_experts;
  return variant == MoeVariant::kCartesian ? total / 2 : total;
}

std::size_t ModelConfig::routers_per_layer() const noexcept {
  return variant == MoeVariant::kCartesian ? 2 : 1;
}

std::size_t ModelConfig::activation_per_router() const noexcept {
  const std::size_t total = split * top_k;
  return variant == MoeVariant::kCartesian ? total / 2 : total;
}

std::size_t ModelConfig::shared_per_group() const noexcept {
  if (!shared_experts || !is_moe()) return 0;
  return variant == MoeVariant::kCartesian ? 1 : split;
}

std::size_t ModelConfig::shared_ffn_dim() const noexcept {
  return variant == MoeVariant::kCartesian ? ffn_dim / 2 : ffn_dim / split;
}

void ModelConfig::validate() const {
  require(vocab_size >= 2, "vocab_size must be at least 2");
  require(d_model >= 1 && ffn_dim >= 1 && n_layers >= 1, "dimensions must be positive");
  require(max_seq_len >= 1, "max_seq_len must be positive");
  require(n_heads >= 1 && d_model % n_heads == 0,
          "d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
              std::to_string(n_heads));
  require(head_dim() % 2 == 0, "head dimension must be even for rotary embeddings");
  require(alpha_balance >= 0.0, "alpha_balance must be non-negative");
  require(capacity_factor > 0.0, "capacity_factor must be positive");
  if (!is_moe()) return;

  require(!moe_every_other || n_layers % 2 == 0,
          "n_layers must be even when MoE layers alternate with dense blocks");
  require(split >= 1, "split factor m must be at least 1");
  require(ffn_dim % split == 0, "ffn_dim " + std::to_string(ffn_dim) +
                                    " is not divisible by split factor " + std::to_string(split));
  require(num_experts >= 1 && top_k >= 1, "num_experts and top_k must be positive");
  if (variant == MoeVariant::kSmoe || variant == MoeVariant::kSmoeTop3 ||
      variant == MoeVariant::kHash || variant == MoeVariant::kTopP) {
    require(split == 1, std::string(to_string(variant)) + " uses full-sized experts (split 1)");
  }
  if (variant == MoeVariant::kCartesian) {
    require((split * num_experts) % 2 == 0,
            "Cartesian layers need an even number of sub-experts (m*N = " +
                std::to_string(split * num_experts) + ")");
    require((split * top_k) % 2 == 0 && split * top_k >= 2,
            "Cartesian per-sub-layer activation m*K/2 must be a positive integer");
    require(!shared_experts || ffn_dim % 2 == 0, "shared sub-layer experts need an even ffn_dim");
  }
  if (variant == MoeVariant::kTopP) {
    require(topp_threshold > 0.0 && topp_threshold <= 1.0, "topp_threshold must be in (0, 1]");
  }
  require(activation_per_router() <= experts_per_router(),
          "activation " + std::to_string(activation_per_router()) + " exceeds " +
              std::to_string(experts_per_router()) + " experts per router");
}

ModelConfig desk_config(MoeVariant variant) {
  ModelConfig c;
  c.vocab_size = 257;
  c.d_model = 64;
  c.ffn_dim = 128;
  c.n_layers = 4;
  c.n_heads = 4;
  c.max_seq_len = 256;
  c.variant = variant;
  c.num_experts = 8;
  c.top_k = 2;
  c.split = 1;
  c.shared_experts = true;
  switch (variant) {
    case MoeVariant::kFineGrained:
    case MoeVariant::kCartesian: c.split = 2; break;
    case MoeVariant::kSmoeTop3:
      // (N + 1) / N wider experts replace the shared expert's parameters.
      c.ffn_dim = 144;
      c.top_k = 3;
      c.shared_experts = false;
      break;
    case MoeVariant::kDense: c.shared_experts = false; break;
    default: break;
  }
  return c;
}

ModelConfig toy_config(MoeVariant variant) {
  ModelConfig c = desk_config(variant);
  c.vocab_size = 11;
  c.d_model = 8;
  c.ffn_dim = variant == MoeVariant::kSmoeTop3 ? 10 : 8;
  c.n_layers = 2;
  c.n_heads = 2;
  c.max_seq_len = 8;
  c.num_experts = 4;
  return c;
}

namespace {

ModelConfig published_base(MoeVariant variant, bool large) {
  ModelConfig c;
  c.vocab_size = 32000;
  c.d_model = large ? 1024 : 768;
  c.ffn_dim = large ? 4096 : 3072;
  c.n_layers = large ? 24 : 12;
  c.n_heads = large ? 16 : 12;
  c.max_seq_len = 1024;
  c.variant = variant;
  c.moe_every_other = true;
  c.num_experts = 16;
  c.top_k = 2;
  c.split = 1;
  c.shared_experts = true;
  c.topp_threshold = 0.4;
  switch (variant) {
    case MoeVariant::kDense: c.shared_experts = false; break;
    case MoeVariant::kSmoeTop3:
      c.ffn_dim = large ? 4352 : 3264;
      c.top_k = 3;
      c.shared_experts = false;
      break;
    case MoeVariant::kFineGrained:
    case MoeVariant::kCartesian: c.split = 2; break;
    default: break;
  }
  return c;
}

ModelConfig seven_b(MoeVariant variant) {
  ModelConfig c;
  c.vocab_size = 32000;
  c.d_model = 2048;
  c.ffn_dim = 4096;
  c.n_layers = 16;
  c.n_heads = 16;
  c.max_seq_len = 4096;
  c.variant = variant;
  c.moe_every_other = false;
  c.num_experts = 16;
  c.split = 2;
  c.top_k = 2;
  c.shared_experts = true;
  return c;
}

const std::map<std::string, std::function<ModelConfig()>, std::less<>>& preset_table() {
  static const auto table = [] {
    std::map<std::string, std::function<ModelConfig()>, std::less<>> t;
    t["base-dense"] = [] { return published_base(MoeVariant::kDense, false); };
    t["large-dense"] = [] { return published_base(MoeVariant::kDense, true); };
    const std::array<std::pair<const char*, MoeVariant>, 6> moe_rows{{
        {"smoe-share", MoeVariant::kSmoe},
        {"smoe-top3", MoeVariant::kSmoeTop3},
        {"hash", MoeVariant::kHash},
        {"fine-grained", MoeVariant::kFineGrained},
        {"topp", MoeVariant::kTopP},
        {"cartesian", MoeVariant::kCartesian},
    }};
    for (const auto& [name, variant] : moe_rows) {
      const MoeVariant v = variant;
      t[std::string("moe-base-") + name] = [v] { return published_base(v, false); };
      t[std::string("moe-large-") + name] = [v] { return published_base(v, true); };
    }
    t["cartesian-7b"] = [] { return seven_b(MoeVariant::kCartesian); };
    t["fine-grained-7b"] = [] { return seven_b(MoeVariant::kFineGrained); };
    for (MoeVariant v : all_variants()) {
      std::string name(to_string(v));
      for (char& ch : name) ch = ch == '_' ? '-' : ch;
      t["desk-" + name] = [v] { return desk_config(v); };
      t["toy-" + name] = [v] { return toy_config(v); };
    }
    return t;
  }();
  return table;
}

}  // namespace

std::optional<ModelConfig> find_preset(std::string_view name) {
  const auto& t = preset_table();
  auto it = t.find(name);
  if (it == t.end()) return std::nullopt;
  return it->second();
}

std::vector<std::string> preset_names() {
  std::vector<std::string> names;
  for (const auto& [name, fn] : preset_table()) names.push_back(name);
  return names;
}

ModelConfig preset(std::string_view name) {
  if (auto c = find_preset(name)) return *c;
  std::string valid;
  for (const auto& n : preset_names()) {
    if (!valid.empty()) valid += ", ";
    valid += n;
  }
  throw UsageError("unknown preset '" + std::string(name) + "' (valid: " + valid + ")");
}

}  // namespace cpmoe
