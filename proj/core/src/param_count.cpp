// SPDX-FileCopyrightText: © 2026 The cpmoe Authors
//
// SPDX-License-Identifier: Apache-2.0

#include "cpmoe/param_count.hpp"

#include <cstdio>

namespace cpmoe {

ParamReport count_params(const ModelConfig& c) {
  c.validate();
  const std::uint64_t d = c.d_model;
  const std::uint64_t V = c.vocab_size;
  auto ffn = [d](std::uint64_t hidden) { return 3 * d * hidden; };

  ParamReport r;
  ParamBreakdown& b = r.breakdown;
  b.embeddings = V * d;
  b.output_head = c.tied_embeddings ? 0 : V * d;
  b.norms = d;  // final norm
  for (std::size_t layer = 0; layer < c.n_layers; ++layer) {
    b.attention += 4 * d * d;
    b.norms += 2 * d;
    if (!c.is_moe_block(layer)) {
      b.dense_ffn += ffn(c.ffn_dim);
      continue;
    }
    const std::uint64_t groups = c.routers_per_layer();
    const std::uint64_t per_expert = ffn(c.expert_ffn_dim());
    b.routed_experts += groups * c.experts_per_router() * per_expert;
    r.activated_routed += groups * c.activation_per_router() * per_expert;
    b.shared_experts += groups * c.shared_per_group() * ffn(c.shared_ffn_dim());
    if (c.has_router()) b.routers += groups * d * c.experts_per_router();
  }
  r.total = b.sum();
  r.activated = r.total - b.routed_experts + r.activated_routed;
  return r;
}

std::string human_count(std::uint64_t n) {
  char buf[32];
  const double x = static_cast<double>(n);
  if (x >= 1e9) {
    std::snprintf(buf, sizeof buf, "%.2fB", x / 1e9);
  } else if (x >= 1e6) {
    std::snprintf(buf, sizeof buf, "%.1fM", x / 1e6);
  } else if (x >= 1e3) {
    std::snprintf(buf, sizeof buf, "%.1fK", x / 1e3);
  } else {
    std::snprintf(buf, sizeof buf, "%llu", static_cast<unsigned long long>(n));
  }
  return buf;
}

std::string format_report(const ParamReport& r) {
  std::string s;
  auto line = [&s](const char* key, std::uint64_t v) {
    s += key;
    s += "=";
    s += std::to_string(v);
    s += " (" + human_count(v) + ")\n";
  };
  line("total", r.total);
  line("activated", r.activated);
  line("embeddings", r.breakdown.embeddings);
  line("attention", r.breakdown.attention);
  line("dense_ffn", r.breakdown.dense_ffn);
  line("routed_experts", r.breakdown.routed_experts);
  line("activated_routed_experts", r.activated_routed);
  line("shared_experts", r.breakdown.shared_experts);
  line("routers", r.breakdown.routers);
  line("norms", r.breakdown.norms);
  line("output_head", r.breakdown.output_head);
  return s;
}

}  // namespace cpmoe
