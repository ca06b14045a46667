// SPDX-FileCopyrightText: © 2026 The cpmoe Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>

#include "cpmoe/model_config.hpp"

namespace cpmoe {

struct ParamBreakdown {
  std::uint64_t embeddings = 0;
  std::uint64_t attention = 0;
  std::uint64_t dense_ffn = 0;
  std::uint64_t routed_experts = 0;
  std::uint64_t shared_experts = 0;
  std::uint64_t routers = 0;
  std::uint64_t norms = 0;
  std::uint64_t output_head = 0;

  std::uint64_t sum() const noexcept {
    return embeddings + attention + dense_ffn + routed_experts + shared_experts + routers +
           norms + output_head;
  }
};

/// Exact parameter accounting. `activated` counts routed experts by their
/// per-token activation count (the nominal K for top-P) and everything else in
/// full.
struct ParamReport {
  std::uint64_t total = 0;
  std::uint64_t activated = 0;
  ParamBreakdown breakdown;
  std::uint64_t activated_routed = 0;

  /// Activated parameters that live in experts (routed + shared).
  std::uint64_t activated_expert() const noexcept {
    return activated_routed + breakdown.shared_experts;
  }
};

/// Closed-form integer counts: SwiGLU FFNs (3 d x D matrices), bias-free
/// projections, RMSNorm gains, one d x experts matrix per router.
ParamReport count_params(const ModelConfig& config);

/// "842.0M" / "2.88B" style rendering.
std::string human_count(std::uint64_t n);

/// One-line-per-field text rendering of a report.
std::string format_report(const ParamReport& report);

}  // namespace cpmoe
