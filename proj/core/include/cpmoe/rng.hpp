// SPDX-FileCopyrightText: © 2026 The cpmoe Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string_view>

namespace cpmoe {

/// Stable 64-bit FNV-1a hash, used to turn stream names into stream ids.
std::uint64_t stream_id(std::string_view name) noexcept;

/// Counter-based generator: draw i of stream s under seed k is a pure function
/// of (k, s, i) built from integer mixing only, so it is identical on every
/// platform and any draw can be reproduced without replaying the sequence.
class Rng {
 public:
  Rng(std::uint64_t seed, std::uint64_t stream) noexcept
      : seed_(seed), stream_(stream) {}
  Rng(std::uint64_t seed, std::string_view stream) noexcept
      : Rng(seed, stream_id(stream)) {}

  /// Raw 64-bit draw at an absolute index. Does not move the cursor.
  std::uint64_t at(std::uint64_t index) const noexcept;

  std::uint64_t next_u64() noexcept { return at(counter_++); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept;

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n) noexcept;

  /// Standard normal via Box-Muller (consumes two draws).
  double normal() noexcept;

  std::uint64_t counter() const noexcept { return counter_; }
  void seek(std::uint64_t counter) noexcept { counter_ = counter; }

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream() const noexcept { return stream_; }

  /// Uniform in [0, 1) at an absolute index.
  double uniform_at(std::uint64_t index) const noexcept;

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
};

}  // namespace cpmoe
