// SPDX-FileCopyrightText: © 2026 The cpmoe Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cpmoe {

/// Sentences from a small English-like grammar, about `bytes` long.
std::string grammar_corpus(std::size_t bytes, std::uint64_t seed);

/// Text where a handful of words dominate by a steep power law, which pushes
/// unregularized routers toward a few experts.
std::string skewed_corpus(std::size_t bytes, std::uint64_t seed);

/// Loads token ids from `source`: either a file path or
/// `synthetic:<grammar|skewed>:<bytes>`. Throws IoError or ConfigError.
std::vector<std::int32_t> load_corpus(std::string_view source, std::uint64_t seed);

struct CorpusSplit {
  std::vector<std::int32_t> train;
  std::vector<std::int32_t> held_out;
};

/// Last `held_out_fraction` of the stream is held out.
CorpusSplit split_corpus(std::span<const std::int32_t> tokens, double held_out_fraction);

}  // namespace cpmoe
