// SPDX-FileCopyrightText: © 2026 The cpmoe Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cpmoe {

inline constexpr std::int32_t kEndOfText = 256;
inline constexpr std::size_t kByteVocabSize = 257;

/// One id per byte, in [0, 256).
std::vector<std::int32_t> tokenize(std::string_view text);

/// Bytes of the file followed by one end-of-text id. Throws IoError naming the
/// path when the file cannot be read.
std::vector<std::int32_t> tokenize_file(const std::filesystem::path& path);

/// Inverse of tokenize; end-of-text ids are skipped. Throws ContractError on
/// ids outside the byte vocabulary.
std::string detokenize(std::span<const std::int32_t> ids);

}  // namespace cpmoe
