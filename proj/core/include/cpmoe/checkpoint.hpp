// SPDX-FileCopyrightText: © 2026 The cpmoe Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cpmoe/model_config.hpp"
#include "cpmoe/optim.hpp"
#include "cpmoe/tensor.hpp"
#include "cpmoe/transformer.hpp"

namespace cpmoe {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout: the 8 bytes "CPMOECKP", a little-endian u32 version, a u64 header
/// length, the text header, then float32 little-endian payload. The header
/// holds the model config lines, one `tensor <name> <shape> <offset> <count>`
/// line per tensor (offsets in floats) and, with optimizer state,
/// `optim.step <n>`. Optimizer moments are stored as tensors named
/// `optim.m.<param>` and `optim.v.<param>`.
struct CheckpointTensor {
  std::string name;
  Shape shape;
  std::uint64_t offset = 0;
  std::vector<float> values;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  ModelConfig config;
  std::vector<CheckpointTensor> tensors;  // parameters, then moments
  std::optional<std::size_t> optim_step;
};

void save_checkpoint(const std::filesystem::path& path, const Model<float>& model,
                     const OptimState<float>* optim = nullptr);

/// Throws IoError when unreadable, CorruptionError on a bad magic, version
/// mismatch or a payload that does not match the manifest (naming the first
/// tensor affected).
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Builds a model from the checkpoint's config and copies every parameter.
Model<float> model_from_checkpoint(const Checkpoint& ckpt);
/// Optimizer moments in the model's parameter order; nullopt without them.
std::optional<OptimState<float>> optim_from_checkpoint(const Checkpoint& ckpt,
                                                       const Model<float>& model);

}  // namespace cpmoe
