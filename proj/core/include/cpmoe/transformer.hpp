// SPDX-FileCopyrightText: © 2026 The cpmoe Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cpmoe/model_config.hpp"
#include "cpmoe/moe.hpp"
#include "cpmoe/tensor.hpp"

namespace cpmoe {

/// B sequences of T token ids, row-major.
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t seq_len = 0;
  std::vector<std::int32_t> ids;

  /// Throws ContractError on a size mismatch or an id outside [0, vocab).
  void validate(std::size_t vocab_size) const;
};

template <typename T>
struct AttentionWeights {
  Tensor<T> wq, wk, wv, wo;  // [d, d]
};

template <typename T>
struct Block {
  Tensor<T> attn_norm;
  AttentionWeights<T> attn;
  Tensor<T> ffn_norm;
  std::optional<FfnWeights<T>> ffn;      // dense blocks
  std::optional<MoeLayerState<T>> moe;   // MoE blocks
};

struct ForwardOptions {
  bool training = false;
  bool disable_top1 = false;
  std::uint64_t robustness_seed = 0;
  std::uint64_t token_offset = 0;
  RoutingTape* tape = nullptr;
};

template <typename T>
struct LayerRouting {
  std::size_t block = 0;
  std::vector<RouterRecord<T>> records;  // one per router in the layer
};

template <typename T>
struct ForwardResult {
  Tensor<T> logits;  // [B*T, vocab]
  std::vector<LayerRouting<T>> routing;
};

template <typename T>
struct LossResult {
  Tensor<T> loss;
  Tensor<T> logits;  // [B, T-1, vocab]
  std::vector<LayerRouting<T>> routing;
};

template <typename T>
class Model {
 public:
  /// Validates the config and draws every matrix from N(0, 0.02) on a
  /// per-parameter stream; norm gains start at one.
  explicit Model(const ModelConfig& config);

  const ModelConfig& config() const noexcept { return config_; }

  Tensor<T> embed;  // [vocab, d]
  std::vector<Block<T>> blocks;
  Tensor<T> final_norm;
  Tensor<T> head;  // [d, vocab]; undefined with tied embeddings

  /// Parameters in a fixed order with dotted names. Tensors share storage
  /// with the fields above.
  const std::vector<std::pair<std::string, Tensor<T>>>& named_parameters() const noexcept {
    return params_;
  }
  std::vector<Tensor<T>> parameters() const;
  /// Throws ConfigError for an unknown name.
  Tensor<T> parameter(std::string_view name) const;
  std::size_t num_parameters() const;

  void zero_grad();
  /// Deep copy with independent parameter storage.
  Model clone() const;

  ForwardResult<T> forward(const TokenBatch& batch, const ForwardOptions& opts = {}) const;

 private:
  ModelConfig config_;
  std::vector<std::pair<std::string, Tensor<T>>> params_;
};

/// One pre-norm block on hidden [B*T, d]: attention sub-layer then the FFN
/// or MoE sub-layer, each with its residual. Router records are appended to
/// `routing` when given.
template <typename T>
Tensor<T> block_forward(const Tensor<T>& hidden, const Block<T>& block, const ModelConfig& config,
                        std::size_t batch, std::size_t seq_len, std::size_t block_index,
                        std::span<const std::int32_t> token_ids, const ForwardOptions& opts,
                        std::vector<RouterRecord<T>>* routing = nullptr);

/// Mean next-token cross entropy of the batch: positions 0..T-2 predict
/// 1..T-1. Throws ContractError when T < 2.
template <typename T>
LossResult<T> lm_loss(const Model<T>& model, const TokenBatch& batch,
                      const ForwardOptions& opts = {});

/// exp of the token-weighted mean NLL over a stream, in windows of at most
/// `window` tokens that overlap by one so every token after the first is
/// predicted exactly once. Dropless. Throws ContractError when the stream
/// has fewer than two tokens.
template <typename T>
double perplexity(const Model<T>& model, std::span<const std::int32_t> stream, std::size_t window,
                  const ForwardOptions& opts = {}, std::size_t windows_per_batch = 8);

extern template class Model<float>;
extern template class Model<double>;

}  // namespace cpmoe
