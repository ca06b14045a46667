// SPDX-FileCopyrightText: © 2026 The cpmoe Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "cpmoe/tensor.hpp"

/// Differentiable primitives. Every function records its backward rule when
/// any input requires grad. Shape violations raise ConfigError naming the
/// primitive and shapes; non-finite inputs to softmax, log and cross_entropy
/// raise NumericError.
namespace cpmoe::ops {

/// [.., m, k] x [k, n] -> [.., m, n], or batched [b, m, k] x [b, k, n].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);

/// Element-wise product.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);

/// Softmax over the last axis, computed with max subtraction.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x);

template <typename T>
Tensor<T> silu(const Tensor<T>& x);

template <typename T>
Tensor<T> log(const Tensor<T>& x);

/// x / sqrt(mean(x^2) + eps) * weight over the last axis.
template <typename T>
Tensor<T> rmsnorm(const Tensor<T>& x, const Tensor<T>& weight, T eps = T(1e-6));

/// Row lookup: table [V, d], ids in [0, V) -> [ids.size(), d].
template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const std::int32_t> ids);

template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length);

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, std::size_t axis);

/// Swaps the last two axes.
template <typename T>
Tensor<T> transpose(const Tensor<T>& x);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);

template <typename T>
Tensor<T> mean(const Tensor<T>& x);

/// Mean token negative log-likelihood: logits [n, V], targets of length n.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> targets);

/// x [n, d] -> [rows.size(), d].
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> rows);

/// Sums each sources[s] ([len_s, d]) into rows indices[s] of an [n_rows, d]
/// zero tensor. Repeated indices accumulate.
template <typename T>
Tensor<T> scatter_add_rows(const std::vector<Tensor<T>>& sources,
                           const std::vector<std::vector<std::size_t>>& indices,
                           std::size_t n_rows, std::size_t width);

/// out[i, :] = factors[i] * x[i, :]; factors has shape [n].
template <typename T>
Tensor<T> scale_rows(const Tensor<T>& x, const Tensor<T>& factors);

/// x [n, m] -> [k] with out[j] = x[rows[j], cols[j]].
template <typename T>
Tensor<T> pick(const Tensor<T>& x, std::span<const std::size_t> rows,
               std::span<const std::size_t> cols);

/// Rotary position embedding on x [batch*seq, n_heads*head_dim], rotating the
/// two halves of each head. Row r is at position r % seq_len.
template <typename T>
Tensor<T> rope(const Tensor<T>& x, std::size_t seq_len, std::size_t n_heads,
               double base = 10000.0);

/// Causal multi-head attention over q, k, v of shape [batch*seq, d].
template <typename T>
Tensor<T> causal_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                           std::size_t batch, std::size_t seq_len, std::size_t n_heads);

}  // namespace cpmoe::ops
