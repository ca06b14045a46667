// SPDX-FileCopyrightText: © 2026 The cpmoe Authors
//
// SPDX-License-Identifier: Apache-2.0

#include "cpmoe/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cpmoe/errors.hpp"
#include "cpmoe/ops.hpp"
#include "cpmoe/rng.hpp"

namespace cpmoe {

void TokenBatch::validate(std::size_t vocab_size) const {
  if (batch == 0 || seq_len == 0) throw ContractError("token batch is empty");
  if (ids.size() != batch * seq_len) {
    throw ContractError("token batch holds " + std::to_string(ids.size()) + " ids, expected " +
                        std::to_string(batch) + "x" + std::to_string(seq_len));
  }
  for (std::int32_t id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_size) {
      throw ContractError("token id " + std::to_string(id) + " outside vocabulary of " +
                          std::to_string(vocab_size));
    }
  }
}

namespace {

constexpr double kInitStd = 0.02;

template <typename T>
class ParamBuilder {
 public:
  ParamBuilder(std::uint64_t seed, std::vector<std::pair<std::string, Tensor<T>>>& out)
      : seed_(seed), out_(out) {}

  Tensor<T> matrix(const std::string& name, std::size_t rows, std::size_t cols) {
    auto t = Tensor<T>::zeros({rows, cols}, true);
    Rng rng(seed_, "init:" + name);
    for (T& v : t.mutable_data()) v = static_cast<T>(kInitStd * rng.normal());
    out_.emplace_back(name, t);
    return t;
  }

  Tensor<T> gain(const std::string& name, std::size_t n) {
    auto t = Tensor<T>::full({n}, T(1), true);
    out_.emplace_back(name, t);
    return t;
  }

  FfnWeights<T> ffn(const std::string& prefix, std::size_t d, std::size_t h) {
    FfnWeights<T> w;
    w.gate = matrix(prefix + ".gate", d, h);
    w.up = matrix(prefix + ".up", d, h);
    w.down = matrix(prefix + ".down", h, d);
    return w;
  }

 private:
  std::uint64_t seed_;
  std::vector<std::pair<std::string, Tensor<T>>>& out_;
};

}  // namespace

template <typename T>
Model<T>::Model(const ModelConfig& config) : config_(config) {
  config_.validate();
  const ModelConfig& c = config_;
  const std::size_t d = c.d_model;
  ParamBuilder<T> pb(c.seed, params_);

  embed = pb.matrix("embed", c.vocab_size, d);
  for (std::size_t b = 0; b < c.n_layers; ++b) {
    const std::string p = "blocks." + std::to_string(b);
    Block<T> blk;
    blk.attn_norm = pb.gain(p + ".attn_norm", d);
    blk.attn.wq = pb.matrix(p + ".attn.wq", d, d);
    blk.attn.wk = pb.matrix(p + ".attn.wk", d, d);
    blk.attn.wv = pb.matrix(p + ".attn.wv", d, d);
    blk.attn.wo = pb.matrix(p + ".attn.wo", d, d);
    blk.ffn_norm = pb.gain(p + ".ffn_norm", d);
    if (c.is_moe_block(b)) {
      MoeLayerState<T> layer;
      layer.variant = c.variant;
      layer.activation = c.activation_per_router();
      layer.topp_threshold = c.topp_threshold;
      layer.capacity_factor = c.capacity_factor;
      layer.hash_seed = c.seed;
      for (std::size_t g = 0; g < c.routers_per_layer(); ++g) {
        const std::string gp = p + ".moe.g" + std::to_string(g);
        ExpertGroup<T> group;
        if (c.has_router()) group.router = pb.matrix(gp + ".router", d, c.experts_per_router());
        for (std::size_t e = 0; e < c.experts_per_router(); ++e) {
          group.experts.push_back(
              pb.ffn(gp + ".experts." + std::to_string(e), d, c.expert_ffn_dim()));
        }
        for (std::size_t s = 0; s < c.shared_per_group(); ++s) {
          group.shared.push_back(pb.ffn(gp + ".shared." + std::to_string(s), d, c.shared_ffn_dim()));
        }
        layer.groups.push_back(std::move(group));
      }
      blk.moe = std::move(layer);
    } else {
      blk.ffn = pb.ffn(p + ".ffn", d, c.ffn_dim);
    }
    blocks.push_back(std::move(blk));
  }
  final_norm = pb.gain("final_norm", d);
  if (!c.tied_embeddings) head = pb.matrix("head", d, c.vocab_size);
}

template <typename T>
std::vector<Tensor<T>> Model<T>::parameters() const {
  std::vector<Tensor<T>> out;
  out.reserve(params_.size());
  for (const auto& [name, t] : params_) out.push_back(t);
  return out;
}

template <typename T>
Tensor<T> Model<T>::parameter(std::string_view name) const {
  for (const auto& [n, t] : params_) {
    if (n == name) return t;
  }
  throw ConfigError("model has no parameter named '" + std::string(name) + "'");
}

template <typename T>
std::size_t Model<T>::num_parameters() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_) n += t.numel();
  return n;
}

template <typename T>
void Model<T>::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

template <typename T>
Model<T> Model<T>::clone() const {
  Model copy(config_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto src = params_[i].second.data();
    auto dst = copy.params_[i].second.mutable_data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
  return copy;
}

template <typename T>
Tensor<T> block_forward(const Tensor<T>& hidden, const Block<T>& block, const ModelConfig& config,
                        std::size_t batch, std::size_t seq_len, std::size_t block_index,
                        std::span<const std::int32_t> token_ids, const ForwardOptions& opts,
                        std::vector<RouterRecord<T>>* routing) {
  const std::size_t heads = config.n_heads;
  auto a = ops::rmsnorm(hidden, block.attn_norm);
  auto q = ops::rope(ops::matmul(a, block.attn.wq), seq_len, heads, config.rope_base);
  auto k = ops::rope(ops::matmul(a, block.attn.wk), seq_len, heads, config.rope_base);
  auto v = ops::matmul(a, block.attn.wv);
  auto att = ops::causal_attention(q, k, v, batch, seq_len, heads);
  auto h = ops::add(hidden, ops::matmul(att, block.attn.wo));

  auto f = ops::rmsnorm(h, block.ffn_norm);
  if (block.moe) {
    RoutingContext ctx;
    ctx.training = opts.training;
    ctx.token_ids = token_ids;
    ctx.disable_top1 = opts.disable_top1;
    ctx.robustness_seed = opts.robustness_seed;
    ctx.layer_index = block_index;
    ctx.token_offset = opts.token_offset;
    ctx.tape = opts.tape;
    auto out = moe_layer_forward(f, *block.moe, ctx);
    if (routing) {
      for (auto& r : out.records) routing->push_back(std::move(r));
    }
    return ops::add(h, out.delta);
  }
  if (!block.ffn) throw ContractError("block has neither an FFN nor an MoE layer");
  return ops::add(h, ffn_forward(*block.ffn, f));
}

template <typename T>
ForwardResult<T> Model<T>::forward(const TokenBatch& batch, const ForwardOptions& opts) const {
  batch.validate(config_.vocab_size);
  if (batch.seq_len > config_.max_seq_len) {
    throw ContractError("sequence length " + std::to_string(batch.seq_len) +
                        " exceeds max_seq_len " + std::to_string(config_.max_seq_len));
  }
  ForwardResult<T> result;
  auto h = ops::embedding(embed, std::span<const std::int32_t>(batch.ids));
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    LayerRouting<T> lr;
    lr.block = b;
    h = block_forward(h, blocks[b], config_, batch.batch, batch.seq_len, b,
                      std::span<const std::int32_t>(batch.ids), opts, &lr.records);
    if (blocks[b].moe) result.routing.push_back(std::move(lr));
  }
  h = ops::rmsnorm(h, final_norm);
  result.logits = ops::matmul(h, config_.tied_embeddings ? ops::transpose(embed) : head);
  return result;
}

template <typename T>
LossResult<T> lm_loss(const Model<T>& model, const TokenBatch& batch, const ForwardOptions& opts) {
  if (batch.seq_len < 2) {
    throw ContractError("lm_loss needs at least two tokens per sequence, got " +
                        std::to_string(batch.seq_len));
  }
  batch.validate(model.config().vocab_size);
  const std::size_t B = batch.batch, T1 = batch.seq_len - 1;
  TokenBatch input{B, T1, {}};
  std::vector<std::int32_t> targets;
  input.ids.reserve(B * T1);
  targets.reserve(B * T1);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < T1; ++t) {
      input.ids.push_back(batch.ids[b * batch.seq_len + t]);
      targets.push_back(batch.ids[b * batch.seq_len + t + 1]);
    }
  }
  auto fr = model.forward(input, opts);
  LossResult<T> out;
  out.loss = ops::cross_entropy(fr.logits, std::span<const std::int32_t>(targets));
  out.logits = ops::reshape(fr.logits, {B, T1, model.config().vocab_size});
  out.routing = std::move(fr.routing);
  return out;
}

template <typename T>
double perplexity(const Model<T>& model, std::span<const std::int32_t> stream, std::size_t window,
                  const ForwardOptions& opts, std::size_t windows_per_batch) {
  if (stream.size() < 2) {
    throw ContractError("perplexity needs a stream of at least two tokens, got " +
                        std::to_string(stream.size()));
  }
  window = std::min(window, model.config().max_seq_len + 1);
  if (window < 2) throw ConfigError("perplexity window must be at least 2");
  windows_per_batch = std::max<std::size_t>(windows_per_batch, 1);

  std::vector<std::size_t> full_starts;
  std::size_t start = 0;
  for (; start + window <= stream.size(); start += window - 1) full_starts.push_back(start);
  const std::size_t tail = stream.size() - start;

  double nll = 0.0;
  std::size_t count = 0;
  ForwardOptions o = opts;
  o.training = false;
  auto run = [&](const TokenBatch& tb) {
    auto r = lm_loss(model, tb, o);
    const std::size_t n = tb.batch * (tb.seq_len - 1);
    nll += static_cast<double>(r.loss.item()) * static_cast<double>(n);
    count += n;
    o.token_offset += tb.batch * tb.seq_len;
  };
  for (std::size_t i = 0; i < full_starts.size(); i += windows_per_batch) {
    const std::size_t nb = std::min(windows_per_batch, full_starts.size() - i);
    TokenBatch tb{nb, window, {}};
    for (std::size_t j = 0; j < nb; ++j) {
      auto w = stream.subspan(full_starts[i + j], window);
      tb.ids.insert(tb.ids.end(), w.begin(), w.end());
    }
    run(tb);
  }
  if (tail >= 2) {
    auto w = stream.subspan(start, tail);
    run(TokenBatch{1, tail, std::vector<std::int32_t>(w.begin(), w.end())});
  }
  return std::exp(nll / static_cast<double>(count));
}

#define CPMOE_INSTANTIATE_TRANSFORMER(T)                                                       \
  template class Model<T>;                                                                    \
  template Tensor<T> block_forward(const Tensor<T>&, const Block<T>&, const ModelConfig&,    \
                                   std::size_t, std::size_t, std::size_t,                     \
                                   std::span<const std::int32_t>, const ForwardOptions&,      \
                                   std::vector<RouterRecord<T>>*);                            \
  template LossResult<T> lm_loss(const Model<T>&, const TokenBatch&, const ForwardOptions&);  \
  template double perplexity(const Model<T>&, std::span<const std::int32_t>, std::size_t,     \
                             const ForwardOptions&, std::size_t);

CPMOE_INSTANTIATE_TRANSFORMER(float)
CPMOE_INSTANTIATE_TRANSFORMER(double)

#undef CPMOE_INSTANTIATE_TRANSFORMER

}  // namespace cpmoe
