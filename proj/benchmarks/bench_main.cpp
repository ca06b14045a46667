// SPDX-FileCopyrightText: © 2026 The cpmoe Authors
//
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include "cpmoe/config_io.hpp"
#include "cpmoe/corpus.hpp"
#include "cpmoe/moe.hpp"
#include "cpmoe/ops.hpp"
#include "cpmoe/rng.hpp"
#include "cpmoe/trainer.hpp"

using namespace cpmoe;

namespace {

Tensor<float> random_tensor(Shape shape, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed, "bench");
  std::vector<float> v(numel(shape));
  for (float& x : v) x = static_cast<float>(scale * rng.normal());
  return Tensor<float>::from(std::move(shape), std::move(v), true);
}

FfnWeights<float> random_ffn(std::size_t d, std::size_t h, std::uint64_t seed) {
  return {random_tensor({d, h}, seed, 0.1), random_tensor({d, h}, seed + 1, 0.1),
          random_tensor({h, d}, seed + 2, 0.1)};
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  auto a = random_tensor({n, n}, 1), b = random_tensor({n, n}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(ops::matmul(a, b).data().data());
  state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

// Forward plus backward of one MoE layer at desk width, 256 tokens.
void BM_MoeLayer(benchmark::State& state) {
  const auto variant = static_cast<MoeVariant>(state.range(0));
  const std::size_t d = 64, tokens = 256;
  const std::size_t groups = variant == MoeVariant::kCartesian ? 2 : 1;
  // Same expert parameters in every variant; Cartesian splits them over two
  // sub-layers.
  const std::size_t experts = variant == MoeVariant::kSmoe        ? 8
                              : variant == MoeVariant::kCartesian ? 8
                                                                  : 16;
  const std::size_t width = variant == MoeVariant::kSmoe ? 128 : 64;
  MoeLayerState<float> layer;
  layer.variant = variant;
  layer.activation = variant == MoeVariant::kFineGrained ? 4 : 2;
  std::uint64_t s = 10;
  for (std::size_t g = 0; g < groups; ++g) {
    ExpertGroup<float> group;
    group.router = random_tensor({d, experts}, s++);
    for (std::size_t e = 0; e < experts; ++e, s += 3) group.experts.push_back(random_ffn(d, width, s));
    group.shared.push_back(random_ffn(d, width, s));
    s += 3;
    layer.groups.push_back(std::move(group));
  }
  auto h = random_tensor({tokens, d}, 99);
  for (auto _ : state) {
    auto out = moe_layer_forward(h, layer, {});
    backward(ops::sum(out.delta));
  }
  state.SetItemsProcessed(state.iterations() * tokens);
}
BENCHMARK(BM_MoeLayer)
    ->Arg(static_cast<int>(MoeVariant::kSmoe))
    ->Arg(static_cast<int>(MoeVariant::kFineGrained))
    ->Arg(static_cast<int>(MoeVariant::kCartesian));

void BM_TrainStep(benchmark::State& state) {
  ExperimentConfig e;
  e.model = desk_config(static_cast<MoeVariant>(state.range(0)));
  e.data_path = "synthetic:grammar:50000";
  e.batch_size = 8;
  e.seq_len = 32;
  e.steps = 1000000;
  e.optim.total_steps = e.steps;
  Trainer trainer(e, load_corpus(e.data_path, e.seed));
  for (auto _ : state) benchmark::DoNotOptimize(trainer.train_step());
  state.SetItemsProcessed(state.iterations() * e.batch_size * e.seq_len);
}
BENCHMARK(BM_TrainStep)
    ->Arg(static_cast<int>(MoeVariant::kDense))
    ->Arg(static_cast<int>(MoeVariant::kCartesian))
    ->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
