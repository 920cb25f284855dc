// Copyright 2026 The changeadapt Authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>
#include <torch/torch.h>

#include "changeadapt/config.h"
#include "changeadapt/metrics.h"
#include "changeadapt/model.h"
#include "changeadapt/peft.h"

namespace {

changeadapt::RunConfig pick(int64_t which) {
  return which == 0 ? changeadapt::toy_vit_lora_config() : changeadapt::toy_hierarchical_adapter_config();
}

void BM_Predict(benchmark::State& state) {
  torch::set_num_threads(1);
  torch::manual_seed(0);
  changeadapt::ChangeDetector model(pick(state.range(0)).model);
  model->eval();
  auto a = torch::rand({state.range(1), 3, 64, 64});
  auto b = torch::rand({state.range(1), 3, 64, 64});
  torch::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(model->predict(a, b).probabilities);
  state.SetItemsProcessed(state.iterations() * state.range(1));
}
BENCHMARK(BM_Predict)->ArgNames({"hier", "batch"})->Args({0, 1})->Args({0, 8})->Args({1, 1})->Args({1, 8});

void BM_TrainStep(benchmark::State& state) {
  torch::set_num_threads(1);
  torch::manual_seed(0);
  changeadapt::ChangeDetector model(pick(state.range(0)).model);
  model->train();
  std::vector<torch::Tensor> params;
  for (const auto& p : model->parameters()) {
    if (p.requires_grad()) params.push_back(p);
  }
  torch::optim::AdamW opt(params, torch::optim::AdamWOptions(3e-4).weight_decay(0.01));
  auto a = torch::rand({8, 3, 64, 64});
  auto b = torch::rand({8, 3, 64, 64});
  auto mask = torch::randint(0, 2, {8, 64, 64}, torch::kInt64);
  for (auto _ : state) {
    opt.zero_grad();
    auto [la, lb] = model->forward(a, b);
    auto loss = torch::nn::functional::cross_entropy(la.logits, mask) +
                torch::nn::functional::cross_entropy(lb.logits, mask);
    loss.backward();
    opt.step();
  }
}
BENCHMARK(BM_TrainStep)->ArgName("hier")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_MergeLora(benchmark::State& state) {
  const int64_t d = state.range(0);
  auto s = changeadapt::make_lora_state(torch::randn({3 * d, d}), torch::randn({3 * d}), 8, 32.0, 0.0);
  for (auto _ : state) benchmark::DoNotOptimize(changeadapt::merge_lora(s));
}
BENCHMARK(BM_MergeLora)->Arg(64)->Arg(256)->Arg(1024);

void BM_Accumulate(benchmark::State& state) {
  const int64_t side = state.range(0);
  auto p = torch::randint(0, 2, {side, side}, torch::kInt64);
  auto g = torch::randint(0, 2, {side, side}, torch::kInt64);
  for (auto _ : state) benchmark::DoNotOptimize(changeadapt::accumulate(p, g));
  state.SetItemsProcessed(state.iterations() * side * side);
}
BENCHMARK(BM_Accumulate)->Arg(256)->Arg(1024);

}  // namespace

BENCHMARK_MAIN();
