#include <benchmark/benchmark.h>

#include "csam/attention.hpp"
#include "csam/losses.hpp"
#include "csam/network.hpp"
#include "csam/ops.hpp"
#include "csam/phantom.hpp"
#include "csam/trainer.hpp"

namespace {

using namespace csam;

Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = false) {
  const std::size_t n = numel(shape);
  return Tensor::from_data(std::move(shape), rng.normal_vector(n), requires_grad);
}

void BM_Conv2dSame(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto hw = static_cast<std::size_t>(state.range(1));
  Rng rng(1);
  const Tensor x = random_tensor({8, c, hw, hw}, rng);
  const Tensor k = random_tensor({c, c, 3, 3}, rng);
  NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(conv2d_same(x, k));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(8 * c * c * hw * hw * 9));
}
BENCHMARK(BM_Conv2dSame)->Args({8, 32})->Args({16, 16})->Args({64, 4});

void BM_CsamForward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto hw = static_cast<std::size_t>(state.range(1));
  Rng rng(2);
  const CsamParams params = CsamParams::random(CsamShape{8, c, 4, 7, 8, 2}, rng);
  const Tensor x = random_tensor({8, c, hw, hw}, rng);
  NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(csam_forward(x, params, Mode::kTrain, rng));
}
BENCHMARK(BM_CsamForward)->Args({8, 32})->Args({64, 4});

void BM_NetworkForward(benchmark::State& state) {
  NetworkConfig cfg;
  if (state.range(0) == 0) cfg.pipeline.f_mid = MidStage::kIdentity;
  const SegmentationNet net(cfg, 3);
  Rng rng(3);
  const Tensor x = random_tensor({8, 1, 32, 32}, rng);
  NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(net.forward(x, Mode::kEval, rng));
}
BENCHMARK(BM_NetworkForward)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

// One optimizer step on one phantom: forward, loss, backward, Adam.
void BM_TrainStep(benchmark::State& state) {
  NetworkConfig cfg;
  if (state.range(0) == 0) cfg.pipeline.f_mid = MidStage::kIdentity;
  SegmentationNet net(cfg, 4);
  PhantomSpec spec;
  spec.seed = 4;
  const std::vector<Volume> data{generate_phantom(spec)};
  TrainConfig train;
  train.epochs = 1;
  for (auto _ : state) benchmark::DoNotOptimize(fit(net, data, train));
}
BENCHMARK(BM_TrainStep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
