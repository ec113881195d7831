#include <benchmark/benchmark.h>

#include "nsr/network.hpp"
#include "nsr/sparse_conv.hpp"

namespace {

using namespace nsr;

Tensor<float> random_input(std::size_t n, std::size_t c, std::size_t size, std::uint64_t seed) {
  Pcg32 rng = make_stream(seed, Stream::test);
  Tensor<float> x({n, c, size, size});
  for (auto& v : x.vec()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return x;
}

GroupedKernelBank<float> random_bank(std::size_t k, std::size_t c, std::size_t c_in) {
  Pcg32 rng = make_stream(2, Stream::test);
  GroupedKernelBank<float> b(GroupAxis::output_grouped, k, c, 1, c_in, 3, 3);
  for (auto& v : b.weights.vec()) v = static_cast<float>(rng.uniform(-0.1, 0.1));
  return b;
}

// One grouped layer at width 32 on a 48x48 patch: merged kernel vs all k branches.
void BM_MergedLayer(benchmark::State& state) {
  const auto k = static_cast<std::size_t>(state.range(0));
  const auto bank = random_bank(k, 32, 32);
  SparsityPredictor<float> p(32, 1, k, Normalizer::softmax, 1.0f);
  const auto x = random_input(1, 32, 48, 1);
  for (auto _ : state) benchmark::DoNotOptimize(sparse_conv_forward(x, bank, p, true));
  state.counters["MAC/px"] = 32.0 * 32 * 9;
}
BENCHMARK(BM_MergedLayer)->Arg(2)->Arg(4)->Arg(8)->Unit(benchmark::kMicrosecond);

void BM_ExactBranches(benchmark::State& state) {
  const auto k = static_cast<std::size_t>(state.range(0));
  const auto wide = random_bank(k, 32, 32).wide_kernel();
  const auto x = random_input(1, 32, 48, 1);
  for (auto _ : state) benchmark::DoNotOptimize(conv2d_forward(x, wide));
  state.counters["MAC/px"] = static_cast<double>(k) * 32 * 32 * 9;
}
BENCHMARK(BM_ExactBranches)->Arg(2)->Arg(4)->Arg(8)->Unit(benchmark::kMicrosecond);

void BM_Conv3x3Backward(benchmark::State& state) {
  Pcg32 rng = make_stream(3, Stream::test);
  ConvKernel<float> k(32, 32, 3, 3);
  for (auto& v : k.weights.vec()) v = static_cast<float>(rng.uniform(-0.1, 0.1));
  const auto x = random_input(4, 32, 48, 4);
  const auto g = random_input(4, 32, 48, 5);
  for (auto _ : state) benchmark::DoNotOptimize(conv2d_backward(x, k, g));
}
BENCHMARK(BM_Conv3x3Backward)->Unit(benchmark::kMillisecond);

// Desk-profile training step cost: forward and backward of the 2-block sparse model.
void BM_DeskModelStep(benchmark::State& state) {
  ModelConfig cfg;
  cfg.n_blocks = 2;
  cfg.width = 8;
  cfg.multiplier = 2;
  SparsityConfig s;
  s.k = 2;
  s.c = 8;
  cfg.sparsity = s;
  const auto model = build_model<float>(cfg, 1, InitScheme::random);
  const auto x = random_input(16, 1, 48, 6);
  const auto g = random_input(16, 1, 48, 7);
  for (auto _ : state) {
    const auto fwd = model_forward_cached(model, x);
    benchmark::DoNotOptimize(model_backward(model, fwd.cache, g));
  }
}
BENCHMARK(BM_DeskModelStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
