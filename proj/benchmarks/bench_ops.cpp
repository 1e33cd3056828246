#include <benchmark/benchmark.h>

#include "stmotion/ops.hpp"
#include "stmotion/tape.hpp"

namespace {

using namespace stmotion;
using nd::Tensor;

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a({n, n}, Real(0.5)), b({n, n}, Real(0.25));
  for (auto _ : state) benchmark::DoNotOptimize(nd::matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->RangeMultiplier(2)->Range(16, 256);

void BM_BatchedScores(benchmark::State& state) {
  const auto t = static_cast<std::size_t>(state.range(0));
  const Tensor q({9, 32, 2, t, 8}, Real(0.1));
  for (auto _ : state) benchmark::DoNotOptimize(nd::matmul(q, q, true, Real(0.35)));
}
BENCHMARK(BM_BatchedScores)->Arg(16)->Arg(32)->Arg(64);

void BM_Softmax(benchmark::State& state) {
  const auto k = static_cast<std::size_t>(state.range(0));
  const Tensor s({512, k}, Real(0.1));
  for (auto _ : state) benchmark::DoNotOptimize(nd::softmax_lastdim(s));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(512 * k));
}
BENCHMARK(BM_Softmax)->Arg(9)->Arg(32)->Arg(288);

void BM_LayerNorm(benchmark::State& state) {
  const Tensor x({9216, 16}, Real(0.3)), g({16}, Real(1)), b({16}, Real(0));
  for (auto _ : state) benchmark::DoNotOptimize(nd::layer_norm(x, g, b));
}
BENCHMARK(BM_LayerNorm);

void BM_MatmulForwardBackward(benchmark::State& state) {
  Tensor a({256, 64}, Real(0.5), true), b({64, 64}, Real(0.25), true);
  for (auto _ : state) {
    nd::Tape tape;
    nd::TapeScope scope(tape);
    nd::backward(nd::sum(nd::matmul(a, b)), tape);
  }
}
BENCHMARK(BM_MatmulForwardBackward);

}  // namespace
