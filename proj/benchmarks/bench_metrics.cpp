#include <benchmark/benchmark.h>

#include <complex>
#include <memory>

#include "stmotion/metrics.hpp"
#include "stmotion/motion.hpp"
#include "stmotion/so3.hpp"

namespace {

using namespace stmotion;

void BM_Fft(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::vector<std::complex<double>> base(n);
  for (std::size_t i = 0; i < n; ++i) base[i] = {double(i % 7), 0};
  for (auto _ : state) {
    auto v = base;
    metrics::fft(v);
    benchmark::DoNotOptimize(v.data());
  }
}
BENCHMARK(BM_Fft)->RangeMultiplier(4)->Range(64, 4096);

void BM_ProjectToSo3(benchmark::State& state) {
  so3::Mat3 a{1.1, 0.1, 0.0, -0.05, 0.95, 0.2, 0.0, -0.1, 1.02};
  for (auto _ : state) benchmark::DoNotOptimize(so3::project_to_so3(a));
}
BENCHMARK(BM_ProjectToSo3);

void BM_PowerSpectra(benchmark::State& state) {
  auto sk = std::make_shared<const motion::Skeleton>(motion::Skeleton::desk());
  const auto seqs = motion::periodic_dataset(sk, 2, 3600, 60, {1.0, 0.5}, 0.5, 0.001, 3);
  std::vector<motion::MotionSequence> windows;
  for (const auto& s : seqs) {
    auto w = motion::window(s, 60, 60);
    windows.insert(windows.end(), w.begin(), w.end());
  }
  for (auto _ : state) benchmark::DoNotOptimize(metrics::ps_of_windows(windows));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(windows.size()));
}
BENCHMARK(BM_PowerSpectra)->Unit(benchmark::kMillisecond);

}  // namespace
