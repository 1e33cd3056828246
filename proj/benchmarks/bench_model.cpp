#include <benchmark/benchmark.h>

#include <random>

#include "stmotion/model.hpp"
#include "stmotion/so3.hpp"
#include "stmotion/tape.hpp"
#include "stmotion/training.hpp"

namespace {

using namespace stmotion;
using nd::Tensor;

model::ModelConfig tiny(model::Variant v, std::size_t window) {
  model::ModelConfig c;
  c.layers = 2;
  c.heads = 2;
  c.embed = 16;
  c.ff_size = 32;
  c.window = window;
  c.variant = v;
  return c;
}

Tensor poses(std::size_t b, std::size_t t, std::size_t n) {
  std::mt19937_64 rng(1);
  std::vector<Real> v;
  for (std::size_t i = 0; i < b * t * n; ++i)
    for (double x : so3::random_rotation(rng)) v.push_back(static_cast<Real>(x));
  return Tensor({b, t, n, 9}, std::move(v));
}

const model::Variant kVariants[] = {model::Variant::st, model::Variant::vanilla_1d, model::Variant::full_2d};

void BM_Forward(benchmark::State& state) {
  const auto v = kVariants[state.range(0)];
  const auto window = static_cast<std::size_t>(state.range(1));
  const model::Model m(tiny(v, window), 1);
  const Tensor x = poses(8, window, 9);
  for (auto _ : state) benchmark::DoNotOptimize(m.forward(x));
  state.SetLabel(model::to_string(v));
}
BENCHMARK(BM_Forward)->ArgsProduct({{0, 1, 2}, {16, 32, 64}})->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  const auto v = kVariants[state.range(0)];
  model::Model m(tiny(v, 32), 1);
  m.set_trainable(true);
  const Tensor x = poses(8, 32, 9), y = poses(8, 32, 9);
  for (auto _ : state) {
    m.zero_grad();
    nd::Tape tape;
    nd::TapeScope scope(tape);
    nd::backward(training::loss_per_joint_l2(m.forward(x).prediction, y), tape);
  }
  state.SetLabel(model::to_string(v));
}
BENCHMARK(BM_TrainStep)->DenseRange(0, 2)->Unit(benchmark::kMillisecond);

void BM_Rollout(benchmark::State& state) {
  const model::Model m(tiny(model::Variant::st, 32), 1);
  const Tensor seed = poses(1, 32, 9);
  for (auto _ : state) benchmark::DoNotOptimize(model::rollout(m, seed, 60));
}
BENCHMARK(BM_Rollout)->Unit(benchmark::kMillisecond);

}  // namespace
