#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "stmotion/metrics.hpp"
#include "stmotion/model.hpp"
#include "stmotion/tape.hpp"
#include "stmotion/training.hpp"

namespace {

using namespace stmotion;
using nd::Shape;
using nd::Tensor;

Tensor random_tensor(Shape shape, std::mt19937_64& rng, bool grad = false) {
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<Real> v(nd::numel(shape));
  for (auto& x : v) x = static_cast<Real>(u(rng));
  return Tensor(std::move(shape), std::move(v), grad);
}

std::shared_ptr<const motion::Skeleton> desk() {
  return std::make_shared<const motion::Skeleton>(motion::Skeleton::desk());
}

model::ModelConfig tiny() {
  model::ModelConfig c;
  c.embed = 8;
  c.heads = 2;
  c.layers = 1;
  c.ff_size = 16;
  c.window = 8;
  c.dropout = 0.1;
  return c;
}

training::TrainConfig quick(std::size_t steps) {
  training::TrainConfig c;
  c.batch_size = 4;
  c.warmup = 50;
  c.max_steps = steps;
  c.eval_every = 25;
  c.val_horizon = 4;
  c.val_windows = 8;
  c.threads = 1;
  return c;
}

std::vector<motion::MotionSequence> periodic(std::size_t count, std::size_t frames, std::uint64_t seed) {
  return motion::periodic_dataset(desk(), count, frames, 60, {1.0, 0.5}, 0.5, 0.001, seed);
}

TEST(Config, Defaults) {
  const training::TrainConfig c;
  EXPECT_EQ(c.batch_size, 32u);
  EXPECT_EQ(c.warmup, 10000u);
  EXPECT_DOUBLE_EQ(c.max_grad_norm, 1.0);
  EXPECT_EQ(c.patience, 10u);
  training::TrainConfig bad;
  bad.warmup = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = {};
  bad.max_grad_norm = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Loss, ZeroOnEqualAndSingleOffset) {
  std::mt19937_64 rng(1);
  const Tensor a = random_tensor({2, 3, 4, 9}, rng);
  EXPECT_EQ(training::loss_per_joint_l2(a, a).item(), 0);
  Tensor p(Shape{1, 1, 1, 9}), t(Shape{1, 1, 1, 9});
  p.data()[0] = 0.25f;
  EXPECT_FLOAT_EQ(training::loss_per_joint_l2(p, t).item(), 0.25f);
}

TEST(Loss, MatchesIndependentRecomputation) {
  std::mt19937_64 rng(2);
  const Tensor a = random_tensor({3, 4, 5, 9}, rng), b = random_tensor({3, 4, 5, 9}, rng);
  double ref = 0;
  for (std::size_t r = 0; r < 3 * 4 * 5; ++r) {
    double s = 0;
    for (std::size_t k = 0; k < 9; ++k) {
      const double d = double(a.data()[r * 9 + k]) - b.data()[r * 9 + k];
      s += d * d;
    }
    ref += std::sqrt(s);
  }
  EXPECT_NEAR(training::loss_per_joint_l2(a, b).item(), ref / 3, 1e-4);
  EXPECT_THROW(training::loss_per_joint_l2(a, random_tensor({3, 4, 4, 9}, rng)), ShapeError);
}

TEST(Schedule, ClosedFormValues) {
  EXPECT_NEAR(training::noam_lr(10000, 128, 10000), std::pow(128.0, -0.5) * 1e-2, 1e-15);
  EXPECT_NEAR(training::noam_lr(1, 128, 10000), std::pow(128.0, -0.5) * std::pow(10000.0, -1.5), 1e-20);
  EXPECT_NEAR(training::noam_lr(10000, 128, 10000), 8.8388e-4, 1e-8);
  EXPECT_NEAR(training::noam_lr(1, 128, 10000), 8.8388e-8, 1e-12);
  EXPECT_THROW(training::noam_lr(0, 128, 10000), ParameterError);
}

TEST(Schedule, PeaksAtWarmup) {
  for (std::size_t w : {10, 500, 10000}) {
    EXPECT_LT(training::noam_lr(w - 1, 64, w), training::noam_lr(w, 64, w));
    EXPECT_GT(training::noam_lr(w, 64, w), training::noam_lr(w + 1, 64, w));
  }
}

TEST(Clip, BelowLimitUnchangedAboveLimitScaled) {
  Tensor a({2}, std::vector<Real>{0.3f, 0.4f}, true);
  a.grad()[0] = 0.3f;
  a.grad()[1] = 0.4f;
  EXPECT_NEAR(training::clip_global_norm({a}, 1.0), 0.5, 1e-7);
  EXPECT_FLOAT_EQ(a.grad()[0], 0.3f);
  Tensor b({1}, std::vector<Real>{0}, true), c({1}, std::vector<Real>{0}, true);
  b.grad()[0] = 1.2f;
  c.grad()[0] = 1.6f;
  EXPECT_NEAR(training::clip_global_norm({b, c}, 1.0), 2.0, 1e-6);
  EXPECT_FLOAT_EQ(b.grad()[0], 0.6f);
  EXPECT_FLOAT_EQ(c.grad()[0], 0.8f);
}

TEST(Clip, PostClipNormIsMinOfNormAndLimit) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Tensor> ps{random_tensor({5, 3}, rng, true), random_tensor({7}, rng, true)};
    const double scale = std::exp(std::uniform_real_distribution<double>(-3, 3)(rng));
    for (auto& p : ps)
      for (auto& g : p.grad()) g = static_cast<Real>(std::uniform_real_distribution<double>(-scale, scale)(rng));
    const double pre = training::clip_global_norm(ps, 1.0);
    double post = 0;
    for (auto& p : ps)
      for (Real g : p.grad()) post += double(g) * g;
    EXPECT_NEAR(std::sqrt(post), std::min(pre, 1.0), 1e-6 * std::max(1.0, pre));
    EXPECT_LE(std::sqrt(post), 1.0 + 1e-6);
  }
}

TEST(Adam, ZeroGradientKeepsParameters) {
  Tensor p({3}, std::vector<Real>{1, 2, 3}, true);
  training::AdamState s;
  training::adam_step({p}, s, 0.1);
  EXPECT_EQ(p.data()[0], 1);
  EXPECT_EQ(s.step, 1u);
}

TEST(Adam, ConstantGradientStepApproachesLearningRate) {
  Tensor p({1}, std::vector<Real>{0}, true);
  training::AdamState s;
  double last = 0, before = 0;
  for (int i = 0; i < 200; ++i) {
    p.grad()[0] = 0.37f;
    before = p.data()[0];
    training::adam_step({p}, s, 1e-3);
    last = p.data()[0] - before;
  }
  EXPECT_NEAR(last, -1e-3, 1e-5);
}

TEST(Adam, ConvergesOnQuadraticBowl) {
  Tensor x(Shape{4}, Real(1), true);
  training::AdamState s;
  for (int i = 0; i < 500; ++i) {
    x.zero_grad();
    nd::Tape tape;
    nd::TapeScope scope(tape);
    nd::backward(nd::sum(nd::mul(x, x)), tape);
    training::adam_step({x}, s, 1e-2);
  }
  double n = 0;
  for (Real v : x.data()) n += double(v) * v;
  EXPECT_LT(std::sqrt(n), 1e-2);
}

TEST(HeldOut, WindowsAreSeedThenTargets) {
  const auto seqs = periodic(2, 100, 4);
  const training::HeldOut h = training::held_out_windows(seqs, 8, 4, 100);
  ASSERT_EQ(h.seeds.dim(1), 8u);
  ASSERT_EQ(h.targets.dim(1), 4u);
  ASSERT_EQ(h.seeds.dim(0), h.targets.dim(0));
  EXPECT_EQ(h.seeds.dim(0), 16u);  // 100 / 12 = 8 windows per sequence
  const std::size_t frame = 81;
  for (std::size_t k = 0; k < frame; ++k) {
    EXPECT_EQ(h.seeds.data()[k], seqs[0].values()[k]);
    EXPECT_EQ(h.targets.data()[k], seqs[0].values()[8 * frame + k]);
  }
  EXPECT_EQ(training::held_out_windows(seqs, 8, 4, 5).seeds.dim(0), 5u);
}

TEST(Train, ConstantPoseLossStaysNearZero) {
  std::vector<float> v;
  for (int i = 0; i < 200 * 9; ++i)
    for (double x : so3::identity()) v.push_back(static_cast<float>(x));
  const std::vector<motion::MotionSequence> data{motion::MotionSequence(desk(), 60, 200, v)};
  const auto r = training::train(model::Model(tiny(), 1), data, {}, quick(200));
  ASSERT_EQ(r.history.size(), 200u);
  EXPECT_LT(r.history.back().loss, 1e-4);
}

TEST(Train, HistoryFollowsScheduleAndValidationCadence) {
  const auto train_set = periodic(2, 300, 5), val_set = periodic(1, 300, 6);
  const auto cfg = quick(60);
  const auto r = training::train(model::Model(tiny(), 2), train_set, val_set, cfg);
  ASSERT_EQ(r.history.size(), 60u);
  for (std::size_t i = 0; i < 60; ++i) {
    const auto& h = r.history[i];
    EXPECT_EQ(h.step, i + 1);
    EXPECT_EQ(h.lr, training::noam_lr(h.step, 8, cfg.warmup));
    const bool evaluated = h.step % cfg.eval_every == 0 || h.step == cfg.max_steps;
    EXPECT_EQ(std::isfinite(h.val_geodesic), evaluated) << h.step;
  }
}

TEST(Train, BestCheckpointIsNeverWorseThanAnySeen) {
  const auto train_set = periodic(2, 300, 7), val_set = periodic(1, 300, 8);
  auto cfg = quick(150);
  std::vector<std::size_t> improvements;
  const auto r = training::train(model::Model(tiny(), 3), train_set, val_set, cfg,
                                 [&](const model::Model&, std::size_t step) { improvements.push_back(step); });
  double best = std::numeric_limits<double>::infinity();
  for (const auto& h : r.history)
    if (std::isfinite(h.val_geodesic)) best = std::min(best, h.val_geodesic);
  EXPECT_EQ(r.best_val_geodesic, best);
  ASSERT_FALSE(improvements.empty());
  EXPECT_EQ(improvements.back(), r.best_step);
  const auto held = training::held_out_windows(val_set, tiny().window, cfg.val_horizon, cfg.val_windows);
  EXPECT_DOUBLE_EQ(training::validate(r.best, held, val_set[0].skeleton()).geodesic, best);
}

TEST(Train, EarlyStopsAfterPatience) {
  const auto train_set = periodic(2, 300, 9), val_set = periodic(1, 300, 10);
  auto cfg = quick(2000);
  cfg.eval_every = 5;
  cfg.patience = 1;
  cfg.warmup = 1;
  const auto r = training::train(model::Model(tiny(), 4), train_set, val_set, cfg);
  EXPECT_TRUE(r.stopped_early);
  EXPECT_LT(r.history.size(), 2000u);
}

TEST(Train, IdenticalSeedsGiveIdenticalRuns) {
  const auto train_set = periodic(2, 300, 11), val_set = periodic(1, 300, 12);
  auto cfg = quick(40);
  cfg.reverse_prob = 0.5;
  cfg.mirror_prob = 0.5;
  const auto a = training::train(model::Model(tiny(), 5), train_set, val_set, cfg);
  const auto b = training::train(model::Model(tiny(), 5), train_set, val_set, cfg);
  ASSERT_EQ(a.history.size(), b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) EXPECT_EQ(a.history[i].loss, b.history[i].loss);
  std::stringstream ca, cb;
  model::save_checkpoint(ca, a.last);
  model::save_checkpoint(cb, b.last);
  EXPECT_EQ(ca.str(), cb.str());
  cfg.seed = 99;
  const auto c = training::train(model::Model(tiny(), 5), train_set, val_set, cfg);
  EXPECT_NE(c.history.back().loss, a.history.back().loss);
}

TEST(Train, MovingAverageLossDoesNotIncrease) {
  const auto train_set = periodic(4, 600, 13);
  auto cfg = quick(1500);
  cfg.warmup = 200;
  cfg.batch_size = 8;
  const auto r = training::train(model::Model(tiny(), 6), train_set, {}, cfg);
  const std::size_t w = 500;
  std::vector<double> avg;
  for (std::size_t s = 0; s + w <= r.history.size(); s += w) {
    double m = 0;
    for (std::size_t i = s; i < s + w; ++i) m += r.history[i].loss;
    avg.push_back(m / w);
  }
  ASSERT_EQ(avg.size(), 3u);
  for (std::size_t i = 1; i < avg.size(); ++i) EXPECT_LE(avg[i], avg[i - 1]);
}

TEST(Train, RejectsMismatchedDataAndNonFiniteLoss) {
  const auto data = periodic(1, 100, 14);
  model::ModelConfig other = tiny();
  other.joints = 4;
  EXPECT_THROW(training::train(model::Model(other, 1), data, {}, quick(5)), ConfigError);
  std::vector<float> v(data[0].values().begin(), data[0].values().end());
  for (auto& x : v) x = std::numeric_limits<float>::quiet_NaN();
  const std::vector<motion::MotionSequence> bad{motion::MotionSequence(desk(), 60, 100, v)};
  EXPECT_THROW(training::train(model::Model(tiny(), 1), bad, {}, quick(5)), NumericError);
}

TEST(History, CsvHeaderAndNan) {
  std::vector<training::HistoryRow> rows(2);
  rows[0] = {1, 0.5, 1e-3};
  rows[1] = {2, 0.25, 2e-3, 0.1, 0.2, 3.0};
  std::stringstream out;
  training::write_history_csv(out, rows);
  std::string line;
  std::getline(out, line);
  EXPECT_EQ(line, training::kHistoryCsvHeader);
  std::getline(out, line);
  EXPECT_NE(line.find("nan"), std::string::npos);
  std::getline(out, line);
  EXPECT_EQ(line.rfind("2,0.25,", 0), 0u);
}

// Dropout masks are drawn per worker chunk, so the comparison runs without dropout.
TEST(Threads, WorkerCountDoesNotChangeLossBeyondRounding) {
  const auto train_set = periodic(2, 300, 15);
  auto mcfg = tiny();
  mcfg.dropout = 0;
  auto cfg = quick(10);
  cfg.batch_size = 8;
  cfg.threads = 1;
  const auto a = training::train(model::Model(mcfg, 7), train_set, {}, cfg);
  cfg.threads = 2;
  const auto b = training::train(model::Model(mcfg, 7), train_set, {}, cfg);
  const auto c = training::train(model::Model(mcfg, 7), train_set, {}, cfg);
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    EXPECT_NEAR(a.history[i].loss, b.history[i].loss, 1e-3 * a.history[i].loss);
    EXPECT_EQ(b.history[i].loss, c.history[i].loss);
  }
  // With dropout the split changes the masks but repeated runs still agree exactly.
  cfg.threads = 2;
  const auto d = training::train(model::Model(tiny(), 7), train_set, {}, cfg);
  const auto e = training::train(model::Model(tiny(), 7), train_set, {}, cfg);
  for (std::size_t i = 0; i < d.history.size(); ++i) EXPECT_EQ(d.history[i].loss, e.history[i].loss);
}

}  // namespace
