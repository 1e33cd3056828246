#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <random>
#include <sstream>

#include "stmotion/metrics.hpp"
#include "stmotion/model.hpp"
#include "stmotion/so3.hpp"
#include "stmotion/tape.hpp"

namespace {

using namespace stmotion;
using model::ModelConfig;
using nd::Shape;
using nd::Tensor;

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  std::vector<Real> v(nd::numel(shape));
  for (auto& x : v) x = static_cast<Real>(u(rng));
  return Tensor(std::move(shape), std::move(v));
}

// [B, T, N, 9] of random rotations.
Tensor random_poses(std::size_t b, std::size_t t, std::size_t n, std::mt19937_64& rng) {
  std::vector<Real> v;
  v.reserve(b * t * n * 9);
  for (std::size_t i = 0; i < b * t * n; ++i)
    for (double x : so3::random_rotation(rng)) v.push_back(static_cast<Real>(x));
  return Tensor({b, t, n, 9}, std::move(v));
}

ModelConfig tiny(model::Variant variant = model::Variant::st) {
  ModelConfig c;
  c.joints = 3;
  c.embed = 8;
  c.heads = 2;
  c.layers = 2;
  c.ff_size = 16;
  c.window = 8;
  c.dropout = 0.1;
  c.variant = variant;
  return c;
}

// Model with every parameter (output projection included) randomised.
model::Model randomised(const ModelConfig& cfg, std::uint64_t seed, double scale = 0.5) {
  model::Model m(cfg, seed);
  std::mt19937_64 rng(seed + 100);
  nd::NamedTensors params;
  for (const auto& [name, t] : m.parameters()) params.emplace_back(name, random_tensor(t.shape(), rng, scale));
  return model::Model(cfg, std::move(params));
}

double at(const Tensor& t, std::initializer_list<std::size_t> idx) {
  std::size_t flat = 0, k = 0;
  for (std::size_t i : idx) flat = flat * t.dim(k++) + i;
  return t.data()[flat];
}

TEST(Config, Validation) {
  ModelConfig c = tiny();
  EXPECT_NO_THROW(c.validate());
  c.heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny();
  c.dropout = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(model::Model(c, 1), ConfigError);
}

TEST(Config, DefaultsMatchLargeSetting) {
  const ModelConfig c;
  EXPECT_EQ(c.layers, 8u);
  EXPECT_EQ(c.heads, 8u);
  EXPECT_EQ(c.embed, 128u);
  EXPECT_EQ(c.ff_size, 256u);
  EXPECT_EQ(c.window, 120u);
  EXPECT_DOUBLE_EQ(c.dropout, 0.1);
}

TEST(Config, EnumStringsRoundTrip) {
  for (auto v : {model::Variant::st, model::Variant::vanilla_1d, model::Variant::full_2d})
    EXPECT_EQ(model::parse_variant(model::to_string(v)), v);
  for (auto s : {model::SpatialSharing::query_separate, model::SpatialSharing::all_separate,
                 model::SpatialSharing::all_shared})
    EXPECT_EQ(model::parse_sharing(model::to_string(s)), s);
  EXPECT_EQ(model::parse_tau("sum"), model::TauMode::sum_normalize);
  EXPECT_THROW(model::parse_variant("nope"), ConfigError);
}

TEST(PositionalEncoding, FirstRowAndRange) {
  const Tensor pe = model::positional_encoding(50, 6);
  for (std::size_t k = 0; k < 6; ++k) EXPECT_EQ(pe.data()[k], k % 2 == 0 ? 0.0f : 1.0f);
  for (Real v : pe.data()) {
    EXPECT_GE(v, -1);
    EXPECT_LE(v, 1);
  }
}

TEST(PositionalEncoding, MatchesFormulaAtD4) {
  const Tensor pe = model::positional_encoding(2, 4);
  EXPECT_FLOAT_EQ(pe.data()[4], static_cast<float>(std::sin(1.0)));
  EXPECT_FLOAT_EQ(pe.data()[5], static_cast<float>(std::cos(1.0)));
  EXPECT_FLOAT_EQ(pe.data()[6], static_cast<float>(std::sin(1e-2)));
  EXPECT_FLOAT_EQ(pe.data()[7], static_cast<float>(std::cos(1e-2)));
  EXPECT_THROW(model::positional_encoding(2, 3), ParameterError);
}

TEST(Embedding, ZeroWeightsGiveBias) {
  std::mt19937_64 rng(1);
  const Tensor x = random_tensor({2, 1, 4, 9}, rng);
  const Tensor bias = random_tensor({2, 1, 1, 6}, rng);
  const Tensor e = model::embed_joints(x, Tensor(Shape{2, 1, 9, 6}), bias);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t t = 0; t < 4; ++t)
      for (std::size_t d = 0; d < 6; ++d) EXPECT_EQ(at(e, {n, 0, t, d}), bias.data()[n * 6 + d]);
}

TEST(Embedding, PerJointWeightsAndFrameLocality) {
  std::mt19937_64 rng(2);
  Tensor x = random_tensor({2, 1, 3, 9}, rng);
  const Tensor w = random_tensor({2, 1, 9, 4}, rng);
  const Tensor b = random_tensor({2, 1, 1, 4}, rng);
  const Tensor e = model::embed_joints(x, w, b);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t t = 0; t < 3; ++t)
      for (std::size_t d = 0; d < 4; ++d) {
        double ref = at(b, {n, 0, 0, d});
        for (std::size_t m = 0; m < 9; ++m) ref += at(x, {n, 0, t, m}) * at(w, {n, 0, m, d});
        EXPECT_NEAR(at(e, {n, 0, t, d}), ref, 1e-5);
      }
  // Swapping frames 0 and 2 swaps only those embedding rows.
  Tensor swapped = x.clone();
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t m = 0; m < 9; ++m) std::swap(swapped.data()[(n * 3 + 0) * 9 + m], swapped.data()[(n * 3 + 2) * 9 + m]);
  const Tensor e2 = model::embed_joints(swapped, w, b);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t d = 0; d < 4; ++d) {
      EXPECT_EQ(at(e2, {n, 0, 0, d}), at(e, {n, 0, 2, d}));
      EXPECT_EQ(at(e2, {n, 0, 1, d}), at(e, {n, 0, 1, d}));
      EXPECT_EQ(at(e2, {n, 0, 2, d}), at(e, {n, 0, 0, d}));
    }
  EXPECT_THROW(model::embed_joints(x, random_tensor({3, 1, 9, 4}, rng), b), ShapeError);
}

model::AttentionWeights scalar_weights(std::size_t nq, std::size_t nkv, std::vector<Real> q, std::vector<Real> k,
                                       std::vector<Real> v, std::vector<Real> o) {
  return {Tensor({nq, 1, 1, 1}, std::move(q)), Tensor({nkv, 1, 1, 1}, std::move(k)), Tensor({nkv, 1, 1, 1}, std::move(v)),
          Tensor({nkv, 1, 1, 1}, std::move(o))};
}

TEST(TemporalAttention, HandRolledThreeSteps) {
  const std::vector<double> e{0.5, -1.0, 2.0};
  const double wq = 0.7, wk = -1.3, wv = 0.9, wo = 1.1;
  const Tensor emb({1, 1, 3, 1}, std::vector<Real>{0.5f, -1.0f, 2.0f});
  const auto w = scalar_weights(1, 1, {Real(wq)}, {Real(wk)}, {Real(wv)}, {Real(wo)});
  const auto r = model::temporal_attention(emb, w, 1, model::TauMode::softmax);
  for (std::size_t t = 0; t < 3; ++t) {
    std::vector<double> s(t + 1);
    double mx = -1e300, z = 0, out = 0;
    for (std::size_t u = 0; u <= t; ++u) mx = std::max(mx, s[u] = (e[t] * wq) * (e[u] * wk));
    for (std::size_t u = 0; u <= t; ++u) z += std::exp(s[u] - mx);
    for (std::size_t u = 0; u <= t; ++u) {
      const double a = std::exp(s[u] - mx) / z;
      EXPECT_NEAR(at(r.weights, {0, 0, 0, t, u}), a, 1e-6);
      out += a * e[u] * wv;
    }
    for (std::size_t u = t + 1; u < 3; ++u) EXPECT_EQ(at(r.weights, {0, 0, 0, t, u}), 0);
    EXPECT_NEAR(at(r.summary, {0, 0, t, 0}), out * wo, 1e-5);
  }
}

TEST(TemporalAttention, SingleStepIsProjectedValue) {
  std::mt19937_64 rng(3);
  const Tensor emb = random_tensor({1, 1, 1, 4}, rng);
  model::AttentionWeights w{random_tensor({1, 1, 4, 4}, rng), random_tensor({1, 1, 4, 4}, rng),
                            random_tensor({1, 1, 4, 4}, rng), random_tensor({1, 1, 4, 4}, rng)};
  const auto r = model::temporal_attention(emb, w, 2, model::TauMode::softmax);
  EXPECT_EQ(at(r.weights, {0, 0, 0, 0, 0}), 1);
  EXPECT_EQ(at(r.weights, {0, 0, 1, 0, 0}), 1);
  const Tensor expected = nd::matmul(nd::matmul(nd::reshape(emb, {1, 4}), nd::reshape(w.v, {4, 4})),
                                     nd::reshape(w.o, {4, 4}));
  for (std::size_t d = 0; d < 4; ++d) EXPECT_NEAR(r.summary.data()[d], expected.data()[d], 1e-5);
}

TEST(TemporalAttention, FutureFramesDoNotLeak) {
  std::mt19937_64 rng(4);
  const Tensor emb = random_tensor({2, 2, 6, 4}, rng);
  model::AttentionWeights w{random_tensor({2, 1, 4, 4}, rng), random_tensor({2, 1, 4, 4}, rng),
                            random_tensor({2, 1, 4, 4}, rng), random_tensor({2, 1, 4, 4}, rng)};
  for (auto tau : {model::TauMode::softmax, model::TauMode::sum_normalize}) {
    const auto base = model::temporal_attention(emb, w, 2, tau);
    Tensor changed = emb.clone();
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t d = 0; d < 4; ++d) changed.data()[((n * 2 + b) * 6 + 4) * 4 + d] += 3.0f;
    const auto pert = model::temporal_attention(changed, w, 2, tau);
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t t = 0; t < 4; ++t)
          for (std::size_t d = 0; d < 4; ++d)
            EXPECT_EQ(at(pert.summary, {n, b, t, d}), at(base.summary, {n, b, t, d}));
  }
}

TEST(SpatialAttention, HandRolledThreeJoints) {
  const std::vector<double> e{0.3, -0.8, 1.5};
  const std::vector<Real> wq{0.5f, -1.0f, 2.0f};
  const double wk = 0.7, wv = -1.2, wo = 0.6;
  const Tensor emb({3, 1, 1, 1}, std::vector<Real>{0.3f, -0.8f, 1.5f});
  const auto w = scalar_weights(3, 1, wq, {Real(wk)}, {Real(wv)}, {Real(wo)});
  const auto r = model::spatial_attention(emb, w, 1, model::TauMode::softmax);
  for (std::size_t n = 0; n < 3; ++n) {
    double mx = -1e300, z = 0, out = 0;
    std::vector<double> s(3);
    for (std::size_t m = 0; m < 3; ++m) mx = std::max(mx, s[m] = (e[n] * wq[n]) * (e[m] * wk));
    for (std::size_t m = 0; m < 3; ++m) z += std::exp(s[m] - mx);
    for (std::size_t m = 0; m < 3; ++m) {
      const double a = std::exp(s[m] - mx) / z;
      EXPECT_NEAR(at(r.weights, {0, 0, 0, n, m}), a, 1e-6);
      out += a * e[m] * wv;
    }
    EXPECT_NEAR(at(r.summary, {n, 0, 0, 0}), out * wo, 1e-5);
  }
}

TEST(SpatialAttention, SingleJointAndSymmetricUniform) {
  std::mt19937_64 rng(5);
  model::AttentionWeights shared{random_tensor({1, 1, 4, 4}, rng), random_tensor({1, 1, 4, 4}, rng),
                                 random_tensor({1, 1, 4, 4}, rng), random_tensor({1, 1, 4, 4}, rng)};
  const auto one = model::spatial_attention(random_tensor({1, 1, 2, 4}, rng), shared, 2, model::TauMode::softmax);
  for (Real v : one.weights.data()) EXPECT_EQ(v, 1);

  const Tensor row = random_tensor({1, 1, 2, 4}, rng);
  std::vector<Real> same;
  for (int n = 0; n < 4; ++n) same.insert(same.end(), row.data().begin(), row.data().end());
  const auto r = model::spatial_attention(Tensor({4, 1, 2, 4}, same), shared, 2, model::TauMode::softmax);
  for (Real v : r.weights.data()) EXPECT_NEAR(v, 0.25, 1e-6);
}

TEST(FullAttention, SingleJointReducesToTemporal) {
  std::mt19937_64 rng(6);
  const Tensor emb = random_tensor({1, 2, 5, 4}, rng);
  model::AttentionWeights w{random_tensor({1, 1, 4, 4}, rng), random_tensor({1, 1, 4, 4}, rng),
                            random_tensor({1, 1, 4, 4}, rng), random_tensor({1, 1, 4, 4}, rng)};
  const auto t = model::temporal_attention(emb, w, 2, model::TauMode::softmax);
  const auto f = model::full_attention(emb, w, 2, model::TauMode::softmax);
  ASSERT_EQ(t.summary.shape(), f.summary.shape());
  for (std::size_t i = 0; i < t.summary.numel(); ++i) EXPECT_NEAR(t.summary.data()[i], f.summary.data()[i], 1e-5);
}

TEST(FullAttention, TokensSeeOnlyCurrentAndEarlierFrames) {
  std::mt19937_64 rng(7);
  const std::size_t n = 3, t = 4;
  const Tensor emb = random_tensor({n, 1, t, 4}, rng);
  model::AttentionWeights w{random_tensor({n, 1, 4, 4}, rng), random_tensor({n, 1, 4, 4}, rng),
                            random_tensor({n, 1, 4, 4}, rng), random_tensor({n, 1, 4, 4}, rng)};
  const auto f = model::full_attention(emb, w, 2, model::TauMode::softmax);
  ASSERT_EQ(f.weights.shape(), (Shape{1, 2, n * t, n * t}));
  for (std::size_t h = 0; h < 2; ++h)
    for (std::size_t r = 0; r < n * t; ++r) {
      double s = 0;
      for (std::size_t c = 0; c < n * t; ++c) {
        const double v = at(f.weights, {0, h, r, c});
        if (c % t > r % t) EXPECT_EQ(v, 0);
        s += v;
      }
      EXPECT_NEAR(s, 1.0, 1e-5);
    }
}

// Independent straight-line computation of one ST block in double precision.
TEST(AttentionBlock, MatchesStraightLineReference) {
  const std::size_t N = 2, T = 3, D = 4, H = 2, F = 2, FF = 6;
  ModelConfig cfg;
  cfg.joints = N;
  cfg.embed = D;
  cfg.heads = H;
  cfg.ff_size = FF;
  cfg.window = T;
  cfg.layers = 1;
  cfg.dropout = 0;
  std::mt19937_64 rng(8);
  const Tensor e = random_tensor({N, 1, T, D}, rng);
  model::BlockWeights w;
  w.temporal = {random_tensor({N, 1, D, D}, rng), random_tensor({N, 1, D, D}, rng), random_tensor({N, 1, D, D}, rng),
                random_tensor({N, 1, D, D}, rng)};
  w.spatial = {random_tensor({N, 1, D, D}, rng), random_tensor({1, 1, D, D}, rng), random_tensor({1, 1, D, D}, rng),
               random_tensor({1, 1, D, D}, rng)};
  w.ff = {random_tensor({D, FF}, rng), random_tensor({FF}, rng), random_tensor({FF, D}, rng), random_tensor({D}, rng)};
  w.norm = {random_tensor({D}, rng), random_tensor({D}, rng)};
  model::BlockContext ctx{&cfg, false, nullptr, nullptr};
  const Tensor out = model::attention_block(e, w, ctx).output;

  auto E = [&](std::size_t n, std::size_t t, std::size_t d) { return double(at(e, {n, 0, t, d})); };
  auto W = [](const Tensor& m, std::size_t n, std::size_t r, std::size_t c) {
    const std::size_t nn = m.dim(0) == 1 ? 0 : n;
    return double(at(m, {nn, 0, r, c}));
  };
  auto proj = [&](const Tensor& m, std::size_t n, std::size_t t, std::size_t col) {
    double s = 0;
    for (std::size_t d = 0; d < D; ++d) s += E(n, t, d) * W(m, n, d, col);
    return s;
  };
  const double scale = 1.0 / std::sqrt(double(D));
  std::vector<double> sum(N * T * D, 0.0);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t t = 0; t < T; ++t) {
      std::vector<double> heads_t(D, 0.0), heads_s(D, 0.0);
      for (std::size_t h = 0; h < H; ++h) {
        // temporal: joint n over frames u <= t
        std::vector<double> s(t + 1);
        double mx = -1e300;
        for (std::size_t u = 0; u <= t; ++u) {
          double dot = 0;
          for (std::size_t f = 0; f < F; ++f)
            dot += proj(w.temporal.q, n, t, h * F + f) * proj(w.temporal.k, n, u, h * F + f);
          mx = std::max(mx, s[u] = dot * scale);
        }
        double z = 0;
        for (std::size_t u = 0; u <= t; ++u) z += std::exp(s[u] - mx);
        for (std::size_t u = 0; u <= t; ++u)
          for (std::size_t f = 0; f < F; ++f)
            heads_t[h * F + f] += std::exp(s[u] - mx) / z * proj(w.temporal.v, n, u, h * F + f);
        // spatial: frame t over joints m
        std::vector<double> sp(N);
        mx = -1e300;
        for (std::size_t m = 0; m < N; ++m) {
          double dot = 0;
          for (std::size_t f = 0; f < F; ++f)
            dot += proj(w.spatial.q, n, t, h * F + f) * proj(w.spatial.k, m, t, h * F + f);
          mx = std::max(mx, sp[m] = dot * scale);
        }
        z = 0;
        for (std::size_t m = 0; m < N; ++m) z += std::exp(sp[m] - mx);
        for (std::size_t m = 0; m < N; ++m)
          for (std::size_t f = 0; f < F; ++f)
            heads_s[h * F + f] += std::exp(sp[m] - mx) / z * proj(w.spatial.v, m, t, h * F + f);
      }
      for (std::size_t d = 0; d < D; ++d)
        for (std::size_t c = 0; c < D; ++c)
          sum[(n * T + t) * D + d] += heads_t[c] * W(w.temporal.o, n, c, d) + heads_s[c] * W(w.spatial.o, n, c, d);
    }
  for (std::size_t r = 0; r < N * T; ++r) {
    std::vector<double> hidden(FF), y(D), pre(D);
    for (std::size_t j = 0; j < FF; ++j) {
      double s = w.ff.b1.data()[j];
      for (std::size_t d = 0; d < D; ++d) s += sum[r * D + d] * at(w.ff.w1, {d, j});
      hidden[j] = std::max(0.0, s);
    }
    double mean = 0;
    for (std::size_t d = 0; d < D; ++d) {
      double s = w.ff.b2.data()[d];
      for (std::size_t j = 0; j < FF; ++j) s += hidden[j] * at(w.ff.w2, {j, d});
      pre[d] = e.data()[r * D + d] + s;
      mean += pre[d] / D;
    }
    double var = 0;
    for (std::size_t d = 0; d < D; ++d) var += (pre[d] - mean) * (pre[d] - mean) / D;
    for (std::size_t d = 0; d < D; ++d) {
      const double ref = (pre[d] - mean) / std::sqrt(var + double(nd::kLayerNormEpsilon)) * w.norm.gain.data()[d] +
                         w.norm.bias.data()[d];
      EXPECT_NEAR(out.data()[r * D + d], ref, 1e-5);
    }
  }
}

TEST(AttentionBlock, PreservesShapeForEveryVariant) {
  std::mt19937_64 rng(9);
  for (auto v : {model::Variant::st, model::Variant::vanilla_1d, model::Variant::full_2d})
    for (bool per_branch : {false, true}) {
      ModelConfig cfg = tiny(v);
      cfg.ff_per_branch = per_branch;
      const model::Model m = randomised(cfg, 3);
      const Tensor x = random_poses(2, 5, cfg.joints, rng);
      EXPECT_EQ(m.forward(x).prediction.shape(), x.shape());
    }
}

TEST(Parameters, SharingModesChangeSpatialShapes) {
  ModelConfig cfg = tiny();
  auto shape_of = [](const nd::NamedTensors& p, const std::string& name) {
    for (const auto& [n, t] : p)
      if (n == name) return t.shape();
    return Shape{};
  };
  cfg.sharing = model::SpatialSharing::query_separate;
  auto p = model::parameter_layout(cfg);
  EXPECT_EQ(shape_of(p, "layer0.spatial.q")[0], 3u);
  EXPECT_EQ(shape_of(p, "layer0.spatial.k")[0], 1u);
  cfg.sharing = model::SpatialSharing::all_separate;
  p = model::parameter_layout(cfg);
  EXPECT_EQ(shape_of(p, "layer0.spatial.k")[0], 3u);
  cfg.sharing = model::SpatialSharing::all_shared;
  p = model::parameter_layout(cfg);
  EXPECT_EQ(shape_of(p, "layer0.spatial.q")[0], 1u);
  EXPECT_EQ(shape_of(p, "layer0.temporal.q")[0], 3u);
}

TEST(Parameters, InitialisationBounds) {
  const model::Model m(tiny(), 4);
  for (const auto& [name, t] : m.parameters()) {
    if (name.rfind("output.", 0) == 0 || name.find("bias") != std::string::npos || name.find(".b") != std::string::npos) {
      for (Real v : t.data()) EXPECT_EQ(v, 0) << name;
    } else if (name.find("gain") != std::string::npos) {
      for (Real v : t.data()) EXPECT_EQ(v, 1) << name;
    } else {
      const double fan_in = double(t.dim(t.rank() - 2));
      const double bound = std::sqrt(1.0 / fan_in);
      for (Real v : t.data()) EXPECT_LE(std::abs(v), bound) << name;
    }
  }
}

TEST(Forward, ResidualIdentityAtInitialisation) {
  std::mt19937_64 rng(10);
  for (auto v : {model::Variant::st, model::Variant::vanilla_1d, model::Variant::full_2d}) {
    const model::Model m(tiny(v), 5);
    const Tensor x = random_poses(2, 6, 3, rng);
    const Tensor y = m.forward(x).prediction;
    for (std::size_t i = 0; i < x.numel(); ++i) ASSERT_EQ(y.data()[i], x.data()[i]);
  }
}

TEST(Forward, EvalModeIsDeterministic) {
  std::mt19937_64 rng(11);
  const model::Model m = randomised(tiny(), 6);
  const Tensor x = random_poses(2, 8, 3, rng);
  const Tensor a = m.forward(x).prediction, b = m.forward(x).prediction;
  for (std::size_t i = 0; i < a.numel(); ++i) ASSERT_EQ(a.data()[i], b.data()[i]);
}

TEST(Forward, CausalForEveryVariantAndTau) {
  std::mt19937_64 rng(12);
  for (auto v : {model::Variant::st, model::Variant::vanilla_1d, model::Variant::full_2d})
    for (auto tau : {model::TauMode::softmax, model::TauMode::sum_normalize}) {
      ModelConfig cfg = tiny(v);
      cfg.tau = tau;
      const model::Model m = randomised(cfg, 7);
      const Tensor x = random_poses(1, 8, 3, rng);
      const Tensor base = m.forward(x).prediction;
      for (std::size_t cut = 1; cut < 8; ++cut) {
        Tensor y = x.clone();
        for (std::size_t i = cut * 27; i < y.numel(); ++i) y.data()[i] += 0.5f;
        const Tensor p = m.forward(y).prediction;
        for (std::size_t i = 0; i < cut * 27; ++i) ASSERT_EQ(p.data()[i], base.data()[i]);
      }
    }
}

TEST(Forward, AttentionMapsAreValid) {
  std::mt19937_64 rng(13);
  for (auto tau : {model::TauMode::softmax, model::TauMode::sum_normalize}) {
    ModelConfig cfg = tiny();
    cfg.tau = tau;
    const model::Model m = randomised(cfg, 8);
    model::ForwardOptions opts;
    opts.keep_attention = true;
    const auto r = m.forward(random_poses(2, 5, 3, rng), opts);
    ASSERT_EQ(r.maps.temporal.size(), 2u);
    ASSERT_EQ(r.maps.spatial.size(), 2u);
    EXPECT_EQ(r.maps.temporal[0].shape(), (Shape{2, 3, 5, 5}));
    EXPECT_EQ(r.maps.spatial[0].shape(), (Shape{2, 5, 3, 3}));
    for (const auto* group : {&r.maps.temporal, &r.maps.spatial})
      for (const Tensor& t : *group) {
        const std::size_t cols = t.dim(t.rank() - 1);
        for (std::size_t row = 0; row < t.numel() / cols; ++row) {
          double s = 0;
          for (std::size_t c = 0; c < cols; ++c) {
            const Real v = t.data()[row * cols + c];
            EXPECT_GE(v, 0);
            s += v;
          }
          EXPECT_NEAR(s, 1.0, 1e-5);
        }
      }
    for (const Tensor& t : r.maps.temporal)
      for (std::size_t i = 0; i < t.numel() / 25; ++i)
        for (std::size_t a = 0; a < 5; ++a)
          for (std::size_t b = a + 1; b < 5; ++b) EXPECT_EQ(t.data()[i * 25 + a * 5 + b], 0);
  }
}

TEST(Forward, ScoreCountersMatchFormulas) {
  std::mt19937_64 rng(14);
  const std::size_t n = 3, t = 7;
  for (auto v : {model::Variant::st, model::Variant::full_2d, model::Variant::vanilla_1d}) {
    const model::Model m(tiny(v), 1);
    model::AttentionCounters c;
    model::ForwardOptions opts;
    opts.counters = &c;
    m.forward(random_poses(2, t, n, rng), opts);
    const std::uint64_t expected = v == model::Variant::st        ? n * t * t + t * n * n
                                   : v == model::Variant::full_2d ? (n * t) * (n * t)
                                                                  : t * t;
    ASSERT_EQ(c.scores_per_layer.size(), 2u);
    for (auto s : c.scores_per_layer) EXPECT_EQ(s, expected);
  }
}

TEST(Forward, RejectsWrongShapes) {
  const model::Model m(tiny(), 1);
  EXPECT_THROW(m.forward(Tensor(Shape{1, 9, 3, 9})), ShapeError);
  EXPECT_THROW(m.forward(Tensor(Shape{1, 4, 2, 9})), ShapeError);
}

TEST(Forward, TrainingWithDropoutNeedsRng) {
  model::ForwardOptions opts;
  opts.training = true;
  EXPECT_THROW(model::Model(tiny(), 1).forward(Tensor(Shape{1, 2, 3, 9}), opts), ContractError);
}

TEST(Rollout, ZeroOutputProjectionRepeatsLastFrame) {
  std::mt19937_64 rng(15);
  const model::Model m(tiny(), 9);
  const Tensor seed = random_poses(2, 6, 3, rng);
  const Tensor r = model::rollout(m, seed, 20);
  const Tensor z = metrics::zero_velocity(seed, 20);
  for (std::size_t i = 0; i < r.numel(); ++i) ASSERT_EQ(r.data()[i], z.data()[i]);
}

TEST(Rollout, FirstStepMatchesForwardAndIsDeterministic) {
  std::mt19937_64 rng(16);
  const model::Model m = randomised(tiny(), 10, 0.2);
  const Tensor seed = random_poses(1, 8, 3, rng);
  const Tensor one = model::rollout(m, seed, 1);
  const Tensor fwd = m.forward(seed).prediction;
  for (std::size_t j = 0; j < 3; ++j) {
    so3::Mat3 raw{};
    for (std::size_t i = 0; i < 9; ++i) raw[i] = fwd.data()[(7 * 3 + j) * 9 + i];
    const so3::Mat3 proj = so3::project_to_so3(raw);
    for (std::size_t i = 0; i < 9; ++i) EXPECT_FLOAT_EQ(one.data()[j * 9 + i], static_cast<float>(proj[i]));
  }
  const Tensor a = model::rollout(m, seed, 100), b = model::rollout(m, seed, 100);
  for (std::size_t i = 0; i < a.numel(); ++i) ASSERT_EQ(a.data()[i], b.data()[i]);
  for (std::size_t f = 0; f < 100 * 3; ++f) {
    so3::Mat3 r{};
    for (std::size_t i = 0; i < 9; ++i) r[i] = a.data()[f * 9 + i];
    EXPECT_TRUE(so3::is_rotation(r));
  }
}

TEST(Rollout, SeedLongerThanWindowIsRejected) {
  std::mt19937_64 rng(17);
  EXPECT_THROW(model::rollout(model::Model(tiny(), 1), random_poses(1, 9, 3, rng), 1), ParameterError);
}

TEST(Attention, DumpHasExpectedRowsAndStochasticRows) {
  std::mt19937_64 rng(18);
  const model::Model m = randomised(tiny(), 11);
  model::ForwardOptions opts;
  opts.keep_attention = true;
  const std::size_t t = 6;
  const auto r = m.forward(random_poses(1, t, 3, rng), opts);
  std::stringstream out;
  model::dump_attention(out, r.maps);
  std::string line;
  std::map<std::string, double> row_sums;
  std::size_t rows = 0;
  while (std::getline(out, line)) {
    ++rows;
    std::stringstream ss(line);
    std::string layer, head, kind, row, col, weight;
    std::getline(ss, layer, ',');
    std::getline(ss, head, ',');
    std::getline(ss, kind, ',');
    std::getline(ss, row, ',');
    std::getline(ss, col, ',');
    std::getline(ss, weight, ',');
    const double w = std::stod(weight);
    if (kind == "temporal" && std::stoul(col) > std::stoul(row)) EXPECT_EQ(w, 0);
    row_sums[layer + head + kind + row] += w;
  }
  EXPECT_EQ(rows, 2u * 2u * (t * t + 3 * 3));
  for (const auto& [key, s] : row_sums) EXPECT_NEAR(s, 1.0, 1e-4) << key;
}

TEST(Workspace, FullAttentionEstimateExceedsDecoupled) {
  for (std::size_t w : {8, 32, 120}) {
    ModelConfig st = tiny(model::Variant::st), full = tiny(model::Variant::full_2d);
    st.window = full.window = w;
    st.joints = full.joints = 9;
    EXPECT_GT(model::estimate_workspace_elements(full, 4), model::estimate_workspace_elements(st, 4));
  }
}

TEST(Checkpoint, RoundTripPreservesConfigAndParameters) {
  ModelConfig cfg = tiny();
  cfg.tau = model::TauMode::sum_normalize;
  cfg.sharing = model::SpatialSharing::all_separate;
  cfg.ff_per_branch = true;
  const model::Model m = randomised(cfg, 12);
  std::stringstream buf;
  model::save_checkpoint(buf, m);
  const model::Model back = model::load_checkpoint(buf);
  EXPECT_EQ(back.config(), cfg);
  ASSERT_EQ(back.parameters().size(), m.parameters().size());
  for (std::size_t i = 0; i < m.parameters().size(); ++i) {
    EXPECT_EQ(back.parameters()[i].first, m.parameters()[i].first);
    const auto& a = m.parameters()[i].second;
    const auto& b = back.parameters()[i].second;
    ASSERT_EQ(a.shape(), b.shape());
    for (std::size_t k = 0; k < a.numel(); ++k) ASSERT_EQ(a.data()[k], b.data()[k]);
  }
}

TEST(Checkpoint, RejectsCorruptInput) {
  std::stringstream bad("{\"not\": \"a config\"}\nSTT1");
  EXPECT_THROW(model::load_checkpoint(bad), FormatError);
  EXPECT_THROW(model::config_from_json("not json"), FormatError);
}

}  // namespace
