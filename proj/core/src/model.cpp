#include "stmotion/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "stmotion/so3.hpp"

STMOTION_BEGIN_NAMESPACE
namespace model {

using nd::Shape;
using nd::Tensor;

namespace {

constexpr Real kMaskValue = Real(-1e9);

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// Additive (softmax) or keep (sum-normalise) mask over [rows, cols] where
// entry (r, c) is blocked when time_of(c) > time_of(r).
Tensor causal_mask(std::size_t size, std::size_t period, TauMode tau) {
  std::vector<Real> values(size * size);
  for (std::size_t r = 0; r < size; ++r)
    for (std::size_t c = 0; c < size; ++c) {
      const bool blocked = (c % period) > (r % period);
      if (tau == TauMode::softmax) {
        values[r * size + c] = blocked ? kMaskValue : Real(0);
      } else {
        values[r * size + c] = blocked ? Real(0) : Real(1);
      }
    }
  return Tensor({size, size}, std::move(values));
}

struct Attended {
  Tensor out;
  Tensor weights;
};

Attended attend(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& mask, TauMode tau, Real scale) {
  Tensor scores = nd::matmul(q, k, /*transpose_b=*/true, scale);
  Tensor weights = tau == TauMode::softmax ? nd::softmax_lastdim(scores, mask) : nd::sum_normalize_lastdim(scores, mask);
  return {nd::matmul(weights, v), weights};
}

void check_attention_weights(const AttentionWeights& w, std::size_t joints, std::size_t dim, const char* what) {
  for (const Tensor* t : {&w.q, &w.k, &w.v, &w.o}) {
    if (!t->defined() || t->rank() != 4 || (t->dim(0) != joints && t->dim(0) != 1) || t->dim(1) != 1 ||
        t->dim(2) != dim || t->dim(3) != dim)
      throw ShapeError(std::string(what) + ": projection weights must be [N|1, 1, D, D]");
  }
}

struct EmbeddingDims {
  std::size_t joints, batch, frames, dim;
};

EmbeddingDims dims_of(const Tensor& e, std::size_t heads, const char* what) {
  if (!e.defined() || e.rank() != 4) throw ShapeError(std::string(what) + ": embeddings must be [N, B, T, D]");
  if (heads == 0 || e.dim(3) % heads != 0)
    throw ConfigError(std::string(what) + ": embedding size must be divisible by the head count");
  return {e.dim(0), e.dim(1), e.dim(2), e.dim(3)};
}

// Projects [N, B, T, D] embeddings and splits the result into heads,
// giving [N, B, T, H, F].
Tensor project_heads(const Tensor& e, const Tensor& w, std::size_t heads) {
  const std::size_t n = e.dim(0), b = e.dim(1), t = e.dim(2), d = e.dim(3);
  const Tensor flat = nd::reshape(e, {n, 1, b * t, d});
  return nd::reshape(nd::matmul(flat, w), {n, b, t, heads, d / heads});
}

// Concatenates heads of [N, B, T, H, F] and applies the output projection.
Tensor merge_heads(const Tensor& x, const Tensor& w_o) {
  const std::size_t n = x.dim(0), b = x.dim(1), t = x.dim(2), d = x.dim(3) * x.dim(4);
  const Tensor merged = nd::matmul(nd::reshape(x, {n, 1, b * t, d}), w_o);
  return nd::reshape(merged, {n, b, t, d});
}

// x: [N, B, T, K] times per-joint w: [N|1, 1, K, J], as one product per joint.
Tensor joint_linear(const Tensor& x, const Tensor& w) {
  const std::size_t n = x.dim(0), b = x.dim(1), t = x.dim(2);
  const Tensor y = nd::matmul(nd::reshape(x, {n, 1, b * t, x.dim(3)}), w);
  return nd::reshape(y, {n, b, t, w.dim(3)});
}

Tensor feed_forward(const Tensor& x, const FeedForwardWeights& w) {
  const Shape shape = x.shape();
  const Tensor rows = nd::reshape(x, {x.numel() / shape.back(), shape.back()});
  const Tensor hidden = nd::relu(nd::add(nd::matmul(rows, w.w1), w.b1));
  return nd::reshape(nd::add(nd::matmul(hidden, w.w2), w.b2), shape);
}

bool all_finite(const Tensor& t) {
  return std::all_of(t.data().begin(), t.data().end(), [](Real v) { return std::isfinite(v); });
}

}  // namespace

// ---- enums -----------------------------------------------------------------

std::string to_string(TauMode m) { return m == TauMode::softmax ? "softmax" : "sum"; }

std::string to_string(SpatialSharing s) {
  switch (s) {
    case SpatialSharing::query_separate: return "query_separate";
    case SpatialSharing::all_separate: return "all_separate";
    case SpatialSharing::all_shared: return "all_shared";
  }
  return "query_separate";
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::st: return "st";
    case Variant::vanilla_1d: return "vanilla_1d";
    case Variant::full_2d: return "full_2d";
  }
  return "st";
}

TauMode parse_tau(const std::string& s) {
  if (s == "softmax") return TauMode::softmax;
  if (s == "sum" || s == "sum_normalize") return TauMode::sum_normalize;
  throw ConfigError("unknown tau mode '" + s + "'");
}

SpatialSharing parse_sharing(const std::string& s) {
  if (s == "query_separate") return SpatialSharing::query_separate;
  if (s == "all_separate") return SpatialSharing::all_separate;
  if (s == "all_shared") return SpatialSharing::all_shared;
  throw ConfigError("unknown spatial sharing mode '" + s + "'");
}

Variant parse_variant(const std::string& s) {
  if (s == "st") return Variant::st;
  if (s == "vanilla_1d") return Variant::vanilla_1d;
  if (s == "full_2d") return Variant::full_2d;
  throw ConfigError("unknown variant '" + s + "'");
}

void ModelConfig::validate() const {
  if (joints == 0 || joint_dim == 0) throw ConfigError("joint count and joint size must be positive");
  if (embed == 0 || layers == 0 || heads == 0 || ff_size == 0 || window == 0)
    throw ConfigError("embed, layers, heads, ff_size and window must be positive");
  if (embed % heads != 0)
    throw ConfigError("embedding size " + std::to_string(embed) + " is not divisible by " + std::to_string(heads) +
                      " heads");
  if (embed % 2 != 0) throw ConfigError("embedding size must be even for the positional encoding");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
}

std::uint64_t AttentionCounters::total() const {
  std::uint64_t s = 0;
  for (auto v : scores_per_layer) s += v;
  return s;
}

// ---- building blocks ---------------------------------------------------------

Tensor positional_encoding(std::size_t frames, std::size_t dim) {
  if (dim % 2 != 0) throw ParameterError("positional encoding needs an even dimension");
  std::vector<Real> values(frames * dim);
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t k = 0; k < dim / 2; ++k) {
      const double rate = std::pow(10000.0, static_cast<double>(2 * k) / static_cast<double>(dim));
      const double angle = static_cast<double>(t) / rate;
      values[t * dim + 2 * k] = static_cast<Real>(std::sin(angle));
      values[t * dim + 2 * k + 1] = static_cast<Real>(std::cos(angle));
    }
  return Tensor({frames, dim}, std::move(values));
}

Tensor embed_joints(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() != 4) throw ShapeError("embed_joints: window must be [N, B, T, M]");
  if (weight.rank() != 4 || weight.dim(0) != x.dim(0) || weight.dim(2) != x.dim(3))
    throw ShapeError("embed_joints: weight " + nd::to_string(weight.shape()) + " does not match window " +
                     nd::to_string(x.shape()));
  return nd::add(joint_linear(x, weight), bias);
}

AttentionResult temporal_attention(const Tensor& embeddings, const AttentionWeights& w, std::size_t heads, TauMode tau,
                                   std::uint64_t* score_counter) {
  const auto [n, b, t, d] = dims_of(embeddings, heads, "temporal_attention");
  check_attention_weights(w, n, d, "temporal_attention");
  const std::vector<std::size_t> head_major{0, 1, 3, 2, 4};  // [N, B, H, T, F]
  const Tensor q = nd::permute(project_heads(embeddings, w.q, heads), head_major);
  const Tensor k = nd::permute(project_heads(embeddings, w.k, heads), head_major);
  const Tensor v = nd::permute(project_heads(embeddings, w.v, heads), head_major);
  const Real scale = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(d)));
  Attended a = attend(q, k, v, causal_mask(t, t, tau), tau, scale);
  if (score_counter) *score_counter += static_cast<std::uint64_t>(n) * t * t;
  return {merge_heads(nd::permute(a.out, head_major), w.o), a.weights};
}

AttentionResult spatial_attention(const Tensor& embeddings, const AttentionWeights& w, std::size_t heads, TauMode tau,
                                  std::uint64_t* score_counter) {
  const auto [n, b, t, d] = dims_of(embeddings, heads, "spatial_attention");
  check_attention_weights(w, n, d, "spatial_attention");
  const std::vector<std::size_t> frame_major{1, 3, 2, 0, 4};  // [B, H, T, N, F]
  const Tensor q = nd::permute(project_heads(embeddings, w.q, heads), frame_major);
  const Tensor k = nd::permute(project_heads(embeddings, w.k, heads), frame_major);
  const Tensor v = nd::permute(project_heads(embeddings, w.v, heads), frame_major);
  const Real scale = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(d)));
  Attended a = attend(q, k, v, Tensor{}, tau, scale);
  if (score_counter) *score_counter += static_cast<std::uint64_t>(t) * n * n;
  return {merge_heads(nd::permute(a.out, {3, 0, 2, 1, 4}), w.o), a.weights};
}

AttentionResult full_attention(const Tensor& embeddings, const AttentionWeights& w, std::size_t heads, TauMode tau,
                               std::uint64_t* score_counter) {
  const auto [n, b, t, d] = dims_of(embeddings, heads, "full_attention");
  check_attention_weights(w, n, d, "full_attention");
  const std::size_t f = d / heads;
  auto tokens = [&](const Tensor& weight) {  // [B, H, N*T, F]
    return nd::reshape(nd::permute(project_heads(embeddings, weight, heads), {1, 3, 0, 2, 4}), {b, heads, n * t, f});
  };
  const Tensor q = tokens(w.q);
  const Tensor k = tokens(w.k);
  const Tensor v = tokens(w.v);
  const Real scale = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(d)));
  Attended a = attend(q, k, v, causal_mask(n * t, t, tau), tau, scale);
  if (score_counter) *score_counter += static_cast<std::uint64_t>(n * t) * (n * t);
  const Tensor joint_major = nd::permute(nd::reshape(a.out, {b, heads, n, t, f}), {2, 0, 3, 1, 4});
  return {merge_heads(joint_major, w.o), a.weights};
}

BlockResult attention_block(const Tensor& embeddings, const BlockWeights& w, const BlockContext& ctx) {
  if (ctx.config == nullptr) throw ContractError("attention_block: missing config");
  const ModelConfig& cfg = *ctx.config;
  if (ctx.training && cfg.dropout > 0 && ctx.rng == nullptr)
    throw ContractError("attention_block: training with dropout needs an rng");
  nd::Rng dummy;
  nd::Rng& rng = ctx.rng ? *ctx.rng : dummy;
  auto residual_branch = [&](const Tensor& summary, const FeedForwardWeights& ff, const NormWeights& norm) {
    Tensor y = nd::dropout(feed_forward(summary, ff), cfg.dropout, ctx.training, rng);
    return nd::layer_norm(nd::add(embeddings, y), norm.gain, norm.bias);
  };

  BlockResult result;
  switch (cfg.variant) {
    case Variant::vanilla_1d: {
      AttentionResult t = temporal_attention(embeddings, w.temporal, cfg.heads, cfg.tau, ctx.score_counter);
      result.temporal_weights = t.weights;
      result.output = residual_branch(t.summary, w.ff, w.norm);
      break;
    }
    case Variant::full_2d: {
      AttentionResult f = full_attention(embeddings, w.temporal, cfg.heads, cfg.tau, ctx.score_counter);
      result.full_weights = f.weights;
      result.output = residual_branch(f.summary, w.ff, w.norm);
      break;
    }
    case Variant::st: {
      AttentionResult t = temporal_attention(embeddings, w.temporal, cfg.heads, cfg.tau, ctx.score_counter);
      AttentionResult s = spatial_attention(embeddings, w.spatial, cfg.heads, cfg.tau, ctx.score_counter);
      result.temporal_weights = t.weights;
      result.spatial_weights = s.weights;
      if (cfg.ff_per_branch) {
        result.output = nd::add(residual_branch(t.summary, w.ff, w.norm),
                                residual_branch(s.summary, w.ff_spatial, w.norm_spatial));
      } else {
        result.output = residual_branch(nd::add(t.summary, s.summary), w.ff, w.norm);
      }
      break;
    }
  }
  return result;
}

// ---- parameters --------------------------------------------------------------

nd::NamedTensors parameter_layout(const ModelConfig& cfg) {
  cfg.validate();
  const bool vanilla = cfg.variant == Variant::vanilla_1d;
  const std::size_t ne = vanilla ? 1 : cfg.joints;
  const std::size_t me = vanilla ? cfg.joints * cfg.joint_dim : cfg.joint_dim;
  const std::size_t d = cfg.embed;
  nd::NamedTensors layout;
  auto add = [&](std::string name, Shape shape) { layout.emplace_back(std::move(name), Tensor(std::move(shape))); };
  add("embed.weight", {ne, 1, me, d});
  add("embed.bias", {ne, 1, 1, d});
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    const std::string att = cfg.variant == Variant::full_2d ? "full." : "temporal.";
    for (const char* m : {"q", "k", "v", "o"}) add(p + att + m, {ne, 1, d, d});
    if (cfg.variant == Variant::st) {
      const std::size_t nq = cfg.sharing == SpatialSharing::all_shared ? 1 : ne;
      const std::size_t nkv = cfg.sharing == SpatialSharing::all_separate ? ne : 1;
      add(p + "spatial.q", {nq, 1, d, d});
      add(p + "spatial.k", {nkv, 1, d, d});
      add(p + "spatial.v", {nkv, 1, d, d});
      add(p + "spatial.o", {nkv, 1, d, d});
    }
    auto add_ff = [&](const std::string& ff, const std::string& norm) {
      add(p + ff + ".w1", {d, cfg.ff_size});
      add(p + ff + ".b1", {cfg.ff_size});
      add(p + ff + ".w2", {cfg.ff_size, d});
      add(p + ff + ".b2", {d});
      add(p + norm + ".gain", {d});
      add(p + norm + ".bias", {d});
    };
    add_ff("ff", "norm");
    if (cfg.variant == Variant::st && cfg.ff_per_branch) add_ff("ff_spatial", "norm_spatial");
  }
  add("output.weight", {ne, 1, d, me});
  add("output.bias", {ne, 1, 1, me});
  return layout;
}

Model::Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  params_ = parameter_layout(config_);
  std::mt19937_64 rng(seed);
  for (auto& [name, tensor] : params_) {
    auto values = tensor.data();
    if (name.rfind("output.", 0) == 0 || ends_with(name, ".bias") || ends_with(name, ".b1") ||
        ends_with(name, ".b2")) {
      std::fill(values.begin(), values.end(), Real(0));
    } else if (ends_with(name, ".gain")) {
      std::fill(values.begin(), values.end(), Real(1));
    } else {
      const std::size_t fan_in = tensor.dim(tensor.rank() - 2);
      const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (Real& v : values) v = static_cast<Real>(u(rng));
    }
  }
  bind();
}

Model::Model(ModelConfig config, nd::NamedTensors parameters) : config_(std::move(config)), params_(std::move(parameters)) {
  check_parameters();
  bind();
}

void Model::check_parameters() const {
  const nd::NamedTensors layout = parameter_layout(config_);
  if (layout.size() != params_.size())
    throw ConfigError("checkpoint has " + std::to_string(params_.size()) + " tensors, config expects " +
                      std::to_string(layout.size()));
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (layout[i].first != params_[i].first || layout[i].second.shape() != params_[i].second.shape())
      throw ConfigError("parameter '" + params_[i].first + "' " + nd::to_string(params_[i].second.shape()) +
                        " does not match expected '" + layout[i].first + "' " +
                        nd::to_string(layout[i].second.shape()));
  }
}

void Model::bind() {
  index_.clear();
  for (std::size_t i = 0; i < params_.size(); ++i) index_[params_[i].first] = i;
  auto get = [&](const std::string& name) { return params_[index_.at(name)].second; };
  auto maybe = [&](const std::string& name) { return index_.count(name) ? get(name) : Tensor{}; };
  embed_w_ = get("embed.weight");
  embed_b_ = get("embed.bias");
  out_w_ = get("output.weight");
  out_b_ = get("output.bias");
  blocks_.clear();
  const std::string att = config_.variant == Variant::full_2d ? "full." : "temporal.";
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    BlockWeights b;
    b.temporal = {get(p + att + "q"), get(p + att + "k"), get(p + att + "v"), get(p + att + "o")};
    b.spatial = {maybe(p + "spatial.q"), maybe(p + "spatial.k"), maybe(p + "spatial.v"), maybe(p + "spatial.o")};
    b.ff = {get(p + "ff.w1"), get(p + "ff.b1"), get(p + "ff.w2"), get(p + "ff.b2")};
    b.norm = {get(p + "norm.gain"), get(p + "norm.bias")};
    b.ff_spatial = {maybe(p + "ff_spatial.w1"), maybe(p + "ff_spatial.b1"), maybe(p + "ff_spatial.w2"),
                    maybe(p + "ff_spatial.b2")};
    b.norm_spatial = {maybe(p + "norm_spatial.gain"), maybe(p + "norm_spatial.bias")};
    blocks_.push_back(std::move(b));
  }
}

Tensor& Model::parameter(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ParameterError("no parameter named '" + name + "'");
  return params_[it->second].second;
}

const Tensor& Model::parameter(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ParameterError("no parameter named '" + name + "'");
  return params_[it->second].second;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_) n += t.numel();
  return n;
}

void Model::set_trainable(bool flag) {
  for (auto& [name, t] : params_) t.set_requires_grad(flag);
}

void Model::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

Model Model::clone() const {
  nd::NamedTensors copy;
  copy.reserve(params_.size());
  for (const auto& [name, t] : params_) copy.emplace_back(name, Tensor(t.shape(), std::vector<Real>(t.data().begin(), t.data().end())));
  return Model(config_, std::move(copy));
}

ForwardResult Model::forward(const Tensor& window, const ForwardOptions& options) const {
  const ModelConfig& cfg = config_;
  if (window.rank() != 4 || window.dim(2) != cfg.joints || window.dim(3) != cfg.joint_dim)
    throw ShapeError("model input must be [B, T, " + std::to_string(cfg.joints) + ", " +
                     std::to_string(cfg.joint_dim) + "], got " + nd::to_string(window.shape()));
  const std::size_t b = window.dim(0), t = window.dim(1), n = cfg.joints;
  if (t > cfg.window)
    throw ShapeError("window of " + std::to_string(t) + " frames exceeds the configured " + std::to_string(cfg.window));
  if (options.training && cfg.dropout > 0 && options.rng == nullptr)
    throw ContractError("training forward with dropout needs an rng");
  nd::Rng dummy;
  nd::Rng& rng = options.rng ? *options.rng : dummy;

  const bool vanilla = cfg.variant == Variant::vanilla_1d;
  const Tensor x = vanilla ? nd::reshape(window, {1, b, t, n * cfg.joint_dim}) : nd::permute(window, {2, 0, 1, 3});
  Tensor e = embed_joints(x, embed_w_, embed_b_);
  e = nd::add(e, positional_encoding(t, cfg.embed));
  e = nd::dropout(e, cfg.dropout, options.training, rng);

  ForwardResult result;
  if (options.counters) options.counters->scores_per_layer.assign(cfg.layers, 0);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    BlockContext ctx{&cfg, options.training, &rng, options.counters ? &options.counters->scores_per_layer[l] : nullptr};
    BlockResult block = attention_block(e, blocks_[l], ctx);
    e = block.output;
    if (!all_finite(e)) throw NumericError("non-finite activations after layer " + std::to_string(l));
    if (!options.keep_attention) continue;
    const std::size_t h = cfg.heads;
    if (block.temporal_weights.defined()) {
      const std::size_t ne = block.temporal_weights.dim(0);
      std::vector<Real> maps(h * ne * t * t);
      auto src = block.temporal_weights.data();
      for (std::size_t hh = 0; hh < h; ++hh)
        for (std::size_t j = 0; j < ne; ++j)
          std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(((j * b) * h + hh) * t * t), t * t,
                      maps.begin() + static_cast<std::ptrdiff_t>((hh * ne + j) * t * t));
      result.maps.temporal.emplace_back(Shape{h, ne, t, t}, std::move(maps));
    }
    if (block.spatial_weights.defined()) {
      auto src = block.spatial_weights.data();
      result.maps.spatial.emplace_back(Shape{h, t, n, n},
                                       std::vector<Real>(src.begin(), src.begin() + static_cast<std::ptrdiff_t>(h * t * n * n)));
    }
    if (block.full_weights.defined()) {
      const std::size_t tokens = n * t;
      auto src = block.full_weights.data();
      result.maps.full.emplace_back(
          Shape{h, tokens, tokens},
          std::vector<Real>(src.begin(), src.begin() + static_cast<std::ptrdiff_t>(h * tokens * tokens)));
    }
  }

  const Tensor delta = nd::add(joint_linear(e, out_w_), out_b_);
  const Tensor delta_bt = vanilla ? nd::reshape(delta, {b, t, n, cfg.joint_dim}) : nd::permute(delta, {1, 2, 0, 3});
  result.prediction = nd::add(window, delta_bt);
  if (!all_finite(result.prediction)) throw NumericError("non-finite prediction at the output projection");
  return result;
}

// ---- inference -----------------------------------------------------------------

Tensor rollout(const Model& model, const Tensor& seed, std::size_t steps, const AttentionObserver& observer) {
  const ModelConfig& cfg = model.config();
  if (seed.rank() != 4 || seed.dim(2) != cfg.joints || seed.dim(3) != cfg.joint_dim)
    throw ShapeError("rollout seed must be [B, T, N, 9]");
  const std::size_t b = seed.dim(0), ts = seed.dim(1), n = cfg.joints;
  if (ts > cfg.window)
    throw ParameterError("seed of " + std::to_string(ts) + " frames exceeds the model window " +
                         std::to_string(cfg.window));
  const std::size_t frame = n * cfg.joint_dim;
  std::vector<Real> buffer(seed.data().begin(), seed.data().end());
  std::vector<Real> out(b * steps * frame);
  nd::NoGradScope no_grad;
  for (std::size_t step = 0; step < steps; ++step) {
    ForwardOptions opts;
    opts.keep_attention = static_cast<bool>(observer);
    ForwardResult r = model.forward(Tensor({b, ts, n, cfg.joint_dim}, buffer), opts);
    if (observer) observer(step, r.maps);
    auto pred = r.prediction.data();
    for (std::size_t bi = 0; bi < b; ++bi) {
      const Real* last = pred.data() + (bi * ts + (ts - 1)) * frame;
      Real* dst = out.data() + (bi * steps + step) * frame;
      for (std::size_t j = 0; j < n; ++j) {
        so3::Mat3 m{};
        for (std::size_t i = 0; i < 9; ++i) m[i] = last[j * 9 + i];
        const so3::Mat3 r3 = so3::project_to_so3(m);
        for (std::size_t i = 0; i < 9; ++i) dst[j * 9 + i] = static_cast<Real>(r3[i]);
      }
      // Slide: drop the oldest frame of this sample, append the prediction.
      Real* win = buffer.data() + bi * ts * frame;
      std::copy(win + frame, win + ts * frame, win);
      std::copy(dst, dst + frame, win + (ts - 1) * frame);
    }
  }
  return Tensor({b, steps, n, cfg.joint_dim}, std::move(out));
}

void dump_attention(std::ostream& out, const AttentionMaps& maps, const std::string& prefix) {
  const auto precision = out.precision();
  out << std::setprecision(std::numeric_limits<float>::max_digits10);
  const std::string lead = prefix.empty() ? std::string{} : prefix + ",";
  for (std::size_t l = 0; l < maps.temporal.size(); ++l) {
    const Tensor& m = maps.temporal[l];  // [H, N, T, T]
    const std::size_t h = m.dim(0), n = m.dim(1), t = m.dim(2);
    for (std::size_t hh = 0; hh < h; ++hh)
      for (std::size_t r = 0; r < t; ++r)
        for (std::size_t c = 0; c < t; ++c) {
          double mean = 0;
          for (std::size_t j = 0; j < n; ++j) mean += m.data()[((hh * n + j) * t + r) * t + c];
          out << lead << l << ',' << hh << ",temporal," << r << ',' << c << ',' << mean / static_cast<double>(n)
              << '\n';
        }
  }
  for (std::size_t l = 0; l < maps.spatial.size(); ++l) {
    const Tensor& m = maps.spatial[l];  // [H, T, N, N]
    const std::size_t h = m.dim(0), t = m.dim(1), n = m.dim(2);
    for (std::size_t hh = 0; hh < h; ++hh)
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < n; ++c)
          out << lead << l << ',' << hh << ",spatial," << r << ',' << c << ','
              << m.data()[((hh * t + (t - 1)) * n + r) * n + c] << '\n';
  }
  for (std::size_t l = 0; l < maps.full.size(); ++l) {
    const Tensor& m = maps.full[l];  // [H, NT, NT]
    const std::size_t h = m.dim(0), k = m.dim(1);
    for (std::size_t hh = 0; hh < h; ++hh)
      for (std::size_t r = 0; r < k; ++r)
        for (std::size_t c = 0; c < k; ++c)
          out << lead << l << ',' << hh << ",spatiotemporal," << r << ',' << c << ',' << m.data()[(hh * k + r) * k + c]
              << '\n';
  }
  out.precision(precision);
}

std::size_t estimate_workspace_elements(const ModelConfig& cfg, std::size_t batch) {
  const bool vanilla = cfg.variant == Variant::vanilla_1d;
  const std::size_t n = vanilla ? 1 : cfg.joints;
  const std::size_t t = cfg.window, d = cfg.embed, h = cfg.heads;
  const std::size_t tokens = batch * n * t;
  std::size_t per_layer_scores = 0;
  switch (cfg.variant) {
    case Variant::vanilla_1d: per_layer_scores = batch * h * t * t; break;
    case Variant::st: per_layer_scores = batch * h * (n * t * t + t * n * n); break;
    case Variant::full_2d: per_layer_scores = batch * h * (n * t) * (n * t); break;
  }
  // Activations per token and layer: projections, head-split copies, the
  // per-head output projection, feed-forward and normalisation buffers.
  const std::size_t per_token = (20 + 2 * h) * d + 2 * cfg.ff_size;
  const std::size_t forward = cfg.layers * (2 * per_layer_scores + tokens * per_token);
  return 2 * forward;  // values and gradients
}

// ---- checkpoints ---------------------------------------------------------------

std::string config_to_json(const ModelConfig& c) {
  nlohmann::ordered_json j;
  j["joints"] = c.joints;
  j["joint_dim"] = c.joint_dim;
  j["embed"] = c.embed;
  j["layers"] = c.layers;
  j["heads"] = c.heads;
  j["ff_size"] = c.ff_size;
  j["window"] = c.window;
  j["dropout"] = c.dropout;
  j["tau"] = to_string(c.tau);
  j["sharing"] = to_string(c.sharing);
  j["variant"] = to_string(c.variant);
  j["ff_per_branch"] = c.ff_per_branch;
  return j.dump();
}

ModelConfig config_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    ModelConfig c;
    c.joints = j.at("joints").get<std::size_t>();
    c.joint_dim = j.at("joint_dim").get<std::size_t>();
    c.embed = j.at("embed").get<std::size_t>();
    c.layers = j.at("layers").get<std::size_t>();
    c.heads = j.at("heads").get<std::size_t>();
    c.ff_size = j.at("ff_size").get<std::size_t>();
    c.window = j.at("window").get<std::size_t>();
    c.dropout = j.at("dropout").get<double>();
    c.tau = parse_tau(j.at("tau").get<std::string>());
    c.sharing = parse_sharing(j.at("sharing").get<std::string>());
    c.variant = parse_variant(j.at("variant").get<std::string>());
    c.ff_per_branch = j.value("ff_per_branch", false);
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad checkpoint header: ") + e.what());
  }
}

void save_checkpoint(std::ostream& out, const Model& model) {
  out << config_to_json(model.config()) << '\n';
  nd::write_tensors(out, model.parameters());
}

Model load_checkpoint(std::istream& in) {
  std::string header;
  if (!std::getline(in, header)) throw FormatError("empty checkpoint");
  ModelConfig cfg = config_from_json(header);
  return Model(cfg, nd::read_tensors(in));
}

void save_checkpoint(const std::string& path, const Model& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path + " for writing");
  save_checkpoint(out, model);
}

Model load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  return load_checkpoint(in);
}

}  // namespace model
STMOTION_END_NAMESPACE
