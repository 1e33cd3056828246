#include "stmotion/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <iomanip>
#include <ostream>
#include <random>
#include <string>
#include <thread>

#include "stmotion/errors.hpp"
#include "stmotion/metrics.hpp"
#include "stmotion/ops.hpp"
#include "stmotion/tape.hpp"

STMOTION_BEGIN_NAMESPACE
namespace training {

using nd::Tensor;

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (warmup < 1) throw ConfigError("warmup must be at least 1");
  if (max_steps == 0) throw ConfigError("max_steps must be positive");
  if (!(max_grad_norm > 0)) throw ConfigError("max_grad_norm must be positive");
  if (eval_every == 0) throw ConfigError("eval_every must be positive");
  if (patience == 0) throw ConfigError("patience must be positive");
  if (!(reverse_prob >= 0 && reverse_prob <= 1) || !(mirror_prob >= 0 && mirror_prob <= 1))
    throw ConfigError("augmentation probabilities must lie in [0, 1]");
  if (val_horizon == 0 || val_windows == 0) throw ConfigError("validation horizon and window count must be positive");
}

double noam_lr(std::size_t step, std::size_t dim, std::size_t warmup) {
  if (step == 0) throw ParameterError("learning-rate steps start at 1");
  if (dim == 0 || warmup == 0) throw ParameterError("dimension and warmup must be positive");
  const double s = static_cast<double>(step);
  return std::pow(static_cast<double>(dim), -0.5) *
         std::min(std::pow(s, -0.5), s * std::pow(static_cast<double>(warmup), -1.5));
}

Tensor loss_per_joint_l2(const Tensor& pred, const Tensor& target) {
  if (pred.rank() != 4 || pred.shape() != target.shape())
    throw ShapeError("loss: prediction " + nd::to_string(pred.shape()) + " and target " +
                     nd::to_string(target.shape()) + " must be equal [B, T, N, 9] shapes");
  const Tensor per_joint = nd::norm_lastdim(nd::sub(pred, target));
  return nd::scale(nd::sum(per_joint), Real(1) / static_cast<Real>(pred.dim(0)));
}

double clip_global_norm(const std::vector<Tensor>& params, double max_norm) {
  if (!(max_norm > 0)) throw ParameterError("max_norm must be positive");
  double sq = 0;
  for (const Tensor& p : params)
    for (Real g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (Tensor p : params)
      for (Real& g : p.grad()) g = static_cast<Real>(g * factor);
  }
  return norm;
}

void adam_step(const std::vector<Tensor>& params, AdamState& s, double lr) {
  if (s.m.empty()) {
    for (const Tensor& p : params) {
      s.m.emplace_back(p.numel(), 0.0);
      s.v.emplace_back(p.numel(), 0.0);
    }
  }
  if (s.m.size() != params.size()) throw ShapeError("optimizer state does not match the parameter list");
  ++s.step;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i];
    auto value = p.data();
    auto grad = p.grad();
    auto& m = s.m[i];
    auto& v = s.v[i];
    if (m.size() != value.size()) throw ShapeError("optimizer state does not match parameter shape");
    for (std::size_t k = 0; k < value.size(); ++k) {
      const double g = grad.empty() ? 0.0 : static_cast<double>(grad[k]);
      m[k] = s.beta1 * m[k] + (1 - s.beta1) * g;
      v[k] = s.beta2 * v[k] + (1 - s.beta2) * g * g;
      const double update = lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + s.epsilon);
      value[k] = static_cast<Real>(value[k] - update);
    }
  }
}

void write_history_csv(std::ostream& out, const std::vector<HistoryRow>& history) {
  const auto precision = out.precision();
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  out << kHistoryCsvHeader << '\n';
  auto field = [&](double v) -> std::ostream& {
    if (std::isnan(v)) return out << "nan";
    return out << v;
  };
  for (const auto& r : history) {
    out << r.step << ',';
    field(r.loss) << ',';
    field(r.lr) << ',';
    field(r.val_euler) << ',';
    field(r.val_geodesic) << ',';
    field(r.val_positional) << '\n';
  }
  out.precision(precision);
}

std::size_t env_threads() {
  const char* env = std::getenv("ST_MOTION_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  try {
    const long v = std::stol(env);
    return v < 1 ? 1 : static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw ConfigError(std::string("ST_MOTION_THREADS must be a positive integer, got '") + env + "'");
  }
}

HeldOut held_out_windows(const std::vector<motion::MotionSequence>& seqs, std::size_t seed_frames,
                         std::size_t horizon, std::size_t max_windows) {
  const std::size_t length = seed_frames + horizon;
  std::vector<std::pair<std::size_t, std::size_t>> starts;
  for (std::size_t s = 0; s < seqs.size(); ++s)
    for (std::size_t t = 0; t + length <= seqs[s].frames(); t += length) starts.emplace_back(s, t);
  if (starts.empty())
    throw ParameterError("no held-out sequence is long enough for " + std::to_string(length) + "-frame windows");
  std::vector<motion::MotionSequence> seed_windows, target_windows;
  const std::size_t count = std::min(max_windows, starts.size());
  for (std::size_t i = 0; i < count; ++i) {
    const auto [s, t] = starts[i * starts.size() / count];
    seed_windows.push_back(seqs[s].slice(t, seed_frames));
    target_windows.push_back(seqs[s].slice(t + seed_frames, horizon));
  }
  return {motion::to_tensor(seed_windows), motion::to_tensor(target_windows)};
}

Validation validate(const model::Model& model, const HeldOut& data, const motion::Skeleton& skeleton) {
  const std::size_t horizon = data.targets.dim(1);
  const Tensor pred = model::rollout(model, data.seeds, horizon);
  Validation v;
  v.euler = metrics::metric_euler(pred, data.targets, {horizon}).front();
  v.geodesic = metrics::metric_geodesic(pred, data.targets, {horizon}).front();
  v.positional = metrics::metric_positional(pred, data.targets, skeleton, {horizon}).front();
  return v;
}

namespace {

struct Sample {
  std::size_t seq;
  std::size_t start;
};

// Loss and gradients of one slice of the batch on its own model copy and tape.
struct Worker {
  model::Model model;
  std::vector<Tensor> params;
  double loss = 0;
  std::exception_ptr error;

  explicit Worker(model::Model m) : model(std::move(m)) {
    model.set_trainable(true);
    for (const auto& [name, t] : model.parameters()) params.push_back(t);
  }

  void run(const Tensor& inputs, const Tensor& targets, std::size_t full_batch, std::uint64_t dropout_seed) {
    try {
      model.zero_grad();
      nd::Rng rng(dropout_seed);
      nd::Tape tape;
      nd::TapeScope scope(tape);
      model::ForwardOptions opts;
      opts.training = true;
      opts.rng = &rng;
      const Tensor pred = model.forward(inputs, opts).prediction;
      const Tensor l = nd::scale(loss_per_joint_l2(pred, targets),
                                 static_cast<Real>(inputs.dim(0)) / static_cast<Real>(full_batch));
      loss = static_cast<double>(l.item());
      nd::backward(l, tape);
    } catch (...) {
      error = std::current_exception();
    }
  }
};

Tensor slice_batch(const Tensor& t, std::size_t begin, std::size_t count) {
  const std::size_t per = t.numel() / t.dim(0);
  nd::Shape shape = t.shape();
  shape[0] = count;
  auto d = t.data();
  return Tensor(std::move(shape), std::vector<Real>(d.begin() + static_cast<std::ptrdiff_t>(begin * per),
                                                    d.begin() + static_cast<std::ptrdiff_t>((begin + count) * per)));
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t step, std::uint64_t chunk) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(chunk)};
  std::mt19937_64 g(seq);
  return g();
}

}  // namespace

TrainResult train(const model::Model& init, const std::vector<motion::MotionSequence>& train_set,
                  const std::vector<motion::MotionSequence>& val_set, const TrainConfig& cfg,
                  const CheckpointCallback& on_best) {
  cfg.validate();
  const model::ModelConfig& mcfg = init.config();
  const std::size_t length = mcfg.window + 1;
  std::vector<Sample> samples;
  for (std::size_t s = 0; s < train_set.size(); ++s) {
    if (train_set[s].joints() != mcfg.joints)
      throw ConfigError("training data has " + std::to_string(train_set[s].joints()) + " joints, model expects " +
                        std::to_string(mcfg.joints));
    for (std::size_t t = 0; t + length <= train_set[s].frames(); ++t) samples.push_back({s, t});
  }
  if (samples.size() < cfg.batch_size)
    throw ParameterError("only " + std::to_string(samples.size()) + " training windows of " + std::to_string(length) +
                         " frames for a batch of " + std::to_string(cfg.batch_size));

  const bool has_val = !val_set.empty();
  HeldOut held_out;
  if (has_val) held_out = held_out_windows(val_set, mcfg.window, cfg.val_horizon, cfg.val_windows);

  model::Model current = init.clone();
  std::vector<Tensor> params;
  current.set_trainable(true);
  for (const auto& [name, t] : current.parameters()) params.push_back(t);

  const std::size_t threads = std::min(cfg.threads == 0 ? env_threads() : cfg.threads, cfg.batch_size);
  std::vector<Worker> workers;
  for (std::size_t i = 0; i < threads; ++i) workers.emplace_back(current.clone());

  TrainResult result{current.clone(), current.clone(), {}, 0, std::numeric_limits<double>::infinity(), false};
  AdamState adam;
  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<std::size_t> pick(0, samples.size() - 1);
  std::bernoulli_distribution reverse(cfg.reverse_prob), mirror(cfg.mirror_prob);
  std::size_t evals_without_gain = 0;

  for (std::size_t step = 1; step <= cfg.max_steps; ++step) {
    std::vector<motion::MotionSequence> batch;
    batch.reserve(cfg.batch_size);
    for (std::size_t i = 0; i < cfg.batch_size; ++i) {
      const Sample s = samples[pick(rng)];
      motion::MotionSequence w = train_set[s.seq].slice(s.start, length);
      if (reverse(rng)) w = motion::augment_reverse(w);
      if (mirror(rng)) w = motion::augment_mirror(w);
      batch.push_back(std::move(w));
    }
    const motion::WindowedBatch wb = motion::shift_targets(batch);

    for (Worker& w : workers)
      for (std::size_t i = 0; i < params.size(); ++i) {
        auto src = params[i].data();
        std::copy(src.begin(), src.end(), w.params[i].data().begin());
      }
    std::vector<std::thread> pool;
    std::size_t begin = 0;
    for (std::size_t c = 0; c < threads; ++c) {
      const std::size_t count = cfg.batch_size / threads + (c < cfg.batch_size % threads ? 1 : 0);
      const Tensor in = threads == 1 ? wb.inputs : slice_batch(wb.inputs, begin, count);
      const Tensor tg = threads == 1 ? wb.targets : slice_batch(wb.targets, begin, count);
      const std::uint64_t dseed = mix_seed(cfg.seed, step, c);
      if (threads == 1) {
        workers[c].run(in, tg, cfg.batch_size, dseed);
      } else {
        pool.emplace_back([&, c, in, tg, dseed] { workers[c].run(in, tg, cfg.batch_size, dseed); });
      }
      begin += count;
    }
    for (auto& t : pool) t.join();

    double loss = 0;
    current.zero_grad();
    for (Worker& w : workers) {
      if (w.error) std::rethrow_exception(w.error);
      loss += w.loss;
      for (std::size_t i = 0; i < params.size(); ++i) {
        auto dst = params[i].grad();
        auto src = w.params[i].grad();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
      }
    }
    if (!std::isfinite(loss)) throw NumericError("non-finite training loss at step " + std::to_string(step));
    const double norm = clip_global_norm(params, cfg.max_grad_norm);
    if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm at step " + std::to_string(step));
    const double lr = noam_lr(step, mcfg.embed, cfg.warmup);
    adam_step(params, adam, lr);

    HistoryRow row;
    row.step = step;
    row.loss = loss;
    row.lr = lr;
    const bool eval_now = has_val && (step % cfg.eval_every == 0 || step == cfg.max_steps);
    if (eval_now) {
      const Validation v = validate(current, held_out, train_set.front().skeleton());
      row.val_euler = v.euler;
      row.val_geodesic = v.geodesic;
      row.val_positional = v.positional;
      if (v.geodesic < result.best_val_geodesic) {
        result.best_val_geodesic = v.geodesic;
        result.best_step = step;
        result.best = current.clone();
        evals_without_gain = 0;
        if (on_best) on_best(result.best, step);
      } else {
        ++evals_without_gain;
      }
    }
    result.history.push_back(row);
    if (evals_without_gain >= cfg.patience) {
      result.stopped_early = true;
      break;
    }
  }

  result.last = current.clone();
  if (!has_val) {
    result.best = current.clone();
    result.best_step = result.history.empty() ? 0 : result.history.back().step;
  }
  return result;
}

}  // namespace training
STMOTION_END_NAMESPACE
