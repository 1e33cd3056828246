#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <vector>

#include "stmotion/model.hpp"
#include "stmotion/motion.hpp"

STMOTION_BEGIN_NAMESPACE
namespace training {

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t warmup = 10000;
  std::size_t max_steps = 100000;
  double max_grad_norm = 1.0;
  std::size_t eval_every = 500;
  std::size_t patience = 10;  // evaluations without improvement
  double reverse_prob = 0.0;
  double mirror_prob = 0.0;
  std::uint64_t seed = 1;
  // Validation rolls out this many frames from a window-length seed and
  // early-stops on the mean geodesic error over them (24 frames = 400 ms at 60 fps).
  std::size_t val_horizon = 24;
  std::size_t val_windows = 64;
  // Worker threads for the batch forward/backward; 0 reads ST_MOTION_THREADS.
  std::size_t threads = 0;

  void validate() const;
};

/// lr = D^-0.5 * min(step^-0.5, step * warmup^-1.5). Throws ParameterError for step 0.
double noam_lr(std::size_t step, std::size_t dim, std::size_t warmup);

/// Sum over frames and joints of the Euclidean norm of the 9-d difference,
/// averaged over the batch. pred, target: [B, T, N, 9].
nd::Tensor loss_per_joint_l2(const nd::Tensor& pred, const nd::Tensor& target);

/// Scales every gradient by min(1, max_norm / global_norm) and returns the
/// global norm before clipping.
double clip_global_norm(const std::vector<nd::Tensor>& params, double max_norm);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t step = 0;
  std::vector<std::vector<double>> m, v;
};

/// One bias-corrected Adam update from the parameters' gradients.
void adam_step(const std::vector<nd::Tensor>& params, AdamState& state, double lr);

struct HistoryRow {
  std::size_t step = 0;
  double loss = 0;
  double lr = 0;
  // NaN on steps without a validation pass.
  double val_euler = std::numeric_limits<double>::quiet_NaN();
  double val_geodesic = std::numeric_limits<double>::quiet_NaN();
  double val_positional = std::numeric_limits<double>::quiet_NaN();
};

inline constexpr const char* kHistoryCsvHeader = "step,loss,lr,val_euler,val_geodesic,val_positional";
void write_history_csv(std::ostream& out, const std::vector<HistoryRow>& history);

struct TrainResult {
  model::Model best;
  model::Model last;
  std::vector<HistoryRow> history;
  std::size_t best_step = 0;
  double best_val_geodesic = std::numeric_limits<double>::infinity();
  bool stopped_early = false;
};

/// Called whenever validation improves, with the new best parameters.
using CheckpointCallback = std::function<void(const model::Model&, std::size_t step)>;

/// Trains on windows of config.window + 1 frames drawn uniformly from
/// `train_set`; validation windows come from `val_set`. With an empty
/// `val_set` no validation runs and the final parameters are also the best.
/// Throws NumericError on a non-finite loss or gradient.
TrainResult train(const model::Model& init, const std::vector<motion::MotionSequence>& train_set,
                  const std::vector<motion::MotionSequence>& val_set, const TrainConfig& config,
                  const CheckpointCallback& on_best = {});

struct Validation {
  double euler = 0;
  double geodesic = 0;
  double positional = 0;
};

/// Seed/target windows for validation: the first `seed_frames` of each
/// window seed the rollout, the next `horizon` frames are the targets. At
/// most `max_windows` windows are spread evenly over the sequences.
struct HeldOut {
  nd::Tensor seeds;    // [B, seed_frames, N, 9]
  nd::Tensor targets;  // [B, horizon, N, 9]
};
HeldOut held_out_windows(const std::vector<motion::MotionSequence>& seqs, std::size_t seed_frames,
                         std::size_t horizon, std::size_t max_windows);

/// Mean errors of a `horizon`-step rollout against the targets.
Validation validate(const model::Model& model, const HeldOut& data, const motion::Skeleton& skeleton);

/// Worker count from ST_MOTION_THREADS (at least 1).
std::size_t env_threads();

}  // namespace training
STMOTION_END_NAMESPACE
