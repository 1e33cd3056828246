#pragma once

#include <complex>
#include <cstddef>
#include <iosfwd>
#include <vector>

#include "stmotion/motion.hpp"
#include "stmotion/tensor.hpp"

STMOTION_BEGIN_NAMESPACE
namespace metrics {

// Prediction and target tensors below are [B, K, N, 9]: B sequences of K
// predicted frames. A horizon h (in frames, 1 <= h <= K) averages over the
// first h frames of every sequence.

/// Repeats the last seed frame. seed: [B, Ts, N, 9] -> [B, steps, N, 9].
nd::Tensor zero_velocity(const nd::Tensor& seed, std::size_t steps);

/// Norm of the concatenated per-joint Euler-angle differences (each wrapped
/// to (-pi, pi]), averaged over frames and sequences.
std::vector<double> metric_euler(const nd::Tensor& pred, const nd::Tensor& target,
                                 const std::vector<std::size_t>& horizons);

/// Mean geodesic angle over joints, frames and sequences (radians).
std::vector<double> metric_geodesic(const nd::Tensor& pred, const nd::Tensor& target,
                                    const std::vector<std::size_t>& horizons);

/// Mean Euclidean joint-position error in millimetres after forward kinematics.
std::vector<double> metric_positional(const nd::Tensor& pred, const nd::Tensor& target,
                                      const motion::Skeleton& skeleton, const std::vector<std::size_t>& horizons);

/// Area under the PCK curve in percent. Thresholds in millimetres, strictly
/// increasing; with a single threshold this is plain PCK.
std::vector<double> metric_pck_auc(const nd::Tensor& pred, const nd::Tensor& target,
                                   const motion::Skeleton& skeleton, const std::vector<std::size_t>& horizons,
                                   const std::vector<double>& thresholds);

/// PCK of a flat list of errors, in percent.
double pck(const std::vector<double>& errors_mm, double threshold);
/// Trapezoidal mean of PCK over the threshold grid, in percent.
double pck_auc(const std::vector<double>& errors_mm, const std::vector<double>& thresholds);

/// 0, 10, ..., 300 mm.
std::vector<double> default_pck_thresholds();

/// Milliseconds to a frame count (rounded, at least one frame).
std::size_t ms_to_frames(double ms, double frame_rate);

struct MetricRow {
  double horizon_ms = 0;
  double euler = 0;
  double geodesic = 0;
  double positional_mm = 0;
  double pck_auc = 0;
};

std::vector<MetricRow> evaluate(const nd::Tensor& pred, const nd::Tensor& target, const motion::Skeleton& skeleton,
                                const std::vector<double>& horizons_ms, double frame_rate);

inline constexpr const char* kReportCsvHeader = "horizon_ms,euler,geodesic,positional_mm,pck_auc";
void write_report_csv(std::ostream& out, const std::vector<MetricRow>& rows);

// ---- frequency domain ----------------------------------------------------

/// In-place iterative radix-2 FFT; size must be a power of two.
void fft(std::vector<std::complex<double>>& values);
std::size_t next_pow2(std::size_t n);

/// Normalised power spectra: `features` rows of `bins` probabilities.
struct PSDistribution {
  std::size_t features = 0;
  std::size_t bins = 0;
  std::size_t window = 0;  // frames before padding
  std::vector<double> p;   // features x bins
  double at(std::size_t f, std::size_t k) const { return p[f * bins + k]; }
};

/// windows: each a [Tw x F] row-major block of feature trajectories, all of
/// equal length. Spectra are averaged over windows, then normalised per
/// feature. A feature with no power puts all its mass on the DC bin.
PSDistribution ps_of_features(const std::vector<std::vector<double>>& windows, std::size_t window_frames,
                              std::size_t features);

/// Features are the x, y, z coordinates of every joint after forward kinematics.
PSDistribution ps_of_windows(const std::vector<motion::MotionSequence>& windows);

/// Mean over features of the Shannon entropy (natural log) of each spectrum.
double ps_entropy(const PSDistribution& dist);

inline constexpr double kKldSmoothing = 1e-10;
/// Symmetric KL divergence, halved, averaged over features, after adding
/// kKldSmoothing to every bin of both distributions and renormalising.
double ps_kld(const PSDistribution& reference, const PSDistribution& prediction);

struct LongTermCurve {
  std::vector<double> ps_kld;      // one value per second
  std::vector<double> ps_entropy;  // one value per second
};

/// Cuts a rollout into non-overlapping one-second windows and compares each
/// with the reference distribution of real one-second clips.
LongTermCurve longterm_eval(const motion::MotionSequence& rollout, const PSDistribution& reference);

inline constexpr const char* kLongTermCsvHeader = "second,ps_kld,ps_entropy";
void write_longterm_csv(std::ostream& out, const LongTermCurve& curve);

}  // namespace metrics
STMOTION_END_NAMESPACE
