#include "stmotion/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>

#include "stmotion/errors.hpp"
#include "stmotion/so3.hpp"

STMOTION_BEGIN_NAMESPACE
namespace metrics {

using nd::Tensor;

namespace {

struct Dims {
  std::size_t batch, frames, joints;
};

Dims check_pair(const Tensor& pred, const Tensor& target, const char* what) {
  if (pred.rank() != 4 || pred.dim(3) != motion::kJointDim)
    throw ShapeError(std::string(what) + ": expected [B, K, N, 9], got " + nd::to_string(pred.shape()));
  if (pred.shape() != target.shape())
    throw ShapeError(std::string(what) + ": prediction " + nd::to_string(pred.shape()) + " vs target " +
                     nd::to_string(target.shape()));
  return {pred.dim(0), pred.dim(1), pred.dim(2)};
}

void check_horizons(const std::vector<std::size_t>& horizons, std::size_t frames) {
  for (std::size_t h : horizons)
    if (h == 0 || h > frames)
      throw ParameterError("horizon of " + std::to_string(h) + " frames outside 1.." + std::to_string(frames));
}

so3::Mat3 mat_at(const Tensor& t, std::size_t b, std::size_t k, std::size_t j) {
  const std::size_t frames = t.dim(1), joints = t.dim(2);
  const Real* p = t.data().data() + ((b * frames + k) * joints + j) * 9;
  so3::Mat3 m{};
  for (std::size_t i = 0; i < 9; ++i) m[i] = static_cast<double>(p[i]);
  return m;
}

// Per-frame error table [B, K] reduced to running means over the first h frames.
std::vector<double> horizon_means(const std::vector<double>& per_frame, const Dims& d,
                                  const std::vector<std::size_t>& horizons) {
  std::vector<double> out;
  out.reserve(horizons.size());
  for (std::size_t h : horizons) {
    double s = 0;
    for (std::size_t b = 0; b < d.batch; ++b)
      for (std::size_t k = 0; k < h; ++k) s += per_frame[b * d.frames + k];
    out.push_back(s / static_cast<double>(d.batch * h));
  }
  return out;
}

std::vector<std::array<double, 3>> positions(const Tensor& t, const motion::Skeleton& skeleton, std::size_t b,
                                             std::size_t k) {
  const std::size_t n = t.dim(2);
  const Real* p = t.data().data() + (b * t.dim(1) + k) * n * 9;
  std::vector<float> frame(p, p + n * 9);
  return motion::forward_kinematics_frame(skeleton, frame);
}

// Joint-position errors, [B, K, N] flattened.
std::vector<double> position_errors(const Tensor& pred, const Tensor& target, const motion::Skeleton& skeleton,
                                    const Dims& d) {
  if (skeleton.joint_count() != d.joints)
    throw ShapeError("skeleton has " + std::to_string(skeleton.joint_count()) + " joints, data has " +
                     std::to_string(d.joints));
  std::vector<double> err(d.batch * d.frames * d.joints);
  for (std::size_t b = 0; b < d.batch; ++b)
    for (std::size_t k = 0; k < d.frames; ++k) {
      const auto pp = positions(pred, skeleton, b, k);
      const auto tp = positions(target, skeleton, b, k);
      for (std::size_t j = 0; j < d.joints; ++j) {
        const double dx = pp[j][0] - tp[j][0], dy = pp[j][1] - tp[j][1], dz = pp[j][2] - tp[j][2];
        err[(b * d.frames + k) * d.joints + j] = std::sqrt(dx * dx + dy * dy + dz * dz);
      }
    }
  return err;
}

}  // namespace

Tensor zero_velocity(const Tensor& seed, std::size_t steps) {
  if (seed.rank() != 4 || seed.dim(1) == 0) throw ShapeError("zero_velocity: seed must be a non-empty [B, T, N, 9]");
  const std::size_t b = seed.dim(0), ts = seed.dim(1), frame = seed.dim(2) * seed.dim(3);
  std::vector<Real> out(b * steps * frame);
  auto src = seed.data();
  for (std::size_t bi = 0; bi < b; ++bi) {
    const Real* last = src.data() + (bi * ts + ts - 1) * frame;
    for (std::size_t k = 0; k < steps; ++k) std::copy(last, last + frame, out.data() + (bi * steps + k) * frame);
  }
  return Tensor({b, steps, seed.dim(2), seed.dim(3)}, std::move(out));
}

std::vector<double> metric_euler(const Tensor& pred, const Tensor& target, const std::vector<std::size_t>& horizons) {
  const Dims d = check_pair(pred, target, "metric_euler");
  check_horizons(horizons, d.frames);
  std::vector<double> per_frame(d.batch * d.frames);
  for (std::size_t b = 0; b < d.batch; ++b)
    for (std::size_t k = 0; k < d.frames; ++k) {
      double sq = 0;
      for (std::size_t j = 0; j < d.joints; ++j) {
        const auto ep = so3::euler_from_rotmat(mat_at(pred, b, k, j));
        const auto et = so3::euler_from_rotmat(mat_at(target, b, k, j));
        for (double diff : {ep.x - et.x, ep.y - et.y, ep.z - et.z}) {
          const double w = so3::wrap_angle(diff);
          sq += w * w;
        }
      }
      per_frame[b * d.frames + k] = std::sqrt(sq);
    }
  return horizon_means(per_frame, d, horizons);
}

std::vector<double> metric_geodesic(const Tensor& pred, const Tensor& target,
                                    const std::vector<std::size_t>& horizons) {
  const Dims d = check_pair(pred, target, "metric_geodesic");
  check_horizons(horizons, d.frames);
  std::vector<double> per_frame(d.batch * d.frames);
  for (std::size_t b = 0; b < d.batch; ++b)
    for (std::size_t k = 0; k < d.frames; ++k) {
      double s = 0;
      for (std::size_t j = 0; j < d.joints; ++j)
        s += so3::geodesic_angle(mat_at(pred, b, k, j), mat_at(target, b, k, j));
      per_frame[b * d.frames + k] = s / static_cast<double>(d.joints);
    }
  return horizon_means(per_frame, d, horizons);
}

std::vector<double> metric_positional(const Tensor& pred, const Tensor& target, const motion::Skeleton& skeleton,
                                      const std::vector<std::size_t>& horizons) {
  const Dims d = check_pair(pred, target, "metric_positional");
  check_horizons(horizons, d.frames);
  const std::vector<double> err = position_errors(pred, target, skeleton, d);
  std::vector<double> per_frame(d.batch * d.frames);
  for (std::size_t i = 0; i < per_frame.size(); ++i) {
    double s = 0;
    for (std::size_t j = 0; j < d.joints; ++j) s += err[i * d.joints + j];
    per_frame[i] = s / static_cast<double>(d.joints);
  }
  return horizon_means(per_frame, d, horizons);
}

double pck(const std::vector<double>& errors_mm, double threshold) {
  if (errors_mm.empty()) return 100.0;
  const auto hits = std::count_if(errors_mm.begin(), errors_mm.end(), [&](double e) { return e <= threshold; });
  return 100.0 * static_cast<double>(hits) / static_cast<double>(errors_mm.size());
}

double pck_auc(const std::vector<double>& errors_mm, const std::vector<double>& thresholds) {
  if (thresholds.empty()) throw ParameterError("PCK needs at least one threshold");
  for (std::size_t i = 1; i < thresholds.size(); ++i)
    if (!(thresholds[i] > thresholds[i - 1])) throw ParameterError("PCK thresholds must be strictly increasing");
  if (thresholds.size() == 1) return pck(errors_mm, thresholds[0]);
  std::vector<double> sorted = errors_mm;
  std::sort(sorted.begin(), sorted.end());
  auto pck_sorted = [&](double tau) {
    if (sorted.empty()) return 100.0;
    const auto n = std::upper_bound(sorted.begin(), sorted.end(), tau) - sorted.begin();
    return 100.0 * static_cast<double>(n) / static_cast<double>(sorted.size());
  };
  double area = 0;
  double prev = pck_sorted(thresholds[0]);
  for (std::size_t i = 1; i < thresholds.size(); ++i) {
    const double cur = pck_sorted(thresholds[i]);
    area += 0.5 * (prev + cur) * (thresholds[i] - thresholds[i - 1]);
    prev = cur;
  }
  return area / (thresholds.back() - thresholds.front());
}

std::vector<double> metric_pck_auc(const Tensor& pred, const Tensor& target, const motion::Skeleton& skeleton,
                                   const std::vector<std::size_t>& horizons, const std::vector<double>& thresholds) {
  const Dims d = check_pair(pred, target, "metric_pck_auc");
  check_horizons(horizons, d.frames);
  if (thresholds.empty()) throw ParameterError("PCK needs at least one threshold");
  const std::vector<double> err = position_errors(pred, target, skeleton, d);
  std::vector<double> out;
  for (std::size_t h : horizons) {
    std::vector<double> subset;
    subset.reserve(d.batch * h * d.joints);
    for (std::size_t b = 0; b < d.batch; ++b) {
      const auto first = err.begin() + static_cast<std::ptrdiff_t>(b * d.frames * d.joints);
      subset.insert(subset.end(), first, first + static_cast<std::ptrdiff_t>(h * d.joints));
    }
    out.push_back(pck_auc(subset, thresholds));
  }
  return out;
}

std::vector<double> default_pck_thresholds() {
  std::vector<double> t;
  for (int mm = 0; mm <= 300; mm += 10) t.push_back(mm);
  return t;
}

std::size_t ms_to_frames(double ms, double frame_rate) {
  if (!(ms > 0) || !(frame_rate > 0)) throw ParameterError("horizons and frame rate must be positive");
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(ms * frame_rate / 1000.0)));
}

std::vector<MetricRow> evaluate(const Tensor& pred, const Tensor& target, const motion::Skeleton& skeleton,
                                const std::vector<double>& horizons_ms, double frame_rate) {
  std::vector<std::size_t> frames;
  for (double ms : horizons_ms) frames.push_back(ms_to_frames(ms, frame_rate));
  const auto eu = metric_euler(pred, target, frames);
  const auto ge = metric_geodesic(pred, target, frames);
  const auto po = metric_positional(pred, target, skeleton, frames);
  const auto pc = metric_pck_auc(pred, target, skeleton, frames, default_pck_thresholds());
  std::vector<MetricRow> rows;
  for (std::size_t i = 0; i < frames.size(); ++i) rows.push_back({horizons_ms[i], eu[i], ge[i], po[i], pc[i]});
  return rows;
}

void write_report_csv(std::ostream& out, const std::vector<MetricRow>& rows) {
  const auto precision = out.precision();
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  out << kReportCsvHeader << '\n';
  for (const auto& r : rows)
    out << r.horizon_ms << ',' << r.euler << ',' << r.geodesic << ',' << r.positional_mm << ',' << r.pck_auc << '\n';
  out.precision(precision);
}

// ---- frequency domain ----------------------------------------------------------

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

void fft(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  if (n == 0 || (n & (n - 1)) != 0) throw ParameterError("fft size must be a power of two");
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double angle = -2.0 * so3::kPi / static_cast<double>(len);
    const std::complex<double> step(std::cos(angle), std::sin(angle));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        const auto u = a[i + k];
        const auto v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= step;
      }
    }
  }
}

PSDistribution ps_of_features(const std::vector<std::vector<double>>& windows, std::size_t window_frames,
                              std::size_t features) {
  if (windows.empty()) throw ParameterError("power spectrum needs at least one window");
  if (window_frames == 0 || features == 0) throw ParameterError("empty power-spectrum window");
  PSDistribution dist;
  dist.features = features;
  dist.window = window_frames;
  dist.bins = next_pow2(window_frames);
  std::vector<double> power(features * dist.bins, 0.0);
  std::vector<std::complex<double>> buf(dist.bins);
  for (const auto& w : windows) {
    if (w.size() != window_frames * features) throw ShapeError("power-spectrum windows differ in length");
    for (std::size_t f = 0; f < features; ++f) {
      std::fill(buf.begin(), buf.end(), std::complex<double>{});
      for (std::size_t t = 0; t < window_frames; ++t) buf[t] = w[t * features + f];
      fft(buf);
      for (std::size_t k = 0; k < dist.bins; ++k) power[f * dist.bins + k] += std::norm(buf[k]);
    }
  }
  dist.p.assign(power.size(), 0.0);
  for (std::size_t f = 0; f < features; ++f) {
    double total = 0;
    for (std::size_t k = 0; k < dist.bins; ++k) total += power[f * dist.bins + k];
    if (total <= 0) {
      dist.p[f * dist.bins] = 1.0;
      continue;
    }
    for (std::size_t k = 0; k < dist.bins; ++k) dist.p[f * dist.bins + k] = power[f * dist.bins + k] / total;
  }
  return dist;
}

PSDistribution ps_of_windows(const std::vector<motion::MotionSequence>& windows) {
  if (windows.empty()) throw ParameterError("power spectrum needs at least one window");
  const std::size_t frames = windows.front().frames();
  const std::size_t joints = windows.front().joints();
  std::vector<std::vector<double>> features;
  features.reserve(windows.size());
  for (const auto& w : windows) {
    if (w.frames() != frames) throw ShapeError("power-spectrum windows differ in length");
    if (w.joints() != joints) throw ShapeError("power-spectrum windows differ in joint count");
    const motion::PositionTrack pos = motion::forward_kinematics(w);
    std::vector<double> flat(frames * joints * 3);
    for (std::size_t t = 0; t < frames; ++t)
      for (std::size_t j = 0; j < joints; ++j)
        for (std::size_t c = 0; c < 3; ++c) flat[(t * joints + j) * 3 + c] = pos.at(t, j)[c];
    features.push_back(std::move(flat));
  }
  return ps_of_features(features, frames, joints * 3);
}

double ps_entropy(const PSDistribution& dist) {
  if (dist.features == 0) throw ParameterError("empty power-spectrum distribution");
  double total = 0;
  for (std::size_t f = 0; f < dist.features; ++f) {
    double h = 0;
    for (std::size_t k = 0; k < dist.bins; ++k) {
      const double p = dist.at(f, k);
      if (p > 0) h -= p * std::log(p);
    }
    total += h;
  }
  return total / static_cast<double>(dist.features);
}

double ps_kld(const PSDistribution& g, const PSDistribution& p) {
  if (g.features != p.features || g.bins != p.bins)
    throw ShapeError("power spectra differ in feature or bin count");
  if (g.features == 0) throw ParameterError("empty power-spectrum distribution");
  double total = 0;
  std::vector<double> gs(g.bins), ps(g.bins);
  for (std::size_t f = 0; f < g.features; ++f) {
    double gsum = 0, psum = 0;
    for (std::size_t k = 0; k < g.bins; ++k) {
      gs[k] = g.at(f, k) + kKldSmoothing;
      ps[k] = p.at(f, k) + kKldSmoothing;
      gsum += gs[k];
      psum += ps[k];
    }
    double forward = 0, backward = 0;
    for (std::size_t k = 0; k < g.bins; ++k) {
      const double a = gs[k] / gsum, b = ps[k] / psum;
      forward += a * std::log(a / b);
      backward += b * std::log(b / a);
    }
    total += 0.5 * (forward + backward);
  }
  return total / static_cast<double>(g.features);
}

LongTermCurve longterm_eval(const motion::MotionSequence& rollout, const PSDistribution& reference) {
  const std::size_t w = reference.window;
  if (w == 0 || rollout.frames() < w)
    throw ParameterError("rollout of " + std::to_string(rollout.frames()) + " frames is shorter than one " +
                         std::to_string(w) + "-frame window");
  LongTermCurve curve;
  for (std::size_t s = 0; (s + 1) * w <= rollout.frames(); ++s) {
    const PSDistribution ps = ps_of_windows({rollout.slice(s * w, w)});
    curve.ps_kld.push_back(ps_kld(reference, ps));
    curve.ps_entropy.push_back(ps_entropy(ps));
  }
  return curve;
}

void write_longterm_csv(std::ostream& out, const LongTermCurve& curve) {
  const auto precision = out.precision();
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  out << kLongTermCsvHeader << '\n';
  for (std::size_t s = 0; s < curve.ps_kld.size(); ++s)
    out << s + 1 << ',' << curve.ps_kld[s] << ',' << curve.ps_entropy[s] << '\n';
  out.precision(precision);
}

}  // namespace metrics
STMOTION_END_NAMESPACE
