#include "stmotion/so3.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iostream>

STMOTION_BEGIN_NAMESPACE
namespace so3 {

namespace {

constexpr double kSvdTolerance = 1e-10;
constexpr int kSvdMaxSweeps = 30;

double& at(Mat3& m, int r, int c) { return m[static_cast<std::size_t>(r * 3 + c)]; }
double at(const Mat3& m, int r, int c) { return m[static_cast<std::size_t>(r * 3 + c)]; }

std::array<double, 3> vee_skew(const Mat3& r) {
  return {at(r, 2, 1) - at(r, 1, 2), at(r, 0, 2) - at(r, 2, 0), at(r, 1, 0) - at(r, 0, 1)};
}

void canonicalise_sign(std::array<double, 3>& v) {
  for (double c : v) {
    if (std::abs(c) < 1e-12) continue;
    if (c < 0)
      for (double& x : v) x = -x;
    return;
  }
}

}  // namespace

Mat3 identity() { return {1, 0, 0, 0, 1, 0, 0, 0, 1}; }

Mat3 multiply(const Mat3& a, const Mat3& b) {
  Mat3 c{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double s = 0;
      for (int k = 0; k < 3; ++k) s += at(a, i, k) * at(b, k, j);
      at(c, i, j) = s;
    }
  return c;
}

Mat3 transpose(const Mat3& a) {
  Mat3 t{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) at(t, i, j) = at(a, j, i);
  return t;
}

double determinant(const Mat3& a) {
  return a[0] * (a[4] * a[8] - a[5] * a[7]) - a[1] * (a[3] * a[8] - a[5] * a[6]) +
         a[2] * (a[3] * a[7] - a[4] * a[6]);
}

double frobenius_distance(const Mat3& a, const Mat3& b) {
  double s = 0;
  for (std::size_t i = 0; i < 9; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

Mat3 rot_x(double t) {
  const double c = std::cos(t), s = std::sin(t);
  return {1, 0, 0, 0, c, -s, 0, s, c};
}

Mat3 rot_y(double t) {
  const double c = std::cos(t), s = std::sin(t);
  return {c, 0, s, 0, 1, 0, -s, 0, c};
}

Mat3 rot_z(double t) {
  const double c = std::cos(t), s = std::sin(t);
  return {c, -s, 0, s, c, 0, 0, 0, 1};
}

Mat3 rot_axis(const std::array<double, 3>& axis, double angle) {
  const double n = std::sqrt(axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]);
  if (n == 0.0) return identity();
  return rotmat_from_angleaxis({axis[0] / n * angle, axis[1] / n * angle, axis[2] / n * angle});
}

bool is_rotation(const Mat3& r, double tol) {
  const Mat3 rtr = multiply(transpose(r), r);
  const Mat3 eye = identity();
  for (std::size_t i = 0; i < 9; ++i)
    if (!(std::abs(rtr[i] - eye[i]) <= tol)) return false;
  return std::abs(determinant(r) - 1.0) <= tol;
}

Quaternion canonical(const Quaternion& q) {
  const bool flip = q.w < 0 ||
                    (q.w == 0 && (q.x < 0 || (q.x == 0 && (q.y < 0 || (q.y == 0 && q.z < 0)))));
  return flip ? Quaternion{-q.w, -q.x, -q.y, -q.z} : q;
}

Mat3 rotmat_from_quat(const Quaternion& q_in) {
  Quaternion q = q_in;
  const double norm = std::sqrt(q.w * q.w + q.x * q.x + q.y * q.y + q.z * q.z);
  if (!(std::abs(norm - 1.0) < 1e-3))
    throw ParameterError("quaternion is not unit length (norm " + std::to_string(norm) + ")");
  if (std::abs(norm - 1.0) > 1e-6) {
    static std::atomic<bool> warned{false};
    if (!warned.exchange(true))
      std::cerr << "warning: normalising quaternion with norm " << norm << '\n';
    q = {q.w / norm, q.x / norm, q.y / norm, q.z / norm};
  }
  const double w = q.w, x = q.x, y = q.y, z = q.z;
  return {1 - 2 * (y * y + z * z), 2 * (x * y - w * z),     2 * (x * z + w * y),
          2 * (x * y + w * z),     1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
          2 * (x * z - w * y),     2 * (y * z + w * x),     1 - 2 * (x * x + y * y)};
}

Quaternion quat_from_rotmat(const Mat3& r) {
  const double tr = at(r, 0, 0) + at(r, 1, 1) + at(r, 2, 2);
  Quaternion q;
  if (tr >= at(r, 0, 0) && tr >= at(r, 1, 1) && tr >= at(r, 2, 2)) {
    const double s = 2.0 * std::sqrt(std::max(0.0, 1.0 + tr));
    q = {0.25 * s, (at(r, 2, 1) - at(r, 1, 2)) / s, (at(r, 0, 2) - at(r, 2, 0)) / s,
         (at(r, 1, 0) - at(r, 0, 1)) / s};
  } else if (at(r, 0, 0) >= at(r, 1, 1) && at(r, 0, 0) >= at(r, 2, 2)) {
    const double s = 2.0 * std::sqrt(std::max(0.0, 1.0 + at(r, 0, 0) - at(r, 1, 1) - at(r, 2, 2)));
    q = {(at(r, 2, 1) - at(r, 1, 2)) / s, 0.25 * s, (at(r, 0, 1) + at(r, 1, 0)) / s,
         (at(r, 0, 2) + at(r, 2, 0)) / s};
  } else if (at(r, 1, 1) >= at(r, 2, 2)) {
    const double s = 2.0 * std::sqrt(std::max(0.0, 1.0 + at(r, 1, 1) - at(r, 0, 0) - at(r, 2, 2)));
    q = {(at(r, 0, 2) - at(r, 2, 0)) / s, (at(r, 0, 1) + at(r, 1, 0)) / s, 0.25 * s,
         (at(r, 1, 2) + at(r, 2, 1)) / s};
  } else {
    const double s = 2.0 * std::sqrt(std::max(0.0, 1.0 + at(r, 2, 2) - at(r, 0, 0) - at(r, 1, 1)));
    q = {(at(r, 1, 0) - at(r, 0, 1)) / s, (at(r, 0, 2) + at(r, 2, 0)) / s,
         (at(r, 1, 2) + at(r, 2, 1)) / s, 0.25 * s};
  }
  const double n = std::sqrt(q.w * q.w + q.x * q.x + q.y * q.y + q.z * q.z);
  return canonical({q.w / n, q.x / n, q.y / n, q.z / n});
}

Mat3 rotmat_from_angleaxis(const AngleAxis& a) {
  const double theta = std::sqrt(a.x * a.x + a.y * a.y + a.z * a.z);
  const Mat3 k{0, -a.z, a.y, a.z, 0, -a.x, -a.y, a.x, 0};
  Mat3 r = identity();
  if (theta < 1e-12) {
    for (std::size_t i = 0; i < 9; ++i) r[i] += k[i];
    return r;
  }
  // R = I + sin(t)/t K + (1 - cos(t))/t^2 K^2
  const double s = std::sin(theta) / theta;
  const double c = (1.0 - std::cos(theta)) / (theta * theta);
  const Mat3 k2 = multiply(k, k);
  for (std::size_t i = 0; i < 9; ++i) r[i] += s * k[i] + c * k2[i];
  return r;
}

AngleAxis angleaxis_from_rotmat(const Mat3& r) {
  const double cos_t = std::clamp((at(r, 0, 0) + at(r, 1, 1) + at(r, 2, 2) - 1.0) / 2.0, -1.0, 1.0);
  const std::array<double, 3> skew = vee_skew(r);  // 2 sin(t) * axis
  const double skew_norm = std::sqrt(skew[0] * skew[0] + skew[1] * skew[1] + skew[2] * skew[2]);
  const double theta = std::atan2(skew_norm / 2.0, cos_t);
  if (theta < 1e-12) return {skew[0] / 2.0, skew[1] / 2.0, skew[2] / 2.0};
  std::array<double, 3> axis{};
  if (theta < kPi - 1e-2) {
    for (int i = 0; i < 3; ++i) axis[static_cast<std::size_t>(i)] = skew[static_cast<std::size_t>(i)] / skew_norm;
  } else {
    // Near pi the skew part vanishes; the symmetric part is (1 - cos t) a a^T
    // off the cos(t) I diagonal.
    const double one_minus = 1.0 - cos_t;
    std::array<double, 3> diag{};
    for (int i = 0; i < 3; ++i) diag[static_cast<std::size_t>(i)] = (at(r, i, i) - cos_t) / one_minus;
    const int p = static_cast<int>(std::max_element(diag.begin(), diag.end()) - diag.begin());
    for (int i = 0; i < 3; ++i)
      axis[static_cast<std::size_t>(i)] = (at(r, i, p) + at(r, p, i)) / 2.0 - (i == p ? cos_t : 0.0);
    const double n = std::sqrt(axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]);
    for (double& c : axis) c /= n;
    const double dot = axis[0] * skew[0] + axis[1] * skew[1] + axis[2] * skew[2];
    if (skew_norm > 1e-12) {
      if (dot < 0)
        for (double& c : axis) c = -c;
    } else {
      canonicalise_sign(axis);
    }
  }
  return {axis[0] * theta, axis[1] * theta, axis[2] * theta};
}

double wrap_angle(double a) {
  double w = std::remainder(a, 2.0 * kPi);  // [-pi, pi]
  if (w <= -kPi) w += 2.0 * kPi;
  return w;
}

EulerAngles euler_from_rotmat(const Mat3& r) {
  // R = Rx(a) Ry(b) Rz(c):
  //   R02 = sin b, R12 = -sin a cos b, R22 = cos a cos b,
  //   R01 = -cos b sin c, R00 = cos b cos c.
  const double sb = std::clamp(at(r, 0, 2), -1.0, 1.0);
  const double cb = std::sqrt(at(r, 0, 0) * at(r, 0, 0) + at(r, 0, 1) * at(r, 0, 1));
  const double b = std::atan2(sb, cb);
  double a = 0, c = 0;
  if (cb >= 1e-7) {
    a = std::atan2(-at(r, 1, 2), at(r, 2, 2));
    c = std::atan2(-at(r, 0, 1), at(r, 0, 0));
  } else {
    // Gimbal lock: fix c = 0, then R21 = sin a and R11 = cos a.
    a = std::atan2(at(r, 2, 1), at(r, 1, 1));
  }
  return {wrap_angle(a), wrap_angle(b), wrap_angle(c)};
}

Mat3 rotmat_from_euler(const EulerAngles& e) { return multiply(multiply(rot_x(e.x), rot_y(e.y)), rot_z(e.z)); }

Svd3 svd(const Mat3& a) {
  Mat3 w = a;  // columns become U * sigma
  Mat3 v = identity();
  for (int sweep = 0; sweep < kSvdMaxSweeps; ++sweep) {
    bool rotated = false;
    for (int p = 0; p < 2; ++p)
      for (int q = p + 1; q < 3; ++q) {
        double alpha = 0, beta = 0, gamma = 0;
        for (int i = 0; i < 3; ++i) {
          alpha += at(w, i, p) * at(w, i, p);
          beta += at(w, i, q) * at(w, i, q);
          gamma += at(w, i, p) * at(w, i, q);
        }
        if (std::abs(gamma) <= kSvdTolerance * std::sqrt(alpha * beta) || gamma == 0.0) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (int i = 0; i < 3; ++i) {
          const double wp = at(w, i, p), wq = at(w, i, q);
          at(w, i, p) = c * wp - s * wq;
          at(w, i, q) = s * wp + c * wq;
          const double vp = at(v, i, p), vq = at(v, i, q);
          at(v, i, p) = c * vp - s * vq;
          at(v, i, q) = s * vp + c * vq;
        }
      }
    if (!rotated) break;
  }
  std::array<double, 3> sigma{};
  for (int j = 0; j < 3; ++j) {
    double n = 0;
    for (int i = 0; i < 3; ++i) n += at(w, i, j) * at(w, i, j);
    sigma[static_cast<std::size_t>(j)] = std::sqrt(n);
  }
  std::array<int, 3> order{0, 1, 2};
  std::sort(order.begin(), order.end(),
            [&](int x, int y) { return sigma[static_cast<std::size_t>(x)] > sigma[static_cast<std::size_t>(y)]; });
  Svd3 out{};
  for (int j = 0; j < 3; ++j) {
    const int src = order[static_cast<std::size_t>(j)];
    const double s = sigma[static_cast<std::size_t>(src)];
    out.sigma[static_cast<std::size_t>(j)] = s;
    for (int i = 0; i < 3; ++i) {
      at(out.u, i, j) = s > 0 ? at(w, i, src) / s : 0.0;
      at(out.v, i, j) = at(v, i, src);
    }
  }
  return out;
}

Mat3 project_to_so3(const Mat3& a) {
  for (double x : a)
    if (!std::isfinite(x)) throw NumericError("project_to_so3: non-finite input");
  if (is_rotation(a, 1e-6)) return a;
  const Svd3 d = svd(a);
  if (d.sigma[2] < 1e-9) throw NumericError("project_to_so3: rank-deficient input");
  const Mat3 uvt = multiply(d.u, transpose(d.v));
  const double sign = determinant(uvt) < 0 ? -1.0 : 1.0;
  Mat3 u = d.u;
  for (int i = 0; i < 3; ++i) at(u, i, 2) *= sign;
  return multiply(u, transpose(d.v));
}

double geodesic_angle(const Mat3& r1, const Mat3& r2) {
  double tr = 0;
  for (std::size_t i = 0; i < 9; ++i) tr += r1[i] * r2[i];  // trace(R1^T R2)
  const double c = std::clamp((tr - 1.0) / 2.0, -1.0, 1.0);
  if (c < 0.0) return std::acos(c);
  // For angles below pi/2 use ||R1 - R2||_F = 2 sqrt(2) sin(t/2), which is
  // exact for identical inputs and well conditioned for small angles.
  const double s = std::min(1.0, frobenius_distance(r1, r2) / (2.0 * std::sqrt(2.0)));
  return 2.0 * std::asin(s);
}

Mat3 random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Quaternion q{n(rng), n(rng), n(rng), n(rng)};
  const double norm = std::sqrt(q.w * q.w + q.x * q.x + q.y * q.y + q.z * q.z);
  return rotmat_from_quat({q.w / norm, q.x / norm, q.y / norm, q.z / norm});
}

}  // namespace so3
STMOTION_END_NAMESPACE
