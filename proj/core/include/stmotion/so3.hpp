#pragma once

#include <array>
#include <random>

#include "stmotion/errors.hpp"
#include "stmotion/precision.hpp"

STMOTION_BEGIN_NAMESPACE
namespace so3 {

/// Row-major 3x3 matrix. A valid rotation satisfies R^T R = I and det R = +1.
using Mat3 = std::array<double, 9>;

struct Quaternion {
  double w = 1, x = 0, y = 0, z = 0;
};

/// Rotation axis scaled by the rotation angle (radians).
struct AngleAxis {
  double x = 0, y = 0, z = 0;
};

/// Intrinsic X-Y-Z angles: R = Rx(x) * Ry(y) * Rz(z).
struct EulerAngles {
  double x = 0, y = 0, z = 0;
};

inline constexpr double kPi = 3.14159265358979323846;

Mat3 identity();
Mat3 multiply(const Mat3& a, const Mat3& b);
Mat3 transpose(const Mat3& a);
double determinant(const Mat3& a);
double frobenius_distance(const Mat3& a, const Mat3& b);
Mat3 rot_x(double angle);
Mat3 rot_y(double angle);
Mat3 rot_z(double angle);

/// Rotation about a unit axis.
Mat3 rot_axis(const std::array<double, 3>& axis, double angle);

/// Max |R^T R - I| entry below tol and |det R - 1| below tol.
bool is_rotation(const Mat3& r, double tol = 1e-5);

/// Unit quaternion to matrix. Quaternions whose norm deviates from 1 by less
/// than 1e-3 are normalised (with a one-time stderr warning); larger
/// deviations throw ParameterError.
Mat3 rotmat_from_quat(const Quaternion& q);
/// Matrix to unit quaternion, canonicalised to w >= 0.
Quaternion quat_from_rotmat(const Mat3& r);
Quaternion canonical(const Quaternion& q);

Mat3 rotmat_from_angleaxis(const AngleAxis& a);
/// Angle in [0, pi]. At exactly pi the axis sign is chosen so that its first
/// nonzero component is positive.
AngleAxis angleaxis_from_rotmat(const Mat3& r);

EulerAngles euler_from_rotmat(const Mat3& r);
Mat3 rotmat_from_euler(const EulerAngles& e);

/// Wraps an angle into (-pi, pi].
double wrap_angle(double a);

struct Svd3 {
  Mat3 u;
  std::array<double, 3> sigma;  // descending
  Mat3 v;
};

/// One-sided Jacobi SVD, A = U diag(sigma) V^T.
Svd3 svd(const Mat3& a);

/// Nearest rotation in the Frobenius sense: U diag(1, 1, det(U V^T)) V^T.
/// Inputs that are already rotations to within 1e-6 are returned unchanged.
/// Throws NumericError when the smallest singular value is below 1e-9.
Mat3 project_to_so3(const Mat3& a);

/// Rotation angle of R1^T R2 in [0, pi].
double geodesic_angle(const Mat3& r1, const Mat3& r2);

/// Haar-uniform random rotation.
Mat3 random_rotation(std::mt19937_64& rng);

}  // namespace so3
STMOTION_END_NAMESPACE
