// Rigid-body kinematics: rotation matrices, skew operators and the
// vectorized small-angle forms used to build linear observation systems.
//
// Angles are radians everywhere. Vectorization is column-major, matching
// Eigen's default storage, so vec(X) is simply the flattened matrix.

#pragma once

#include <Eigen/Core>
#include <Eigen/LU>
#include <cmath>
#include <utility>

#include "rbl/errors.hpp"

namespace rbl {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec9 = Eigen::Matrix<double, 9, 1>;
using Mat93 = Eigen::Matrix<double, 9, 3>;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Roll, pitch and yaw angles about the x, y and z axes (radians).
struct RotationAngles {
  double theta_x = 0.0;
  double theta_y = 0.0;
  double theta_z = 0.0;

  Vec3 vector() const { return {theta_x, theta_y, theta_z}; }
  static RotationAngles from_vector(const Vec3& v) { return {v.x(), v.y(), v.z()}; }
};

/// Angular velocity (rad/s).
struct AngularVelocity {
  double omega_1 = 0.0;
  double omega_2 = 0.0;
  double omega_3 = 0.0;

  Vec3 vector() const { return {omega_1, omega_2, omega_3}; }
  static AngularVelocity from_vector(const Vec3& v) { return {v.x(), v.y(), v.z()}; }
};

struct PoseParams {
  RotationAngles angles;
  Vec3 t = Vec3::Zero();
};

struct MotionParams {
  AngularVelocity omega;
  Vec3 t_dot = Vec3::Zero();
};

/// Q = Qz(theta_z) * Qy(theta_y) * Qx(theta_x).
inline Mat3 rotation_matrix_exact(const RotationAngles& a) {
  const double cx = std::cos(a.theta_x), sx = std::sin(a.theta_x);
  const double cy = std::cos(a.theta_y), sy = std::sin(a.theta_y);
  const double cz = std::cos(a.theta_z), sz = std::sin(a.theta_z);
  Mat3 qx, qy, qz;
  // clang-format off
  qx << 1,  0,   0,
        0,  cx, -sx,
        0,  sx,  cx;
  qy << cy, 0,  sy,
        0,  1,  0,
       -sy, 0,  cy;
  qz << cz, -sz, 0,
        sz,  cz, 0,
        0,   0,  1;
  // clang-format on
  return qz * qy * qx;
}

/// Skew-symmetric cross-product matrix: skew(w) * v == w.cross(v).
inline Mat3 skew(const Vec3& w) {
  Mat3 s;
  // clang-format off
  s <<  0.0,   -w.z(),  w.y(),
        w.z(),  0.0,   -w.x(),
       -w.y(),  w.x(),  0.0;
  // clang-format on
  return s;
}

inline Mat3 skew(const AngularVelocity& w) { return skew(w.vector()); }

/// First-order expansion of rotation_matrix_exact about zero: I + skew(theta).
/// Diagonal is exactly one; the off-diagonal part is the angle pattern that
/// vec_rotation_basis() reproduces column-major.
inline Mat3 rotation_matrix_small(const RotationAngles& a) {
  return Mat3::Identity() + skew(a.vector());
}

inline Vec9 vec(const Mat3& m) {
  Vec9 v;
  for (int c = 0; c < 3; ++c)
    for (int r = 0; r < 3; ++r) v(3 * c + r) = m(r, c);
  return v;
}

inline Mat3 unvec(const Vec9& v) {
  Mat3 m;
  for (int c = 0; c < 3; ++c)
    for (int r = 0; r < 3; ++r) m(r, c) = v(3 * c + r);
  return m;
}

/// Returns (gamma, L) with vec(rotation_matrix_small(theta)) == gamma + L * theta.
inline std::pair<Vec9, Mat93> vec_rotation_basis() {
  Vec9 gamma;
  gamma << 1, 0, 0, 0, 1, 0, 0, 0, 1;
  Mat93 l;
  // clang-format off
  l << 0,  0,  0,
       0,  0,  1,
       0, -1,  0,
       0,  0, -1,
       0,  0,  0,
       1,  0,  0,
       0,  1,  0,
      -1,  0,  0,
       0,  0,  0;
  // clang-format on
  return {gamma, l};
}

/// Phi with vec(skew(omega)) == Phi * omega.
inline Mat93 vec_skew_basis() {
  Mat93 phi;
  // clang-format off
  phi << 0,  0,  0,
         0,  0,  1,
         0, -1,  0,
         0,  0, -1,
         0,  0,  0,
         1,  0,  0,
         0,  1,  0,
        -1,  0,  0,
         0,  0,  0;
  // clang-format on
  return phi;
}

/// Row vector kron(x^T, y^T) for 3-vectors, so that kron_row(x, y) * vec(X) == y^T X x.
inline Eigen::Matrix<double, 1, 9> kron_row(const Vec3& x, const Vec3& y) {
  Eigen::Matrix<double, 1, 9> r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r(3 * i + j) = x(i) * y(j);
  return r;
}

inline Mat3 rotation_matrix(const RotationAngles& a, bool exact) {
  return exact ? rotation_matrix_exact(a) : rotation_matrix_small(a);
}

/// Sensor layout in the body frame plus the fixed anchors, both in meters.
struct Conformation {
  Eigen::Matrix3Xd sensors;  // C, 3 x N
  Eigen::Matrix3Xd anchors;  // A, 3 x M

  Eigen::Index num_sensors() const { return sensors.cols(); }
  Eigen::Index num_anchors() const { return anchors.cols(); }

  /// Throws unless N >= 1, M >= min_anchors and the anchors are not coplanar.
  void validate(Eigen::Index min_anchors = 5) const {
    if (num_sensors() < 1) throw InvalidArgument("conformation needs at least one sensor");
    if (num_anchors() < min_anchors)
      throw InvalidArgument("conformation needs at least " + std::to_string(min_anchors) +
                            " anchors, got " + std::to_string(num_anchors()));
    if (!anchors.allFinite() || !sensors.allFinite())
      throw InvalidArgument("conformation has non-finite coordinates");
    // Rows [a_m^T, 1] must span R^4.
    Eigen::MatrixXd g(num_anchors(), 4);
    g.leftCols(3) = anchors.transpose();
    g.col(3).setOnes();
    Eigen::FullPivLU<Eigen::MatrixXd> lu(g);
    lu.setThreshold(1e-10);
    if (lu.rank() < 4) throw DegenerateGeometryError("anchors are coplanar");
  }
};

/// s_n = Q c_n + t.
inline Vec3 transform_sensor(const PoseParams& pose, const Vec3& c_n, bool exact) {
  return rotation_matrix(pose.angles, exact) * c_n + pose.t;
}

/// s_dot_n = skew(omega) Q c_n + t_dot, with the exact rotation.
inline Vec3 sensor_velocity(const PoseParams& pose, const MotionParams& motion,
                            const Vec3& c_n, bool exact = true) {
  return skew(motion.omega) * rotation_matrix(pose.angles, exact) * c_n + motion.t_dot;
}

constexpr double kPi = 3.14159265358979323846;
constexpr double deg_to_rad(double deg) { return deg * kPi / 180.0; }
/// Variance conversion deg^2 -> rad^2.
constexpr double deg2_to_rad2(double var_deg2) { return var_deg2 * (kPi / 180.0) * (kPi / 180.0); }

}  // namespace rbl
