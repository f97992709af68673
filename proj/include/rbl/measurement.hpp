// Synthetic range/Doppler measurements and the four linearized observation
// systems built from them:
//
//   position:  y = d~^2 - |a|^2            = [-2a^T, 1] [s; |s|^2]
//   velocity:  y = d~ nu~                  = [-a^T, 1]  [s_dot; s^T s_dot]
//   pose:      z = H_theta theta + H_t t   (small-angle rotation)
//   motion:    u = B_omega omega + B_tdot t_dot
//
// Each row carries its own composite noise power n0 (first-order terms only).

#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>

#include "rbl/errors.hpp"
#include "rbl/geometry.hpp"
#include "rbl/linear_system.hpp"

namespace rbl {

struct NoiseModel {
  double sigma_w = 0.0;    // range noise std (m)
  double sigma_eps = 0.0;  // Doppler noise std (m/s)
  std::uint64_t seed = 0;

  /// sigma_w = sigma, sigma_eps = coupling * sigma.
  static NoiseModel coupled(double sigma, std::uint64_t seed, double coupling = 10.0) {
    return {sigma, coupling * sigma, seed};
  }
};

struct MeasurementSet {
  Eigen::MatrixXd ranges;                  // M x N
  std::optional<Eigen::MatrixXd> dopplers; // M x N, moving scenario only
  NoiseModel noise;
};

/// Lower bound applied to every n0 entry, so noiseless systems stay well posed.
inline constexpr double kDefaultN0Floor = 1e-12;

inline double true_range(const Vec3& a_m, const Vec3& s_n) { return (a_m - s_n).norm(); }

inline double true_doppler(const Vec3& a_m, const Vec3& s_n, const Vec3& s_dot_n) {
  const double d = true_range(a_m, s_n);
  if (d == 0.0) throw DegenerateGeometryError("sensor coincides with anchor");
  return (s_n - a_m).dot(s_dot_n) / d;
}

/// Sensor positions (3 x N) of the body under `pose`.
inline Eigen::Matrix3Xd place_sensors(const Conformation& conf, const PoseParams& pose, bool exact = true) {
  const Mat3 q = rotation_matrix(pose.angles, exact);
  return (q * conf.sensors).colwise() + pose.t;
}

inline Eigen::Matrix3Xd sensor_velocities(const Conformation& conf, const PoseParams& pose,
                                          const MotionParams& motion, bool exact = true) {
  const Mat3 w = skew(motion.omega) * rotation_matrix(pose.angles, exact);
  return (w * conf.sensors).colwise() + motion.t_dot;
}

/// Draws d~ = d + w and (when motion is given) nu~ = nu + eps.
/// `exact_rotation = false` places the sensors with the small-angle matrix.
inline MeasurementSet simulate(const Conformation& conf, const PoseParams& pose,
                               const std::optional<MotionParams>& motion, const NoiseModel& noise,
                               bool exact_rotation = true) {
  if (noise.sigma_w < 0.0 || noise.sigma_eps < 0.0) throw InvalidArgument("noise std must be nonnegative");
  const Eigen::Index m_count = conf.num_anchors();
  const Eigen::Index n_count = conf.num_sensors();
  const Eigen::Matrix3Xd s = place_sensors(conf, pose, exact_rotation);

  std::mt19937_64 rng(noise.seed);
  std::normal_distribution<double> unit(0.0, 1.0);

  MeasurementSet out;
  out.noise = noise;
  out.ranges.resize(m_count, n_count);
  for (Eigen::Index n = 0; n < n_count; ++n)
    for (Eigen::Index m = 0; m < m_count; ++m)
      out.ranges(m, n) = true_range(conf.anchors.col(m), s.col(n)) + noise.sigma_w * unit(rng);

  if (motion) {
    const Eigen::Matrix3Xd v = sensor_velocities(conf, pose, *motion, exact_rotation);
    Eigen::MatrixXd dop(m_count, n_count);
    for (Eigen::Index n = 0; n < n_count; ++n)
      for (Eigen::Index m = 0; m < m_count; ++m)
        dop(m, n) = true_doppler(conf.anchors.col(m), s.col(n), v.col(n)) + noise.sigma_eps * unit(rng);
    out.dopplers = std::move(dop);
  }
  return out;
}

namespace detail {

inline void check_sensor(const MeasurementSet& meas, const Conformation& conf, Eigen::Index n) {
  if (n < 0 || n >= conf.num_sensors()) throw InvalidArgument("sensor index out of range");
  if (meas.ranges.rows() != conf.num_anchors() || meas.ranges.cols() != conf.num_sensors())
    throw InvalidArgument("measurement dimensions do not match conformation");
}

inline const Eigen::MatrixXd& dopplers_of(const MeasurementSet& meas) {
  if (!meas.dopplers) throw InvalidArgument("Doppler measurements are required");
  return *meas.dopplers;
}

inline double range_n0(double d, double sigma_w, double floor) {
  return std::max(4.0 * d * d * sigma_w * sigma_w, floor);
}

inline double doppler_n0(double d, double nu, const NoiseModel& nm, double floor) {
  return std::max(nu * nu * nm.sigma_w * nm.sigma_w + d * d * nm.sigma_eps * nm.sigma_eps, floor);
}

}  // namespace detail

/// Unknowns x_n = [s_n; |s_n|^2].
inline LinearSystem build_position_system(const MeasurementSet& meas, const Conformation& conf,
                                          Eigen::Index n, double n0_floor = kDefaultN0Floor) {
  detail::check_sensor(meas, conf, n);
  if (conf.num_anchors() < 5) throw InvalidArgument("position system needs at least 5 anchors");
  const Eigen::Index m_count = conf.num_anchors();
  LinearSystem sys;
  sys.y.resize(m_count);
  sys.n0.resize(m_count);
  Eigen::MatrixXd g(m_count, 4);
  for (Eigen::Index m = 0; m < m_count; ++m) {
    const Vec3 a = conf.anchors.col(m);
    const double d = meas.ranges(m, n);
    sys.y(m) = d * d - a.squaredNorm();
    g.row(m) << -2.0 * a.transpose(), 1.0;
    sys.n0(m) = detail::range_n0(d, meas.noise.sigma_w, n0_floor);
  }
  sys.blocks.push_back({"x", std::move(g)});
  return sys;
}

/// Unknowns x_dot_n = [s_dot_n; s_n^T s_dot_n].
inline LinearSystem build_velocity_system(const MeasurementSet& meas, const Conformation& conf,
                                          Eigen::Index n, double n0_floor = kDefaultN0Floor) {
  detail::check_sensor(meas, conf, n);
  const auto& dop = detail::dopplers_of(meas);
  const Eigen::Index m_count = conf.num_anchors();
  LinearSystem sys;
  sys.y.resize(m_count);
  sys.n0.resize(m_count);
  Eigen::MatrixXd g(m_count, 4);
  for (Eigen::Index m = 0; m < m_count; ++m) {
    const Vec3 a = conf.anchors.col(m);
    const double d = meas.ranges(m, n);
    const double nu = dop(m, n);
    sys.y(m) = d * nu;
    g.row(m) << -a.transpose(), 1.0;
    sys.n0(m) = detail::doppler_n0(d, nu, meas.noise, n0_floor);
  }
  sys.blocks.push_back({"x_dot", std::move(g)});
  return sys;
}

/// Blocks "theta" and "t". `s_norm_sq_est` stands in for |s_n|^2.
inline LinearSystem build_pose_system(const MeasurementSet& meas, const Conformation& conf, Eigen::Index n,
                                      double s_norm_sq_est, double n0_floor = kDefaultN0Floor) {
  detail::check_sensor(meas, conf, n);
  if (!(s_norm_sq_est >= 0.0)) throw InvalidArgument("squared-norm estimate must be nonnegative");
  const auto [gamma, l] = vec_rotation_basis();
  const Vec3 c = conf.sensors.col(n);
  const Eigen::Index m_count = conf.num_anchors();
  LinearSystem sys;
  sys.y.resize(m_count);
  sys.n0.resize(m_count);
  Eigen::MatrixXd h_theta(m_count, 3), h_t(m_count, 3);
  for (Eigen::Index m = 0; m < m_count; ++m) {
    const Vec3 a = conf.anchors.col(m);
    const auto kr = kron_row(c, a);
    const double d = meas.ranges(m, n);
    sys.y(m) = d * d - a.squaredNorm() - s_norm_sq_est + 2.0 * (kr * gamma).value();
    h_theta.row(m) = -2.0 * kr * l;
    h_t.row(m) = -2.0 * a.transpose();
    sys.n0(m) = detail::range_n0(d, meas.noise.sigma_w, n0_floor);
  }
  sys.blocks.push_back({"theta", std::move(h_theta)});
  sys.blocks.push_back({"t", std::move(h_t)});
  return sys;
}

/// Blocks "omega" and "t_dot". `q_est` is the rotation used in B_omega.
inline LinearSystem build_motion_system(const MeasurementSet& meas, const Conformation& conf, Eigen::Index n,
                                        double s_dot_inner_est, const Mat3& q_est,
                                        double n0_floor = kDefaultN0Floor) {
  detail::check_sensor(meas, conf, n);
  const auto& dop = detail::dopplers_of(meas);
  const Mat93 phi = vec_skew_basis();
  const Vec3 qc = q_est * conf.sensors.col(n);
  const Eigen::Index m_count = conf.num_anchors();
  LinearSystem sys;
  sys.y.resize(m_count);
  sys.n0.resize(m_count);
  Eigen::MatrixXd b_omega(m_count, 3), b_tdot(m_count, 3);
  for (Eigen::Index m = 0; m < m_count; ++m) {
    const Vec3 a = conf.anchors.col(m);
    const double d = meas.ranges(m, n);
    const double nu = dop(m, n);
    sys.y(m) = d * nu - s_dot_inner_est;
    b_omega.row(m) = -kron_row(qc, a) * phi;
    b_tdot.row(m) = -a.transpose();
    sys.n0(m) = detail::doppler_n0(d, nu, meas.noise, n0_floor);
  }
  sys.blocks.push_back({"omega", std::move(b_omega)});
  sys.blocks.push_back({"t_dot", std::move(b_tdot)});
  return sys;
}

}  // namespace rbl
