// End-to-end estimators. Stationary: per-sensor positions, then rotation and
// translation. Moving: additionally per-sensor velocities, then angular and
// translational velocity.

#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <optional>
#include <vector>

#include "rbl/errors.hpp"
#include "rbl/gabp.hpp"
#include "rbl/geometry.hpp"
#include "rbl/linear_system.hpp"
#include "rbl/measurement.hpp"

namespace rbl {

/// Where the pose stage takes |s_n|^2 from.
enum class NormSource { fourth_entry, coordinates };

/// Rotation used inside the angular-velocity channel matrix.
enum class RotationSource { estimated, identity, truth };

/// How the two-block stages combine sensors.
enum class Stacking { stacked, per_sensor_average };

struct PipelineConfig {
  double rho = 0.5;
  int j_max = 30;
  double tol = 1e-8;
  double n0_floor = kDefaultN0Floor;
  Readout readout = Readout::printed;

  // Prior variances. Angular quantities are given in degree units here and
  // converted to radians when the engine configs are built.
  double prior_position = 1e4;     // m^2 (coordinates) and m^4 (squared norm)
  double prior_velocity = 1e4;     // (m/s)^2 and (m^2/s)^2
  double prior_theta_deg2 = 10.0;  // deg^2
  double prior_t = 5.0;            // m^2
  double prior_omega_deg2 = 10.0;  // (deg/s)^2
  double prior_t_dot = 5.0;        // (m/s)^2

  NormSource norm_source = NormSource::fourth_entry;
  RotationSource rotation_source = RotationSource::estimated;
  Stacking stacking = Stacking::stacked;
  /// Seed every engine with the ground truth (matched-filter bound).
  bool mfb = false;
  double mfb_psi_floor = 1e-12;

  GabpConfig engine(std::vector<BlockPrior> priors) const {
    GabpConfig c;
    c.rho = rho;
    c.j_max = j_max;
    c.tol = tol;
    c.readout = readout;
    c.priors = std::move(priors);
    return c;
  }
  GabpConfig position_engine() const { return engine({{0.0, prior_position}}); }
  GabpConfig velocity_engine() const { return engine({{0.0, prior_velocity}}); }
  GabpConfig pose_engine() const { return engine({{0.0, deg2_to_rad2(prior_theta_deg2)}, {0.0, prior_t}}); }
  GabpConfig motion_engine() const {
    return engine({{0.0, deg2_to_rad2(prior_omega_deg2)}, {0.0, prior_t_dot}});
  }
};

/// Ground truth, needed only for matched-filter runs and the truth-rotation ablation.
struct GroundTruth {
  PoseParams pose;
  std::optional<MotionParams> motion;
  bool exact_rotation = true;  // rotation model the sensors were placed with
};

struct PositionStage {
  Eigen::Matrix3Xd positions;  // 3 x N
  Eigen::VectorXd norms;       // estimated |s_n|^2
  std::vector<GabpResult> runs;
};

struct VelocityStage {
  Eigen::Matrix3Xd velocities;  // 3 x N
  Eigen::VectorXd inner;        // estimated s_n^T s_dot_n
  std::vector<GabpResult> runs;
};

/// Two-block stage output: first block (rotation-type) refined, second block
/// (translation-type) from the coarse run.
struct ParameterStage {
  Vec3 rotation = Vec3::Zero();         // theta or omega
  Vec3 rotation_coarse = Vec3::Zero();  // before interference-cancellation refinement
  Vec3 translation = Vec3::Zero();      // t or t_dot
  int coarse_iterations = 0;
  int refine_iterations = 0;
  std::vector<GabpResult> coarse;  // one entry when stacked, N when averaged
  std::vector<GabpResult> refined;
};

struct StationaryEstimate {
  PositionStage position;
  ParameterStage pose;
};

struct MovingEstimate {
  PositionStage position;
  ParameterStage pose;
  VelocityStage velocity;
  ParameterStage motion;
};

namespace detail {

inline Eigen::Vector4d position_unknowns(const Vec3& s) { return {s.x(), s.y(), s.z(), s.squaredNorm()}; }

inline Eigen::Vector4d velocity_unknowns(const Vec3& s, const Vec3& v) { return {v.x(), v.y(), v.z(), s.dot(v)}; }

inline Eigen::Matrix<double, 6, 1> stack6(const Vec3& a, const Vec3& b) {
  Eigen::Matrix<double, 6, 1> v;
  v << a, b;
  return v;
}

inline const GroundTruth& need_truth(const std::optional<GroundTruth>& truth, const char* why) {
  if (!truth) throw InvalidArgument(std::string("ground truth required for ") + why);
  return *truth;
}

template <typename Fn>
GabpResult run_for_sensor(Eigen::Index n, Fn&& fn) {
  try {
    return fn();
  } catch (DivergenceError& e) {
    e.sensor = n;
    throw;
  }
}

/// Runs coarse two-block GaBP plus refinement on either the stacked system or
/// every per-sensor system (then averaging).
inline ParameterStage two_block_stage(const std::vector<LinearSystem>& per_sensor, const GabpConfig& base,
                                      const std::optional<Eigen::VectorXd>& truth, const PipelineConfig& cfg) {
  GabpConfig engine = base;
  if (cfg.mfb && truth) engine = mfb_mode(engine, *truth, cfg.mfb_psi_floor);

  ParameterStage out;
  auto run_one = [&](const LinearSystem& sys) {
    GabpResult coarse = bivariate_gabp(sys, engine);
    GabpResult refined = ic_refine(sys, coarse, engine);
    out.rotation_coarse += coarse.block(sys, 0);
    out.translation += coarse.block(sys, 1);
    out.rotation += refined.means;
    out.coarse_iterations += coarse.iterations;
    out.refine_iterations += refined.iterations;
    out.coarse.push_back(std::move(coarse));
    out.refined.push_back(std::move(refined));
  };

  if (cfg.stacking == Stacking::stacked) {
    run_one(stack_rows(per_sensor));
  } else {
    for (const auto& sys : per_sensor) run_one(sys);
    const double inv = 1.0 / static_cast<double>(per_sensor.size());
    out.rotation *= inv;
    out.rotation_coarse *= inv;
    out.translation *= inv;
    out.coarse_iterations = static_cast<int>(out.coarse_iterations * inv);
    out.refine_iterations = static_cast<int>(out.refine_iterations * inv);
  }
  return out;
}

}  // namespace detail

/// Single-block GaBP on every sensor's range system.
inline PositionStage estimate_positions(const MeasurementSet& meas, const Conformation& conf,
                                        const PipelineConfig& cfg,
                                        const std::optional<GroundTruth>& truth = std::nullopt) {
  conf.validate();
  const Eigen::Index n_count = conf.num_sensors();
  std::optional<Eigen::Matrix3Xd> true_s;
  if (cfg.mfb) {
    const auto& gt = detail::need_truth(truth, "matched-filter runs");
    true_s = place_sensors(conf, gt.pose, gt.exact_rotation);
  }
  PositionStage out;
  out.positions.resize(3, n_count);
  out.norms.resize(n_count);
  for (Eigen::Index n = 0; n < n_count; ++n) {
    const LinearSystem sys = build_position_system(meas, conf, n, cfg.n0_floor);
    GabpConfig engine = cfg.position_engine();
    if (true_s) engine = mfb_mode(engine, detail::position_unknowns(true_s->col(n)), cfg.mfb_psi_floor);
    GabpResult r = detail::run_for_sensor(n, [&] { return linear_gabp(sys, engine); });
    out.positions.col(n) = r.means.head<3>();
    out.norms(n) = r.means(3);
    out.runs.push_back(std::move(r));
  }
  return out;
}

/// Single-block GaBP on every sensor's Doppler system.
inline VelocityStage estimate_velocities(const MeasurementSet& meas, const Conformation& conf,
                                         const PipelineConfig& cfg,
                                         const std::optional<GroundTruth>& truth = std::nullopt) {
  conf.validate();
  const Eigen::Index n_count = conf.num_sensors();
  std::optional<Eigen::Matrix3Xd> true_s, true_v;
  if (cfg.mfb) {
    const auto& gt = detail::need_truth(truth, "matched-filter runs");
    if (!gt.motion) throw InvalidArgument("matched-filter velocity run needs motion truth");
    true_s = place_sensors(conf, gt.pose, gt.exact_rotation);
    true_v = sensor_velocities(conf, gt.pose, *gt.motion, gt.exact_rotation);
  }
  VelocityStage out;
  out.velocities.resize(3, n_count);
  out.inner.resize(n_count);
  for (Eigen::Index n = 0; n < n_count; ++n) {
    const LinearSystem sys = build_velocity_system(meas, conf, n, cfg.n0_floor);
    GabpConfig engine = cfg.velocity_engine();
    if (true_s)
      engine = mfb_mode(engine, detail::velocity_unknowns(true_s->col(n), true_v->col(n)), cfg.mfb_psi_floor);
    GabpResult r = detail::run_for_sensor(n, [&] { return linear_gabp(sys, engine); });
    out.velocities.col(n) = r.means.head<3>();
    out.inner(n) = r.means(3);
    out.runs.push_back(std::move(r));
  }
  return out;
}

/// Rotation angles and translation from range data plus the per-sensor
/// squared-norm estimates. Only `positions.norms` is read unless
/// cfg.norm_source asks for the coordinate estimates.
inline ParameterStage estimate_pose(const MeasurementSet& meas, const Conformation& conf,
                                    const PositionStage& positions, const PipelineConfig& cfg,
                                    const std::optional<GroundTruth>& truth = std::nullopt) {
  conf.validate();
  const Eigen::Index n_count = conf.num_sensors();
  if (positions.norms.size() != n_count) throw InvalidArgument("position estimates do not match conformation");
  std::vector<LinearSystem> parts;
  parts.reserve(static_cast<std::size_t>(n_count));
  for (Eigen::Index n = 0; n < n_count; ++n) {
    const double norm_sq = cfg.norm_source == NormSource::fourth_entry ? positions.norms(n)
                                                                       : positions.positions.col(n).squaredNorm();
    parts.push_back(build_pose_system(meas, conf, n, std::max(0.0, norm_sq), cfg.n0_floor));
  }
  std::optional<Eigen::VectorXd> t6;
  if (cfg.mfb) {
    const auto& gt = detail::need_truth(truth, "matched-filter runs");
    t6 = detail::stack6(gt.pose.angles.vector(), gt.pose.t);
  }
  return detail::two_block_stage(parts, cfg.pose_engine(), t6, cfg);
}

/// Angular and translational velocity from Doppler data, the per-sensor inner
/// product estimates and the estimated pose.
inline ParameterStage estimate_motion(const MeasurementSet& meas, const Conformation& conf,
                                      const PositionStage& positions, const VelocityStage& velocities,
                                      const ParameterStage& pose, const PipelineConfig& cfg,
                                      const std::optional<GroundTruth>& truth = std::nullopt) {
  conf.validate();
  const Eigen::Index n_count = conf.num_sensors();
  if (velocities.inner.size() != n_count) throw InvalidArgument("velocity estimates do not match conformation");

  Mat3 q_est = Mat3::Identity();
  switch (cfg.rotation_source) {
    case RotationSource::estimated:
      q_est = rotation_matrix_small(RotationAngles::from_vector(pose.rotation));
      break;
    case RotationSource::identity:
      break;
    case RotationSource::truth: {
      const auto& gt = detail::need_truth(truth, "the truth-rotation ablation");
      q_est = rotation_matrix(gt.pose.angles, gt.exact_rotation);
      break;
    }
  }

  std::vector<LinearSystem> parts;
  parts.reserve(static_cast<std::size_t>(n_count));
  for (Eigen::Index n = 0; n < n_count; ++n) {
    const double inner = cfg.norm_source == NormSource::fourth_entry
                             ? velocities.inner(n)
                             : positions.positions.col(n).dot(velocities.velocities.col(n));
    parts.push_back(build_motion_system(meas, conf, n, inner, q_est, cfg.n0_floor));
  }
  std::optional<Eigen::VectorXd> t6;
  if (cfg.mfb) {
    const auto& gt = detail::need_truth(truth, "matched-filter runs");
    if (!gt.motion) throw InvalidArgument("matched-filter motion run needs motion truth");
    t6 = detail::stack6(gt.motion->omega.vector(), gt.motion->t_dot);
  }
  return detail::two_block_stage(parts, cfg.motion_engine(), t6, cfg);
}

inline StationaryEstimate estimate_stationary(const MeasurementSet& meas, const Conformation& conf,
                                              const PipelineConfig& cfg,
                                              const std::optional<GroundTruth>& truth = std::nullopt) {
  StationaryEstimate out;
  out.position = estimate_positions(meas, conf, cfg, truth);
  out.pose = estimate_pose(meas, conf, out.position, cfg, truth);
  return out;
}

inline MovingEstimate estimate_moving(const MeasurementSet& meas, const Conformation& conf,
                                      const PipelineConfig& cfg,
                                      const std::optional<GroundTruth>& truth = std::nullopt) {
  MovingEstimate out;
  out.position = estimate_positions(meas, conf, cfg, truth);
  out.velocity = estimate_velocities(meas, conf, cfg, truth);
  out.pose = estimate_pose(meas, conf, out.position, cfg, truth);
  out.motion = estimate_motion(meas, conf, out.position, out.velocity, out.pose, cfg, truth);
  return out;
}

/// simulate -> positions -> pose.
inline StationaryEstimate run_stationary(const PoseParams& pose, const Conformation& conf, const NoiseModel& noise,
                                         const PipelineConfig& cfg, bool exact_rotation = true) {
  const MeasurementSet meas = simulate(conf, pose, std::nullopt, noise, exact_rotation);
  return estimate_stationary(meas, conf, cfg, GroundTruth{pose, std::nullopt, exact_rotation});
}

/// simulate -> positions -> velocities -> pose -> motion.
inline MovingEstimate run_moving(const PoseParams& pose, const MotionParams& motion, const Conformation& conf,
                                 const NoiseModel& noise, const PipelineConfig& cfg, bool exact_rotation = true) {
  const MeasurementSet meas = simulate(conf, pose, motion, noise, exact_rotation);
  return estimate_moving(meas, conf, cfg, GroundTruth{pose, motion, exact_rotation});
}

}  // namespace rbl
