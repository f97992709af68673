#include <gtest/gtest.h>

#include <cmath>

#include "rbl/bench.hpp"
#include "rbl/measurement.hpp"

using namespace rbl;

namespace {

PoseParams sample_pose() {
  PoseParams p;
  p.angles = {0.05, -0.08, 0.12};
  p.t = Vec3(1.2, -0.7, 2.1);
  return p;
}

MotionParams sample_motion() {
  MotionParams m;
  m.omega = {0.03, -0.02, 0.05};
  m.t_dot = Vec3(0.4, 1.1, -0.6);
  return m;
}

double relative_residual(const LinearSystem& sys, const Eigen::VectorXd& x) {
  return (sys.y - sys.stacked() * x).cwiseAbs().maxCoeff() / std::max(1.0, sys.y.cwiseAbs().maxCoeff());
}

}  // namespace

TEST(TrueRange, Basics) {
  EXPECT_EQ(true_range(Vec3(1, 2, 3), Vec3(1, 2, 3)), 0.0);
  EXPECT_NEAR(true_range(Vec3(-10, -10, -10), Vec3(-0.5, -0.5, -0.5)), 16.454482671904334, 1e-12);
  const Vec3 shift(3, -4, 7);
  EXPECT_NEAR(true_range(Vec3(1, 0, 2) + shift, Vec3(-1, 5, 0) + shift), true_range(Vec3(1, 0, 2), Vec3(-1, 5, 0)),
              1e-14);
}

TEST(TrueDoppler, Basics) {
  EXPECT_NEAR(true_doppler(Vec3::Zero(), Vec3(3, 4, 0), Vec3(1, 0, 0)), 0.6, 1e-15);
  EXPECT_NEAR(true_doppler(Vec3::Zero(), Vec3(3, 4, 0), Vec3(-4, 3, 0)), 0.0, 1e-15);
  const Vec3 a(1, 2, 3), s(4, -2, 5);
  EXPECT_NEAR(true_doppler(a, s, 2.5 * (s - a).normalized()), 2.5, 1e-14);
  EXPECT_THROW(true_doppler(a, a, Vec3(1, 0, 0)), DegenerateGeometryError);
}

TEST(Simulate, NoiselessGivesTrueRanges) {
  const Conformation conf = default_conformation();
  const PoseParams pose = sample_pose();
  const MotionParams motion = sample_motion();
  const MeasurementSet m = simulate(conf, pose, motion, NoiseModel{0, 0, 5});
  const Eigen::Matrix3Xd s = place_sensors(conf, pose);
  const Eigen::Matrix3Xd v = sensor_velocities(conf, pose, motion);
  ASSERT_TRUE(m.dopplers.has_value());
  for (Eigen::Index n = 0; n < conf.num_sensors(); ++n)
    for (Eigen::Index k = 0; k < conf.num_anchors(); ++k) {
      EXPECT_EQ(m.ranges(k, n), true_range(conf.anchors.col(k), s.col(n)));
      EXPECT_EQ((*m.dopplers)(k, n), true_doppler(conf.anchors.col(k), s.col(n), v.col(n)));
    }
}

TEST(Simulate, StationaryHasNoDoppler) {
  const MeasurementSet m = simulate(default_conformation(), sample_pose(), std::nullopt, NoiseModel{0.1, 1, 5});
  EXPECT_FALSE(m.dopplers.has_value());
  EXPECT_EQ(m.ranges.rows(), 8);
  EXPECT_EQ(m.ranges.cols(), 8);
}

TEST(Simulate, DeterministicPerSeed) {
  const Conformation conf = default_conformation();
  const NoiseModel nm = NoiseModel::coupled(0.3, 99);
  const MeasurementSet a = simulate(conf, sample_pose(), sample_motion(), nm);
  const MeasurementSet b = simulate(conf, sample_pose(), sample_motion(), nm);
  EXPECT_EQ(a.ranges, b.ranges);
  EXPECT_EQ(*a.dopplers, *b.dopplers);
  const MeasurementSet c = simulate(conf, sample_pose(), sample_motion(), NoiseModel::coupled(0.3, 100));
  EXPECT_NE(a.ranges, c.ranges);
}

TEST(Simulate, RangeNoiseVariance) {
  Conformation conf;
  conf.anchors = default_conformation().anchors;
  conf.sensors = Eigen::Matrix3Xd::Zero(3, 12500);  // 8 x 12500 = 1e5 draws
  const double sigma = 0.2;
  const MeasurementSet m = simulate(conf, PoseParams{}, std::nullopt, NoiseModel{sigma, 0, 42});
  const double d = std::sqrt(300.0);
  const Eigen::ArrayXXd e = m.ranges.array() - d;
  const double mean = e.mean();
  const double var = (e - mean).square().sum() / static_cast<double>(e.size() - 1);
  EXPECT_NEAR(var / (sigma * sigma), 1.0, 0.05);
  EXPECT_LT(std::abs(mean), 5.0 * sigma / std::sqrt(static_cast<double>(e.size())));
}

TEST(Simulate, RejectsNegativeNoise) {
  EXPECT_THROW(simulate(default_conformation(), PoseParams{}, std::nullopt, NoiseModel{-1, 0, 0}), InvalidArgument);
}

TEST(NoiseModel, CouplingConvention) {
  const NoiseModel nm = NoiseModel::coupled(0.01, 3);
  EXPECT_DOUBLE_EQ(nm.sigma_w, 0.01);
  EXPECT_DOUBLE_EQ(nm.sigma_eps, 0.1);
  EXPECT_DOUBLE_EQ(NoiseModel::coupled(0.01, 3, 0.1).sigma_eps, 0.001);
}

TEST(PositionSystem, ForwardConsistent) {
  const Conformation conf = default_conformation();
  const PoseParams pose = sample_pose();
  const MeasurementSet m = simulate(conf, pose, std::nullopt, NoiseModel{0, 0, 1});
  const Eigen::Matrix3Xd s = place_sensors(conf, pose);
  for (Eigen::Index n = 0; n < conf.num_sensors(); ++n) {
    const LinearSystem sys = build_position_system(m, conf, n);
    ASSERT_NO_THROW(sys.validate());
    Eigen::Vector4d x;
    x << s.col(n), s.col(n).squaredNorm();
    EXPECT_LT(relative_residual(sys, x), 1e-9);
    EXPECT_EQ(sys.blocks[0].channel.col(3), Eigen::VectorXd::Ones(8));
    EXPECT_EQ(sys.blocks[0].label, "x");
  }
}

TEST(PositionSystem, AnchorAtOrigin) {
  Conformation conf = default_conformation();
  conf.anchors.col(0).setZero();
  const MeasurementSet m = simulate(conf, sample_pose(), std::nullopt, NoiseModel{0, 0, 1});
  const LinearSystem sys = build_position_system(m, conf, 2);
  EXPECT_EQ(sys.y(0), m.ranges(0, 2) * m.ranges(0, 2));
  EXPECT_EQ(sys.blocks[0].channel.row(0), Eigen::RowVector4d(0, 0, 0, 1));
}

TEST(PositionSystem, CompositeNoisePower) {
  const Conformation conf = default_conformation();
  const MeasurementSet m = simulate(conf, sample_pose(), std::nullopt, NoiseModel{0.5, 0, 1});
  const LinearSystem sys = build_position_system(m, conf, 4);
  for (Eigen::Index k = 0; k < 8; ++k) EXPECT_DOUBLE_EQ(sys.n0(k), 4.0 * std::pow(m.ranges(k, 4), 2) * 0.25);
  const MeasurementSet quiet = simulate(conf, sample_pose(), std::nullopt, NoiseModel{0, 0, 1});
  EXPECT_EQ(build_position_system(quiet, conf, 0).n0, Eigen::VectorXd::Constant(8, kDefaultN0Floor));
}

TEST(PositionSystem, Preconditions) {
  const Conformation conf = default_conformation();
  const MeasurementSet m = simulate(conf, sample_pose(), std::nullopt, NoiseModel{0, 0, 1});
  EXPECT_THROW(build_position_system(m, conf, 8), InvalidArgument);
  EXPECT_THROW(build_position_system(m, conf, -1), InvalidArgument);
  Conformation small = conf;
  small.anchors.conservativeResize(3, 4);
  MeasurementSet m4 = m;
  m4.ranges.conservativeResize(4, 8);
  EXPECT_THROW(build_position_system(m4, small, 0), InvalidArgument);
  EXPECT_THROW(build_velocity_system(m, conf, 0), InvalidArgument);
}

TEST(VelocitySystem, ForwardConsistent) {
  const Conformation conf = default_conformation();
  const PoseParams pose = sample_pose();
  const MotionParams motion = sample_motion();
  const MeasurementSet m = simulate(conf, pose, motion, NoiseModel{0, 0, 1});
  const Eigen::Matrix3Xd s = place_sensors(conf, pose);
  const Eigen::Matrix3Xd v = sensor_velocities(conf, pose, motion);
  for (Eigen::Index n = 0; n < conf.num_sensors(); ++n) {
    const LinearSystem sys = build_velocity_system(m, conf, n);
    Eigen::Vector4d x;
    x << v.col(n), s.col(n).dot(v.col(n));
    EXPECT_LT(relative_residual(sys, x), 1e-9);
    const LinearSystem pos = build_position_system(m, conf, n);
    EXPECT_EQ(sys.blocks[0].channel.leftCols(3), pos.blocks[0].channel.leftCols(3) / 2.0);
    EXPECT_EQ(sys.blocks[0].channel.col(3), pos.blocks[0].channel.col(3));
  }
}

TEST(VelocitySystem, StaticBodyGivesZeroObservations) {
  const MeasurementSet m = simulate(default_conformation(), sample_pose(), MotionParams{}, NoiseModel{0, 0, 1});
  EXPECT_LT(build_velocity_system(m, default_conformation(), 3).y.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(VelocitySystem, CompositeNoisePower) {
  const Conformation conf = default_conformation();
  const MeasurementSet m = simulate(conf, sample_pose(), sample_motion(), NoiseModel{0.1, 0.7, 1});
  const LinearSystem sys = build_velocity_system(m, conf, 1);
  for (Eigen::Index k = 0; k < 8; ++k) {
    const double d = m.ranges(k, 1), nu = (*m.dopplers)(k, 1);
    EXPECT_DOUBLE_EQ(sys.n0(k), nu * nu * 0.01 + d * d * 0.49);
  }
}

TEST(PoseSystem, ForwardConsistentUnderSmallAngleModel) {
  const Conformation conf = default_conformation();
  const PoseParams pose = sample_pose();
  const MeasurementSet m = simulate(conf, pose, std::nullopt, NoiseModel{0, 0, 1}, false);
  const Eigen::Matrix3Xd s = place_sensors(conf, pose, false);
  Eigen::Matrix<double, 6, 1> x;
  x << pose.angles.vector(), pose.t;
  for (Eigen::Index n = 0; n < conf.num_sensors(); ++n) {
    const LinearSystem sys = build_pose_system(m, conf, n, s.col(n).squaredNorm());
    ASSERT_EQ(sys.blocks.size(), 2u);
    EXPECT_EQ(sys.blocks[0].label, "theta");
    EXPECT_EQ(sys.blocks[1].label, "t");
    EXPECT_LT(relative_residual(sys, x), 1e-9);
  }
}

TEST(PoseSystem, ThetaRowMatchesCrossProduct) {
  const Conformation conf = default_conformation();
  const MeasurementSet m = simulate(conf, sample_pose(), std::nullopt, NoiseModel{0, 0, 1});
  const LinearSystem sys = build_pose_system(m, conf, 5, 1.0);
  const Vec3 c = conf.sensors.col(5);
  for (Eigen::Index k = 0; k < 8; ++k) {
    const Vec3 a = conf.anchors.col(k);
    EXPECT_LT((sys.blocks[0].channel.row(k).transpose() - (-2.0 * c.cross(a))).norm(), 1e-12);
  }
}

TEST(PoseSystem, BodyCenterSensorHasNoRotationInformation) {
  Conformation conf = default_conformation();
  conf.sensors.col(0).setZero();
  const MeasurementSet m = simulate(conf, sample_pose(), std::nullopt, NoiseModel{0, 0, 1});
  EXPECT_EQ(build_pose_system(m, conf, 0, 1.0).blocks[0].channel, Eigen::MatrixXd::Zero(8, 3));
}

TEST(PoseSystem, TranslationBlockIndependentOfSensor) {
  const Conformation conf = default_conformation();
  const MeasurementSet m = simulate(conf, sample_pose(), std::nullopt, NoiseModel{0, 0, 1});
  const Eigen::MatrixXd h0 = build_pose_system(m, conf, 0, 1.0).blocks[1].channel;
  for (Eigen::Index n = 1; n < 8; ++n) EXPECT_EQ(build_pose_system(m, conf, n, 2.0).blocks[1].channel, h0);
  EXPECT_THROW(build_pose_system(m, conf, 0, -1.0), InvalidArgument);
}

TEST(MotionSystem, ForwardConsistentWithTrueAuxiliaries) {
  const Conformation conf = default_conformation();
  const PoseParams pose = sample_pose();
  const MotionParams motion = sample_motion();
  for (bool exact : {true, false}) {
    const MeasurementSet m = simulate(conf, pose, motion, NoiseModel{0, 0, 1}, exact);
    const Eigen::Matrix3Xd s = place_sensors(conf, pose, exact);
    const Eigen::Matrix3Xd v = sensor_velocities(conf, pose, motion, exact);
    const Mat3 q = rotation_matrix(pose.angles, exact);
    Eigen::Matrix<double, 6, 1> x;
    x << motion.omega.vector(), motion.t_dot;
    for (Eigen::Index n = 0; n < conf.num_sensors(); ++n) {
      const LinearSystem sys = build_motion_system(m, conf, n, s.col(n).dot(v.col(n)), q);
      EXPECT_EQ(sys.blocks[0].label, "omega");
      EXPECT_EQ(sys.blocks[1].label, "t_dot");
      EXPECT_LT(relative_residual(sys, x), 1e-9);
      EXPECT_EQ(sys.blocks[1].channel, build_velocity_system(m, conf, n).blocks[0].channel.leftCols(3));
    }
  }
}

TEST(MotionSystem, ZeroMotionGivesZeroObservations) {
  const Conformation conf = default_conformation();
  const PoseParams pose = sample_pose();
  const MeasurementSet m = simulate(conf, pose, MotionParams{}, NoiseModel{0, 0, 1});
  const LinearSystem sys = build_motion_system(m, conf, 2, 0.0, rotation_matrix_exact(pose.angles));
  EXPECT_LT(sys.y.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(LinearSystem, StackAndValidate) {
  const Conformation conf = default_conformation();
  const MeasurementSet m = simulate(conf, sample_pose(), std::nullopt, NoiseModel{0.1, 0, 1});
  std::vector<LinearSystem> parts;
  for (Eigen::Index n = 0; n < 3; ++n) parts.push_back(build_pose_system(m, conf, n, 4.0));
  const LinearSystem st = stack_rows(parts);
  EXPECT_EQ(st.rows(), 24);
  EXPECT_EQ(st.unknowns(), 6);
  EXPECT_EQ(st.offset(1), 3);
  EXPECT_EQ(st.y.segment(8, 8), parts[1].y);
  EXPECT_EQ(st.blocks[0].channel.middleRows(16, 8), parts[2].blocks[0].channel);

  LinearSystem bad = parts[0];
  bad.n0(3) = 0.0;
  EXPECT_THROW(bad.validate(), InvalidArgument);
  bad = parts[0];
  bad.blocks[1].channel.conservativeResize(7, 3);
  EXPECT_THROW(bad.validate(), InvalidArgument);
  EXPECT_THROW(stack_rows({}), InvalidArgument);
  EXPECT_THROW(stack_rows({parts[0], build_position_system(m, conf, 0)}), InvalidArgument);
}
