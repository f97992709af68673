#include <gtest/gtest.h>

#include <limits>
#include <random>

#include "rbl/baseline.hpp"
#include "rbl/bench.hpp"
#include "rbl/measurement.hpp"

using namespace rbl;

namespace {

LinearSystem random_system(std::mt19937_64& rng, Eigen::Index m, Eigen::Index k) {
  std::normal_distribution<double> n(0.0, 1.0);
  LinearSystem sys;
  Eigen::MatrixXd h(m, k);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < k; ++j) h(i, j) = n(rng);
  sys.y.resize(m);
  for (Eigen::Index i = 0; i < m; ++i) sys.y(i) = n(rng);
  sys.n0.resize(m);
  for (Eigen::Index i = 0; i < m; ++i) sys.n0(i) = 0.1 + std::abs(n(rng));
  sys.blocks.push_back({"x", h});
  return sys;
}

}  // namespace

TEST(LsSolve, NoiselessPositionSystemIsExact) {
  const Conformation conf = default_conformation();
  PoseParams pose;
  pose.angles = {0.1, 0.2, -0.1};
  pose.t = Vec3(3, -1, 2);
  const MeasurementSet m = simulate(conf, pose, std::nullopt, NoiseModel{0, 0, 1});
  const Eigen::Matrix3Xd s = place_sensors(conf, pose);
  for (Eigen::Index n = 0; n < 8; ++n) {
    Eigen::Vector4d truth;
    truth << s.col(n), s.col(n).squaredNorm();
    const SolveReport r = ls_solve(build_position_system(m, conf, n));
    EXPECT_LT((r.estimate - truth).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LT(r.residual_norm, 1e-8);
    EXPECT_TRUE(std::isfinite(r.condition));
  }
}

TEST(LsSolve, SquareSystemMatchesInverse) {
  std::mt19937_64 rng(1);
  const LinearSystem sys = random_system(rng, 4, 4);
  const Eigen::VectorXd direct = sys.stacked().inverse() * sys.y;
  EXPECT_LT((ls_solve(sys).estimate - direct).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(LsSolve, ResidualOrthogonalToColumnSpace) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 20; ++i) {
    const LinearSystem sys = random_system(rng, 12, 5);
    const Eigen::VectorXd r = sys.y - sys.stacked() * ls_solve(sys).estimate;
    EXPECT_LT((sys.stacked().transpose() * r).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(LsSolve, TwoBlocksSolvedJointly) {
  std::mt19937_64 rng(3);
  LinearSystem sys = random_system(rng, 10, 5);
  const Eigen::MatrixXd h = sys.blocks[0].channel;
  sys.blocks = {{"a", h.leftCols(2)}, {"b", h.rightCols(3)}};
  std::mt19937_64 rng2(3);
  const LinearSystem one = random_system(rng2, 10, 5);
  EXPECT_LT((ls_solve(sys).estimate - ls_solve(one).estimate).norm(), 1e-12);
}

TEST(LsSolve, RankDeficientThrows) {
  std::mt19937_64 rng(4);
  LinearSystem sys = random_system(rng, 8, 3);
  sys.blocks[0].channel.col(2) = 2.0 * sys.blocks[0].channel.col(0);
  EXPECT_THROW(ls_solve(sys), SingularSystemError);
  EXPECT_THROW(wls_solve(sys), SingularSystemError);
  const LinearSystem wide = random_system(rng, 2, 3);
  EXPECT_THROW(ls_solve(wide), SingularSystemError);
}

TEST(WlsSolve, UniformWeightsEqualLs) {
  std::mt19937_64 rng(5);
  LinearSystem sys = random_system(rng, 9, 4);
  sys.n0.setConstant(0.37);
  EXPECT_LT((wls_solve(sys).estimate - ls_solve(sys).estimate).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(WlsSolve, InfiniteNoiseDropsRow) {
  std::mt19937_64 rng(6);
  LinearSystem sys = random_system(rng, 9, 4);
  sys.n0(3) = std::numeric_limits<double>::infinity();
  LinearSystem reduced;
  Eigen::VectorXi keep(8);
  keep << 0, 1, 2, 4, 5, 6, 7, 8;
  reduced.y = sys.y(keep);
  reduced.n0 = sys.n0(keep);
  reduced.blocks.push_back({"x", sys.blocks[0].channel(keep, Eigen::all)});
  EXPECT_LT((wls_solve(sys).estimate - wls_solve(reduced).estimate).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(WlsSolve, NoiselessExact) {
  std::mt19937_64 rng(7);
  LinearSystem sys = random_system(rng, 9, 4);
  const Eigen::Vector4d x(1, -2, 0.5, 3);
  sys.y = sys.stacked() * x;
  EXPECT_LT((wls_solve(sys).estimate - x).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(WlsSolve, RejectsNonPositiveNoise) {
  std::mt19937_64 rng(8);
  LinearSystem sys = random_system(rng, 9, 4);
  sys.n0(0) = 0.0;
  EXPECT_THROW(wls_solve(sys), InvalidArgument);
  EXPECT_THROW(ridge_solve(sys, {{0, 1}}), InvalidArgument);
}

TEST(RidgeSolve, WeakPriorMatchesWls) {
  std::mt19937_64 rng(9);
  const LinearSystem sys = random_system(rng, 9, 4);
  const Eigen::VectorXd wls = wls_solve(sys).estimate;
  const Eigen::VectorXd ridge = ridge_solve(sys, {{0.0, 1e12}}).estimate;
  EXPECT_LT((ridge - wls).norm() / wls.norm(), 1e-6);
}

TEST(RidgeSolve, StrongPriorShrinksToMean) {
  std::mt19937_64 rng(10);
  const LinearSystem sys = random_system(rng, 9, 4);
  EXPECT_LT(ridge_solve(sys, {{0.0, 1e-12}}).estimate.cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LT((ridge_solve(sys, {{1.5, 1e-12}}).estimate.array() - 1.5).abs().maxCoeff(), 1e-9);
}

TEST(RidgeSolve, WellPosedOnRankDeficientSystem) {
  std::mt19937_64 rng(11);
  const LinearSystem wide = random_system(rng, 2, 5);
  const SolveReport r = ridge_solve(wide, {{0.0, 1.0}});
  EXPECT_TRUE(r.estimate.allFinite());
}

TEST(RidgeSolve, ShrinkageMonotoneInPriorVariance) {
  std::mt19937_64 rng(12);
  for (int i = 0; i < 20; ++i) {
    const LinearSystem sys = random_system(rng, 8, 4);
    double previous = 0.0;
    for (double phi : {1e-4, 1e-3, 1e-2, 0.1, 1.0, 10.0, 100.0}) {
      const double norm = ridge_solve(sys, {{0.0, phi}}).estimate.norm();
      ASSERT_GE(norm, previous - 1e-12);
      previous = norm;
    }
  }
}

TEST(RidgeSolve, PerBlockPriors) {
  std::mt19937_64 rng(13);
  LinearSystem sys = random_system(rng, 10, 4);
  const Eigen::MatrixXd h = sys.blocks[0].channel;
  sys.blocks = {{"a", h.leftCols(2)}, {"b", h.rightCols(2)}};
  const Eigen::VectorXd x = ridge_solve(sys, {{0.0, 1e-12}, {0.0, 1e12}}).estimate;
  EXPECT_LT(x.head(2).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_GT(x.tail(2).cwiseAbs().maxCoeff(), 1e-3);
  EXPECT_THROW(ridge_solve(sys, {{0.0, 1.0}}), InvalidArgument);
  EXPECT_THROW(ridge_solve(sys, {{0.0, 1.0}, {0.0, -1.0}}), InvalidArgument);
}

TEST(Baseline, Deterministic) {
  std::mt19937_64 rng(14);
  const LinearSystem sys = random_system(rng, 8, 4);
  EXPECT_EQ(ls_solve(sys).estimate, ls_solve(sys).estimate);
  EXPECT_EQ(ridge_solve(sys, {{0, 1}}).estimate, ridge_solve(sys, {{0, 1}}).estimate);
}
