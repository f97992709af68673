// Closed-form solutions of the same linear systems the GaBP engine consumes:
// ordinary, weighted (1/n0) and prior-regularized least squares via the
// normal equations.

#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <limits>
#include <vector>

#include "rbl/errors.hpp"
#include "rbl/gabp.hpp"
#include "rbl/linear_system.hpp"

namespace rbl {

struct SolveReport {
  Eigen::VectorXd estimate;
  double residual_norm = 0.0;  // ||y - H x||_2, unweighted
  double condition = 1.0;      // eigenvalue ratio of the normal matrix
};

namespace detail {

inline double normal_condition(const Eigen::MatrixXd& normal) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(normal, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  if (!(lo > 0.0)) return std::numeric_limits<double>::infinity();
  return hi / lo;
}

/// Solves (H^T W H + D) x = H^T W y + d.
inline SolveReport solve_normal(const LinearSystem& sys, const Eigen::VectorXd& weights, const Eigen::VectorXd& ridge,
                                const Eigen::VectorXd& ridge_rhs, bool allow_singular) {
  const Eigen::MatrixXd h = sys.stacked();
  Eigen::MatrixXd normal = h.transpose() * weights.asDiagonal() * h;
  normal.diagonal() += ridge;
  const Eigen::VectorXd rhs = h.transpose() * weights.asDiagonal() * sys.y + ridge_rhs;

  SolveReport rep;
  rep.condition = normal_condition(normal);
  // Relative threshold on the scaled normal matrix: full column rank check.
  if (!allow_singular && !(rep.condition < 1e14))
    throw SingularSystemError("normal equations are singular (condition " + std::to_string(rep.condition) + ")");
  Eigen::LLT<Eigen::MatrixXd> llt(normal);
  if (llt.info() != Eigen::Success) throw SingularSystemError("normal matrix is not positive definite");
  rep.estimate = llt.solve(rhs);
  rep.residual_norm = (sys.y - h * rep.estimate).norm();
  return rep;
}

}  // namespace detail

/// Minimizes ||y - H x||_2 over all blocks jointly.
inline SolveReport ls_solve(const LinearSystem& sys) {
  if (sys.rows() < sys.unknowns()) throw SingularSystemError("fewer observations than unknowns");
  const Eigen::Index k = sys.unknowns();
  return detail::solve_normal(sys, Eigen::VectorXd::Ones(sys.rows()), Eigen::VectorXd::Zero(k),
                              Eigen::VectorXd::Zero(k), false);
}

/// Minimizes sum_m (y_m - (H x)_m)^2 / n0_m. Infinite n0 removes a row.
inline SolveReport wls_solve(const LinearSystem& sys) {
  if ((sys.n0.array() <= 0.0).any()) throw InvalidArgument("n0 entries must be positive");
  const Eigen::Index k = sys.unknowns();
  const Eigen::VectorXd w = sys.n0.cwiseInverse();
  if ((w.array() > 0.0).count() < k) throw SingularSystemError("fewer weighted observations than unknowns");
  return detail::solve_normal(sys, w, Eigen::VectorXd::Zero(k), Eigen::VectorXd::Zero(k), false);
}

/// Adds sum_k (x_k - mean_b)^2 / var_b to the weighted objective; always well posed.
inline SolveReport ridge_solve(const LinearSystem& sys, const std::vector<BlockPrior>& priors) {
  if ((sys.n0.array() <= 0.0).any()) throw InvalidArgument("n0 entries must be positive");
  if (priors.size() != sys.blocks.size()) throw InvalidArgument("one prior per block required");
  const auto expanded = detail::expand_priors(sys, priors);
  const Eigen::Index k = sys.unknowns();
  Eigen::VectorXd ridge(k), rhs(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    const auto& p = expanded[static_cast<std::size_t>(i)];
    if (!(p.var > 0.0)) throw InvalidArgument("prior variance must be positive");
    ridge(i) = 1.0 / p.var;
    rhs(i) = p.mean / p.var;
  }
  return detail::solve_normal(sys, sys.n0.cwiseInverse(), ridge, rhs, true);
}

}  // namespace rbl
