// Scalar-Gaussian belief propagation over y = sum_b H_b x_b + noise.
//
// Every (factor m, unknown k) edge carries a soft replica x^_{m,k} and its
// error variance psi_{m,k}. One synchronous iteration:
//
//   1. soft interference cancellation   y~_{m,k} = y_m - sum_{i != k} h_{m,i} x^_{m,i}
//   2. conditional variance             s2_{m,k} = sum_{i != k} h_{m,i}^2 psi_{m,i} + n0_m
//   3. extrinsic belief over factors i != m (precision-weighted combination)
//   4. Gaussian-prior denoising of the extrinsic belief
//   5. damped update  x^ <- rho x^ + (1 - rho) x_check  (same for psi)
//
// The consensus readout combines all M factors of the last iteration. A single
// routine covers one or two blocks: with two blocks the interference sums
// simply run over the unknowns of both.

#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "rbl/errors.hpp"
#include "rbl/linear_system.hpp"

namespace rbl {

struct BlockPrior {
  double mean = 0.0;
  double var = 1.0;
};

/// Which consensus is reported as GabpResult::means.
enum class Readout {
  printed,         // factor beliefs only
  prior_denoised,  // factor beliefs combined with the prior
};

/// Seeds every soft replica with known values (matched-filter bound runs).
struct TruthInit {
  Eigen::VectorXd values;
  double psi_floor = 1e-12;
};

struct GabpConfig {
  double rho = 0.5;
  int j_max = 30;
  double tol = 1e-8;
  std::vector<BlockPrior> priors;  // one per block
  Readout readout = Readout::printed;
  std::optional<TruthInit> truth_init;

  void validate(const LinearSystem& sys) const {
    if (!(rho >= 0.0 && rho <= 1.0)) throw InvalidArgument("damping factor must lie in [0, 1]");
    if (j_max < 1) throw InvalidArgument("j_max must be at least 1");
    if (!(tol >= 0.0)) throw InvalidArgument("tolerance must be nonnegative");
    if (priors.size() != sys.blocks.size())
      throw InvalidArgument("expected " + std::to_string(sys.blocks.size()) + " block priors, got " +
                            std::to_string(priors.size()));
    for (const auto& p : priors)
      if (!(p.var > 0.0) || !std::isfinite(p.mean)) throw InvalidArgument("prior variance must be positive");
    if (truth_init) {
      if (truth_init->values.size() != sys.unknowns())
        throw InvalidArgument("truth initialization has the wrong dimension");
      if (!(truth_init->psi_floor > 0.0)) throw InvalidArgument("psi floor must be positive");
    }
  }
};

struct GabpState {
  Eigen::MatrixXd x_hat;  // M x K soft replicas
  Eigen::MatrixXd psi;    // M x K error variances
  int iteration = 0;
};

/// Everything computed from one state during an iteration, before damping.
struct IterationMessages {
  Eigen::MatrixXd sic;         // y~_{m,k}
  Eigen::MatrixXd sigma2;      // conditional variances
  Eigen::MatrixXd ext_mean;    // extrinsic mean (prior mean where no information)
  Eigen::MatrixXd ext_var;     // extrinsic variance (+inf where no information)
  Eigen::MatrixXd x_check;     // denoised mean
  Eigen::MatrixXd psi_check;   // denoised variance
  Eigen::VectorXd precision;   // sum_m h^2 / sigma2 per unknown
  Eigen::VectorXd info;        // sum_m h y~ / sigma2 per unknown
};

struct GabpResult {
  Eigen::VectorXd means;  // readout selected by the config
  Eigen::VectorXd variances;
  Eigen::VectorXd printed_means;
  Eigen::VectorXd posterior_means;
  int iterations = 0;
  std::vector<double> change_trace;          // max relative change per iteration
  std::vector<Eigen::VectorXd> history;      // readout after each iteration
  GabpState state;                           // state the final messages came from
  IterationMessages messages;

  Eigen::VectorXd block(const LinearSystem& sys, std::size_t b) const {
    return means.segment(sys.offset(b), sys.blocks.at(b).channel.cols());
  }
};

namespace detail {

inline std::vector<BlockPrior> expand_priors(const LinearSystem& sys, const std::vector<BlockPrior>& per_block) {
  std::vector<BlockPrior> out;
  out.reserve(static_cast<std::size_t>(sys.unknowns()));
  for (std::size_t b = 0; b < sys.blocks.size(); ++b)
    for (Eigen::Index k = 0; k < sys.blocks[b].channel.cols(); ++k) out.push_back(per_block[b]);
  return out;
}

inline void require_finite(const Eigen::MatrixXd& m, int iteration, const char* what) {
  if (!m.allFinite()) throw DivergenceError(iteration, std::string("non-finite ") + what);
}

}  // namespace detail

/// Zeros-init puts every replica at its prior mean with psi equal to the prior
/// variance; truth-init seeds the given values with psi at the floor.
inline GabpState initial_state(const LinearSystem& sys, const GabpConfig& cfg) {
  const auto priors = detail::expand_priors(sys, cfg.priors);
  const Eigen::Index m_count = sys.rows(), k_count = sys.unknowns();
  GabpState st;
  st.x_hat.resize(m_count, k_count);
  st.psi.resize(m_count, k_count);
  for (Eigen::Index k = 0; k < k_count; ++k) {
    const auto& p = priors[static_cast<std::size_t>(k)];
    if (cfg.truth_init) {
      st.x_hat.col(k).setConstant(cfg.truth_init->values(k));
      st.psi.col(k).setConstant(cfg.truth_init->psi_floor);
    } else {
      st.x_hat.col(k).setConstant(p.mean);
      st.psi.col(k).setConstant(p.var);
    }
  }
  return st;
}

/// Steps 1-4 for every edge from `st`; does not modify the state.
inline IterationMessages compute_messages(const LinearSystem& sys, const Eigen::MatrixXd& h,
                                          const std::vector<BlockPrior>& priors, const GabpState& st) {
  const Eigen::Index m_count = sys.rows(), k_count = h.cols();
  IterationMessages msg;
  msg.sic.resize(m_count, k_count);
  msg.sigma2.resize(m_count, k_count);

  for (Eigen::Index m = 0; m < m_count; ++m) {
    for (Eigen::Index k = 0; k < k_count; ++k) {
      double interference = 0.0, var = 0.0;
      for (Eigen::Index i = 0; i < k_count; ++i) {
        if (i == k) continue;
        interference += h(m, i) * st.x_hat(m, i);
        var += h(m, i) * h(m, i) * st.psi(m, i);
      }
      msg.sic(m, k) = sys.y(m) - interference;
      msg.sigma2(m, k) = var + sys.n0(m);
    }
  }

  // Per-edge precision and information contributions, then leave-one-out sums
  // via prefix/suffix accumulation so no large term is ever subtracted back out.
  const Eigen::MatrixXd prec = h.array().square() / msg.sigma2.array();
  const Eigen::MatrixXd info = h.array() * msg.sic.array() / msg.sigma2.array();
  msg.precision = prec.colwise().sum().transpose();
  msg.info = info.colwise().sum().transpose();

  msg.ext_mean.resize(m_count, k_count);
  msg.ext_var.resize(m_count, k_count);
  msg.x_check.resize(m_count, k_count);
  msg.psi_check.resize(m_count, k_count);
  std::vector<double> pre_p(static_cast<std::size_t>(m_count) + 1), pre_i(pre_p.size());
  for (Eigen::Index k = 0; k < k_count; ++k) {
    const auto& prior = priors[static_cast<std::size_t>(k)];
    pre_p[0] = pre_i[0] = 0.0;
    for (Eigen::Index m = 0; m < m_count; ++m) {
      pre_p[m + 1] = pre_p[m] + prec(m, k);
      pre_i[m + 1] = pre_i[m] + info(m, k);
    }
    double suf_p = 0.0, suf_i = 0.0;
    for (Eigen::Index m = m_count - 1; m >= 0; --m) {
      const double p = pre_p[m] + suf_p;
      const double b = pre_i[m] + suf_i;
      if (p > 0.0) {
        msg.ext_var(m, k) = 1.0 / p;
        msg.ext_mean(m, k) = b / p;
      } else {
        msg.ext_var(m, k) = std::numeric_limits<double>::infinity();
        msg.ext_mean(m, k) = prior.mean;
      }
      // Product of the extrinsic Gaussian and the prior.
      const double post_prec = p + 1.0 / prior.var;
      msg.x_check(m, k) = (b + prior.mean / prior.var) / post_prec;
      msg.psi_check(m, k) = 1.0 / post_prec;
      suf_p += prec(m, k);
      suf_i += info(m, k);
    }
  }
  return msg;
}

inline IterationMessages compute_messages(const LinearSystem& sys, const GabpConfig& cfg, const GabpState& st) {
  return compute_messages(sys, sys.stacked(), detail::expand_priors(sys, cfg.priors), st);
}

namespace detail {

inline void readouts(const IterationMessages& msg, const std::vector<BlockPrior>& priors, Eigen::VectorXd& printed,
                     Eigen::VectorXd& printed_var, Eigen::VectorXd& posterior, Eigen::VectorXd& posterior_var) {
  const Eigen::Index k_count = msg.precision.size();
  printed.resize(k_count);
  printed_var.resize(k_count);
  posterior.resize(k_count);
  posterior_var.resize(k_count);
  for (Eigen::Index k = 0; k < k_count; ++k) {
    const auto& p = priors[static_cast<std::size_t>(k)];
    const double a = msg.precision(k), b = msg.info(k);
    if (a > 0.0) {
      printed(k) = b / a;
      printed_var(k) = 1.0 / a;
    } else {
      printed(k) = p.mean;
      printed_var(k) = p.var;
    }
    posterior_var(k) = 1.0 / (a + 1.0 / p.var);
    posterior(k) = (b + p.mean / p.var) * posterior_var(k);
  }
}

inline GabpResult run_gabp(const LinearSystem& sys, const GabpConfig& cfg) {
  sys.validate();
  cfg.validate(sys);
  const Eigen::MatrixXd h = sys.stacked();
  if (!h.allFinite() || !sys.y.allFinite()) throw InvalidArgument("system has non-finite entries");
  const auto priors = expand_priors(sys, cfg.priors);

  GabpResult res;
  res.state = initial_state(sys, cfg);
  Eigen::VectorXd printed, printed_var, posterior, posterior_var, previous;
  for (int j = 1; j <= cfg.j_max; ++j) {
    res.state.iteration = j;
    IterationMessages msg = compute_messages(sys, h, priors, res.state);
    require_finite(msg.sic, j, "soft interference cancellation");
    require_finite(msg.sigma2, j, "conditional variance");
    require_finite(msg.x_check, j, "denoised mean");
    require_finite(msg.psi_check, j, "denoised variance");

    readouts(msg, priors, printed, printed_var, posterior, posterior_var);
    const Eigen::VectorXd& current = cfg.readout == Readout::printed ? printed : posterior;
    if (!current.allFinite()) throw DivergenceError(j, "non-finite consensus");

    double change = std::numeric_limits<double>::infinity();
    if (previous.size() == current.size()) {
      change = ((current - previous).array().abs() / (1.0 + current.array().abs())).maxCoeff();
    }
    res.change_trace.push_back(change);
    res.history.push_back(current);
    previous = current;
    res.iterations = j;
    res.messages = std::move(msg);

    if (change < cfg.tol || j == cfg.j_max) break;
    res.state.x_hat = cfg.rho * res.state.x_hat + (1.0 - cfg.rho) * res.messages.x_check;
    res.state.psi = cfg.rho * res.state.psi + (1.0 - cfg.rho) * res.messages.psi_check;
  }

  res.printed_means = printed;
  res.posterior_means = posterior;
  if (cfg.readout == Readout::printed) {
    res.means = printed;
    res.variances = printed_var;
  } else {
    res.means = posterior;
    res.variances = posterior_var;
  }
  return res;
}

}  // namespace detail

/// Single-block engine; needs more factors than unknowns.
inline GabpResult linear_gabp(const LinearSystem& sys, const GabpConfig& cfg) {
  if (sys.blocks.size() != 1) throw InvalidArgument("linear_gabp expects exactly one block");
  if (sys.rows() <= sys.unknowns()) throw InvalidArgument("linear_gabp needs more factors than unknowns");
  return detail::run_gabp(sys, cfg);
}

/// Two-block engine; each block's factors see the full soft estimate of the other.
inline GabpResult bivariate_gabp(const LinearSystem& sys, const GabpConfig& cfg) {
  if (sys.blocks.size() != 2) throw InvalidArgument("bivariate_gabp expects exactly two blocks");
  return detail::run_gabp(sys, cfg);
}

/// Cancels the second block's consensus out of y and re-runs the single-block
/// engine on the first block. Priors and truth values are taken from the
/// first block of `cfg`.
inline GabpResult ic_refine(const LinearSystem& sys, const GabpResult& coarse, const GabpConfig& cfg) {
  if (sys.blocks.size() != 2) throw InvalidArgument("ic_refine expects a two-block system");
  if (coarse.means.size() != sys.unknowns()) throw InvalidArgument("coarse result does not match system");
  const Eigen::VectorXd second = coarse.block(sys, 1);
  LinearSystem reduced = single_block(sys, 0, sys.y - sys.blocks[1].channel * second);

  GabpConfig sub = cfg;
  if (sub.priors.size() != 2) throw InvalidArgument("ic_refine expects two block priors");
  sub.priors = {cfg.priors[0]};
  if (cfg.truth_init) {
    const Eigen::Index k0 = sys.blocks[0].channel.cols();
    if (cfg.truth_init->values.size() == sys.unknowns())
      sub.truth_init->values = cfg.truth_init->values.head(k0).eval();
  }
  return linear_gabp(reduced, sub);
}

/// Copy of `cfg` whose replicas start at `truth` with psi at `psi_floor`.
inline GabpConfig mfb_mode(GabpConfig cfg, Eigen::VectorXd truth, double psi_floor = 1e-12) {
  cfg.truth_init = TruthInit{std::move(truth), psi_floor};
  return cfg;
}

}  // namespace rbl
