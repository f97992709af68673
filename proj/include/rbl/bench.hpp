// Monte-Carlo harness: RMSE sweeps, per-iteration convergence traces and
// wall-time summaries, with CSV and manifest output.

#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "rbl/baseline.hpp"
#include "rbl/errors.hpp"
#include "rbl/gabp.hpp"
#include "rbl/geometry.hpp"
#include "rbl/measurement.hpp"
#include "rbl/pipeline.hpp"

namespace rbl {

enum class Scenario { stationary, moving };

enum class Estimator { gabp, ls, wls, mfb };

inline std::string to_string(Scenario s) { return s == Scenario::stationary ? "stationary" : "moving"; }

inline std::string to_string(Estimator e) {
  switch (e) {
    case Estimator::gabp: return "gabp";
    case Estimator::ls: return "ls";
    case Estimator::wls: return "wls";
    case Estimator::mfb: return "mfb";
  }
  return "?";
}

inline Scenario parse_scenario(const std::string& s) {
  if (s == "stationary") return Scenario::stationary;
  if (s == "moving") return Scenario::moving;
  throw InvalidArgument("unknown scenario '" + s + "'");
}

inline Estimator parse_estimator(const std::string& s) {
  if (s == "gabp") return Estimator::gabp;
  if (s == "ls") return Estimator::ls;
  if (s == "wls") return Estimator::wls;
  if (s == "mfb") return Estimator::mfb;
  throw InvalidArgument("unknown estimator '" + s + "'");
}

/// sqrt(mean_i |est_i - truth_i|^2).
inline double rmse(const std::vector<Eigen::VectorXd>& estimates, const std::vector<Eigen::VectorXd>& truth) {
  if (estimates.empty()) throw InvalidArgument("rmse needs at least one trial");
  if (estimates.size() != truth.size()) throw InvalidArgument("estimate and truth counts differ");
  double acc = 0.0;
  for (std::size_t i = 0; i < estimates.size(); ++i) {
    if (estimates[i].size() != truth[i].size()) throw InvalidArgument("estimate and truth dimensions differ");
    acc += (estimates[i] - truth[i]).squaredNorm();
  }
  return std::sqrt(acc / static_cast<double>(estimates.size()));
}

/// Unit cube of sensors (+-0.5 m) and a cube of anchors (+-10 m).
inline Conformation default_conformation() {
  static const double sign[3][8] = {{-1, 1, -1, 1, -1, 1, -1, 1},
                                    {-1, -1, 1, 1, -1, -1, 1, 1},
                                    {-1, -1, -1, -1, 1, 1, 1, 1}};
  Conformation c;
  c.sensors.resize(3, 8);
  c.anchors.resize(3, 8);
  for (int r = 0; r < 3; ++r)
    for (int k = 0; k < 8; ++k) {
      c.sensors(r, k) = 0.5 * sign[r][k];
      c.anchors(r, k) = 10.0 * sign[r][k];
    }
  return c;
}

/// "M N", then M anchor rows and N sensor rows of three reals.
inline Conformation parse_conformation(std::istream& in) {
  long m = 0, n = 0;
  if (!(in >> m >> n) || m < 1 || n < 1) throw InvalidArgument("conformation header must be 'M N' with M, N >= 1");
  Conformation c;
  c.anchors.resize(3, m);
  c.sensors.resize(3, n);
  auto read_cols = [&](Eigen::Matrix3Xd& dst, const char* what) {
    for (Eigen::Index k = 0; k < dst.cols(); ++k)
      for (int r = 0; r < 3; ++r)
        if (!(in >> dst(r, k))) throw InvalidArgument(std::string("conformation file: truncated ") + what + " rows");
  };
  read_cols(c.anchors, "anchor");
  read_cols(c.sensors, "sensor");
  c.validate();
  return c;
}

inline Conformation load_conformation(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw InvalidArgument("cannot open conformation file " + path);
  return parse_conformation(f);
}

inline void write_conformation(std::ostream& out, const Conformation& c) {
  out << c.num_anchors() << ' ' << c.num_sensors() << '\n' << std::setprecision(17);
  auto write_cols = [&](const Eigen::Matrix3Xd& src) {
    for (Eigen::Index k = 0; k < src.cols(); ++k) out << src(0, k) << ' ' << src(1, k) << ' ' << src(2, k) << '\n';
  };
  write_cols(c.anchors);
  write_cols(c.sensors);
}

struct ExperimentConfig {
  Scenario scenario = Scenario::stationary;
  std::vector<double> sigmas{1e-3, 1e-2, 1e-1, 1.0};
  int trials = 200;
  std::uint64_t seed = 1;
  PipelineConfig pipeline;
  std::optional<Conformation> conformation;  // default cube when empty
  std::string conformation_source = "default";
  std::vector<Estimator> estimators{Estimator::gabp, Estimator::ls};
  double coupling = 10.0;           // sigma_eps / sigma_w
  double max_angle_deg = 20.0;      // rejection bound on drawn angles
  bool exact_rotation = true;       // rotation model used to place sensors
  unsigned threads = 0;             // 0: hardware concurrency
  bool timing = false;              // measure wall time (breaks byte-identical output)

  Conformation resolved_conformation() const { return conformation ? *conformation : default_conformation(); }

  void validate() const {
    if (trials < 1) throw InvalidArgument("trials must be at least 1");
    if (sigmas.empty()) throw InvalidArgument("noise grid is empty");
    for (double s : sigmas)
      if (!(s >= 0.0) || !std::isfinite(s)) throw InvalidArgument("noise levels must be finite and nonnegative");
    if (estimators.empty()) throw InvalidArgument("no estimators selected");
    if (!(coupling >= 0.0)) throw InvalidArgument("coupling must be nonnegative");
    if (!(max_angle_deg > 0.0)) throw InvalidArgument("angle bound must be positive");
    resolved_conformation().validate();
  }
};

struct RmseRecord {
  double sigma = 0.0;
  std::string estimator;
  std::string family;
  double rmse = 0.0;
  std::string unit;
  int trials = 0;  // trials that entered the average
  double mean_iters = 0.0;
  double mean_ms = std::numeric_limits<double>::quiet_NaN();
  int diverged = 0;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed for one trial; the same for every noise level and estimator (paired runs).
inline std::uint64_t trial_seed(std::uint64_t master, int trial) {
  return splitmix64(master ^ splitmix64(static_cast<std::uint64_t>(trial) + 1));
}

/// Runs fn(i) for i in [0, count) on a worker pool.
template <typename Fn>
void parallel_for(int count, unsigned threads, Fn&& fn) {
  unsigned workers = threads ? threads : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min<unsigned>(workers, static_cast<unsigned>(std::max(count, 1)));
  if (workers <= 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (int i = next++; i < count; i = next++) fn(i);
    });
  for (auto& t : pool) t.join();
}

inline double elapsed_ms(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace detail

struct TrialTruth {
  PoseParams pose;
  MotionParams motion;
  std::uint64_t noise_seed = 0;
};

/// Zero-mean Gaussian parameters with the pipeline's prior variances; angles
/// are redrawn until every component lies within the configured bound.
inline TrialTruth draw_truth(const ExperimentConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  const PipelineConfig& p = cfg.pipeline;
  const double bound = deg_to_rad(cfg.max_angle_deg);
  auto angle = [&](double var_deg2) {
    const double sd = std::sqrt(deg2_to_rad2(var_deg2));
    for (;;) {
      const double v = sd * unit(rng);
      if (std::abs(v) <= bound) return v;
    }
  };
  TrialTruth t;
  t.pose.angles.theta_x = angle(p.prior_theta_deg2);
  t.pose.angles.theta_y = angle(p.prior_theta_deg2);
  t.pose.angles.theta_z = angle(p.prior_theta_deg2);
  for (int i = 0; i < 3; ++i) t.pose.t(i) = std::sqrt(p.prior_t) * unit(rng);
  const double sd_w = std::sqrt(deg2_to_rad2(p.prior_omega_deg2));
  t.motion.omega.omega_1 = sd_w * unit(rng);
  t.motion.omega.omega_2 = sd_w * unit(rng);
  t.motion.omega.omega_3 = sd_w * unit(rng);
  for (int i = 0; i < 3; ++i) t.motion.t_dot(i) = std::sqrt(p.prior_t_dot) * unit(rng);
  t.noise_seed = detail::splitmix64(seed ^ 0x5bd1e995ULL);
  return t;
}

enum class ClosedForm { ls, wls };

/// The four stages with every GaBP call replaced by a closed-form solve of the
/// same system; two-block systems are solved jointly.
inline MovingEstimate closed_form_estimate(const MeasurementSet& meas, const Conformation& conf, ClosedForm kind,
                                           const PipelineConfig& cfg, bool moving) {
  conf.validate();
  auto solve = [&](const LinearSystem& sys) {
    return (kind == ClosedForm::ls ? ls_solve(sys) : wls_solve(sys)).estimate;
  };
  const Eigen::Index n_count = conf.num_sensors();
  MovingEstimate out;
  out.position.positions.resize(3, n_count);
  out.position.norms.resize(n_count);
  for (Eigen::Index n = 0; n < n_count; ++n) {
    const Eigen::VectorXd x = solve(build_position_system(meas, conf, n, cfg.n0_floor));
    out.position.positions.col(n) = x.head<3>();
    out.position.norms(n) = x(3);
  }
  auto joint = [&](const std::vector<LinearSystem>& parts, ParameterStage& stage) {
    const Eigen::VectorXd x = solve(stack_rows(parts));
    stage.rotation = x.head<3>();
    stage.rotation_coarse = stage.rotation;
    stage.translation = x.tail<3>();
  };
  std::vector<LinearSystem> parts;
  for (Eigen::Index n = 0; n < n_count; ++n) {
    const double norm_sq = cfg.norm_source == NormSource::fourth_entry ? out.position.norms(n)
                                                                       : out.position.positions.col(n).squaredNorm();
    parts.push_back(build_pose_system(meas, conf, n, std::max(0.0, norm_sq), cfg.n0_floor));
  }
  joint(parts, out.pose);
  if (!moving) return out;

  out.velocity.velocities.resize(3, n_count);
  out.velocity.inner.resize(n_count);
  for (Eigen::Index n = 0; n < n_count; ++n) {
    const Eigen::VectorXd x = solve(build_velocity_system(meas, conf, n, cfg.n0_floor));
    out.velocity.velocities.col(n) = x.head<3>();
    out.velocity.inner(n) = x(3);
  }
  const Mat3 q_est = cfg.rotation_source == RotationSource::identity
                         ? Mat3::Identity()
                         : rotation_matrix_small(RotationAngles::from_vector(out.pose.rotation));
  parts.clear();
  for (Eigen::Index n = 0; n < n_count; ++n) {
    const double inner = cfg.norm_source == NormSource::fourth_entry
                             ? out.velocity.inner(n)
                             : out.position.positions.col(n).dot(out.velocity.velocities.col(n));
    parts.push_back(build_motion_system(meas, conf, n, inner, q_est, cfg.n0_floor));
  }
  joint(parts, out.motion);
  return out;
}

/// Parameter families reported per scenario, with units.
struct Family {
  const char* name;
  const char* unit;
};

inline std::vector<Family> families(Scenario s) {
  std::vector<Family> f{{"position", "m"},
                        {"translation", "m"},
                        {"rotation", "rad"},
                        {"rotation-coarse", "rad"}};
  if (s == Scenario::moving) {
    f.push_back({"velocity", "m/s"});
    f.push_back({"translational-velocity", "m/s"});
    f.push_back({"angular-velocity", "rad/s"});
    f.push_back({"angular-velocity-coarse", "rad/s"});
  }
  return f;
}

/// Squared errors of one trial, per family (sensor families averaged over N).
struct TrialErrors {
  std::vector<double> sq;
  std::vector<double> iters;
  double ms = 0.0;
  bool diverged = false;
};

namespace detail {

inline double mean_iterations(const std::vector<GabpResult>& runs) {
  if (runs.empty()) return 0.0;
  double s = 0.0;
  for (const auto& r : runs) s += r.iterations;
  return s / static_cast<double>(runs.size());
}

inline TrialErrors score(const MovingEstimate& est, const TrialTruth& truth, const Conformation& conf,
                         Scenario scenario, bool exact_rotation) {
  TrialErrors e;
  const auto n = static_cast<double>(conf.num_sensors());
  const Eigen::Matrix3Xd s = place_sensors(conf, truth.pose, exact_rotation);
  e.sq.push_back((est.position.positions - s).squaredNorm() / n);
  e.sq.push_back((est.pose.translation - truth.pose.t).squaredNorm());
  e.sq.push_back((est.pose.rotation - truth.pose.angles.vector()).squaredNorm());
  e.sq.push_back((est.pose.rotation_coarse - truth.pose.angles.vector()).squaredNorm());
  e.iters.push_back(mean_iterations(est.position.runs));
  e.iters.push_back(est.pose.coarse_iterations);
  e.iters.push_back(est.pose.coarse_iterations + est.pose.refine_iterations);
  e.iters.push_back(est.pose.coarse_iterations);
  if (scenario == Scenario::moving) {
    const Eigen::Matrix3Xd v = sensor_velocities(conf, truth.pose, truth.motion, exact_rotation);
    e.sq.push_back((est.velocity.velocities - v).squaredNorm() / n);
    e.sq.push_back((est.motion.translation - truth.motion.t_dot).squaredNorm());
    e.sq.push_back((est.motion.rotation - truth.motion.omega.vector()).squaredNorm());
    e.sq.push_back((est.motion.rotation_coarse - truth.motion.omega.vector()).squaredNorm());
    e.iters.push_back(mean_iterations(est.velocity.runs));
    e.iters.push_back(est.motion.coarse_iterations);
    e.iters.push_back(est.motion.coarse_iterations + est.motion.refine_iterations);
    e.iters.push_back(est.motion.coarse_iterations);
  }
  return e;
}

}  // namespace detail

/// One estimator on one simulated trial. Engine failures mark the trial diverged.
inline TrialErrors run_trial(const ExperimentConfig& cfg, const Conformation& conf, const TrialTruth& truth,
                             double sigma, Estimator estimator) {
  const bool moving = cfg.scenario == Scenario::moving;
  const NoiseModel noise = NoiseModel::coupled(sigma, truth.noise_seed, cfg.coupling);
  const MeasurementSet meas =
      simulate(conf, truth.pose, moving ? std::optional<MotionParams>(truth.motion) : std::nullopt, noise,
               cfg.exact_rotation);
  const GroundTruth gt{truth.pose, moving ? std::optional<MotionParams>(truth.motion) : std::nullopt,
                       cfg.exact_rotation};
  const auto start = std::chrono::steady_clock::now();
  MovingEstimate est;
  try {
    switch (estimator) {
      case Estimator::gabp:
      case Estimator::mfb: {
        PipelineConfig p = cfg.pipeline;
        p.mfb = estimator == Estimator::mfb;
        if (moving) {
          est = estimate_moving(meas, conf, p, gt);
        } else {
          StationaryEstimate s = estimate_stationary(meas, conf, p, gt);
          est.position = std::move(s.position);
          est.pose = std::move(s.pose);
        }
        break;
      }
      case Estimator::ls:
      case Estimator::wls:
        est = closed_form_estimate(meas, conf, estimator == Estimator::ls ? ClosedForm::ls : ClosedForm::wls,
                                   cfg.pipeline, moving);
        break;
    }
  } catch (const DivergenceError&) {
    TrialErrors e;
    e.diverged = true;
    return e;
  } catch (const SingularSystemError&) {
    TrialErrors e;
    e.diverged = true;
    return e;
  }
  const double ms = detail::elapsed_ms(start);
  TrialErrors e = detail::score(est, truth, conf, cfg.scenario, cfg.exact_rotation);
  e.ms = ms;
  for (double v : e.sq)
    if (!std::isfinite(v)) e.diverged = true;
  return e;
}

/// RMSE per (sigma, estimator, family). Trials run in parallel and are summed
/// in trial order, so the result does not depend on the worker count.
inline std::vector<RmseRecord> run_sweep(const ExperimentConfig& cfg) {
  cfg.validate();
  const Conformation conf = cfg.resolved_conformation();
  const auto fams = families(cfg.scenario);
  std::vector<TrialTruth> truths(static_cast<std::size_t>(cfg.trials));
  for (int i = 0; i < cfg.trials; ++i) truths[static_cast<std::size_t>(i)] = draw_truth(cfg, detail::trial_seed(cfg.seed, i));

  std::vector<RmseRecord> out;
  for (double sigma : cfg.sigmas) {
    for (Estimator est : cfg.estimators) {
      std::vector<TrialErrors> results(truths.size());
      detail::parallel_for(cfg.trials, cfg.threads, [&](int i) {
        const auto k = static_cast<std::size_t>(i);
        results[k] = run_trial(cfg, conf, truths[k], sigma, est);
      });
      std::vector<double> sq(fams.size(), 0.0), iters(fams.size(), 0.0);
      double ms = 0.0;
      int kept = 0, diverged = 0;
      for (const auto& r : results) {
        if (r.diverged) {
          ++diverged;
          continue;
        }
        ++kept;
        ms += r.ms;
        for (std::size_t f = 0; f < fams.size(); ++f) {
          sq[f] += r.sq[f];
          iters[f] += r.iters[f];
        }
      }
      for (std::size_t f = 0; f < fams.size(); ++f) {
        RmseRecord rec;
        rec.sigma = sigma;
        rec.estimator = to_string(est);
        rec.family = fams[f].name;
        rec.unit = fams[f].unit;
        rec.trials = kept;
        rec.diverged = diverged;
        if (kept > 0) {
          rec.rmse = std::sqrt(sq[f] / kept);
          rec.mean_iters = iters[f] / kept;
          if (cfg.timing) rec.mean_ms = ms / kept;
        } else {
          rec.rmse = std::numeric_limits<double>::quiet_NaN();
        }
        out.push_back(rec);
      }
    }
  }
  return out;
}

inline const RmseRecord& find_record(const std::vector<RmseRecord>& recs, double sigma, const std::string& estimator,
                                     const std::string& family) {
  for (const auto& r : recs)
    if (r.sigma == sigma && r.estimator == estimator && r.family == family) return r;
  throw InvalidArgument("no record for " + estimator + "/" + family);
}

namespace detail {

inline std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  std::ostringstream s;
  s << std::setprecision(10) << v;
  return s.str();
}

}  // namespace detail

inline void write_csv(std::ostream& out, const std::vector<RmseRecord>& recs) {
  out << "sigma,estimator,family,rmse,unit,trials,mean_iters,mean_ms,diverged\n";
  for (const auto& r : recs)
    out << detail::fmt(r.sigma) << ',' << r.estimator << ',' << r.family << ',' << detail::fmt(r.rmse) << ','
        << r.unit << ',' << r.trials << ',' << detail::fmt(r.mean_iters) << ',' << detail::fmt(r.mean_ms) << ','
        << r.diverged << '\n';
}

inline void write_manifest(std::ostream& out, const ExperimentConfig& cfg, const std::string& command) {
  const PipelineConfig& p = cfg.pipeline;
  out << "command = " << command << '\n'
      << "scenario = " << to_string(cfg.scenario) << '\n'
      << "sigmas =";
  for (double s : cfg.sigmas) out << ' ' << detail::fmt(s);
  out << "\ntrials = " << cfg.trials << '\n'
      << "seed = " << cfg.seed << '\n'
      << "estimators =";
  for (auto e : cfg.estimators) out << ' ' << to_string(e);
  out << "\nconformation = " << cfg.conformation_source << '\n'
      << "coupling = " << detail::fmt(cfg.coupling) << '\n'
      << "max_angle_deg = " << detail::fmt(cfg.max_angle_deg) << '\n'
      << "exact_rotation = " << (cfg.exact_rotation ? "true" : "false") << '\n'
      << "rho = " << detail::fmt(p.rho) << '\n'
      << "j_max = " << p.j_max << '\n'
      << "tol = " << detail::fmt(p.tol) << '\n'
      << "n0_floor = " << detail::fmt(p.n0_floor) << '\n'
      << "readout = " << (p.readout == Readout::printed ? "printed" : "prior_denoised") << '\n'
      << "prior_position = " << detail::fmt(p.prior_position) << '\n'
      << "prior_velocity = " << detail::fmt(p.prior_velocity) << '\n'
      << "prior_theta_deg2 = " << detail::fmt(p.prior_theta_deg2) << '\n'
      << "prior_t = " << detail::fmt(p.prior_t) << '\n'
      << "prior_omega_deg2 = " << detail::fmt(p.prior_omega_deg2) << '\n'
      << "prior_t_dot = " << detail::fmt(p.prior_t_dot) << '\n'
      << "norm_source = " << (p.norm_source == NormSource::fourth_entry ? "fourth_entry" : "coordinates") << '\n'
      << "rotation_source = "
      << (p.rotation_source == RotationSource::estimated  ? "estimated"
          : p.rotation_source == RotationSource::identity ? "identity"
                                                           : "truth")
      << '\n'
      << "stacking = " << (p.stacking == Stacking::stacked ? "stacked" : "per_sensor_average") << '\n'
      << "timing = " << (cfg.timing ? "true" : "false") << '\n';
  write_conformation(out, cfg.resolved_conformation());
}

// ---------------------------------------------------------------------------
// Convergence traces

/// Stage labels of the traces: single-block stages, coarse two-block runs and
/// their refinements.
inline std::vector<std::string> trace_labels(Scenario s) {
  std::vector<std::string> l{"alg1-position", "alg2-coarse", "alg2-refined"};
  if (s == Scenario::moving) {
    l.insert(l.end(), {"alg3-velocity", "alg4-coarse", "alg4-refined"});
  }
  return l;
}

struct ConvergenceTrace {
  double sigma = 0.0;
  std::string algorithm;
  bool mfb = false;
  std::vector<double> median;  // median error after each iteration, length j_max
  int diverged = 0;
};

namespace detail {

inline std::vector<double> padded(std::vector<double> v, int length) {
  if (v.empty()) v.push_back(std::numeric_limits<double>::quiet_NaN());
  while (static_cast<int>(v.size()) < length) v.push_back(v.back());
  v.resize(static_cast<std::size_t>(length));
  return v;
}

/// Per-iteration RMS error over sensors of a single-block stage (first three unknowns).
inline std::vector<double> sensor_trace(const std::vector<GabpResult>& runs, const Eigen::Matrix3Xd& truth,
                                        int length) {
  std::vector<double> out(static_cast<std::size_t>(length), 0.0);
  for (std::size_t n = 0; n < runs.size(); ++n) {
    for (int j = 0; j < length; ++j) {
      const auto& h = runs[n].history;
      const Eigen::VectorXd& x = h[std::min<std::size_t>(static_cast<std::size_t>(j), h.size() - 1)];
      out[static_cast<std::size_t>(j)] += (x.head<3>() - truth.col(static_cast<Eigen::Index>(n))).squaredNorm();
    }
  }
  for (double& v : out) v = std::sqrt(v / static_cast<double>(runs.size()));
  return out;
}

inline std::vector<double> vector_trace(const GabpResult& run, const Eigen::VectorXd& truth, int length) {
  std::vector<double> out;
  for (const auto& x : run.history) out.push_back((x - truth).norm());
  return padded(std::move(out), length);
}

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  if (n == 0) return std::numeric_limits<double>::quiet_NaN();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace detail

/// Median per-iteration error traces of every stage at each requested sigma.
/// Stacked two-block stages only (per-sensor averaging has no single trace).
inline std::vector<ConvergenceTrace> run_convergence(const ExperimentConfig& cfg, const std::vector<double>& sigmas,
                                                     bool mfb = false) {
  cfg.validate();
  if (cfg.pipeline.stacking != Stacking::stacked) throw InvalidArgument("convergence traces need stacked stages");
  const Conformation conf = cfg.resolved_conformation();
  const bool moving = cfg.scenario == Scenario::moving;
  const auto labels = trace_labels(cfg.scenario);
  const int len = cfg.pipeline.j_max;
  PipelineConfig pcfg = cfg.pipeline;
  pcfg.mfb = mfb;

  std::vector<ConvergenceTrace> out;
  for (double sigma : sigmas) {
    std::vector<std::vector<std::vector<double>>> per_trial(static_cast<std::size_t>(cfg.trials));
    std::vector<char> failed(static_cast<std::size_t>(cfg.trials), 0);
    detail::parallel_for(cfg.trials, cfg.threads, [&](int i) {
      const auto k = static_cast<std::size_t>(i);
      const TrialTruth truth = draw_truth(cfg, detail::trial_seed(cfg.seed, i));
      const NoiseModel noise = NoiseModel::coupled(sigma, truth.noise_seed, cfg.coupling);
      const std::optional<MotionParams> motion = moving ? std::optional<MotionParams>(truth.motion) : std::nullopt;
      const MeasurementSet meas = simulate(conf, truth.pose, motion, noise, cfg.exact_rotation);
      const GroundTruth gt{truth.pose, motion, cfg.exact_rotation};
      try {
        MovingEstimate est;
        if (moving) {
          est = estimate_moving(meas, conf, pcfg, gt);
        } else {
          auto s = estimate_stationary(meas, conf, pcfg, gt);
          est.position = std::move(s.position);
          est.pose = std::move(s.pose);
        }
        const Eigen::Matrix3Xd s = place_sensors(conf, truth.pose, cfg.exact_rotation);
        const Eigen::VectorXd pose6 = detail::stack6(truth.pose.angles.vector(), truth.pose.t);
        auto& tr = per_trial[k];
        tr.push_back(detail::sensor_trace(est.position.runs, s, len));
        tr.push_back(detail::vector_trace(est.pose.coarse.front(), pose6, len));
        tr.push_back(detail::vector_trace(est.pose.refined.front(), truth.pose.angles.vector(), len));
        if (moving) {
          const Eigen::Matrix3Xd v = sensor_velocities(conf, truth.pose, truth.motion, cfg.exact_rotation);
          const Eigen::VectorXd motion6 = detail::stack6(truth.motion.omega.vector(), truth.motion.t_dot);
          tr.push_back(detail::sensor_trace(est.velocity.runs, v, len));
          tr.push_back(detail::vector_trace(est.motion.coarse.front(), motion6, len));
          tr.push_back(detail::vector_trace(est.motion.refined.front(), truth.motion.omega.vector(), len));
        }
      } catch (const DivergenceError&) {
        failed[k] = 1;
      }
    });

    const int diverged = static_cast<int>(std::count(failed.begin(), failed.end(), 1));
    for (std::size_t a = 0; a < labels.size(); ++a) {
      ConvergenceTrace t;
      t.sigma = sigma;
      t.algorithm = labels[a];
      t.mfb = mfb;
      t.diverged = diverged;
      for (int j = 0; j < len; ++j) {
        std::vector<double> col;
        for (std::size_t k = 0; k < per_trial.size(); ++k)
          if (!failed[k]) col.push_back(per_trial[k][a][static_cast<std::size_t>(j)]);
        t.median.push_back(detail::median(std::move(col)));
      }
      out.push_back(std::move(t));
    }
  }
  return out;
}

inline void write_convergence_csv(std::ostream& out, const std::vector<ConvergenceTrace>& traces) {
  out << "sigma,algorithm,init,iteration,median_error,diverged\n";
  for (const auto& t : traces)
    for (std::size_t j = 0; j < t.median.size(); ++j)
      out << detail::fmt(t.sigma) << ',' << t.algorithm << ',' << (t.mfb ? "mfb" : "prior") << ',' << j + 1 << ','
          << detail::fmt(t.median[j]) << ',' << t.diverged << '\n';
}

// ---------------------------------------------------------------------------
// Wall time

struct RuntimeRecord {
  std::string algorithm;
  Eigen::Index anchors = 0;
  Eigen::Index sensors = 0;
  double median_ms = 0.0;
  int samples = 0;
};

/// Conformation with `m` anchors: the default anchor cube, padded with
/// uniformly drawn anchors in the same box (or truncated).
inline Conformation scaled_conformation(const Conformation& base, Eigen::Index m, std::uint64_t seed) {
  if (m < 5) throw InvalidArgument("at least 5 anchors required");
  Conformation c = base;
  const Eigen::Index keep = std::min(m, base.num_anchors());
  c.anchors.resize(3, m);
  c.anchors.leftCols(keep) = base.anchors.leftCols(keep);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> box(-10.0, 10.0);
  for (Eigen::Index k = keep; k < m; ++k)
    for (int r = 0; r < 3; ++r) c.anchors(r, k) = box(rng);
  c.validate();
  return c;
}

namespace detail {

/// Median over `samples` of the mean time of `batch` back-to-back calls.
template <typename Fn>
double median_ms(int samples, int batch, Fn&& fn) {
  std::vector<double> t;
  for (int s = 0; s < samples; ++s) {
    const auto start = std::chrono::steady_clock::now();
    for (int b = 0; b < batch; ++b) fn();
    t.push_back(elapsed_ms(start) / batch);
  }
  return median(std::move(t));
}

}  // namespace detail

/// Median wall time of one invocation of each stage (all sensors for the
/// single-block stages) on one moving-body problem at sigma, for each anchor
/// count in `anchor_counts`. Single-threaded.
inline std::vector<RuntimeRecord> run_runtime(const ExperimentConfig& cfg, const std::vector<Eigen::Index>& anchor_counts,
                                              double sigma = 1e-2, int samples = 31, int batch = 20) {
  cfg.validate();
  if (samples < 1 || batch < 1) throw InvalidArgument("samples and batch must be positive");
  const TrialTruth truth = draw_truth(cfg, detail::trial_seed(cfg.seed, 0));
  const PipelineConfig& p = cfg.pipeline;
  std::vector<RuntimeRecord> out;
  for (Eigen::Index m : anchor_counts) {
    const Conformation conf = scaled_conformation(cfg.resolved_conformation(), m, cfg.seed);
    const NoiseModel noise = NoiseModel::coupled(sigma, truth.noise_seed, cfg.coupling);
    const MeasurementSet meas = simulate(conf, truth.pose, truth.motion, noise, cfg.exact_rotation);
    const PositionStage pos = estimate_positions(meas, conf, p);
    const VelocityStage vel = estimate_velocities(meas, conf, p);
    const ParameterStage pose = estimate_pose(meas, conf, pos, p);

    auto record = [&](const char* name, auto&& fn) {
      out.push_back({name, m, conf.num_sensors(), detail::median_ms(samples, batch, fn), samples});
    };
    record("alg1", [&] { (void)estimate_positions(meas, conf, p); });
    record("alg2", [&] { (void)estimate_pose(meas, conf, pos, p); });
    record("alg3", [&] { (void)estimate_velocities(meas, conf, p); });
    record("alg4", [&] { (void)estimate_motion(meas, conf, pos, vel, pose, p); });
  }
  return out;
}

inline void write_runtime_csv(std::ostream& out, const std::vector<RuntimeRecord>& recs) {
  out << "algorithm,anchors,sensors,median_ms,samples\n";
  for (const auto& r : recs)
    out << r.algorithm << ',' << r.anchors << ',' << r.sensors << ',' << detail::fmt(r.median_ms) << ',' << r.samples
        << '\n';
}

}  // namespace rbl
