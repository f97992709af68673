// rbl: Monte-Carlo sweeps, convergence traces and runtime summaries.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "rbl/rbl.hpp"

namespace {

struct Common {
  std::string scenario = "stationary";
  std::vector<double> sigmas{1e-3, 1e-2, 1e-1, 1.0};
  int trials = 200;
  std::uint64_t seed = 1;
  double rho = 0.5;
  int j_max = 30;
  double tol = 1e-8;
  double coupling = 10.0;
  std::string conformation;
  unsigned threads = 0;
  bool timing = false;
  bool small_angle_truth = false;
  std::string readout = "printed";
  std::string stacking = "stacked";
  std::string norm_source = "fourth_entry";
  std::string rotation_source = "estimated";
  std::string out;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--scenario", c.scenario, "stationary or moving")->check(CLI::IsMember({"stationary", "moving"}));
  app->add_option("--sigma", c.sigmas, "range noise std grid (m)")->delimiter(',');
  app->add_option("--trials", c.trials, "Monte-Carlo trials per noise level")->check(CLI::PositiveNumber);
  app->add_option("--seed", c.seed, "master seed");
  app->add_option("--rho", c.rho, "damping factor")->check(CLI::Range(0.0, 1.0));
  app->add_option("--jmax", c.j_max, "maximum iterations")->check(CLI::PositiveNumber);
  app->add_option("--tol", c.tol, "early-stop tolerance (0 disables)");
  app->add_option("--coupling", c.coupling, "Doppler-to-range noise std factor");
  app->add_option("--conformation", c.conformation, "conformation file")->check(CLI::ExistingFile);
  app->add_option("--threads", c.threads, "worker threads (0: all cores)");
  app->add_flag("--timing", c.timing, "record wall time in the CSV");
  app->add_flag("--small-angle-truth", c.small_angle_truth, "place sensors with the small-angle rotation");
  app->add_option("--readout", c.readout, "printed or prior_denoised")
      ->check(CLI::IsMember({"printed", "prior_denoised"}));
  app->add_option("--stacking", c.stacking, "stacked or per_sensor_average")
      ->check(CLI::IsMember({"stacked", "per_sensor_average"}));
  app->add_option("--norm-source", c.norm_source, "fourth_entry or coordinates")
      ->check(CLI::IsMember({"fourth_entry", "coordinates"}));
  app->add_option("--rotation-source", c.rotation_source, "estimated, identity or truth")
      ->check(CLI::IsMember({"estimated", "identity", "truth"}));
  app->add_option("--out", c.out, "output CSV path (stdout when empty)");
}

rbl::ExperimentConfig resolve(const Common& c) {
  rbl::ExperimentConfig cfg;
  cfg.scenario = rbl::parse_scenario(c.scenario);
  cfg.sigmas = c.sigmas;
  cfg.trials = c.trials;
  cfg.seed = c.seed;
  cfg.coupling = c.coupling;
  cfg.threads = c.threads;
  cfg.timing = c.timing;
  cfg.exact_rotation = !c.small_angle_truth;
  cfg.pipeline.rho = c.rho;
  cfg.pipeline.j_max = c.j_max;
  cfg.pipeline.tol = c.tol;
  cfg.pipeline.readout = c.readout == "printed" ? rbl::Readout::printed : rbl::Readout::prior_denoised;
  cfg.pipeline.stacking = c.stacking == "stacked" ? rbl::Stacking::stacked : rbl::Stacking::per_sensor_average;
  cfg.pipeline.norm_source =
      c.norm_source == "fourth_entry" ? rbl::NormSource::fourth_entry : rbl::NormSource::coordinates;
  cfg.pipeline.rotation_source = c.rotation_source == "estimated"  ? rbl::RotationSource::estimated
                                 : c.rotation_source == "identity" ? rbl::RotationSource::identity
                                                                   : rbl::RotationSource::truth;
  if (!c.conformation.empty()) {
    cfg.conformation = rbl::load_conformation(c.conformation);
    cfg.conformation_source = c.conformation;
  }
  return cfg;
}

std::string command_line(int argc, char** argv) {
  std::ostringstream s;
  for (int i = 0; i < argc; ++i) s << (i ? " " : "") << argv[i];
  return s.str();
}

template <typename Writer>
void emit(const std::string& path, Writer&& write) {
  if (path.empty()) {
    write(std::cout);
    return;
  }
  std::ofstream f(path);
  if (!f) throw rbl::InvalidArgument("cannot write " + path);
  write(f);
}

void emit_manifest(const std::string& path, const rbl::ExperimentConfig& cfg, const std::string& cmd) {
  if (path.empty()) return;
  std::ofstream f(path + ".manifest.txt");
  if (!f) throw rbl::InvalidArgument("cannot write manifest for " + path);
  rbl::write_manifest(f, cfg, cmd);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rigid body localization by Gaussian belief propagation"};
  app.require_subcommand(1);

  Common sweep;
  std::vector<std::string> estimators{"gabp", "ls"};
  auto* s = app.add_subcommand("sweep", "RMSE per noise level, estimator and parameter family");
  add_common(s, sweep);
  s->add_option("--estimators", estimators, "gabp, ls, wls, mfb")
      ->delimiter(',')
      ->check(CLI::IsMember({"gabp", "ls", "wls", "mfb"}));

  Common conv;
  conv.sigmas = {1.0, 1e-2};
  conv.trials = 100;
  bool conv_mfb = false;
  auto* c = app.add_subcommand("convergence", "median per-iteration error of every stage");
  add_common(c, conv);
  c->add_flag("--mfb", conv_mfb, "start the engines at the true values");

  Common rt;
  rt.scenario = "moving";
  std::vector<long> anchors{8, 16};
  int samples = 31;
  double rt_sigma = 1e-2;
  auto* r = app.add_subcommand("runtime", "median wall time per stage invocation");
  add_common(r, rt);
  r->add_option("--anchors", anchors, "anchor counts to time")->delimiter(',');
  r->add_option("--samples", samples, "timed samples per stage")->check(CLI::PositiveNumber);
  r->add_option("--noise", rt_sigma, "range noise std of the timed problem");

  CLI11_PARSE(app, argc, argv);
  const std::string cmd = command_line(argc, argv);

  try {
    if (s->parsed()) {
      rbl::ExperimentConfig cfg = resolve(sweep);
      cfg.estimators.clear();
      for (const auto& e : estimators) cfg.estimators.push_back(rbl::parse_estimator(e));
      const auto recs = rbl::run_sweep(cfg);
      emit(sweep.out, [&](std::ostream& o) { rbl::write_csv(o, recs); });
      emit_manifest(sweep.out, cfg, cmd);
    } else if (c->parsed()) {
      const rbl::ExperimentConfig cfg = resolve(conv);
      const auto traces = rbl::run_convergence(cfg, cfg.sigmas, conv_mfb);
      emit(conv.out, [&](std::ostream& o) { rbl::write_convergence_csv(o, traces); });
      emit_manifest(conv.out, cfg, cmd);
    } else if (r->parsed()) {
      rbl::ExperimentConfig cfg = resolve(rt);
      cfg.scenario = rbl::Scenario::moving;
      std::vector<Eigen::Index> counts(anchors.begin(), anchors.end());
      const auto recs = rbl::run_runtime(cfg, counts, rt_sigma, samples);
      emit(rt.out, [&](std::ostream& o) { rbl::write_runtime_csv(o, recs); });
      emit_manifest(rt.out, cfg, cmd);
    }
  } catch (const rbl::Error& e) {
    std::cerr << "rbl: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
