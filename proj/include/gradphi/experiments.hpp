#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "gradphi/homogenized.hpp"
#include "gradphi/io.hpp"
#include "gradphi/numerics.hpp"
#include "gradphi/potential.hpp"

namespace gradphi {

using ScalarFunction = std::function<double(std::span<const double>)>;

// Smooth functions on the unit torus: "wave" = sin(2 pi x1) + cos(2 pi x2) / 2
// (sin(2 pi x1) in d = 1), "sine" = sin(2 pi x1), "constant" = 1.
ScalarFunction initial_condition(const std::string& name);
std::vector<std::string> initial_condition_names();

// Runs fn(0..count-1) on `threads` workers. Each index runs exactly once;
// callers store results by index so the merge order never depends on timing.
void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& fn);

// Settings shared by every experiment. Experiment-specific keys live in the
// section named after the experiment and are read from `config`.
struct ExperimentConfig {
  std::string experiment;
  PotentialSpec potential;
  int dim = 2;
  std::string initial = "wave";
  std::vector<double> eps_list;
  double dt = 2e-3;
  double burn_in = -1.0;
  double horizon = 1.0;
  std::uint64_t seed = 1;
  std::size_t replicas = 1;
  int threads = 1;
  std::string output_dir = "out";
  std::string table_path;  // sigma table file; empty builds one from [table]
  Config config;

  // ConfigError naming the offending key.
  static ExperimentConfig from_config(const Config& c);
};

struct HydroLimitOptions {
  int dim = 2;
  std::string initial = "wave";
  std::vector<double> eps_list;  // sorted decreasing, 1/eps integers
  std::size_t replicas = 8;
  double micro_dt = 2e-3;
  double taming_bound = 0.0;
  int frames = 64;               // time samples per macro unit
  double macro_dt = 2e-4;        // homogenized solver step
  std::uint64_t seed = 1;
  int threads = 1;
  // Replace ubar by the noiseless micro dynamic of the same run (pure fluctuation).
  bool drift_reference = false;
  bool keep_snapshots = true;    // final frame of replica 0 per eps
};

struct HydroLimitRow {
  double eps = 0.0;
  std::vector<double> samples;  // E per replica
  Estimate E;                   // mean and standard error over replicas
};

struct HydroSnapshot {
  double eps = 0.0;
  Field u;     // u^eps(1, .)
  Field ubar;  // reference at the same sites
};

struct HydroLimitResult {
  std::vector<HydroLimitRow> rows;  // as eps_list
  // log E against log eps over all replica samples (residual-based errors).
  LinearFit fit;
  // Same on the replica means weighted by their relative standard errors.
  LinearFit weighted_fit;
  double theta = 0.0, theta_stderr = 0.0;
  bool monotone = false;           // E strictly decreasing as eps halves
  bool theta_positive = false;     // theta > 2 theta_stderr
  std::vector<HydroSnapshot> snapshots;
};

// E(eps) = int_0^1 eps^d sum_x |u^eps - ubar|^2 dt by the trapezoid rule on
// `frames` samples per unit time. u^eps = eps U(t / eps^2, x / eps) with U the
// Langevin dynamic started from f / eps with raw increments; ubar is the
// homogenized solution on the finest grid restricted to each coarser one.
HydroLimitResult run_hydro_limit(const PotentialSpec& spec, const HomogenizedFlux& sigma,
                                 const HydroLimitOptions& opts);

struct ModerationInstance {
  int dim = 0, side = 0;
  double p_norm = 0.0;
  double max_ratio = 0.0;  // moderation inequality ratio, maximized over frames and sites
  std::size_t evaluated = 0;
  double m_min = 0.0, m_mean = 0.0, m_max = 0.0;
};

// One battery instance: d, side and slope are drawn from the seed; a
// stationary run gives the environment, the moderated field and a heat kernel
// on which the moderation ratio is evaluated.
ModerationInstance moderation_instance(const PotentialSpec& spec, std::uint64_t seed, double horizon,
                                       double dt);

// Loads the table named in the config or builds it from the [table] keys.
std::shared_ptr<const SurfaceTensionTable> load_or_build_table(const ExperimentConfig& cfg,
                                                               const std::string& write_to = "");

// Homogenized flux for the configured potential: linear for the quadratic
// family, table-backed otherwise.
HomogenizedFlux homogenized_flux_for(const ExperimentConfig& cfg, const std::string& write_table_to = "");

// Runs one named experiment, writes its CSVs and manifest.json into the output
// directory and returns the manifest. Ids: simulate, surface-tension, tails,
// exit-times, moderated, flux-weak-norm, two-scale, heat-kernel, hydro-limit.
// UnknownExperiment for anything else. On a numerical failure the manifest is
// written with the error and the exception is rethrown.
RunManifest run_named_experiment(const ExperimentConfig& cfg);

std::vector<std::string> experiment_names();

}  // namespace gradphi
