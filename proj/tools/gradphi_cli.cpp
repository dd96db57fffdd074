#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "gradphi/errors.hpp"
#include "gradphi/experiments.hpp"
#include "gradphi/io.hpp"

using namespace gradphi;

namespace {

constexpr int kConfigError = 2;
constexpr int kNumericalFailure = 3;

std::string join(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v[i]);
    out += (i ? "," : "") + std::string(buf);
  }
  return out;
}

// Options bound to "section.key" config entries; only set ones override the file.
struct Overrides {
  std::vector<std::pair<std::string, std::optional<std::string>>> text;
  std::vector<std::pair<std::string, std::optional<double>>> num;
  std::vector<std::pair<std::string, std::optional<long long>>> ints;
  std::vector<std::pair<std::string, std::vector<double>>> lists;

  void apply(Config& c) const {
    for (const auto& [k, v] : text)
      if (v) c.set(k, *v);
    for (const auto& [k, v] : num)
      if (v) {
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.17g", *v);
        c.set(k, buf);
      }
    for (const auto& [k, v] : ints)
      if (v) c.set(k, std::to_string(*v));
    for (const auto& [k, v] : lists)
      if (!v.empty()) c.set(k, join(v));
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Langevin dynamics of gradient interface models: experiments and diagnostics.\n"
               "Every subcommand writes CSV files and manifest.json into --out."};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<long long> threads;
  bool quiet = false;
  std::vector<std::string> sets;
  app.add_option("--config", config_path, "Config file with [sections] of key = value");
  app.add_option("--seed", seed, "Master seed (run.seed)");
  app.add_option("--out", out_dir, "Output directory (run.out)");
  app.add_option("--threads", threads, "Worker threads (run.threads)");
  app.add_flag("--quiet", quiet, "Print nothing on success");
  app.add_option("--set", sets, "Extra section.key=value overrides");

  Overrides ov;
  auto num = [&](CLI::App* sub, const std::string& flag, const std::string& key, const std::string& help) {
    ov.num.emplace_back(key, std::nullopt);
    sub->add_option(flag, ov.num.back().second, help + " (" + key + ")");
  };
  auto integer = [&](CLI::App* sub, const std::string& flag, const std::string& key, const std::string& help) {
    ov.ints.emplace_back(key, std::nullopt);
    sub->add_option(flag, ov.ints.back().second, help + " (" + key + ")");
  };
  auto list = [&](CLI::App* sub, const std::string& flag, const std::string& key, const std::string& help) {
    ov.lists.emplace_back(key, std::vector<double>{});
    sub->add_option(flag, ov.lists.back().second, help + " (" + key + ")")->delimiter(',');
  };
  auto text = [&](CLI::App* sub, const std::string& flag, const std::string& key, const std::string& help) {
    ov.text.emplace_back(key, std::nullopt);
    sub->add_option(flag, ov.text.back().second, help + " (" + key + ")");
  };
  // Stable addresses for the bound optionals.
  ov.num.reserve(64);
  ov.ints.reserve(64);
  ov.lists.reserve(64);
  ov.text.reserve(64);

  auto* sim = app.add_subcommand("simulate", "Stationary tilted Langevin run on a torus of side L");
  sim->footer("Outputs: trajectory.bin (binary frames), simulate.csv with columns\n"
              "  time, step, mean_phi, mean_grad_sq, mean_flux_1..d");
  integer(sim, "--L", "simulate.L", "Torus side");
  list(sim, "--slope", "simulate.slope", "Tilt p, comma separated");
  num(sim, "--horizon", "simulate.horizon", "Recorded time");
  num(sim, "--dt", "simulate.dt", "Time step");
  num(sim, "--stride", "simulate.record_stride", "Time between recorded frames");

  auto* st = app.add_subcommand("surface-tension", "Surface tension, its gradient and Hessian form along a ray");
  st->footer("Outputs: surface_tension.csv with columns\n"
             "  p_1..d, grad_1..d, grad_err_1..d, sigma, sigma_err, hessian_form, hessian_err");
  integer(st, "--L", "surface-tension.L", "Torus side");
  list(st, "--magnitudes", "surface-tension.magnitudes", "Slope magnitudes");
  list(st, "--direction", "surface-tension.direction", "Slope direction");
  integer(st, "--value-nodes", "surface-tension.value_nodes", "Gauss nodes for sigma (0 skips it)");
  num(st, "--horizon", "surface-tension.horizon", "Sampling time per slope");

  auto* hk = app.add_subcommand("heat-kernel", "Heat kernel of the constant environment c I");
  hk->footer("Outputs: heat_kernel.csv with columns time, mass, max_abs, l2, value_at_start;\n"
             "  heat_kernel_final.csv with columns x_1..d, value");
  integer(hk, "--N", "heat-kernel.N", "Torus side");
  num(hk, "--T", "heat-kernel.T", "Final time");
  num(hk, "--dt", "heat-kernel.dt", "Time step");
  num(hk, "--c", "heat-kernel.c", "Environment constant");
  integer(hk, "--site", "heat-kernel.site", "Start site index");

  auto* hl = app.add_subcommand("hydro-limit", "Distance between the rescaled dynamic and the homogenized solution");
  hl->footer("Outputs: hydro_limit.csv (eps, replica, E), hydro_limit_summary.csv\n"
             "  (eps, E_mean, E_stderr, replicas), snapshots.csv (eps, x_1..d, u, ubar) at t = 1,\n"
             "  sigma_table.txt when a table is built");
  list(hl, "--eps", "model.eps", "Decreasing eps values with 1/eps integer");
  integer(hl, "--replicas", "run.replicas", "Replicas per eps");
  text(hl, "--reference", "hydro-limit.reference", "homogenized or drift");
  text(hl, "--table", "table.path", "Existing sigma table file");
  integer(hl, "--frames", "hydro-limit.frames", "Time samples per unit time");

  auto* dg = app.add_subcommand("diagnostics", "One diagnostic experiment, selected by flag");
  dg->footer("Outputs by flag:\n"
             "  --moderated       moderated.csv (instance, dim, side, p_norm, max_ratio, evaluated, m_min, m_mean, m_max)\n"
             "  --exit-times      exit_times.csv (T, confined, replicas, probability, lo, hi)\n"
             "  --tails           tails.csv (K, K_pow, probability, count)\n"
             "  --two-scale       two_scale.json, two_scale_slopes.csv (center, time, y_1..d, p_1..d);\n"
             "                    the JSON report is also printed\n"
             "  --flux-weak-norm  flux_weak_norm.csv (L, ratio, ratio_err, replicas)");
  bool d_mod = false, d_exit = false, d_tails = false, d_two = false, d_flux = false;
  dg->add_flag("--moderated", d_mod, "Moderated environment checks and ratio battery");
  dg->add_flag("--exit-times", d_exit, "Confinement probabilities");
  dg->add_flag("--tails", d_tails, "Gradient tail regression");
  dg->add_flag("--two-scale", d_two, "Two-scale expansion error terms");
  dg->add_flag("--flux-weak-norm", d_flux, "Multiscale functional of the centered flux");
  num(dg, "--eps", "two-scale.eps", "Two-scale eps");
  num(dg, "--kappa", "two-scale.kappa", "Two-scale mesoscopic scale");

  auto* tl = app.add_subcommand("tails", "Gradient tail regression of a stationary run");
  tl->footer("Outputs: tails.csv with columns K, K_pow, probability, count");
  integer(tl, "--L", "tails.L", "Torus side");
  list(tl, "--slope", "tails.slope", "Tilt p");
  num(tl, "--horizon", "tails.horizon", "Recorded time");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigError;
  }

  try {
    Config cfg = config_path.empty() ? Config() : Config::load(config_path);
    ov.apply(cfg);
    if (seed) cfg.set("run.seed", std::to_string(*seed));
    if (threads) cfg.set("run.threads", std::to_string(*threads));
    if (!out_dir.empty()) cfg.set("run.out", out_dir);
    for (const std::string& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos || eq == 0) throw ConfigError("--set: expected section.key=value, got '" + s + "'");
      cfg.set(s.substr(0, eq), s.substr(eq + 1));
    }

    std::string experiment = app.get_subcommands().front()->get_name();
    if (experiment == "diagnostics") {
      const int picked = d_mod + d_exit + d_tails + d_two + d_flux;
      if (picked != 1) throw ConfigError("diagnostics: choose exactly one of --moderated, --exit-times, --tails, --two-scale, --flux-weak-norm");
      experiment = d_mod ? "moderated" : d_exit ? "exit-times" : d_tails ? "tails" : d_two ? "two-scale" : "flux-weak-norm";
    }
    if (cfg.has("run.experiment") && cfg.get_string("run.experiment", "") != experiment && !quiet)
      std::cerr << "note: run.experiment in the config is replaced by " << experiment << "\n";
    cfg.set("run.experiment", experiment);

    const ExperimentConfig ec = ExperimentConfig::from_config(cfg);
    const RunManifest m = run_named_experiment(ec);
    if (!quiet) {
      if (experiment == "two-scale")
        std::cout << m.results.dump(2) << "\n";
      else
        std::cout << m.to_json().dump(2) << "\n";
      for (const std::string& k : ec.config.unused_keys()) std::cerr << "warning: unused config key " << k << "\n";
    }
    return 0;
  } catch (const InvalidArgument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumericalFailure;
  }
}
