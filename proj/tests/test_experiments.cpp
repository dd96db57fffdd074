#include <doctest.h>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "gradphi/errors.hpp"
#include "gradphi/experiments.hpp"

using namespace gradphi;

namespace {

std::string scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "gradphi_test_experiments" / name;
  std::filesystem::remove_all(dir);
  return dir.string();
}

ExperimentConfig config_of(const std::string& text, const std::string& out) {
  Config c = Config::parse(text);
  c.set("run.out", out);
  return ExperimentConfig::from_config(c);
}

std::string field_in_error(const std::string& text) {
  try {
    ExperimentConfig::from_config(Config::parse(text));
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("named initial conditions") {
  const std::vector<double> x{0.25, 0.5};
  CHECK(initial_condition("wave")(x) == doctest::Approx(1.0 - 0.5));
  CHECK(initial_condition("sine")(x) == doctest::Approx(1.0));
  CHECK(initial_condition("constant")(x) == 1.0);
  CHECK_THROWS_AS(initial_condition("bogus"), ConfigError);
}

TEST_CASE("parallel_for runs every index once and reports the lowest failure") {
  std::vector<std::atomic<int>> hits(50);
  parallel_for(50, 4, [&](std::size_t i) { ++hits[i]; });
  for (auto& h : hits) CHECK(h.load() == 1);
  try {
    parallel_for(20, 3, [](std::size_t i) {
      if (i == 7 || i == 13) throw NumericalFailure("job " + std::to_string(i));
    });
    CHECK(false);
  } catch (const NumericalFailure& e) {
    CHECK(std::string(e.what()) == "job 7");
  }
}

TEST_CASE("config validation names the field") {
  CHECK(field_in_error("[model]\neps = 1/8, 0.3\n").find("model.eps[1]") != std::string::npos);
  CHECK(field_in_error("[model]\neps = 1/16, 1/8\n").find("model.eps") != std::string::npos);
  CHECK(field_in_error("[model]\ndim = 5\n").find("model.dim") != std::string::npos);
  CHECK(field_in_error("[model]\ninitial = nope\n").find("model.initial") != std::string::npos);
  CHECK(field_in_error("[potential]\nvariant = cubic\n").find("potential.variant") != std::string::npos);
  CHECK(field_in_error("[potential]\nr = 1.5\n").find("potential") != std::string::npos);
  CHECK(field_in_error("[run]\nthreads = 0\n").find("run.threads") != std::string::npos);
  const ExperimentConfig ok = ExperimentConfig::from_config(Config::parse("[model]\neps = 1/4, 1/8\n"));
  CHECK(ok.eps_list == std::vector<double>{0.25, 0.125});
}

TEST_CASE("unknown experiment") {
  const ExperimentConfig c = config_of("[run]\nexperiment = warp-drive\n", scratch("unknown"));
  CHECK_THROWS_AS(run_named_experiment(c), UnknownExperiment);
}

TEST_CASE("reruns reproduce checksums and CSVs carry the manifest reference") {
  const std::string text =
      "[run]\nexperiment = hydro-limit\nreplicas = 2\n[potential]\nvariant = quadratic\n"
      "[model]\neps = 1/4, 1/8\n[hydro-limit]\nframes = 16\n";
  const RunManifest a = run_named_experiment(config_of(text, scratch("rerun_a")));
  ExperimentConfig threaded = config_of(text, scratch("rerun_b"));
  threaded.threads = 3;
  const RunManifest b = run_named_experiment(threaded);
  REQUIRE(a.outputs.size() == b.outputs.size());
  for (std::size_t i = 0; i < a.outputs.size(); ++i) CHECK(a.outputs[i].sha256 == b.outputs[i].sha256);
  const CsvTable t = read_csv(threaded.output_dir + "/hydro_limit_summary.csv");
  CHECK(t.manifest == "manifest.json");
  CHECK(t.header == std::vector<std::string>{"eps", "E_mean", "E_stderr", "replicas"});
  CHECK(a.config_hash.size() == 64);
  CHECK(a.config.at("hydro-limit.frames") == "16");
}

TEST_CASE("quadratic hydrodynamic limit: errors fall with eps, fluctuation floor is positive") {
  HydroLimitOptions o;
  o.dim = 2;
  // The spatial mean carries a chi-square(1) fluctuation of size eps^2, so
  // the comparison uses a factor 4 in eps.
  o.eps_list = {1.0 / 4, 1.0 / 16};
  o.replicas = 6;
  o.frames = 16;
  const PotentialSpec q = PotentialSpec::quadratic();
  const HydroLimitResult r = run_hydro_limit(q, HomogenizedFlux::linear(2), o);
  CHECK(r.monotone);
  CHECK(r.theta > 0);
  REQUIRE(r.snapshots.size() == 2);
  CHECK(r.snapshots[1].u.size() == 256);

  // Drift-only reference on the finest grid: pure fluctuation.
  o.eps_list = {1.0 / 8};
  o.drift_reference = true;
  const HydroLimitResult d = run_hydro_limit(q, HomogenizedFlux::linear(2), o);
  for (double s : d.rows[0].samples) CHECK(s > 0);

  o.frames = 3;
  o.drift_reference = false;
  CHECK_THROWS_AS(run_hydro_limit(q, HomogenizedFlux::linear(2), o), BadScale);
}

TEST_CASE("numerical failure leaves a manifest entry") {
  const std::string out = scratch("blowup");
  const ExperimentConfig c = config_of(
      "[run]\nexperiment = hydro-limit\nreplicas = 2\n[potential]\nr = 6\nR0 = 0\n"
      "[model]\neps = 1/4\n[hydro-limit]\nmicro_dt = 0.5\nframes = 4\nreference = drift\ntaming_bound = 1e300\n",
      out);
  CHECK_THROWS_AS(run_named_experiment(c), NonFinite);
  std::ifstream in(std::filesystem::path(out) / "manifest.json");
  REQUIRE(in.good());
  const auto j = nlohmann::json::parse(in);
  CHECK(j["results"]["status"] == "numerical-failure");
}

TEST_CASE("surface-tension experiment with the quadratic potential gives the identity") {
  const ExperimentConfig c = config_of(
      "[run]\nexperiment = surface-tension\n[potential]\nvariant = quadratic\n"
      "[surface-tension]\nL = 4\nmagnitudes = 0, 1, 2\nhorizon = 40\ndt = 0.01\nburn_in = 5\n",
      scratch("st"));
  const RunManifest m = run_named_experiment(c);
  CHECK(m.results["max_identity_z"].get<double>() < 4.0);
}

TEST_CASE("heat-kernel experiment conserves zero mass") {
  const ExperimentConfig c = config_of("[run]\nexperiment = heat-kernel\n[heat-kernel]\nN = 5\nT = 0.5\n", scratch("hk"));
  const RunManifest m = run_named_experiment(c);
  CHECK(m.results["max_abs_mass"].get<double>() < 1e-10);
  CHECK(m.results["max_abs_value"].get<double>() <= 1.0);
}
