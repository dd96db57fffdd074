#include "gradphi/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numbers>
#include <thread>

#include "gradphi/dynamics.hpp"
#include "gradphi/errors.hpp"
#include "gradphi/gibbs.hpp"
#include "gradphi/moderated.hpp"
#include "gradphi/noise.hpp"
#include "gradphi/norms.hpp"
#include "gradphi/parabolic.hpp"
#include "gradphi/twoscale.hpp"

namespace gradphi {

ScalarFunction initial_condition(const std::string& name) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  if (name == "wave")
    return [two_pi](std::span<const double> x) {
      return std::sin(two_pi * x[0]) + (x.size() > 1 ? 0.5 * std::cos(two_pi * x[1]) : 0.0);
    };
  if (name == "sine") return [two_pi](std::span<const double> x) { return std::sin(two_pi * x[0]); };
  if (name == "constant") return [](std::span<const double>) { return 1.0; };
  throw ConfigError("model.initial: unknown initial condition '" + name + "'");
}

std::vector<std::string> initial_condition_names() { return {"wave", "sine", "constant"}; }

void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(std::max(1, threads), count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(count);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  // Report the failure of the lowest index so the outcome is schedule-independent.
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------------------

namespace {

int inverse_integer(double eps, const std::string& field) {
  if (!(eps > 0 && eps < 1)) throw ConfigError(field + ": eps must lie in (0, 1)");
  const long long N = std::llround(1.0 / eps);
  if (std::abs(N * eps - 1.0) > 1e-9) throw ConfigError(field + ": 1/eps must be an integer, got eps = " + std::to_string(eps));
  return static_cast<int>(N);
}

std::vector<double> slope_of(const Config& c, const std::string& key, int dim, double first) {
  std::vector<double> def(dim, 0.0);
  def[0] = first;
  std::vector<double> p = c.get_doubles(key, def);
  if (static_cast<int>(p.size()) != dim)
    throw ConfigError(key + ": expected " + std::to_string(dim) + " components");
  return p;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_config(const Config& c) {
  ExperimentConfig e;
  e.config = c;
  const Config& k = e.config;
  e.experiment = k.get_string("run.experiment", "");
  e.seed = k.get_u64("run.seed", 1);
  const long long replicas = k.get_int("run.replicas", 1);
  if (replicas < 1) throw ConfigError("run.replicas: must be at least 1");
  e.replicas = static_cast<std::size_t>(replicas);
  const long long threads = k.get_int("run.threads", 1);
  if (threads < 1 || threads > 1024) throw ConfigError("run.threads: must lie in [1, 1024]");
  e.threads = static_cast<int>(threads);
  e.output_dir = k.get_string("run.out", "out");

  const std::string variant = k.get_string("potential.variant", "degenerate_radial");
  try {
    e.potential.variant = parse_potential_variant(variant);
  } catch (const ConfigError&) {
    throw ConfigError("potential.variant: unknown variant '" + variant + "'");
  }
  e.potential.r = k.get_double("potential.r", 3.0);
  e.potential.R0 = k.get_double("potential.R0", 1.0);
  e.potential.c = k.get_double("potential.c", 1.0);
  try {
    e.potential.validate();
  } catch (const InvalidArgument& err) {
    throw ConfigError(std::string("potential: ") + err.what());
  }

  const long long dim = k.get_int("model.dim", 2);
  if (dim < 1 || dim > 3) throw ConfigError("model.dim: must be 1, 2 or 3");
  e.dim = static_cast<int>(dim);
  e.initial = k.get_string("model.initial", "wave");
  initial_condition(e.initial);
  e.eps_list = k.get_doubles("model.eps", {1.0 / 8, 1.0 / 16, 1.0 / 32});
  for (std::size_t i = 0; i < e.eps_list.size(); ++i) {
    inverse_integer(e.eps_list[i], "model.eps[" + std::to_string(i) + "]");
    if (i > 0 && !(e.eps_list[i] < e.eps_list[i - 1]))
      throw ConfigError("model.eps: values must be sorted decreasing");
  }
  e.dt = k.get_double("model.dt", 2e-3);
  if (!(e.dt > 0)) throw ConfigError("model.dt: must be positive");
  e.burn_in = k.get_double("model.burn_in", -1.0);
  e.horizon = k.get_double("model.horizon", 1.0);
  if (!(e.horizon > 0)) throw ConfigError("model.horizon: must be positive");
  e.table_path = k.get_string("table.path", "");
  return e;
}

// ---------------------------------------------------------------------------

namespace {

// eps U(t / eps^2, x / eps) at t = i / frames, i = 0..frames, on the side-N torus.
void simulate_rescaled(const PotentialSpec& spec, int dim, int N, const ScalarFunction& f,
                       const HydroLimitOptions& opts, std::uint64_t seed, bool noiseless,
                       const std::function<void(int, std::span<const double>)>& observe) {
  const TorusGrid G(dim, N, 1.0 / N), Gm(dim, N);
  const double eps = 1.0 / N;
  const long long per_frame = std::llround(static_cast<double>(N) * N / (opts.frames * opts.micro_dt));
  const Field f0 = sample_on_torus(G, f);
  DynamicsState U = DynamicsState::flat(Gm, spec, std::vector<double>(dim, 0.0));
  for (std::size_t x = 0; x < Gm.size(); ++x) U.phi[x] = f0[x] / eps;
  LangevinOptions lo;
  lo.dt = opts.micro_dt;
  lo.project_noise = false;
  lo.taming_bound = opts.taming_bound;
  LangevinStepper stepper(Gm, spec, std::vector<double>(dim, 0.0), lo);
  if (noiseless) stepper.set_noise_hook([](std::int64_t, std::span<double> inc) { std::fill(inc.begin(), inc.end(), 0.0); });
  const NoiseStream noise(seed, Gm, opts.micro_dt);
  std::vector<double> u(Gm.size());
  auto emit = [&](int i) {
    for (std::size_t x = 0; x < u.size(); ++x) {
      u[x] = eps * U.phi[x];
      if (!std::isfinite(u[x])) throw NonFinite("hydro-limit: non-finite micro state");
    }
    observe(i, u);
  };
  emit(0);
  for (int i = 1; i <= opts.frames; ++i) {
    for (long long s = 0; s < per_frame; ++s) stepper.step(U, noise);
    emit(i);
  }
}

}  // namespace

HydroLimitResult run_hydro_limit(const PotentialSpec& spec, const HomogenizedFlux& sigma,
                                 const HydroLimitOptions& opts) {
  spec.validate();
  require(!opts.eps_list.empty(), "hydro-limit: empty eps list");
  require(opts.replicas >= 2, "hydro-limit: need at least 2 replicas");
  require(opts.frames >= 1 && opts.micro_dt > 0 && opts.macro_dt > 0, "hydro-limit: bad frames or steps");
  if (sigma.dim != opts.dim) throw DimensionMismatch("hydro-limit: flux dimension != dim");
  const int d = opts.dim;
  std::vector<int> sides;
  for (std::size_t i = 0; i < opts.eps_list.size(); ++i) {
    const int N = inverse_integer(opts.eps_list[i], "hydro-limit.eps");
    if (i > 0 && N <= sides.back()) throw ConfigError("hydro-limit.eps: values must be sorted decreasing");
    const double per_frame = static_cast<double>(N) * N / (opts.frames * opts.micro_dt);
    if (per_frame < 1 || std::abs(per_frame - std::llround(per_frame)) > 1e-9 * per_frame)
      throw BadScale("hydro-limit.frames: N^2 / (frames * micro_dt) must be an integer for N = " + std::to_string(N));
    sides.push_back(N);
  }
  const int Nf = sides.back();
  for (int N : sides)
    if (Nf % N != 0) throw BadScale("hydro-limit.eps: the finest grid must refine every coarser one");
  const ScalarFunction f = initial_condition(opts.initial);

  std::vector<double> times(opts.frames + 1);
  for (int i = 0; i <= opts.frames; ++i) times[i] = static_cast<double>(i) / opts.frames;

  // Reference fields per eps, frames 0..frames, restricted to that grid.
  const std::size_t E = sides.size();
  std::vector<std::vector<std::vector<double>>> ref(E);
  if (!opts.drift_reference) {
    HomogenizedOptions ho;
    ho.dt = opts.macro_dt;
    ho.output_every = 1.0 / opts.frames;
    const TorusGrid Gf(d, Nf, 1.0 / Nf);
    const FieldSeries fine = solve_homogenized(sigma, sample_on_torus(Gf, f), 1.0, ho);
    if (fine.frames.size() != times.size()) throw NumericalFailure("hydro-limit: reference output times mismatch");
    for (std::size_t e = 0; e < E; ++e) {
      const TorusGrid G(d, sides[e]);
      const int ratio = Nf / sides[e];
      std::vector<int> fc(d);
      ref[e].assign(times.size(), std::vector<double>(G.size()));
      for (std::size_t i = 0; i < times.size(); ++i)
        for (std::size_t x = 0; x < G.size(); ++x) {
          const std::vector<int> c = G.coords(x);
          for (int k = 0; k < d; ++k) fc[k] = c[k] * ratio;
          ref[e][i][x] = fine.frames[i][Gf.index(fc)];
        }
    }
  } else {
    parallel_for(E, opts.threads, [&](std::size_t e) {
      ref[e].resize(times.size());
      simulate_rescaled(spec, d, sides[e], f, opts, 0, true,
                        [&](int i, std::span<const double> u) { ref[e][i].assign(u.begin(), u.end()); });
    });
  }

  // Jobs sorted by (eps index, replica).
  const std::size_t R = opts.replicas;
  std::vector<double> samples(E * R);
  std::vector<HydroSnapshot> snaps(E);
  parallel_for(E * R, opts.threads, [&](std::size_t job) {
    const std::size_t e = job / R, r = job % R;
    const int N = sides[e];
    const double vol = std::pow(1.0 / N, d);
    std::vector<double> e2(times.size());
    const std::uint64_t seed = derive_seed(opts.seed, (static_cast<std::uint64_t>(e) << 32) | r);
    simulate_rescaled(spec, d, N, f, opts, seed, false, [&](int i, std::span<const double> u) {
      double acc = 0.0;
      for (std::size_t x = 0; x < u.size(); ++x) acc += (u[x] - ref[e][i][x]) * (u[x] - ref[e][i][x]);
      e2[i] = vol * acc;
      if (opts.keep_snapshots && r == 0 && i == opts.frames) {
        const TorusGrid G(d, N, 1.0 / N);
        snaps[e] = HydroSnapshot{1.0 / N, Field(G, std::vector<double>(u.begin(), u.end())), Field(G, ref[e][i])};
      }
    });
    samples[job] = trapezoid(times, e2);
  });

  HydroLimitResult res;
  std::vector<double> lx, ly, mx, my, ms;
  bool weighted_ok = true;
  for (std::size_t e = 0; e < E; ++e) {
    HydroLimitRow row;
    row.eps = 1.0 / sides[e];
    row.samples.assign(samples.begin() + e * R, samples.begin() + (e + 1) * R);
    row.E = mean_and_stderr(row.samples);
    for (double s : row.samples) {
      if (!(s > 0)) throw NumericalFailure("hydro-limit: non-positive error sample");
      lx.push_back(std::log(row.eps));
      ly.push_back(std::log(s));
    }
    mx.push_back(std::log(row.eps));
    my.push_back(std::log(row.E.mean));
    ms.push_back(row.E.stderr_ / row.E.mean);
    weighted_ok = weighted_ok && row.E.stderr_ > 0;
    res.rows.push_back(std::move(row));
  }
  if (opts.keep_snapshots) res.snapshots = std::move(snaps);
  res.monotone = true;
  for (std::size_t e = 1; e < E; ++e) res.monotone = res.monotone && res.rows[e].E.mean < res.rows[e - 1].E.mean;
  if (E >= 2) {
    res.fit = linear_fit(lx, ly);
    if (weighted_ok) res.weighted_fit = weighted_linear_fit(mx, my, ms);
    res.theta = res.fit.slope;
    res.theta_stderr = res.fit.slope_stderr;
    res.theta_positive = res.theta > 2.0 * res.theta_stderr;
  }
  return res;
}

// ---------------------------------------------------------------------------

std::shared_ptr<const SurfaceTensionTable> load_or_build_table(const ExperimentConfig& cfg,
                                                               const std::string& write_to) {
  const Config& c = cfg.config;
  if (!cfg.table_path.empty()) {
    auto t = std::make_shared<SurfaceTensionTable>(SurfaceTensionTable::read(cfg.table_path));
    if (t->dim() != cfg.dim) throw ConfigError("table.path: table dimension differs from model.dim");
    if (write_to.size()) t->write(write_to);
    return t;
  }
  TableAxes axes;
  axes.dim = cfg.dim;
  axes.p_max = c.get_double("table.p_max", 8.0);
  const long long nodes = c.get_int("table.nodes", 17);
  if (nodes < 3 || nodes % 2 == 0) throw ConfigError("table.nodes: must be odd and at least 3");
  axes.nodes_per_axis = static_cast<int>(nodes);
  if (!(axes.p_max > 0)) throw ConfigError("table.p_max: must be positive");
  const long long L = c.get_int("table.L", 8);
  if (L < 2) throw ConfigError("table.L: must be at least 2");
  TableBuildOptions bo;
  bo.mc.dt = c.get_double("table.dt", 1e-3);
  bo.mc.burn_in = c.get_double("table.burn_in", 20.0);
  bo.mc.horizon = c.get_double("table.horizon", 100.0);
  bo.mc.batches = static_cast<int>(c.get_int("table.batches", 20));
  bo.mc.seed = c.get_u64("table.seed", derive_seed(cfg.seed, 0x7ab1e));
  bo.mc.sample_every = static_cast<int>(c.get_int("table.sample_every", 10));
  auto t = std::make_shared<SurfaceTensionTable>(
      build_sigma_table(cfg.potential, TorusGrid(cfg.dim, static_cast<int>(L)), axes, bo));
  if (write_to.size()) t->write(write_to);
  return t;
}

HomogenizedFlux homogenized_flux_for(const ExperimentConfig& cfg, const std::string& write_table_to) {
  if (cfg.potential.variant == PotentialVariant::Quadratic) return HomogenizedFlux::linear(cfg.dim, cfg.potential.c);
  return HomogenizedFlux::from_table(load_or_build_table(cfg, write_table_to));
}

std::vector<std::string> experiment_names() {
  return {"simulate", "surface-tension", "tails", "exit-times", "moderated",
          "flux-weak-norm", "two-scale", "heat-kernel", "hydro-limit"};
}

// ---------------------------------------------------------------------------

namespace {

namespace fs = std::filesystem;

struct Context {
  const ExperimentConfig& cfg;
  const Config& c;
  std::string dir;
  RunManifest& manifest;
  const std::string& section;

  std::string key(const std::string& k) const { return section + "." + k; }
  void csv(const std::string& name, const std::vector<std::string>& header,
           const std::vector<std::vector<double>>& rows) const {
    write_csv((fs::path(dir) / name).string(), header, rows, "manifest.json");
    manifest.add_output(dir, name);
  }
};

std::vector<std::string> indexed(const std::string& stem, int d) {
  std::vector<std::string> out;
  for (int i = 1; i <= d; ++i) out.push_back(stem + "_" + std::to_string(i));
  return out;
}

std::vector<std::string> concat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

int side_of(const Context& x, const std::string& k, int fallback) {
  const long long L = x.c.get_int(x.key(k), fallback);
  if (L < 2 || L > 4096) throw ConfigError(x.key(k) + ": side must lie in [2, 4096]");
  return static_cast<int>(L);
}

MonteCarloParams mc_of(const Context& x, double horizon) {
  MonteCarloParams mc;
  mc.dt = x.c.get_double(x.key("dt"), x.cfg.dt);
  mc.burn_in = x.c.get_double(x.key("burn_in"), x.cfg.burn_in);
  mc.horizon = x.c.get_double(x.key("horizon"), horizon);
  mc.batches = static_cast<int>(x.c.get_int(x.key("batches"), 20));
  mc.seed = x.cfg.seed;
  mc.sample_every = static_cast<int>(x.c.get_int(x.key("sample_every"), 1));
  if (!(mc.dt > 0) || !(mc.horizon > 0) || mc.batches < 10 || mc.sample_every < 1)
    throw ConfigError(x.section + ": dt and horizon must be positive, batches >= 10, sample_every >= 1");
  return mc;
}

void run_simulate(const Context& x) {
  const int d = x.cfg.dim, L = side_of(x, "L", 16);
  const TorusGrid g(d, L);
  const std::vector<double> p = slope_of(x.c, x.key("slope"), d, 0.0);
  StationaryOptions so;
  so.dt = x.c.get_double(x.key("dt"), x.cfg.dt);
  so.burn_in = x.c.get_double(x.key("burn_in"), x.cfg.burn_in);
  so.horizon = x.c.get_double(x.key("horizon"), 10.0);
  so.record_stride = x.c.get_double(x.key("record_stride"), 0.1);
  const Trajectory traj = simulate_stationary(x.cfg.potential, g, p, x.cfg.seed, so);
  write_trajectory((fs::path(x.dir) / "trajectory.bin").string(), traj);
  x.manifest.add_output(x.dir, "trajectory.bin");
  std::vector<std::vector<double>> rows;
  std::vector<double> grad(g.size() * d);
  for (const Frame& f : traj.frames) {
    gradient_into(g, f.phi.values, grad);
    double g2 = 0.0;
    for (double v : grad) g2 += v * v;
    std::vector<double> row{f.time, static_cast<double>(f.step), mean(f.phi.values), g2 / g.size()};
    for (int i = 0; i < d; ++i) {
      double s = 0.0;
      for (std::size_t site = 0; site < g.size(); ++site) s += f.flux[site * d + i];
      row.push_back(s / g.size());
    }
    rows.push_back(std::move(row));
  }
  x.csv("simulate.csv", concat({"time", "step", "mean_phi", "mean_grad_sq"}, indexed("mean_flux", d)), rows);
  x.manifest.results = {{"frames", traj.frames.size()}, {"side", L}};
}

void run_surface_tension(const Context& x) {
  const int d = x.cfg.dim, L = side_of(x, "L", 8);
  const TorusGrid g(d, L);
  const std::vector<double> mags = x.c.get_doubles(x.key("magnitudes"), {0.0, 1.0, 2.0, 4.0});
  std::vector<double> dir = slope_of(x.c, x.key("direction"), d, 1.0);
  double dn = 0.0;
  for (double v : dir) dn += v * v;
  if (!(dn > 0)) throw ConfigError(x.key("direction") + ": must be nonzero");
  for (double& v : dir) v /= std::sqrt(dn);
  const int value_nodes = static_cast<int>(x.c.get_int(x.key("value_nodes"), 0));
  const bool hessian = x.c.get_bool(x.key("hessian"), true);
  MonteCarloParams mc = mc_of(x, 100.0);

  std::vector<std::vector<double>> rows(mags.size());
  std::vector<double> zmax(mags.size(), 0.0);
  parallel_for(mags.size(), x.cfg.threads, [&](std::size_t k) {
    std::vector<double> p(d);
    for (int i = 0; i < d; ++i) p[i] = mags[k] * dir[i];
    MonteCarloParams m = mc;
    m.seed = derive_seed(mc.seed, k);
    std::vector<std::vector<double>> lambdas;
    if (hessian) lambdas.push_back(dir);
    const SurfaceTensionEstimate est = estimate_surface_tension(x.cfg.potential, g, p, lambdas, value_nodes, m);
    std::vector<double> row = p;
    for (int i = 0; i < d; ++i) row.push_back(est.gradient[i]);
    for (int i = 0; i < d; ++i) row.push_back(est.gradient_err[i]);
    row.push_back(est.value);
    row.push_back(est.value_err);
    row.push_back(hessian ? est.hessian[0].form.mean : 0.0);
    row.push_back(hessian ? est.hessian[0].form.stderr_ : 0.0);
    if (x.cfg.potential.variant == PotentialVariant::Quadratic)
      for (int i = 0; i < d; ++i)
        zmax[k] = std::max(zmax[k], std::abs(est.gradient[i] - x.cfg.potential.c * p[i]) /
                                        std::max(est.gradient_err[i], 1e-300));
    rows[k] = std::move(row);
  });
  x.csv("surface_tension.csv",
        concat(concat(concat(indexed("p", d), indexed("grad", d)), indexed("grad_err", d)),
               {"sigma", "sigma_err", "hessian_form", "hessian_err"}),
        rows);
  x.manifest.results = {{"side", L}, {"slopes", mags.size()}};
  if (x.cfg.potential.variant == PotentialVariant::Quadratic)
    x.manifest.results["max_identity_z"] = *std::max_element(zmax.begin(), zmax.end());
}

void run_tails(const Context& x) {
  const int d = x.cfg.dim, L = side_of(x, "L", 16);
  const TorusGrid g(d, L);
  const std::vector<double> p = slope_of(x.c, x.key("slope"), d, 2.0);
  StationaryOptions so;
  so.dt = x.c.get_double(x.key("dt"), x.cfg.dt);
  so.burn_in = x.c.get_double(x.key("burn_in"), x.cfg.burn_in);
  so.horizon = x.c.get_double(x.key("horizon"), 200.0);
  so.record_stride = x.c.get_double(x.key("record_stride"), 0.05);
  const double p_hi = x.c.get_double(x.key("p_hi"), 1e-2), p_lo = x.c.get_double(x.key("p_lo"), 1e-3);
  const int points = static_cast<int>(x.c.get_int(x.key("points"), 10));
  const double exponent = x.cfg.potential.variant == PotentialVariant::Quadratic ? 2.0 : x.cfg.potential.r;
  const Trajectory traj = simulate_stationary(x.cfg.potential, g, p, x.cfg.seed, so);
  const std::vector<double> mag = gradient_magnitudes(traj);
  const std::vector<double> K = tail_quantile_grid(mag, p_hi, p_lo, points);
  const TailReport rep = tail_report_from_samples(mag, K, exponent);
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < rep.K.size(); ++i)
    rows.push_back({rep.K[i], std::pow(rep.K[i], exponent), rep.probability[i], static_cast<double>(rep.counts[i])});
  x.csv("tails.csv", {"K", "K_pow", "probability", "count"}, rows);
  x.manifest.results = {{"samples", rep.total},      {"exponent", exponent},
                        {"slope", rep.fit.slope},    {"slope_stderr", rep.fit.slope_stderr},
                        {"r_squared", rep.fit.r_squared}};
}

void run_exit_times(const Context& x) {
  const int d = x.cfg.dim, L = side_of(x, "L", 8);
  const TorusGrid g(d, L);
  const std::vector<double> p = slope_of(x.c, x.key("slope"), d, 0.0);
  const double R1 = x.c.get_double(x.key("R1"), 2.0);
  const std::vector<double> T = x.c.get_doubles(x.key("T"), {1.0, 4.0, 16.0, 64.0});
  ExitTimeOptions o;
  o.dt = x.c.get_double(x.key("dt"), x.cfg.dt);
  o.burn_in = x.c.get_double(x.key("burn_in"), x.cfg.burn_in);
  o.seed = x.cfg.seed;
  const long long replicas = x.c.get_int(x.key("replicas"), 200);
  if (replicas < 1) throw ConfigError(x.key("replicas") + ": must be positive");
  const ExitTimeResult r = exit_time_experiment(x.cfg.potential, g, p, R1, T, static_cast<std::size_t>(replicas), o);
  std::vector<std::vector<double>> rows;
  for (const auto& row : r.rows)
    rows.push_back({row.T, static_cast<double>(row.confined), static_cast<double>(row.replicas), row.probability, row.lo, row.hi});
  x.csv("exit_times.csv", {"T", "confined", "replicas", "probability", "lo", "hi"}, rows);
  x.manifest.results = {{"fit_slope", r.fit.slope}, {"fit_r_squared", r.fit.r_squared}};
}

}  // namespace

ModerationInstance moderation_instance(const PotentialSpec& spec, std::uint64_t seed, double horizon, double dt) {
  // Dimension, side and slope drawn from the seed.
  const std::uint64_t h = mix64(seed);
  const int d = 1 + static_cast<int>(h % 2);
  const int N = 4 + 2 * static_cast<int>((h >> 8) % 2);
  const double pn = 1.5 + 1.5 * static_cast<double>((h >> 16) % 1000) / 1000.0;
  const double angle = 2.0 * std::numbers::pi * static_cast<double>((h >> 32) % 1000) / 1000.0;
  std::vector<double> p(d);
  p[0] = d == 1 ? pn : pn * std::cos(angle);
  if (d == 2) p[1] = pn * std::sin(angle);
  const TorusGrid g(d, N);
  StationaryOptions so;
  so.dt = dt;
  so.burn_in = 20.0;
  so.horizon = horizon;
  so.record_stride = 0.1;
  so.record_hessian = true;
  so.record_eigenvalues = true;
  const Trajectory traj = simulate_stationary(spec, g, p, seed, so);
  const ModeratedField m = moderated_env(traj, {});
  std::vector<double> times;
  std::vector<std::vector<double>> frames;
  for (const Frame& f : traj.frames) {
    times.push_back(f.time);
    frames.push_back(f.hessian);
  }
  const Environment env(g, times, frames);
  ParabolicOptions po;
  po.dt = 0.1;
  po.output_every = 0.1;
  const FieldSeries u = heat_kernel(env, 0.0, 0, times.back(), po);
  const double P = moderation_scale(spec, p);
  const ModerationRatio r = moderation_ratio(u, env, m, P, 5.0);
  ModerationInstance out;
  out.dim = d;
  out.side = N;
  out.p_norm = pn;
  out.max_ratio = r.max_ratio;
  out.evaluated = r.evaluated;
  double lo = INFINITY, hi = 0.0, s = 0.0;
  std::size_t cnt = 0;
  for (const auto& row : m.values)
    for (double v : row) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
      s += v;
      ++cnt;
    }
  out.m_min = lo;
  out.m_max = hi;
  out.m_mean = cnt ? s / cnt : 0.0;
  return out;
}

namespace {

void run_moderated(const Context& x) {
  const double delta = choose_delta();
  const KernelConstraintReport kc = check_kernel_constraints(delta, 2.0);
  // Constant eigenvalue paths reproduce delta / (12 d).
  double closed_err = 0.0;
  for (int d : {1, 2, 3}) {
    const TorusGrid g(d, 3);
    EigenvaluePaths paths;
    paths.grid = g;
    const double P = 2.5;
    for (int j = 0; j < 601; ++j) {
      paths.times.push_back(30.0 * j / 600);
      paths.lambda_minus.emplace_back(g.size(), P);
      paths.lambda_plus.emplace_back(g.size(), P);
    }
    const ModeratedField m = moderated_env(paths, P, {});
    for (const auto& row : m.values)
      for (double v : row) closed_err = std::max(closed_err, std::abs(v - delta / (12.0 * d)));
  }
  const long long instances = x.c.get_int(x.key("instances"), 20);
  if (instances < 1) throw ConfigError(x.key("instances") + ": must be positive");
  const double horizon = x.c.get_double(x.key("horizon"), 150.0);
  const double dt = x.c.get_double(x.key("dt"), x.cfg.dt);
  std::vector<ModerationInstance> inst(static_cast<std::size_t>(instances));
  parallel_for(inst.size(), x.cfg.threads, [&](std::size_t k) {
    inst[k] = moderation_instance(x.cfg.potential, derive_seed(x.cfg.seed, k), horizon, dt);
  });
  std::vector<std::vector<double>> rows;
  double worst = 0.0;
  for (std::size_t k = 0; k < inst.size(); ++k) {
    const auto& i = inst[k];
    worst = std::max(worst, i.max_ratio);
    rows.push_back({static_cast<double>(k), double(i.dim), double(i.side), i.p_norm, i.max_ratio,
                    static_cast<double>(i.evaluated), i.m_min, i.m_mean, i.m_max});
  }
  x.csv("moderated.csv", {"instance", "dim", "side", "p_norm", "max_ratio", "evaluated", "m_min", "m_mean", "m_max"}, rows);
  x.manifest.results = {{"delta", delta},
                        {"closed_form_error", closed_err},
                        {"kernel_integral", kc.integral},
                        {"kernel_max_conv_ratio", kc.max_conv_ratio},
                        {"kernel_constraints_satisfied", kc.satisfied},
                        {"max_moderation_ratio", worst}};
}

void run_flux_weak_norm(const Context& x) {
  const int d = x.cfg.dim;
  const std::vector<int> Ls = x.c.get_ints(x.key("L"), {9, 27});
  const std::vector<double> p = slope_of(x.c, x.key("slope"), d, 1.0);
  const long long replicas = x.c.get_int(x.key("replicas"), 4);
  if (replicas < 2) throw ConfigError(x.key("replicas") + ": need at least 2");
  FluxWeakNormOptions o;
  o.dim = d;
  o.dt = x.c.get_double(x.key("dt"), x.cfg.dt);
  o.burn_in = x.c.get_double(x.key("burn_in"), 200.0);
  o.base = static_cast<int>(x.c.get_int(x.key("base"), 3));
  o.q = x.c.get_double(x.key("q"), 2.0);
  o.seed = x.cfg.seed;
  const FluxWeakNormResult r = flux_weak_norm_experiment(x.cfg.potential, Ls, p, static_cast<std::size_t>(replicas), o);
  std::vector<std::vector<double>> rows;
  for (const auto& row : r.rows)
    rows.push_back({double(row.L), row.ratio.mean, row.ratio.stderr_, double(row.ratio_samples.size())});
  x.csv("flux_weak_norm.csv", {"L", "ratio", "ratio_err", "replicas"}, rows);
  x.manifest.results = {{"decreasing", r.decreasing}, {"decreasing_within_errors", r.decreasing_within_errors}};
}

nlohmann::json two_scale_json(const TwoScaleReport& r) {
  return {{"dim", r.dim},
          {"eps", r.eps},
          {"gamma", r.gamma},
          {"kappa", r.kappa},
          {"L", r.L},
          {"box_side", r.box_side},
          {"centers", r.centers},
          {"micro_dt", r.micro_dt},
          {"macro_dt", r.macro_dt},
          {"horizon", r.horizon},
          {"steps", r.steps},
          {"norm_exponent", r.norm_exponent},
          {"e2_lr", r.e2_lr},
          {"e3_lr", r.e3_lr},
          {"eps_e1_l2", r.eps_e1_l2},
          {"eps_e4_l2", r.eps_e4_l2},
          {"eps_e1_analytic_l2", r.eps_e1_analytic_l2},
          {"average_integral_max", r.average_integral_max},
          {"surrogate", std::isfinite(r.surrogate) ? nlohmann::json(r.surrogate) : nlohmann::json(nullptr)},
          {"surrogate_base", r.surrogate_base},
          {"residual_max", r.residual_max},
          {"residual_alt_sign_max", r.residual_alt_sign_max},
          {"residual_analytic_e1_max", r.residual_analytic_e1_max},
          {"term_scale", r.term_scale},
          {"tolerance", r.tolerance},
          {"residual_ok", r.residual_ok},
          {"e1_simplification_max", r.e1_simplification_max},
          {"partition_error", r.partition_error},
          {"partition_derivative_error", r.partition_derivative_error},
          {"derivative_constant", r.derivative_constant},
          {"corrector_mean_error", r.corrector_mean_error},
          {"ubar_minus_w_l2", r.ubar_minus_w_l2},
          {"ubar_minus_w_bound", r.ubar_minus_w_bound},
          {"sup_w", r.sup_w},
          {"sup_ubar", r.sup_ubar},
          {"eps_sup_phi", r.eps_sup_phi},
          {"u_minus_w_l2", r.u_minus_w_l2},
          {"u_minus_ubar_l2", r.u_minus_ubar_l2}};
}

void run_two_scale_experiment(const Context& x) {
  const int d = x.cfg.dim;
  const double eps = x.c.get_double(x.key("eps"), 1.0 / 16);
  inverse_integer(eps, x.key("eps"));
  TwoScaleOptions o;
  o.gamma = x.c.get_double(x.key("gamma"), 0.0);
  o.kappa = x.c.get_double(x.key("kappa"), 0.25);
  o.micro_dt = x.c.get_double(x.key("micro_dt"), 2e-3);
  o.corrector_burn_in = x.c.get_double(x.key("burn_in"), 50.0);
  o.horizon = x.c.get_double(x.key("horizon"), 1.0);
  o.tamed_correctors = x.c.get_bool(x.key("tamed_correctors"), false);
  o.seed = x.cfg.seed;
  const HomogenizedFlux sigma = homogenized_flux_for(x.cfg, x.cfg.potential.variant == PotentialVariant::Quadratic
                                                                ? ""
                                                                : (fs::path(x.dir) / "sigma_table.txt").string());
  if (x.cfg.potential.variant != PotentialVariant::Quadratic) x.manifest.add_output(x.dir, "sigma_table.txt");
  const TwoScaleReport r = run_two_scale(x.cfg.potential, sigma, d, eps, initial_condition(x.cfg.initial), o);
  const MesoDecomposition m(d, eps, r.gamma, o.kappa);
  std::vector<std::vector<double>> rows;
  for (std::size_t z = 0; z < r.centers; ++z) {
    std::vector<double> row{double(z), m.center_time(z)};
    for (int c : m.center_site(z)) row.push_back(c);
    for (int i = 0; i < d; ++i) row.push_back(r.slopes[z * d + i]);
    rows.push_back(std::move(row));
  }
  x.csv("two_scale_slopes.csv", concat(concat({"center", "time"}, indexed("y", d)), indexed("p", d)), rows);
  const nlohmann::json j = two_scale_json(r);
  {
    std::ofstream out(fs::path(x.dir) / "two_scale.json");
    out << j.dump(2) << "\n";
  }
  x.manifest.add_output(x.dir, "two_scale.json");
  x.manifest.results = j;
}

void run_heat_kernel(const Context& x) {
  const int d = x.cfg.dim, N = side_of(x, "N", 9);
  const TorusGrid g(d, N);
  const double c = x.c.get_double(x.key("c"), 1.0);
  if (!(c > 0)) throw ConfigError(x.key("c") + ": must be positive");
  const long long y = x.c.get_int(x.key("site"), 0);
  if (y < 0 || static_cast<std::size_t>(y) >= g.size()) throw ConfigError(x.key("site") + ": outside the grid");
  ParabolicOptions po;
  po.dt = x.c.get_double(x.key("dt"), 1e-4);
  po.output_every = x.c.get_double(x.key("output_every"), 0.01);
  const std::string integ = x.c.get_string(x.key("integrator"), "rk4");
  if (integ != "rk4" && integ != "euler") throw ConfigError(x.key("integrator") + ": expected rk4 or euler");
  po.integrator = integ == "rk4" ? TimeIntegrator::RK4 : TimeIntegrator::Euler;
  const double T = x.c.get_double(x.key("T"), 1.0);
  const FieldSeries s = heat_kernel(Environment::identity(g, c), 0.0, static_cast<std::size_t>(y), T, po);
  std::vector<std::vector<double>> rows;
  double worst_mass = 0.0, worst_abs = 0.0;
  for (std::size_t k = 0; k < s.times.size(); ++k) {
    const auto& v = s.frames[k].values;
    double l2 = 0.0, mx = 0.0;
    for (double a : v) {
      l2 += a * a;
      mx = std::max(mx, std::abs(a));
    }
    worst_mass = std::max(worst_mass, std::abs(sum(v)));
    worst_abs = std::max(worst_abs, mx);
    rows.push_back({s.times[k], sum(v), mx, std::sqrt(l2), v[static_cast<std::size_t>(y)]});
  }
  x.csv("heat_kernel.csv", {"time", "mass", "max_abs", "l2", "value_at_start"}, rows);
  std::vector<std::vector<double>> last;
  for (std::size_t site = 0; site < g.size(); ++site) {
    std::vector<double> row;
    for (int cc : g.coords(site)) row.push_back(cc);
    row.push_back(s.frames.back()[site]);
    last.push_back(std::move(row));
  }
  x.csv("heat_kernel_final.csv", concat(indexed("x", d), {"value"}), last);
  x.manifest.results = {{"max_abs_mass", worst_mass}, {"max_abs_value", worst_abs}, {"frames", s.times.size()}};
}

void run_hydro(const Context& x) {
  HydroLimitOptions o;
  o.dim = x.cfg.dim;
  o.initial = x.cfg.initial;
  o.eps_list = x.cfg.eps_list;
  o.replicas = x.cfg.replicas;
  o.micro_dt = x.c.get_double(x.key("micro_dt"), x.cfg.dt);
  o.frames = static_cast<int>(x.c.get_int(x.key("frames"), 64));
  o.macro_dt = x.c.get_double(x.key("macro_dt"), 2e-4);
  o.taming_bound = x.c.get_double(x.key("taming_bound"), 0.0);
  o.drift_reference = x.c.get_string(x.key("reference"), "homogenized") == "drift";
  if (!o.drift_reference && x.c.get_string(x.key("reference"), "homogenized") != "homogenized")
    throw ConfigError(x.key("reference") + ": expected homogenized or drift");
  o.seed = x.cfg.seed;
  o.threads = x.cfg.threads;
  if (o.replicas < 2) throw ConfigError("run.replicas: hydro-limit needs at least 2");
  const bool table = x.cfg.potential.variant != PotentialVariant::Quadratic && !o.drift_reference;
  const HomogenizedFlux sigma = table ? homogenized_flux_for(x.cfg, (fs::path(x.dir) / "sigma_table.txt").string())
                                      : HomogenizedFlux::linear(x.cfg.dim, x.cfg.potential.c);
  if (table) x.manifest.add_output(x.dir, "sigma_table.txt");
  const HydroLimitResult r = run_hydro_limit(x.cfg.potential, sigma, o);
  std::vector<std::vector<double>> raw, summary, snaps;
  for (const auto& row : r.rows) {
    for (std::size_t k = 0; k < row.samples.size(); ++k) raw.push_back({row.eps, double(k), row.samples[k]});
    summary.push_back({row.eps, row.E.mean, row.E.stderr_, double(row.samples.size())});
  }
  for (const auto& s : r.snapshots)
    for (std::size_t site = 0; site < s.u.size(); ++site) {
      std::vector<double> row{s.eps};
      for (int c : s.u.grid.coords(site)) row.push_back(c * s.eps);
      row.push_back(s.u[site]);
      row.push_back(s.ubar[site]);
      snaps.push_back(std::move(row));
    }
  x.csv("hydro_limit.csv", {"eps", "replica", "E"}, raw);
  x.csv("hydro_limit_summary.csv", {"eps", "E_mean", "E_stderr", "replicas"}, summary);
  x.csv("snapshots.csv", concat(concat({"eps"}, indexed("x", x.cfg.dim)), {"u", "ubar"}), snaps);
  x.manifest.results = {{"theta", r.theta},
                        {"theta_stderr", r.theta_stderr},
                        {"weighted_theta", r.weighted_fit.slope},
                        {"weighted_theta_stderr", r.weighted_fit.slope_stderr},
                        {"monotone", r.monotone},
                        {"theta_positive_2sigma", r.theta_positive},
                        {"reference", o.drift_reference ? "drift" : "homogenized"}};
}

}  // namespace

RunManifest run_named_experiment(const ExperimentConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  const std::vector<std::string> names = experiment_names();
  if (std::find(names.begin(), names.end(), cfg.experiment) == names.end())
    throw UnknownExperiment("run.experiment: unknown experiment '" + cfg.experiment + "'");
  std::error_code ec;
  fs::create_directories(cfg.output_dir, ec);
  if (ec) throw ConfigError("run.out: cannot create '" + cfg.output_dir + "': " + ec.message());

  RunManifest manifest;
  manifest.experiment = cfg.experiment;
  manifest.code_version = code_version();
  const Context x{cfg, cfg.config, cfg.output_dir, manifest, cfg.experiment};

  auto finish = [&](const std::string& status) {
    manifest.config = cfg.config.effective();
    for (const auto& [k, v] : cfg.config.entries()) manifest.config.emplace(k, v);
    std::string canon;
    for (const auto& [k, v] : manifest.config) canon += k + "=" + v + "\n";
    manifest.config_hash = sha256_hex(canon);
    manifest.results["status"] = status;
    manifest.results["unused_keys"] = cfg.config.unused_keys();
    manifest.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    manifest.write((fs::path(cfg.output_dir) / "manifest.json").string());
  };

  try {
    const std::string& e = cfg.experiment;
    if (e == "simulate") run_simulate(x);
    else if (e == "surface-tension") run_surface_tension(x);
    else if (e == "tails") run_tails(x);
    else if (e == "exit-times") run_exit_times(x);
    else if (e == "moderated") run_moderated(x);
    else if (e == "flux-weak-norm") run_flux_weak_norm(x);
    else if (e == "two-scale") run_two_scale_experiment(x);
    else if (e == "heat-kernel") run_heat_kernel(x);
    else if (e == "hydro-limit") run_hydro(x);
  } catch (const NumericalFailure& err) {
    manifest.results["error"] = err.what();
    finish("numerical-failure");
    throw;
  }
  finish("ok");
  return manifest;
}

}  // namespace gradphi
