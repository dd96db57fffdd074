#include "gradphi/dynamics.hpp"

#include <algorithm>
#include <cmath>

#include "gradphi/errors.hpp"
#include "gradphi/parabolic.hpp"

namespace gradphi {

DynamicsState DynamicsState::flat(const TorusGrid& grid, const PotentialSpec& potential,
                                  std::vector<double> slope) {
  if (static_cast<int>(slope.size()) != grid.dim())
    throw DimensionMismatch("DynamicsState: slope dimension != d");
  DynamicsState s;
  s.grid = grid;
  s.potential = potential;
  s.slope = std::move(slope);
  s.phi = Field(grid);
  return s;
}

LangevinStepper::LangevinStepper(const TorusGrid& grid, const PotentialSpec& potential,
                                 std::vector<double> slope, LangevinOptions opts)
    : grid_(grid), kernel_(potential), slope_(std::move(slope)), opts_(opts) {
  require(opts_.dt > 0 && std::isfinite(opts_.dt), "LangevinStepper: dt must be positive");
  if (static_cast<int>(slope_.size()) != grid_.dim())
    throw DimensionMismatch("LangevinStepper: slope dimension != d");
  bmax_ = opts_.taming_bound > 0 ? opts_.taming_bound : 10.0 / opts_.dt;
  const std::size_t n = grid_.size();
  const int d = grid_.dim();
  grad_.resize(n * d);
  flux_.resize(n * d);
  drift_.resize(n);
  noise_.resize(n);
}

void LangevinStepper::set_noise_sites(std::vector<std::uint64_t> sites) {
  if (sites.size() != grid_.size()) throw DimensionMismatch("set_noise_sites: size != N^d");
  sites_ = std::move(sites);
}

void LangevinStepper::set_noise_hook(std::function<void(std::int64_t, std::span<double>)> hook) {
  hook_ = std::move(hook);
}

std::size_t LangevinStepper::add_tangent(std::vector<double> lambda) {
  if (static_cast<int>(lambda.size()) != grid_.dim())
    throw DimensionMismatch("add_tangent: direction dimension != d");
  Tangent t;
  t.lambda = std::move(lambda);
  t.w = Field(grid_);
  t.work.resize(grid_.size() * grid_.dim());
  tangents_.push_back(std::move(t));
  return tangents_.size() - 1;
}

void LangevinStepper::evaluate(const Field& phi) {
  const std::size_t n = grid_.size();
  const int d = grid_.dim();
  gradient_into(grid_, phi.values, grad_);
  const bool hess = want_hessian_ || !tangents_.empty();
  if (hess) hess_.resize(n * d * d);
  double x[8];
  for (std::size_t s = 0; s < n; ++s) {
    for (int i = 0; i < d; ++i) x[i] = slope_[i] + grad_[s * d + i];
    kernel_.flux(x, d, &flux_[s * d]);
    if (hess) kernel_.hessian(x, d, &hess_[s * d * d]);
  }
}

void LangevinStepper::step(DynamicsState& state, const NoiseStream& noise) {
  if (!state.grid.same_shape(grid_)) throw DimensionMismatch("LangevinStepper: grid mismatch");
  if (std::abs(noise.dt() - opts_.dt) > 1e-12 * opts_.dt)
    throw InvalidArgument("LangevinStepper: noise dt differs from step dt");
  const std::size_t n = grid_.size();
  const int d = grid_.dim();
  const double dt = opts_.dt;

  evaluate(state.phi);
  divergence_into(grid_, flux_, drift_);

  if (sites_.empty())
    noise.increments(state.step, noise_, false);
  else
    noise.increments(state.step, sites_, noise_, false);
  if (hook_) hook_(state.step, noise_);
  if (opts_.project_noise) project_mean_zero(noise_);

  // Tangent fields use the pre-step environment, as the path does.
  const double inv = 1.0 / grid_.scale();
  for (Tangent& tg : tangents_) {
    double form = 0.0, sym = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
      double g[8];
      for (int i = 0; i < d; ++i)
        g[i] = tg.lambda[i] + inv * (tg.w[grid_.forward(s, i)] - tg.w[s]);
      const double* a = &hess_[s * d * d];
      for (int i = 0; i < d; ++i) {
        double acc = 0.0;
        for (int j = 0; j < d; ++j) acc += a[i * d + j] * g[j];
        tg.work[s * d + i] = acc;
        form += tg.lambda[i] * acc;
        sym += g[i] * acc;
      }
    }
    tg.form = form / n;
    tg.sym_form = sym / n;
    for (std::size_t s = 0; s < n; ++s) {
      double div = 0.0;
      for (int i = 0; i < d; ++i) div += tg.work[s * d + i] - tg.work[grid_.backward(s, i) * d + i];
      tg.w[s] += dt * inv * div;
    }
  }

  const double sqrt2 = std::sqrt(2.0);
  double check = 0.0;
  for (std::size_t s = 0; s < n; ++s) {
    const double b = drift_[s];
    const double tamed = b / (1.0 + dt * std::abs(b) / bmax_);
    state.phi[s] += dt * tamed + sqrt2 * noise_[s];
    check += state.phi[s];
  }
  if (!std::isfinite(check)) throw NonFinite("Langevin step produced a non-finite state");
  if (opts_.project_noise) project_mean_zero(state.phi.values);
  state.time += dt;
  ++state.step;
}

void step_langevin(DynamicsState& state, const NoiseStream& noise, double dt, bool project_noise) {
  require(dt > 0, "step_langevin: dt must be positive");
  LangevinOptions o;
  o.dt = dt;
  o.project_noise = project_noise;
  LangevinStepper stepper(state.grid, state.potential, state.slope, o);
  stepper.step(state, noise);
}

double default_burn_in(const TorusGrid& grid) {
  return 20.0 * grid.side() * grid.side();
}

void run_stationary(const PotentialSpec& spec, const TorusGrid& grid,
                    std::span<const double> p, std::uint64_t seed, const StationaryOptions& opts,
                    LangevinStepper& stepper,
                    const std::function<void(const LangevinStepper&, const DynamicsState&)>& observe) {
  require(opts.dt > 0 && opts.horizon >= 0, "run_stationary: bad dt or horizon");
  const double burn = opts.burn_in < 0 ? default_burn_in(grid) : opts.burn_in;
  const std::int64_t nb = std::llround(burn / opts.dt);
  const std::int64_t nh = std::llround(opts.horizon / opts.dt);
  DynamicsState state = DynamicsState::flat(grid, spec, std::vector<double>(p.begin(), p.end()));
  state.step = -nb;
  state.time = -nb * opts.dt;
  const NoiseStream noise(seed, grid, opts.dt);
  for (std::int64_t i = 0; i < nb; ++i) stepper.step(state, noise);
  state.time = 0.0;
  for (std::int64_t i = 0; i < nh; ++i) {
    stepper.step(state, noise);
    if (observe) observe(stepper, state);
  }
}

Trajectory simulate_stationary(const PotentialSpec& spec, const TorusGrid& grid,
                               std::span<const double> p, std::uint64_t seed,
                               const StationaryOptions& opts) {
  require(opts.record_stride > 0, "simulate_stationary: record_stride must be positive");
  LangevinOptions lo;
  lo.dt = opts.dt;
  lo.project_noise = opts.project_noise;
  LangevinStepper stepper(grid, spec, std::vector<double>(p.begin(), p.end()), lo);
  stepper.enable_hessian(opts.record_hessian);
  LambdaMinusTable lm;
  if (opts.record_eigenvalues && spec.variant == PotentialVariant::DegenerateRadial) {
    double pn = 0.0;
    for (double v : p) pn += v * v;
    lm = LambdaMinusTable(spec, grid.dim(), std::sqrt(pn) + spec.R0 + 16.0, 129);
  }

  Trajectory traj;
  traj.grid = grid;
  traj.potential = spec;
  traj.slope.assign(p.begin(), p.end());
  traj.dt = opts.dt;
  const std::int64_t stride = std::max<std::int64_t>(1, std::llround(opts.record_stride / opts.dt));
  const PotentialKernel kernel(spec);
  const int d = grid.dim();

  // The helper stepper gives frame quantities at the recorded state.
  LangevinStepper probe(grid, spec, traj.slope, lo);
  probe.enable_hessian(opts.record_hessian);
  auto record = [&](const DynamicsState& st) {
    probe.evaluate(st.phi);
    Frame f;
    f.time = st.step * opts.dt;
    f.step = st.step;
    f.phi = st.phi;
    f.flux.assign(probe.flux().begin(), probe.flux().end());
    if (opts.record_hessian) f.hessian.assign(probe.hessian().begin(), probe.hessian().end());
    if (opts.record_eigenvalues) {
      f.lambda_plus.resize(grid.size());
      f.lambda_minus.resize(grid.size());
      double x[8];
      for (std::size_t s = 0; s < grid.size(); ++s) {
        double t2 = 0.0;
        for (int i = 0; i < d; ++i) {
          x[i] = traj.slope[i] + probe.gradient()[s * d + i];
          t2 += x[i] * x[i];
        }
        f.lambda_plus[s] = kernel.lambda_plus(x, d);
        f.lambda_minus[s] =
            spec.variant == PotentialVariant::Quadratic ? spec.c : lm(std::sqrt(t2));
      }
    }
    traj.frames.push_back(std::move(f));
  };

  run_stationary(spec, grid, p, seed, opts, stepper,
                 [&](const LangevinStepper&, const DynamicsState& st) {
                   if (st.step % stride == 0) record(st);
                 });
  return traj;
}

LinearizedTrajectory linearized_dynamics(const Trajectory& base, std::span<const double> lambda) {
  const TorusGrid& g = base.grid;
  const int d = g.dim();
  const std::size_t n = g.size();
  if (static_cast<int>(lambda.size()) != d) throw DimensionMismatch("linearized_dynamics: |lambda| != d");
  require(!base.frames.empty(), "linearized_dynamics: empty trajectory");
  for (const Frame& f : base.frames)
    require(f.hessian.size() == n * d * d, "linearized_dynamics: trajectory lacks the environment");

  LinearizedTrajectory out;
  Field w(g);
  std::vector<double> ag(n * d), div(n);
  const double inv = 1.0 / g.scale();
  auto forms = [&](const std::vector<double>& a, double& form, double& sym) {
    form = sym = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
      double gr[8];
      for (int i = 0; i < d; ++i) gr[i] = lambda[i] + inv * (w[g.forward(s, i)] - w[s]);
      for (int i = 0; i < d; ++i) {
        double acc = 0.0;
        for (int j = 0; j < d; ++j) acc += a[s * d * d + i * d + j] * gr[j];
        ag[s * d + i] = acc;
        form += lambda[i] * acc;
        sym += gr[i] * acc;
      }
    }
    form /= n;
    sym /= n;
  };

  const PotentialKernel kernel(base.potential);
  for (std::size_t k = 0; k < base.frames.size(); ++k) {
    const std::vector<double>& a = base.frames[k].hessian;
    double form, sym;
    forms(a, form, sym);
    out.times.push_back(base.frames[k].time);
    out.w.push_back(w);
    out.form.push_back(form);
    out.symmetric_form.push_back(sym);
    if (k + 1 == base.frames.size()) break;

    const double span = base.frames[k + 1].time - base.frames[k].time;
    double lmax = 1.0;
    for (std::size_t s = 0; s < n; ++s) {
      double row = 0.0;  // Gershgorin bound of the largest eigenvalue
      for (int i = 0; i < d; ++i) {
        double r = 0.0;
        for (int j = 0; j < d; ++j) r += std::abs(a[s * d * d + i * d + j]);
        row = std::max(row, r);
      }
      lmax = std::max(lmax, row);
    }
    const double rate = 2.0 * d * lmax * inv * inv;
    const std::size_t m = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(span * rate / 0.5)));
    if (m > (1u << 22)) throw NonFinite("linearized_dynamics: instability after maximum subdivision");
    const double h = span / m;
    for (std::size_t j = 0; j < m; ++j) {
      if (j > 0) forms(a, form, sym);
      divergence_into(g, ag, div);
      double e0 = 0.0, e1 = 0.0, x = 0.0;
      for (std::size_t s = 0; s < n; ++s) {
        e0 += w[s] * w[s];
        x += w[s] * div[s];
      }
      for (std::size_t s = 0; s < n; ++s) {
        w[s] += h * div[s];
        e1 += w[s] * w[s];
      }
      // d/dt sum w^2 = 2 sum w div(a g); Euler adds h^2 |div|^2.
      const double denom = h * sym * n + 1e-300;
      out.max_energy_violation = std::max(out.max_energy_violation, std::abs(e1 - e0 - 2.0 * h * x) / denom);
      if (!std::isfinite(e1)) throw NonFinite("linearized_dynamics: non-finite state");
    }
  }
  return out;
}

BrownianDerivativeResult brownian_derivative_check(const PotentialSpec& spec, const TorusGrid& grid,
                                                   std::span<const double> p, std::uint64_t seed,
                                                   std::size_t site,
                                                   const BrownianDerivativeOptions& opts) {
  require(opts.xi > 0, "brownian_derivative_check: xi must be positive");
  require(0 <= opts.s && opts.s < opts.t && opts.t <= opts.T, "brownian_derivative_check: need 0 <= s < t <= T");
  require(site < grid.size(), "brownian_derivative_check: site out of range");
  const double dt = opts.dt;
  const std::int64_t nb = std::llround(opts.burn_in / dt);
  const std::int64_t nT = std::llround(opts.T / dt);
  const std::int64_t ks = std::llround(opts.s / dt);
  const NoiseStream noise(seed, grid, dt);
  std::vector<double> slope(p.begin(), p.end());
  LangevinOptions lo;
  lo.dt = dt;

  auto ramp = [&](double t) { return std::clamp((t - opts.s) / (opts.t - opts.s), 0.0, 1.0); };

  std::vector<double> times;
  std::vector<std::vector<double>> hess;
  auto run = [&](double amplitude, bool record) {
    LangevinStepper stepper(grid, spec, slope, lo);
    stepper.enable_hessian(record);
    if (amplitude != 0.0)
      stepper.set_noise_hook([&, amplitude](std::int64_t k, std::span<double> inc) {
        if (k < 0) return;
        inc[site] += amplitude * (ramp((k + 1) * dt) - ramp(k * dt));
      });
    DynamicsState st = DynamicsState::flat(grid, spec, slope);
    st.step = -nb;
    for (std::int64_t k = -nb; k < nT; ++k) {
      stepper.step(st, noise);
      if (record && k >= ks) {
        times.push_back(k * dt);
        hess.emplace_back(stepper.hessian().begin(), stepper.hessian().end());
      }
    }
    return st.phi;
  };

  run(0.0, true);
  const Field plus = run(opts.xi, false);
  const Field minus = run(-opts.xi, false);

  BrownianDerivativeResult res;
  res.fd_derivative = Field(grid);
  for (std::size_t s = 0; s < grid.size(); ++s)
    res.fd_derivative[s] = (plus[s] - minus[s]) / (2.0 * opts.xi);

  const Environment env(grid, times, hess);
  const double rate = std::sqrt(2.0) / (opts.t - opts.s);
  const double inv_n = 1.0 / static_cast<double>(grid.size());
  Forcing forcing = [&](double t, std::span<double> out) {
    const bool on = t >= opts.s - 1e-9 * dt && t < opts.t - 1e-9 * dt;
    for (std::size_t s = 0; s < out.size(); ++s) out[s] = on ? -rate * inv_n : 0.0;
    if (on) out[site] += rate;
  };
  ParabolicOptions po;
  po.dt = dt;
  po.integrator = TimeIntegrator::Euler;
  po.store = true;
  po.output_every = opts.T - times.front();
  const FieldSeries sol = solve_linear_parabolic(env, Field(grid), times.front(), opts.T, po, forcing);
  res.hk_prediction = sol.frames.back();

  double num = 0.0, den = 0.0;
  for (std::size_t s = 0; s < grid.size(); ++s) {
    const double e = res.fd_derivative[s] - res.hk_prediction[s];
    num += e * e;
    den += res.hk_prediction[s] * res.hk_prediction[s];
  }
  res.rel_error = std::sqrt(num / std::max(den, 1e-300));
  return res;
}

}  // namespace gradphi
