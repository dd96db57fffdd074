#include "gradphi/parabolic.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include "gradphi/errors.hpp"

namespace gradphi {

namespace {

double largest_eigenvalue(const double* m, int d) {
  if (d == 1) return m[0];
  Eigen::Map<const Eigen::MatrixXd> A(m, d, d);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A, Eigen::EigenvaluesOnly);
  return es.eigenvalues()(d - 1);
}

}  // namespace

Environment::Environment(const TorusGrid& grid, std::vector<double> times,
                         std::vector<std::vector<double>> frames)
    : grid_(grid), times_(std::move(times)), frames_(std::move(frames)) {
  require(!times_.empty(), "Environment: need at least one frame");
  require(times_.size() == frames_.size(), "Environment: times/frames size mismatch");
  const int d = grid_.dim();
  const std::size_t block = static_cast<std::size_t>(d) * d;
  max_lambda_plus_.resize(frames_.size());
  for (std::size_t k = 0; k < frames_.size(); ++k) {
    if (k > 0) require(times_[k] > times_[k - 1], "Environment: frame times must increase");
    if (frames_[k].size() != grid_.size() * block)
      throw DimensionMismatch("Environment: frame size != N^d * d^2");
    MatrixField(grid_, frames_[k]).check_symmetric(1e-10);
    double top = 1.0;
    for (std::size_t s = 0; s < grid_.size(); ++s)
      top = std::max(top, largest_eigenvalue(&frames_[k][s * block], d));
    max_lambda_plus_[k] = top;
  }
}

Environment Environment::constant(const MatrixField& a) {
  return Environment(a.grid, {0.0}, {a.values});
}

Environment Environment::identity(const TorusGrid& grid, double c) {
  return constant(MatrixField::identity(grid, c));
}

std::size_t Environment::frame_index(double t) const {
  const double tol = 1e-9 * std::max(1.0, std::abs(t));
  auto it = std::upper_bound(times_.begin(), times_.end(), t + tol);
  if (it == times_.begin()) return 0;
  return static_cast<std::size_t>(it - times_.begin()) - 1;
}

double Environment::frame_end(std::size_t k) const {
  return k + 1 < times_.size() ? times_[k + 1] : std::numeric_limits<double>::infinity();
}

double Environment::lambda_plus(std::size_t k, std::size_t site) const {
  const int d = grid_.dim();
  return std::max(1.0, largest_eigenvalue(&frames_[k][site * d * d], d));
}

FieldSeries solve_linear_parabolic(const Environment& env, const Field& init, double t0, double T,
                                   const ParabolicOptions& opts, const Forcing& forcing,
                                   const SolveObserver& observer) {
  const TorusGrid& g = env.grid();
  if (!g.same_shape(init.grid)) throw DimensionMismatch("solve_linear_parabolic: grid mismatch");
  require(T >= t0, "solve_linear_parabolic: T < t0");
  require(opts.dt > 0 && opts.cfl > 0, "solve_linear_parabolic: dt and cfl must be positive");
  const std::size_t n = g.size();
  const int d = g.dim();
  const double out_dt = opts.output_every > 0 ? opts.output_every : opts.dt;
  const double inv_scale2 = 1.0 / (g.scale() * g.scale());

  std::vector<double> u = init.values, scratch(n * d), k1(n), k2(n), k3(n), k4(n), tmp(n), f(n);
  FieldSeries series;
  auto store = [&](double t) {
    if (!opts.store) return;
    series.times.push_back(t);
    series.frames.emplace_back(g, u);
  };
  store(t0);

  auto rhs = [&](std::span<const double> a, double t, std::span<const double> v, std::span<double> out) {
    elliptic_apply_into(g, a, v, out, scratch);
    if (forcing) {
      forcing(t, f);
      for (std::size_t i = 0; i < n; ++i) out[i] += f[i];
    }
  };

  double t = t0;
  std::size_t out_index = 1;
  const double snap = 1e-10 * opts.dt;
  while (t < T - snap) {
    const std::size_t k = env.frame_index(t);
    const double next_out = t0 + out_index * out_dt;
    double h = std::min({opts.dt, T - t, next_out - t, env.frame_end(k) - t});
    if (h <= snap) {
      // Sliver left by rounding: move onto the boundary.
      h = std::max(h, 0.0);
    }
    const auto a = env.frame(k);
    const double rate = 2.0 * d * env.max_lambda_plus(k) * inv_scale2;
    std::size_t m = static_cast<std::size_t>(std::ceil(h * rate / opts.cfl - 1e-12));
    m = std::max<std::size_t>(m, 1);
    if (m > opts.max_subdivision)
      throw NonFinite("parabolic solve: instability after maximum subdivision");
    const double hh = h / m;
    for (std::size_t j = 0; j < m; ++j) {
      const double ts = t + j * hh;
      if (opts.integrator == TimeIntegrator::Euler) {
        rhs(a, ts, u, k1);
        for (std::size_t i = 0; i < n; ++i) u[i] += hh * k1[i];
      } else {
        rhs(a, ts, u, k1);
        for (std::size_t i = 0; i < n; ++i) tmp[i] = u[i] + 0.5 * hh * k1[i];
        rhs(a, ts + 0.5 * hh, tmp, k2);
        for (std::size_t i = 0; i < n; ++i) tmp[i] = u[i] + 0.5 * hh * k2[i];
        rhs(a, ts + 0.5 * hh, tmp, k3);
        for (std::size_t i = 0; i < n; ++i) tmp[i] = u[i] + hh * k3[i];
        rhs(a, ts + hh, tmp, k4);
        for (std::size_t i = 0; i < n; ++i)
          u[i] += hh / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
      }
    }
    t += h;
    if (std::abs(t - next_out) <= snap) t = next_out;
    if (std::abs(t - env.frame_end(k)) <= snap) t = env.frame_end(k);
    if (std::abs(t - T) <= snap) t = T;

    double norm2 = 0.0;
    for (double v : u) norm2 += v * v;
    if (!std::isfinite(norm2)) throw NonFinite("parabolic solve: non-finite state");

    if (t >= next_out - snap || t >= T - snap) {
      store(t);
      if (t >= next_out - snap) ++out_index;
    }
    if (observer && !observer(t, u)) break;
    if (opts.stop_below_norm > 0 && std::sqrt(norm2) < opts.stop_below_norm) break;
  }
  if (opts.store && (series.times.empty() || series.times.back() < t - snap)) store(t);
  return series;
}

FieldSeries heat_kernel(const Environment& env, double s, std::size_t y, double T,
                        const ParabolicOptions& opts, const SolveObserver& observer) {
  const TorusGrid& g = env.grid();
  require(y < g.size(), "heat_kernel: start site out of range");
  Field init(g, -1.0 / static_cast<double>(g.size()));
  init[y] += 1.0;
  return solve_linear_parabolic(env, init, s, T, opts, {}, observer);
}

const Field* series_frame_at(const FieldSeries& series, double t) {
  if (series.times.empty() || t < series.times.front() - 1e-12) return nullptr;
  auto it = std::upper_bound(series.times.begin(), series.times.end(), t + 1e-12);
  return &series.frames[static_cast<std::size_t>(it - series.times.begin()) - 1];
}

namespace {

double dissipation(const Environment& env, std::size_t k, const Field& u) {
  const TorusGrid& g = env.grid();
  const int d = g.dim();
  std::vector<double> grad(g.size() * d);
  gradient_into(g, u.values, grad);
  const auto a = env.frame(k);
  double acc = 0.0;
  for (std::size_t s = 0; s < g.size(); ++s)
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) acc += grad[s * d + i] * a[s * d * d + i * d + j] * grad[s * d + j];
  return acc;
}

}  // namespace

EnergySeries energy_series(const FieldSeries& series, const Environment& env) {
  EnergySeries e;
  e.times = series.times;
  for (std::size_t n = 0; n < series.frames.size(); ++n) {
    const Field& u = series.frames[n];
    e.energy.push_back(dot(u.values, u.values));
    e.dissipation.push_back(dissipation(env, env.frame_index(series.times[n]), u));
  }
  for (std::size_t n = 0; n + 1 < e.times.size(); ++n) {
    const double dt = e.times[n + 1] - e.times[n];
    const double v = std::abs(e.energy[n + 1] - e.energy[n] +
                              dt * (e.dissipation[n] + e.dissipation[n + 1]));
    e.max_violation = std::max(e.max_violation, v);
  }
  if (!e.energy.empty() && e.energy[0] > 0) e.max_relative_violation = e.max_violation / e.energy[0];
  return e;
}

double caccioppoli_ratio(const FieldSeries& series, const Environment& env, int L,
                         std::size_t center, double t_end) {
  require(L >= 1, "caccioppoli_ratio: L must be positive");
  const TorusGrid& g = env.grid();
  const int d = g.dim();
  require(4 * L + 1 <= g.side(), "caccioppoli_ratio: torus too small for Q_2L");
  const std::vector<int> c = g.coords(center);

  auto inside = [&](std::size_t s, int R) {
    const std::vector<int> x = g.coords(s);
    for (int i = 0; i < d; ++i)
      if (std::abs(periodic_delta(x[i], c[i], g.side())) > R) return false;
    return true;
  };
  std::vector<std::size_t> box1, box2;
  for (std::size_t s = 0; s < g.size(); ++s) {
    if (inside(s, L)) box1.push_back(s);
    if (inside(s, 2 * L)) box2.push_back(s);
  }

  std::vector<double> t1, v1, t2, v2;
  std::vector<double> grad(g.size() * d);
  for (std::size_t n = 0; n < series.times.size(); ++n) {
    const double t = series.times[n];
    if (t > t_end + 1e-12) break;
    const std::size_t k = env.frame_index(t);
    const Field& u = series.frames[n];
    if (t >= t_end - 4.0 * L * L - 1e-12) {
      double acc = 0.0;
      for (std::size_t s : box2) acc += env.lambda_plus(k, s) * u[s] * u[s];
      t2.push_back(t);
      v2.push_back(acc);
    }
    if (t >= t_end - 1.0 * L * L - 1e-12) {
      gradient_into(g, u.values, grad);
      const auto a = env.frame(k);
      double acc = 0.0;
      for (std::size_t s : box1)
        for (int i = 0; i < d; ++i)
          for (int j = 0; j < d; ++j)
            acc += grad[s * d + i] * a[s * d * d + i * d + j] * grad[s * d + j];
      t1.push_back(t);
      v1.push_back(acc);
    }
  }
  auto trap = [](const std::vector<double>& t, const std::vector<double>& v) {
    double s = 0.0;
    for (std::size_t i = 1; i < t.size(); ++i) s += 0.5 * (t[i] - t[i - 1]) * (v[i] + v[i - 1]);
    return s;
  };
  const double num = trap(t1, v1);
  const double den = trap(t2, v2) / (static_cast<double>(L) * L);
  if (!(den > 0)) throw ZeroDenominator("caccioppoli_ratio: u vanishes on Q_2L");
  return num / den;
}

double parabolic_residual(const FieldSeries& series, const Environment& env,
                          const ParabolicOptions& opts) {
  ParabolicOptions o = opts;
  o.store = true;
  o.output_every = 0.0;
  o.stop_below_norm = 0.0;
  double worst = 0.0;
  for (std::size_t n = 0; n + 1 < series.frames.size(); ++n) {
    const double t0 = series.times[n], t1 = series.times[n + 1];
    o.output_every = t1 - t0;
    const FieldSeries step = solve_linear_parabolic(env, series.frames[n], t0, t1, o);
    const Field& ref = series.frames[n + 1];
    double diff = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
      diff = std::max(diff, std::abs(step.frames.back()[i] - ref[i]));
      scale = std::max(scale, std::abs(ref[i]));
    }
    worst = std::max(worst, scale > 0 ? diff / scale : diff);
  }
  return worst;
}

}  // namespace gradphi
