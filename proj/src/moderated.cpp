#include "gradphi/moderated.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <tuple>

#include "gradphi/errors.hpp"
#include "gradphi/noise.hpp"

namespace gradphi {

ModerationKernels::ModerationKernels(double d) : delta(d) {
  require(d > 0 && std::isfinite(d), "ModerationKernels: delta must be positive");
}

double ModerationKernels::k(double t) const {
  const double w = 1.0 + t;
  return delta / (w * w * w * w);
}

double ModerationKernels::K(double t) const {
  const double w = 1.0 / (1.0 + t);
  return delta * (w * w * w * w + 0.5 * w * w - w * w * w / 3.0);
}

namespace {

// Antiderivatives vanishing at infinity.
double k_anti(double delta, double t) {
  if (std::isinf(t)) return 0.0;
  const double w = 1.0 / (1.0 + t);
  return -delta * w * w * w / 3.0;
}

double K_anti(double delta, double t) {
  if (std::isinf(t)) return 0.0;
  const double w = 1.0 / (1.0 + t);
  return delta * (-w * w * w / 3.0 - 0.5 * w + w * w / 6.0);
}

// int u k(u) du antiderivative.
double uk_anti(double delta, double t) {
  if (std::isinf(t)) return 0.0;
  const double w = 1.0 / (1.0 + t);
  return delta * (-0.5 * w * w + w * w * w / 3.0);
}

}  // namespace

double ModerationKernels::k_integral(double a, double b) const {
  return k_anti(delta, b) - k_anti(delta, a);
}

double ModerationKernels::K_integral(double a, double b) const {
  return K_anti(delta, b) - K_anti(delta, a);
}

double K_tail_quadrature(double delta, double t) {
  // s = t + x / (1 - x) maps [0, 1) onto [t, inf).
  const QuadratureRule rule = gauss_legendre(16);
  const int panels = 64;
  double acc = 0.0;
  for (int q = 0; q < panels; ++q) {
    const double a = static_cast<double>(q) / panels, b = static_cast<double>(q + 1) / panels;
    for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
      const double x = 0.5 * (a + b) + 0.5 * (b - a) * rule.nodes[i];
      const double s = t + x / (1.0 - x);
      const double jac = 1.0 / ((1.0 - x) * (1.0 - x));
      const double w = 1.0 + s;
      acc += 0.5 * (b - a) * rule.weights[i] * s * delta / (w * w * w * w) * jac;
    }
  }
  return acc;
}

double kernel_convolution_ratio(double delta, double tau) {
  require(tau >= 0, "kernel_convolution_ratio: tau must be nonnegative");
  const ModerationKernels ker(delta);
  if (tau == 0.0) return 0.0;
  // Symmetric integrand: twice the integral over [0, tau / 2], panels uniform
  // in log(1 + u) to resolve the kernel's unit scale near 0.
  static const QuadratureRule rule = gauss_legendre(8);
  const int panels = 200;
  const double top = std::log1p(0.5 * tau);
  double acc = 0.0;
  for (int q = 0; q < panels; ++q) {
    const double a = std::expm1(top * q / panels), b = std::expm1(top * (q + 1) / panels);
    for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
      const double u = 0.5 * (a + b) + 0.5 * (b - a) * rule.nodes[i];
      acc += 0.5 * (b - a) * rule.weights[i] * ker.K(u) * ker.K(tau - u);
    }
  }
  return 2.0 * acc / ker.K(tau);
}

KernelConstraintReport check_kernel_constraints(double delta, double safety, int grid_points) {
  require(grid_points >= 2 && safety >= 1.0, "check_kernel_constraints: bad grid or safety");
  KernelConstraintReport rep;
  rep.delta = delta;
  rep.safety = safety;
  rep.integral = ModerationKernels(delta).K_total();
  for (int j = 0; j < grid_points; ++j) {
    const double tau = std::pow(10.0, -4.0 + 8.0 * j / (grid_points - 1));
    const double r = kernel_convolution_ratio(delta, tau);
    if (r > rep.max_conv_ratio) {
      rep.max_conv_ratio = r;
      rep.worst_tau = tau;
    }
  }
  rep.satisfied = safety * rep.max_conv_ratio <= 1.0 && safety * rep.integral <= 1.0;
  return rep;
}

double choose_delta() {
  static const double cached = [] {
    double lo = 0.0, hi = 1.0;
    if (check_kernel_constraints(hi).satisfied) return hi;
    for (int it = 0; it < 40; ++it) {
      const double mid = 0.5 * (lo + hi);
      (check_kernel_constraints(mid).satisfied ? lo : hi) = mid;
    }
    return lo;
  }();
  return cached;
}

// ---------------------------------------------------------------------------

EigenvaluePaths EigenvaluePaths::from_trajectory(const Trajectory& traj) {
  EigenvaluePaths out;
  out.grid = traj.grid;
  for (const Frame& f : traj.frames) {
    if (f.lambda_minus.size() != traj.grid.size() || f.lambda_plus.size() != traj.grid.size())
      throw InvalidArgument("moderated_env: trajectory frames lack eigenvalue fields");
    out.times.push_back(f.time);
    out.lambda_minus.push_back(f.lambda_minus);
    out.lambda_plus.push_back(f.lambda_plus);
  }
  return out;
}

double moderation_scale(const PotentialSpec& spec, std::span<const double> p) {
  if (spec.variant == PotentialVariant::Quadratic) return 1.0;
  double n2 = 0.0;
  for (double v : p) n2 += v * v;
  return std::pow(std::sqrt(n2) + 1.0, spec.r - 2.0);
}

namespace {

// One value of m at frame i, site x, integrating over frames i..j_end in the
// direction `dir` (+1 forward, -1 backward). S[j][x] = sum_y (cap + Lambda_+(j, y)).
double moderated_value(const EigenvaluePaths& paths, const std::vector<std::vector<double>>& S,
                       std::size_t i, std::size_t x, long j_end, int dir, double rate, double cap,
                       double delta) {
  const auto& times = paths.times;
  double inner = 0.0;
  auto ratio_at = [&](long j, double elapsed) {
    const double num = std::min(paths.lambda_minus[j][x], cap);
    if (elapsed <= 0.0) return num / S[j][x];
    return num * elapsed / inner;
  };
  double m = 0.0;
  double prev_ratio = ratio_at(static_cast<long>(i), 0.0);
  double prev_u = 0.0;
  for (long j = static_cast<long>(i) + dir; dir > 0 ? j <= j_end : j >= j_end; j += dir) {
    const long jp = j - dir;
    const double h = std::abs(times[j] - times[jp]);
    inner += 0.5 * h * (S[j][x] + S[jp][x]);
    const double elapsed = std::abs(times[j] - times[i]);
    const double r = ratio_at(j, elapsed);
    const double u = rate * elapsed;
    // int_{prev_u}^{u} k(v) (alpha + beta v) dv with the ratio linear in v.
    const double beta = u > prev_u ? (r - prev_ratio) / (u - prev_u) : 0.0;
    const double alpha = prev_ratio - beta * prev_u;
    m += alpha * (k_anti(delta, u) - k_anti(delta, prev_u)) +
         beta * (uk_anti(delta, u) - uk_anti(delta, prev_u));
    prev_ratio = r;
    prev_u = u;
  }
  return m;
}

std::vector<std::vector<double>> neighbor_sums(const EigenvaluePaths& paths, double cap) {
  const TorusGrid& g = paths.grid;
  const int d = g.dim();
  std::vector<std::vector<double>> S(paths.times.size(), std::vector<double>(g.size(), 0.0));
  for (std::size_t j = 0; j < paths.times.size(); ++j)
    for (std::size_t x = 0; x < g.size(); ++x) {
      double acc = 0.0;
      for (int i = 0; i < d; ++i)
        acc += 2.0 * cap + paths.lambda_plus[j][g.forward(x, i)] + paths.lambda_plus[j][g.backward(x, i)];
      S[j][x] = acc;
    }
  return S;
}

}  // namespace

ModeratedField moderated_env(const EigenvaluePaths& paths, double P, const ModeratedOptions& opts) {
  const TorusGrid& g = paths.grid;
  const std::size_t F = paths.times.size();
  require(F >= 2, "moderated_env: need at least two frames");
  require(paths.lambda_minus.size() == F && paths.lambda_plus.size() == F, "moderated_env: ragged paths");
  for (std::size_t j = 1; j < F; ++j)
    require(paths.times[j] > paths.times[j - 1], "moderated_env: times must increase");
  const double delta = opts.delta > 0 ? opts.delta : choose_delta();
  const int d = g.dim();

  ModeratedField out;
  out.grid = g;
  out.delta = delta;

  if (opts.window == ModerationWindow::UnitSplit) {
    require(opts.rate > 0, "moderated_env: rate must be positive");
    require(paths.times.front() >= -1e-12 && paths.times.back() <= 1.0 + 1e-12,
            "moderated_env: unit window needs times in [0, 1]");
    out.rate = opts.rate;
    const auto S = neighbor_sums(paths, 1.0);
    for (std::size_t i = 0; i < F; ++i) {
      const bool fwd = paths.times[i] <= 0.5;
      std::vector<double> row(g.size());
      for (std::size_t x = 0; x < g.size(); ++x)
        row[x] = moderated_value(paths, S, i, x, fwd ? static_cast<long>(F) - 1 : 0, fwd ? 1 : -1,
                                 opts.rate, 1.0, delta);
      out.times.push_back(paths.times[i]);
      out.values.push_back(std::move(row));
    }
    return out;
  }

  require(P > 0, "moderated_env: scale must be positive");
  out.rate = P;
  // The ratio is at most P / (2d P) = 1 / (2d).
  const double cap_ratio = 1.0 / (2.0 * d);
  double H = opts.horizon;
  if (H <= 0.0) {
    // delta / 3 (1 + P H)^-3 / (2d) <= tol
    H = (std::cbrt(delta * cap_ratio / (3.0 * opts.tail_tol)) - 1.0) / P;
    H = std::max(1.01 * H, 0.0);
  }
  out.horizon = H;
  out.truncation_bound = ModerationKernels(delta).k_integral(P * H, INFINITY) * cap_ratio;
  if (out.truncation_bound > opts.tail_tol)
    throw HorizonTooShort("moderated_env: horizon leaves a tail above tolerance");
  const auto S = neighbor_sums(paths, P);
  std::size_t j_end = 0;
  for (std::size_t i = 0; i < F; ++i) {
    const double target = paths.times[i] + H;
    while (j_end < F && paths.times[j_end] < target - 1e-12) ++j_end;
    if (j_end >= F) break;
    std::vector<double> row(g.size());
    for (std::size_t x = 0; x < g.size(); ++x)
      row[x] = moderated_value(paths, S, i, x, static_cast<long>(j_end), 1, P, P, delta);
    out.times.push_back(paths.times[i]);
    out.values.push_back(std::move(row));
  }
  if (out.values.empty()) throw HorizonTooShort("moderated_env: path shorter than the horizon");
  return out;
}

ModeratedField moderated_env(const Trajectory& traj, const ModeratedOptions& opts) {
  return moderated_env(EigenvaluePaths::from_trajectory(traj),
                       moderation_scale(traj.potential, traj.slope), opts);
}

// ---------------------------------------------------------------------------

namespace {

TailRegression regress(const std::vector<double>& sorted, const std::vector<double>& K,
                       double (*transform)(double, double), double e) {
  TailRegression t;
  std::vector<double> x, y;
  for (double k : K) {
    const auto it = std::upper_bound(sorted.begin(), sorted.end(), k);
    const double prob = static_cast<double>(sorted.end() - it) / sorted.size();
    t.K.push_back(k);
    t.probability.push_back(prob);
    if (prob > 0) {
      x.push_back(transform(k, e));
      y.push_back(std::log(prob));
    }
  }
  if (x.empty()) throw EmptyTail("moderated_tail_report: no exceedances");
  if (x.size() >= 3) t.fit = linear_fit(x, y);
  return t;
}

double power_of(double k, double e) { return std::pow(k, e); }
double log_power_of(double k, double e) { return std::pow(std::log(k), e); }

}  // namespace

ModeratedTailReport moderated_tail_report(std::span<const double> samples, double r, int points) {
  require(samples.size() >= 1000, "moderated_tail_report: need at least 1000 samples");
  require(points >= 3, "moderated_tail_report: need at least 3 grid points");
  ModeratedTailReport rep;
  rep.samples = samples.size();
  std::vector<double> s(samples.begin(), samples.end());
  std::sort(s.begin(), s.end());
  rep.min = s.front();
  rep.max = s.back();
  double acc = 0.0;
  for (double v : s) acc += v;
  rep.mean = acc / s.size();
  if (rep.max - rep.min <= 1e-9 * std::max(1e-300, std::abs(rep.max))) {
    rep.degenerate = true;
    return rep;
  }
  require(r > 2, "moderated_tail_report: tail exponent needs r > 2");
  const double e = r / (r - 2.0);
  auto quantile = [](const std::vector<double>& v, double q) {
    const double pos = q * (v.size() - 1);
    const std::size_t i = static_cast<std::size_t>(pos);
    return i + 1 < v.size() ? v[i] + (pos - i) * (v[i + 1] - v[i]) : v.back();
  };
  const double p_lo = std::max(10.0 / s.size(), 1e-3);
  std::vector<double> K;
  const double a = quantile(s, 0.5), b = quantile(s, 1.0 - p_lo);
  for (int j = 0; j < points; ++j) K.push_back(a + (b - a) * j / (points - 1));
  rep.upper = regress(s, K, power_of, e);

  std::vector<double> inv;
  for (double v : s)
    if (v > 0) inv.push_back(1.0 / v);
  std::sort(inv.begin(), inv.end());
  if (inv.empty()) throw EmptyTail("moderated_tail_report: all samples vanish");
  std::vector<double> Ki;
  const double ai = std::max(quantile(inv, 0.5), 1.0 + 1e-9), bi = std::max(quantile(inv, 1.0 - p_lo), ai * (1 + 1e-9));
  for (int j = 0; j < points; ++j) Ki.push_back(ai * std::pow(bi / ai, static_cast<double>(j) / (points - 1)));
  rep.inverse = regress(inv, Ki, log_power_of, e);
  return rep;
}

// ---------------------------------------------------------------------------

ModerationRatio moderation_ratio(const FieldSeries& u, const Environment& env,
                                 const ModeratedField& m, double P, double K_window) {
  const TorusGrid& g = env.grid();
  require(g.same_shape(m.grid), "moderation_ratio: grid mismatch");
  require(!u.frames.empty() && u.frames.size() == u.times.size(), "moderation_ratio: empty series");
  require(K_window > 0 && P > 0, "moderation_ratio: bad window or scale");
  const int d = g.dim();
  const std::size_t n = g.size();
  const std::size_t F = u.times.size();
  const ModerationKernels ker(m.delta);

  // Offsets with Euclidean norm at most 2.
  std::vector<std::vector<int>> offsets;
  {
    std::vector<int> z(d, -2);
    while (true) {
      int n2 = 0;
      for (int v : z) n2 += v * v;
      if (n2 <= 4) offsets.push_back(z);
      int i = d - 1;
      while (i >= 0 && z[i] == 2) z[i--] = -2;
      if (i < 0) break;
      ++z[i];
    }
  }
  std::vector<std::vector<std::size_t>> ball(n);
  for (std::size_t x = 0; x < n; ++x) {
    const auto c = g.coords(x);
    for (const auto& z : offsets) {
      std::vector<int> y(c.begin(), c.end());
      for (int i = 0; i < d; ++i) y[i] += z[i];
      ball[x].push_back(g.index(y));
    }
    std::sort(ball[x].begin(), ball[x].end());
    ball[x].erase(std::unique(ball[x].begin(), ball[x].end()), ball[x].end());
  }

  // Energy densities and squared gradients per frame.
  std::vector<std::vector<double>> e(F, std::vector<double>(n)), g2(F, std::vector<double>(n));
  std::vector<double> grad(n * d);
  for (std::size_t j = 0; j < F; ++j) {
    gradient_into(g, u.frames[j].values, grad);
    const auto a = env.frame(env.frame_index(u.times[j]));
    for (std::size_t s = 0; s < n; ++s) {
      double q = 0.0, sq = 0.0;
      for (int i = 0; i < d; ++i) {
        double ai = 0.0;
        for (int k = 0; k < d; ++k) ai += a[s * d * d + i * d + k] * grad[s * d + k];
        q += grad[s * d + i] * ai;
        sq += grad[s * d + i] * grad[s * d + i];
      }
      e[j][s] = q;
      g2[j][s] = sq;
    }
  }
  auto m_index = [&](double t) -> long {
    const auto it = std::lower_bound(m.times.begin(), m.times.end(), t - 1e-9);
    if (it == m.times.end() || std::abs(*it - t) > 1e-9) return -1;
    return it - m.times.begin();
  };

  ModerationRatio out;
  for (std::size_t i = 0; i < F; ++i) {
    const double t = u.times[i];
    if (t + K_window > u.times.back() + 1e-12) break;
    const long mi = m_index(t);
    if (mi < 0) continue;
    for (std::size_t x = 0; x < n; ++x) {
      const double lhs = m.values[mi][x] * g2[i][x];
      double rhs = 0.0;
      for (std::size_t j = i; j + 1 < F && u.times[j] < t + K_window - 1e-12; ++j) {
        double ej = 0.0, ej1 = 0.0;
        for (std::size_t y : ball[x]) {
          ej += e[j][y];
          ej1 += e[j + 1][y];
        }
        const double a = P * (u.times[j] - t), b = P * (u.times[j + 1] - t);
        rhs += 0.5 * (ej + ej1) * ker.K_integral(a, b) / P;
      }
      if (rhs <= 1e-300) {
        if (lhs <= 1e-300) {
          ++out.skipped;
          continue;
        }
        out.max_ratio = INFINITY;
        ++out.evaluated;
        continue;
      }
      out.max_ratio = std::max(out.max_ratio, lhs / rhs);
      ++out.evaluated;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

ExitTimeResult exit_time_experiment(const PotentialSpec& spec, const TorusGrid& grid,
                                    std::span<const double> p, double R1,
                                    std::span<const double> T_grid, std::size_t replicas,
                                    const ExitTimeOptions& opts) {
  const int d = grid.dim();
  if (static_cast<int>(p.size()) != d) throw DimensionMismatch("exit_time_experiment: |p| != d");
  require(R1 > 0 && replicas > 0 && !T_grid.empty(), "exit_time_experiment: bad arguments");
  require(std::is_sorted(T_grid.begin(), T_grid.end()) && T_grid.front() > 0,
          "exit_time_experiment: T grid must be positive and increasing");
  require(opts.site < grid.size(), "exit_time_experiment: site out of range");
  const double Tmax = T_grid.back();
  const std::int64_t nmax = std::llround(Tmax / opts.dt);
  const double burn = opts.burn_in < 0 ? default_burn_in(grid) : opts.burn_in;
  const std::int64_t nb = std::llround(burn / opts.dt);

  std::vector<std::size_t> confined(T_grid.size(), 0);
  LangevinOptions lo;
  lo.dt = opts.dt;
  const std::vector<double> slope(p.begin(), p.end());
  auto norm_at_site = [&](std::span<const double> gr) {
    double t2 = 0.0;
    for (int i = 0; i < d; ++i) {
      const double v = p[i] + gr[opts.site * d + i];
      t2 += v * v;
    }
    return std::sqrt(t2);
  };
  for (std::size_t r = 0; r < replicas; ++r) {
    LangevinStepper stepper(grid, spec, slope, lo);
    DynamicsState st = DynamicsState::flat(grid, spec, slope);
    st.step = -nb;
    const NoiseStream noise(derive_seed(opts.seed, r), grid, opts.dt);
    for (std::int64_t i = 0; i < nb; ++i) stepper.step(st, noise);
    // The stepper reports the gradient of the pre-step state, so step k
    // checks time k dt; one extra step covers T itself.
    double exit_time = INFINITY;
    for (std::int64_t i = 0; i <= nmax; ++i) {
      stepper.step(st, noise);
      if (norm_at_site(stepper.gradient()) > R1) {
        exit_time = i * opts.dt;
        break;
      }
    }
    for (std::size_t k = 0; k < T_grid.size(); ++k)
      if (exit_time > T_grid[k] + 1e-12) ++confined[k];
  }

  ExitTimeResult res;
  std::vector<double> x, y;
  const double e = spec.variant == PotentialVariant::DegenerateRadial && spec.r > 2 ? spec.r / (spec.r - 2) : 1.0;
  for (std::size_t k = 0; k < T_grid.size(); ++k) {
    ExitTimeRow row;
    row.T = T_grid[k];
    row.confined = confined[k];
    row.replicas = replicas;
    row.probability = static_cast<double>(confined[k]) / replicas;
    std::tie(row.lo, row.hi) = wilson_interval(confined[k], replicas);
    res.rows.push_back(row);
    if (confined[k] > 0 && T_grid[k] > 1.0) {
      x.push_back(std::pow(std::log(T_grid[k]), e));
      y.push_back(std::log(row.probability));
    }
  }
  if (x.size() >= 3) res.fit = linear_fit(x, y);
  return res;
}

}  // namespace gradphi
