#include "gradphi/gibbs.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "gradphi/errors.hpp"
#include "gradphi/noise.hpp"

namespace gradphi {

namespace {

struct RunSeries {
  std::vector<std::vector<double>> flux;  // per component
  std::vector<std::vector<double>> form, sym;
};

RunSeries run_series(const PotentialSpec& spec, const TorusGrid& grid, std::span<const double> p,
                     const MonteCarloParams& mc, std::uint64_t seed,
                     const std::vector<std::vector<double>>& lambdas) {
  const int d = grid.dim();
  if (static_cast<int>(p.size()) != d) throw DimensionMismatch("surface tension: |p| != d");
  require(mc.sample_every >= 1, "MonteCarloParams: sample_every must be >= 1");
  LangevinOptions lo;
  lo.dt = mc.dt;
  LangevinStepper stepper(grid, spec, std::vector<double>(p.begin(), p.end()), lo);
  for (const auto& l : lambdas) {
    if (static_cast<int>(l.size()) != d) throw DimensionMismatch("surface tension: |lambda| != d");
    stepper.add_tangent(l);
  }
  stepper.enable_hessian(!lambdas.empty());

  StationaryOptions so;
  so.dt = mc.dt;
  so.burn_in = mc.burn_in;
  so.horizon = mc.horizon;

  RunSeries out;
  out.flux.resize(d);
  out.form.resize(lambdas.size());
  out.sym.resize(lambdas.size());
  std::vector<double> acc(d + 2 * lambdas.size(), 0.0);
  int filled = 0;
  const std::size_t n = grid.size();
  run_stationary(spec, grid, p, seed, so, stepper,
                 [&](const LangevinStepper& st, const DynamicsState&) {
                   const auto f = st.flux();
                   for (std::size_t s = 0; s < n; ++s)
                     for (int i = 0; i < d; ++i) acc[i] += f[s * d + i];
                   for (std::size_t k = 0; k < lambdas.size(); ++k) {
                     acc[d + 2 * k] += st.tangent_form(k);
                     acc[d + 2 * k + 1] += st.tangent_symmetric_form(k);
                   }
                   if (++filled < mc.sample_every) return;
                   for (int i = 0; i < d; ++i) out.flux[i].push_back(acc[i] / (n * filled));
                   for (std::size_t k = 0; k < lambdas.size(); ++k) {
                     out.form[k].push_back(acc[d + 2 * k] / filled);
                     out.sym[k].push_back(acc[d + 2 * k + 1] / filled);
                   }
                   std::fill(acc.begin(), acc.end(), 0.0);
                   filled = 0;
                 });
  return out;
}

HessianEstimate hessian_from(const RunSeries& rs, std::size_t k, std::vector<double> lambda,
                             int batches) {
  HessianEstimate h;
  h.lambda = std::move(lambda);
  h.form = batch_means(rs.form[k], batches);
  h.symmetric_form = batch_means(rs.sym[k], batches);
  h.discrepancy = std::abs(h.form.mean - h.symmetric_form.mean);
  return h;
}

bool is_zero(std::span<const double> p) {
  return std::all_of(p.begin(), p.end(), [](double v) { return v == 0.0; });
}

}  // namespace

VectorEstimate surface_tension_gradient(const PotentialSpec& spec, const TorusGrid& grid,
                                        std::span<const double> p, const MonteCarloParams& mc) {
  const RunSeries rs = run_series(spec, grid, p, mc, mc.seed, {});
  VectorEstimate out;
  for (const auto& series : rs.flux) {
    const Estimate e = batch_means(series, mc.batches);
    out.mean.push_back(e.mean);
    out.stderr_.push_back(e.stderr_);
    out.samples = e.samples;
  }
  return out;
}

Estimate surface_tension_value(const PotentialSpec& spec, const TorusGrid& grid,
                               std::span<const double> p, int n_integration_nodes,
                               const MonteCarloParams& mc) {
  require(n_integration_nodes >= 2, "surface_tension_value: need at least 2 integration nodes");
  if (static_cast<int>(p.size()) != grid.dim()) throw DimensionMismatch("surface_tension_value: |p| != d");
  Estimate out;
  if (is_zero(p)) return out;
  const QuadratureRule rule = gauss_legendre(n_integration_nodes, 0.0, 1.0);
  double var = 0.0;
  std::vector<double> q(p.size());
  for (int k = 0; k < n_integration_nodes; ++k) {
    for (std::size_t i = 0; i < p.size(); ++i) q[i] = rule.nodes[k] * p[i];
    const RunSeries rs = run_series(spec, grid, q, mc, derive_seed(mc.seed, k), {});
    // The integrand p . flux as one series keeps the component covariance.
    std::vector<double> integrand(rs.flux[0].size(), 0.0);
    for (std::size_t i = 0; i < p.size(); ++i)
      for (std::size_t t = 0; t < integrand.size(); ++t) integrand[t] += p[i] * rs.flux[i][t];
    const Estimate e = batch_means(integrand, mc.batches);
    out.mean += rule.weights[k] * e.mean;
    var += rule.weights[k] * rule.weights[k] * e.stderr_ * e.stderr_;
    out.samples += e.samples;
  }
  out.stderr_ = std::sqrt(var);
  return out;
}

HessianEstimate surface_tension_hessian(const PotentialSpec& spec, const TorusGrid& grid,
                                        std::span<const double> p, std::span<const double> lambda,
                                        const MonteCarloParams& mc) {
  std::vector<std::vector<double>> ls{std::vector<double>(lambda.begin(), lambda.end())};
  const RunSeries rs = run_series(spec, grid, p, mc, mc.seed, ls);
  return hessian_from(rs, 0, ls[0], mc.batches);
}

SurfaceTensionEstimate estimate_surface_tension(const PotentialSpec& spec, const TorusGrid& grid,
                                                std::span<const double> p,
                                                const std::vector<std::vector<double>>& lambdas,
                                                int value_nodes, const MonteCarloParams& mc) {
  SurfaceTensionEstimate est;
  est.p.assign(p.begin(), p.end());
  est.L = grid.side();
  const RunSeries rs = run_series(spec, grid, p, mc, mc.seed, lambdas);
  for (const auto& series : rs.flux) {
    const Estimate e = batch_means(series, mc.batches);
    est.gradient.push_back(e.mean);
    est.gradient_err.push_back(e.stderr_);
    est.samples = e.samples;
  }
  for (std::size_t k = 0; k < lambdas.size(); ++k)
    est.hessian.push_back(hessian_from(rs, k, lambdas[k], mc.batches));
  if (value_nodes >= 2) {
    MonteCarloParams vm = mc;
    vm.seed = derive_seed(mc.seed, 0x5157u);
    const Estimate v = surface_tension_value(spec, grid, p, value_nodes, vm);
    est.value = v.mean;
    est.value_err = v.stderr_;
  }
  return est;
}

// ---------------------------------------------------------------------------
// Quadrature oracle

namespace {

class GibbsIntegrand {
 public:
  GibbsIntegrand(const PotentialSpec& spec, const TorusGrid& grid, std::span<const double> p)
      : grid_(grid), kernel_(spec), R0_(spec.variant == PotentialVariant::DegenerateRadial ? spec.R0 : -1.0),
        p_(p.begin(), p.end()) {
    n_ = grid.size();
    d_ = grid.dim();
    k_ = n_ - 1;
    // Helmert basis of the mean-zero fields.
    basis_.assign(k_, std::vector<double>(n_, 0.0));
    grad_basis_.assign(k_, std::vector<double>(n_ * d_, 0.0));
    for (std::size_t j = 0; j < k_; ++j) {
      const double m = static_cast<double>(j + 1);
      const double norm = 1.0 / std::sqrt(m * (m + 1.0));
      for (std::size_t s = 0; s <= j; ++s) basis_[j][s] = norm;
      basis_[j][j + 1] = -m * norm;
      gradient_into(grid, basis_[j], grad_basis_[j]);
    }
    href_ = energy_of(std::vector<double>(n_ * d_, 0.0));
  }

  std::size_t dimension() const { return k_; }
  int dim() const { return d_; }
  std::size_t sites() const { return n_; }
  const std::vector<double>& grad_basis(std::size_t j) const { return grad_basis_[j]; }
  double basis0(std::size_t j) const { return basis_[j][0]; }
  double href() const { return href_; }

  // Sum over sites of V(p + G(x)) for a gradient field G.
  double energy_of(std::span<const double> G) const {
    double h = 0.0;
    double x[8];
    for (std::size_t s = 0; s < n_; ++s) {
      for (int i = 0; i < d_; ++i) x[i] = p_[i] + G[s * d_ + i];
      h += kernel_.value(x, d_);
    }
    return h;
  }

  // Adds weight * density * (1, flux average, phi0, phi0^2) into acc.
  void accumulate(std::span<const double> G, double phi0, double weight, double* acc) const {
    double h = 0.0;
    double x[8], f[8], fs[8] = {0};
    for (std::size_t s = 0; s < n_; ++s) {
      for (int i = 0; i < d_; ++i) x[i] = p_[i] + G[s * d_ + i];
      h += kernel_.value(x, d_);
      kernel_.flux(x, d_, f);
      for (int i = 0; i < d_; ++i) fs[i] += f[i];
    }
    const double rho = weight * std::exp(-(h - href_));
    acc[0] += rho;
    for (int i = 0; i < d_; ++i) acc[1 + i] += rho * fs[i] / n_;
    acc[1 + d_] += rho * phi0;
    acc[2 + d_] += rho * phi0 * phi0;
  }

  // Values t where |p + G(x) + t B(x)| = R0 for some site, in (a, b).
  void kinks(std::span<const double> G, std::span<const double> B, double a, double b,
             std::vector<double>& out) const {
    if (R0_ <= 0.0) return;
    for (std::size_t s = 0; s < n_; ++s) {
      double aa = 0.0, bb = 0.0, cc = -R0_ * R0_;
      for (int i = 0; i < d_; ++i) {
        const double y = p_[i] + G[s * d_ + i];
        const double z = B[s * d_ + i];
        aa += z * z;
        bb += 2.0 * y * z;
        cc += y * y;
      }
      if (aa < 1e-300) continue;
      const double disc = bb * bb - 4.0 * aa * cc;
      if (disc <= 0.0) continue;
      const double sq = std::sqrt(disc);
      for (double t : {(-bb - sq) / (2.0 * aa), (-bb + sq) / (2.0 * aa)})
        if (t > a && t < b) out.push_back(t);
    }
  }

  // Kink sets are hyperplanes when d = 1.
  bool planar() const { return d_ == 1 && R0_ > 0.0; }

  // For d = 1: values s in (a, b) at which the kink lines of the plane
  // G + s B + t C meet each other or run parallel to t.
  void plane_kinks(std::span<const double> G, std::span<const double> B, std::span<const double> C,
                   double a, double b, std::vector<double>& out) const {
    struct Line {
      double g, b, c, level;
    };
    std::vector<Line> lines;
    for (std::size_t s = 0; s < n_; ++s)
      for (double lv : {R0_ - p_[0], -R0_ - p_[0]}) lines.push_back({G[s], B[s], C[s], lv});
    auto push = [&](double s) {
      if (s > a && s < b) out.push_back(s);
    };
    for (std::size_t i = 0; i < lines.size(); ++i) {
      const Line& u = lines[i];
      if (std::abs(u.c) < 1e-14) {
        if (std::abs(u.b) > 1e-14) push((u.level - u.g) / u.b);
        continue;
      }
      for (std::size_t j = i + 1; j < lines.size(); ++j) {
        const Line& v = lines[j];
        if (std::abs(v.c) < 1e-14) continue;
        const double den = u.b / u.c - v.b / v.c;
        if (std::abs(den) < 1e-14) continue;
        push(((u.level - u.g) / u.c - (v.level - v.g) / v.c) / den);
      }
    }
  }

 private:
  TorusGrid grid_;
  PotentialKernel kernel_;
  double R0_;
  std::vector<double> p_;
  std::size_t n_ = 0, k_ = 0;
  int d_ = 0;
  std::vector<std::vector<double>> basis_, grad_basis_;
  double href_ = 0.0;
};

// Nested integration over [-R, R]^k: composite GL on the outer coordinates,
// and on the innermost coordinate composite GL split at the exact kinks.
class NestedQuadrature {
 public:
  NestedQuadrature(const GibbsIntegrand& f, double R, int panels, int m)
      : f_(f), R_(R), panels_(panels), rule_(gauss_legendre(m)) {
    for (int q = 0; q < panels; ++q) {
      const double a = -R + 2.0 * R * q / panels, b = -R + 2.0 * R * (q + 1) / panels;
      for (std::size_t i = 0; i < rule_.nodes.size(); ++i) {
        outer_nodes_.push_back(0.5 * (a + b) + 0.5 * (b - a) * rule_.nodes[i]);
        outer_weights_.push_back(0.5 * (b - a) * rule_.weights[i]);
      }
    }
  }

  std::vector<double> run() {
    const int d = f_.dim();
    std::vector<double> acc(3 + d, 0.0);
    std::vector<double> G(f_.sites() * d, 0.0);
    recurse(0, G, 0.0, 1.0, acc.data());
    return acc;
  }

 private:
  void recurse(std::size_t level, std::vector<double>& G, double phi0, double w, double* acc) {
    const std::size_t k = f_.dimension();
    const auto& B = f_.grad_basis(level);
    const double b0 = f_.basis0(level);
    std::vector<double> H(G.size());
    if (level + 2 < k || (level + 2 == k && !f_.planar())) {
      for (std::size_t q = 0; q < outer_nodes_.size(); ++q) {
        const double t = outer_nodes_[q];
        for (std::size_t i = 0; i < G.size(); ++i) H[i] = G[i] + t * B[i];
        recurse(level + 1, H, phi0 + t * b0, w * outer_weights_[q], acc);
      }
      return;
    }
    // The last two levels are split at exact kinks: on the innermost line where
    // a site crosses |x| = R0, one level up where two kink planes meet.
    std::vector<double> breaks;
    for (int q = 0; q <= panels_; ++q) breaks.push_back(-R_ + 2.0 * R_ * q / panels_);
    if (level + 1 == k)
      f_.kinks(G, B, -R_, R_, breaks);
    else
      f_.plane_kinks(G, B, f_.grad_basis(level + 1), -R_, R_, breaks);
    std::sort(breaks.begin(), breaks.end());
    for (std::size_t q = 0; q + 1 < breaks.size(); ++q) {
      const double a = breaks[q], b = breaks[q + 1];
      if (b - a < 1e-14) continue;
      for (std::size_t i = 0; i < rule_.nodes.size(); ++i) {
        const double t = 0.5 * (a + b) + 0.5 * (b - a) * rule_.nodes[i];
        const double wt = w * 0.5 * (b - a) * rule_.weights[i];
        for (std::size_t j = 0; j < G.size(); ++j) H[j] = G[j] + t * B[j];
        if (level + 1 == k)
          f_.accumulate(H, phi0 + t * b0, wt, acc);
        else
          recurse(level + 1, H, phi0 + t * b0, wt, acc);
      }
    }
  }

  const GibbsIntegrand& f_;
  double R_;
  int panels_;
  QuadratureRule rule_;
  std::vector<double> outer_nodes_, outer_weights_;
};

// Smallest energy excess over a sphere of radius R, by direction sampling.
double min_sphere_excess(const GibbsIntegrand& f, double R) {
  const std::size_t k = f.dimension();
  const int d = f.dim();
  std::mt19937_64 rng(12345);
  std::normal_distribution<double> normal;
  std::vector<double> dir(k), G(f.sites() * d);
  double best = INFINITY;
  auto eval = [&]() {
    double nn = 0.0;
    for (double v : dir) nn += v * v;
    nn = std::sqrt(nn);
    std::fill(G.begin(), G.end(), 0.0);
    for (std::size_t j = 0; j < k; ++j) {
      const auto& B = f.grad_basis(j);
      for (std::size_t i = 0; i < G.size(); ++i) G[i] += R * dir[j] / nn * B[i];
    }
    best = std::min(best, f.energy_of(G) - f.href());
  };
  for (std::size_t j = 0; j < k; ++j)
    for (double sg : {-1.0, 1.0}) {
      std::fill(dir.begin(), dir.end(), 0.0);
      dir[j] = sg;
      eval();
    }
  for (int t = 0; t < 4096; ++t) {
    for (double& v : dir) v = normal(rng);
    eval();
  }
  return best;
}

struct Moments {
  double logZ = 0.0;
  std::vector<double> grad;
  double var = 0.0;
};

Moments moments(const GibbsIntegrand& f, double R, int panels, int m) {
  NestedQuadrature nq(f, R, panels, m);
  const std::vector<double> acc = nq.run();
  const int d = f.dim();
  if (!(acc[0] > 0.0) || !std::isfinite(acc[0])) throw NonFinite("quadrature_oracle: degenerate mass");
  Moments out;
  out.logZ = std::log(acc[0]) - f.href();
  for (int i = 0; i < d; ++i) out.grad.push_back(acc[1 + i] / acc[0]);
  const double mean0 = acc[1 + d] / acc[0];
  out.var = acc[2 + d] / acc[0] - mean0 * mean0;
  return out;
}

}  // namespace

QuadratureResult quadrature_oracle(const PotentialSpec& spec, const TorusGrid& grid,
                                   std::span<const double> p, const QuadratureOptions& opts) {
  spec.validate();
  if (static_cast<int>(p.size()) != grid.dim()) throw DimensionMismatch("quadrature_oracle: |p| != d");
  const std::size_t k = grid.size() - 1;
  require(k >= 1 && k <= 8, "quadrature_oracle: N^d - 1 must be in [1, 8]");
  require(opts.nodes_per_panel >= 2 && opts.initial_panels >= 1, "quadrature_oracle: bad rule sizes");

  const std::vector<double> zero(p.size(), 0.0);
  const GibbsIntegrand fp(spec, grid, p), f0(spec, grid, zero);
  const double log_tol = std::log(opts.tail_tol);
  double R = 1.0;
  while (min_sphere_excess(fp, R) < -log_tol || min_sphere_excess(f0, R) < -log_tol) {
    R *= 1.2;
    if (R > opts.max_radius)
      throw TruncationInsufficient("quadrature_oracle: density tail not below tolerance within max_radius");
  }

  auto cost = [&](int panels) {
    return std::pow(static_cast<double>(panels) * opts.nodes_per_panel, static_cast<double>(k));
  };
  int panels = opts.initial_panels;
  if (cost(panels) > opts.max_points) throw Unsupported("quadrature_oracle: problem too large for tensor quadrature");

  auto evaluate = [&](int P) {
    QuadratureResult r;
    const Moments mp = moments(fp, R, P, opts.nodes_per_panel);
    const Moments m0 = moments(f0, R, P, opts.nodes_per_panel);
    r.log_Z_ratio = mp.logZ - m0.logZ;
    r.sigma = -r.log_Z_ratio / grid.size();
    r.gradient = mp.grad;
    r.var_phi0 = mp.var;
    r.radius = R;
    r.panels = P;
    r.dimension = k;
    return r;
  };
  QuadratureResult prev = evaluate(panels);
  while (true) {
    const int next = panels * 2;
    if (next > opts.max_panels || cost(next) > opts.max_points)
      throw NonConvergence("quadrature_oracle: panel refinement did not settle");
    QuadratureResult cur = evaluate(next);
    double change = std::abs(cur.log_Z_ratio - prev.log_Z_ratio) / std::max(1.0, std::abs(cur.log_Z_ratio));
    for (std::size_t i = 0; i < cur.gradient.size(); ++i)
      change = std::max(change, std::abs(cur.gradient[i] - prev.gradient[i]) /
                                    std::max(1.0, std::abs(cur.gradient[i])));
    change = std::max(change, std::abs(cur.var_phi0 - prev.var_phi0) / std::max(1.0, cur.var_phi0));
    panels = next;
    prev = std::move(cur);
    if (change < opts.rel_tol) return prev;
  }
}

// ---------------------------------------------------------------------------
// Tails

std::vector<double> gradient_magnitudes(const Trajectory& traj) {
  const TorusGrid& g = traj.grid;
  const int d = g.dim();
  const std::size_t n = g.size();
  std::vector<double> out;
  out.reserve(traj.frames.size() * n);
  std::vector<double> grad(n * d);
  for (const Frame& f : traj.frames) {
    gradient_into(g, f.phi.values, grad);
    for (std::size_t s = 0; s < n; ++s) {
      double t2 = 0.0;
      for (int i = 0; i < d; ++i) t2 += grad[s * d + i] * grad[s * d + i];
      out.push_back(std::sqrt(t2));
    }
  }
  return out;
}

TailReport tail_report_from_samples(std::span<const double> magnitudes,
                                    std::span<const double> K_grid, double exponent) {
  require(!K_grid.empty(), "gradient_tail_report: empty K grid");
  require(std::is_sorted(K_grid.begin(), K_grid.end()), "gradient_tail_report: K grid must be increasing");
  require(!magnitudes.empty(), "gradient_tail_report: no samples");
  TailReport rep;
  rep.exponent = exponent;
  rep.total = magnitudes.size();
  std::vector<double> sorted(magnitudes.begin(), magnitudes.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> x, y;
  for (double K : K_grid) {
    const auto it = std::lower_bound(sorted.begin(), sorted.end(), K);
    const std::size_t c = static_cast<std::size_t>(sorted.end() - it);
    rep.K.push_back(K);
    rep.counts.push_back(c);
    rep.probability.push_back(static_cast<double>(c) / rep.total);
    if (c > 0) {
      x.push_back(std::pow(K, exponent));
      y.push_back(std::log(rep.probability.back()));
    }
  }
  if (rep.counts.front() == 0) throw EmptyTail("gradient_tail_report: no exceedances at the smallest K");
  if (x.size() >= 3) rep.fit = linear_fit(x, y);
  return rep;
}

TailReport gradient_tail_report(const Trajectory& traj, std::span<const double> K_grid,
                                double exponent) {
  const std::vector<double> m = gradient_magnitudes(traj);
  return tail_report_from_samples(m, K_grid, exponent);
}

std::vector<double> tail_quantile_grid(std::span<const double> magnitudes, double p_hi,
                                       double p_lo, int points) {
  require(points >= 2 && p_hi > p_lo && p_lo > 0.0 && p_hi < 1.0, "tail_quantile_grid: bad arguments");
  require(!magnitudes.empty(), "tail_quantile_grid: no samples");
  std::vector<double> sorted(magnitudes.begin(), magnitudes.end());
  std::sort(sorted.begin(), sorted.end());
  auto quantile = [&](double q) {
    const double pos = q * (sorted.size() - 1);
    const std::size_t i = static_cast<std::size_t>(pos);
    const double fr = pos - i;
    return i + 1 < sorted.size() ? sorted[i] * (1 - fr) + sorted[i + 1] * fr : sorted.back();
  };
  const double a = quantile(1.0 - p_hi), b = quantile(1.0 - p_lo);
  std::vector<double> K;
  for (int j = 0; j < points; ++j) K.push_back(a + (b - a) * j / (points - 1));
  return K;
}

// ---------------------------------------------------------------------------
// Helffer-Sjostrand

HsResult hs_variance_check(const PotentialSpec& spec, const TorusGrid& grid,
                           std::span<const double> p, const MonteCarloParams& mc,
                           const HsOptions& hs) {
  const int d = grid.dim();
  const std::size_t n = grid.size();
  if (static_cast<int>(p.size()) != d) throw DimensionMismatch("hs_variance_check: |p| != d");
  require(hs.site < n, "hs_variance_check: site out of range");
  require(hs.start_spacing > 0 && mc.dt > 0, "hs_variance_check: bad spacing");

  LangevinOptions lo;
  lo.dt = mc.dt;
  LangevinStepper stepper(grid, spec, std::vector<double>(p.begin(), p.end()), lo);
  stepper.enable_hessian(true);
  DynamicsState state = DynamicsState::flat(grid, spec, std::vector<double>(p.begin(), p.end()));
  const double burn = mc.burn_in < 0 ? default_burn_in(grid) : mc.burn_in;
  const std::int64_t nb = std::llround(burn / mc.dt);
  const std::int64_t nh = std::llround(mc.horizon / mc.dt);
  const std::int64_t stride = std::max<std::int64_t>(1, std::llround(hs.start_spacing / mc.dt));
  const std::int64_t max_age = std::llround(hs.max_kernel_time / mc.dt);
  state.step = -nb;
  const NoiseStream noise(mc.seed, grid, mc.dt);
  for (std::int64_t i = 0; i < nb; ++i) stepper.step(state, noise);

  struct Kernel {
    std::size_t index;
    std::int64_t born;
    std::vector<double> u;
    double integral = 0.0;
  };
  std::vector<Kernel> active;
  std::vector<double> integrals;
  std::vector<double> direct;
  direct.reserve(nh);
  std::vector<double> lu(n), scratch(n * d);
  HsResult res;
  const double cutoff2 = hs.norm_cutoff * hs.norm_cutoff;
  const double inv2 = 1.0 / (grid.scale() * grid.scale());

  for (std::int64_t i = 0;; ++i) {
    if (i < nh && i % stride == 0) {
      Kernel k{integrals.size(), i, std::vector<double>(n, -1.0 / n), 0.0};
      k.u[hs.site] += 1.0;
      active.push_back(std::move(k));
      integrals.push_back(0.0);
    }
    if (i >= nh && active.empty()) break;
    if (i < nh) direct.push_back(state.phi[hs.site] * state.phi[hs.site]);
    stepper.step(state, noise);
    if (active.empty()) continue;

    const auto a = stepper.hessian();
    double bound = 0.0;
    for (std::size_t s = 0; s < n; ++s)
      for (int r = 0; r < d; ++r) {
        double row = 0.0;
        for (int c = 0; c < d; ++c) row += std::abs(a[s * d * d + r * d + c]);
        bound = std::max(bound, row);
      }
    const double hmax = bound > 0 ? 0.5 / (2.0 * d * bound * inv2) : mc.dt;
    const int sub = std::max(1, static_cast<int>(std::ceil(mc.dt / hmax)));
    const double h = mc.dt / sub;

    for (auto it = active.begin(); it != active.end();) {
      Kernel& k = *it;
      for (int q = 0; q < sub; ++q) {
        // Left sums pair exactly with Euler: sum h (1 - h l)^j = 1 / l.
        k.integral += h * k.u[hs.site];
        elliptic_apply_into(grid, a, k.u, lu, scratch);
        for (std::size_t s = 0; s < n; ++s) k.u[s] += h * lu[s];
      }
      double nn = 0.0;
      for (double v : k.u) {
        nn += v * v;
        res.max_kernel_value = std::max(res.max_kernel_value, std::abs(v));
      }
      if (!std::isfinite(nn)) throw NonFinite("hs_variance_check: kernel blew up");
      if (nn < cutoff2) {
        integrals[k.index] = k.integral;
        it = active.erase(it);
        continue;
      }
      if (i + 1 - k.born > max_age)
        throw HorizonTooShort("hs_variance_check: heat kernel did not decay within max_kernel_time");
      ++it;
    }
  }
  res.kernels = integrals.size();
  res.var_direct = batch_means(direct, mc.batches);
  res.var_hk = batch_means(integrals, mc.batches);
  res.discrepancy = std::abs(res.var_direct.mean - res.var_hk.mean);
  return res;
}

}  // namespace gradphi
