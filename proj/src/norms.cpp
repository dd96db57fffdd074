#include "gradphi/norms.hpp"

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/Sparse>
#include <algorithm>
#include <cmath>
#include <limits>

#include "gradphi/dynamics.hpp"
#include "gradphi/errors.hpp"
#include "gradphi/noise.hpp"

namespace gradphi {

SpaceTimeField::SpaceTimeField(const TorusGrid& g, std::size_t frames, int comps, int fpu)
    : grid(g), components(comps), frames_per_unit(fpu), values(frames * g.size() * comps, 0.0) {
  require(comps >= 1 && fpu >= 1, "SpaceTimeField: components and frames_per_unit must be positive");
}

std::size_t SpaceTimeField::frames() const {
  const std::size_t per = grid.size() * static_cast<std::size_t>(components);
  return per == 0 ? 0 : values.size() / per;
}

namespace {

void check_q(double q) { require(q >= 1.0, "norm: q must lie in [1, inf]"); }

// (w sum |u|^q)^(1/q), or max |u| for q = inf.
double weighted_lq(std::span<const double> u, double w, double q) {
  if (std::isinf(q)) {
    double m = 0.0;
    for (double v : u) m = std::max(m, std::abs(v));
    return m;
  }
  double s = 0.0;
  if (q == 2.0)
    for (double v : u) s += v * v;
  else
    for (double v : u) s += std::pow(std::abs(v), q);
  return std::pow(w * s, 1.0 / q);
}

double site_weight(const TorusGrid& g, bool normalized) {
  return normalized ? 1.0 / static_cast<double>(g.size()) : std::pow(g.scale(), g.dim());
}

}  // namespace

double lq_norm(std::span<const double> u, const TorusGrid& grid, double q, bool normalized) {
  check_q(q);
  if (u.size() != grid.size()) throw DimensionMismatch("lq_norm: field size != grid size");
  return weighted_lq(u, site_weight(grid, normalized), q);
}

double lq_norm(const Field& u, double q, bool normalized) {
  return lq_norm(u.values, u.grid, q, normalized);
}

double lq_norm(const SpaceTimeField& f, double q, bool normalized) {
  check_q(q);
  const std::size_t F = f.frames();
  require(F > 0, "lq_norm: empty space-time field");
  if (f.values.size() != F * f.grid.size() * f.components)
    throw DimensionMismatch("lq_norm: values size is not frames * sites * components");
  // Components are combined in the Euclidean norm at each point.
  std::vector<double> mag(F * f.grid.size());
  for (std::size_t i = 0; i < mag.size(); ++i) {
    double s = 0.0;
    for (int c = 0; c < f.components; ++c) s += f.values[i * f.components + c] * f.values[i * f.components + c];
    mag[i] = std::sqrt(s);
  }
  const double cell = 1.0 / f.frames_per_unit;
  const double w = normalized ? 1.0 / static_cast<double>(mag.size())
                              : cell * std::pow(f.grid.scale(), f.grid.dim());
  return weighted_lq(mag, w, q);
}

double w1q_norm(const Field& u, double q, bool normalized) {
  check_q(q);
  const TorusGrid& g = u.grid;
  const int d = g.dim();
  std::vector<double> grad(g.size() * d), mag(g.size());
  gradient_into(g, u.values, grad);
  for (std::size_t x = 0; x < g.size(); ++x) {
    double s = 0.0;
    for (int i = 0; i < d; ++i) s += grad[x * d + i] * grad[x * d + i];
    mag[x] = std::sqrt(s);
  }
  const double w = site_weight(g, normalized);
  const double lead = normalized ? 1.0 / (g.side() * g.scale()) : 1.0;
  return lead * weighted_lq(u.values, w, q) + weighted_lq(mag, w, q);
}

double dual_norm_w12(const Field& u, bool normalized, double q) {
  if (q != 2.0) throw Unsupported("dual_norm_w12: only q = 2 has an exact dual norm");
  const TorusGrid& g = u.grid;
  if (u.values.size() != g.size()) throw DimensionMismatch("dual_norm_w12: field size != grid size");
  const std::size_t n = g.size();
  const int d = g.dim();
  bool zero = true;
  for (double v : u.values) zero = zero && v == 0.0;
  if (zero) return 0.0;

  const double mu = 1.0 / (g.side() * g.scale());
  const double h2 = 1.0 / (g.scale() * g.scale());
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(n * (2 * d + 1));
  for (std::size_t x = 0; x < n; ++x) {
    trip.emplace_back(x, x, mu * mu + 2.0 * d * h2);
    for (int i = 0; i < d; ++i) {
      trip.emplace_back(x, g.forward(x, i), -h2);
      trip.emplace_back(x, g.backward(x, i), -h2);
    }
  }
  Eigen::SparseMatrix<double> A(n, n);
  A.setFromTriplets(trip.begin(), trip.end());
  Eigen::ConjugateGradient<Eigen::SparseMatrix<double>, Eigen::Lower | Eigen::Upper> cg;
  cg.setTolerance(1e-14);
  cg.setMaxIterations(static_cast<int>(std::max<std::size_t>(1000, 10 * n)));
  cg.compute(A);
  const Eigen::Map<const Eigen::VectorXd> b(u.values.data(), n);
  const Eigen::VectorXd v = cg.solve(b);
  if (cg.info() != Eigen::Success) throw NonConvergence("dual_norm_w12: conjugate gradient did not converge");
  const double form = site_weight(g, normalized) * b.dot(v);
  return std::sqrt(std::max(0.0, form));
}

int exact_log(int side, int base) {
  if (side < 1 || base < 2) return -1;
  int n = 0;
  long long p = 1;
  while (p < side) {
    p *= base;
    ++n;
  }
  return p == side ? n : -1;
}

namespace {

long long ipow(long long b, int e) {
  long long r = 1;
  while (e-- > 0) r *= b;
  return r;
}

// Checks the cylinder shape and returns n.
int cylinder_level(const SpaceTimeField& f, int base) {
  require(base >= 2, "multiscale functional: base must be at least 2");
  const int n = exact_log(f.grid.side(), base);
  if (n < 0) throw BadShape("multiscale functional: torus side is not a power of the base");
  const long long want = static_cast<long long>(f.frames_per_unit) * ipow(base, 2 * n);
  if (static_cast<long long>(f.frames()) != want ||
      f.values.size() != f.frames() * f.grid.size() * f.components)
    throw BadShape("multiscale functional: frame count must be frames_per_unit * base^(2n)");
  return n;
}

}  // namespace

std::vector<double> cylinder_averages(const SpaceTimeField& f, int m, int base, int comp) {
  const int n = cylinder_level(f, base);
  require(m >= 0 && m <= n, "cylinder_averages: scale out of range");
  require(comp >= 0 && comp < f.components, "cylinder_averages: bad component");
  const TorusGrid& g = f.grid;
  const int d = g.dim();
  const long long side_blocks = ipow(base, n - m), bs = ipow(base, m);
  const long long space_blocks = ipow(side_blocks, d);
  const std::size_t tb = static_cast<std::size_t>(f.frames_per_unit * ipow(base, 2 * m));
  const std::size_t time_blocks = f.frames() / tb;

  std::vector<std::size_t> block_of(g.size());
  for (std::size_t x = 0; x < g.size(); ++x) {
    const std::vector<int> c = g.coords(x);
    long long b = 0;
    for (int i = 0; i < d; ++i) b = b * side_blocks + c[i] / bs;
    block_of[x] = static_cast<std::size_t>(b);
  }
  std::vector<double> out(time_blocks * space_blocks, 0.0);
  for (std::size_t t = 0; t < f.frames(); ++t) {
    double* row = out.data() + (t / tb) * space_blocks;
    for (std::size_t x = 0; x < g.size(); ++x) row[block_of[x]] += f.at(t, x, comp);
  }
  const double inv = 1.0 / (static_cast<double>(tb) * static_cast<double>(ipow(bs, d)));
  for (double& v : out) v *= inv;
  return out;
}

double multiscale_poincare_functional(const SpaceTimeField& f, double q, int base, double length_unit) {
  check_q(q);
  require(length_unit > 0, "multiscale functional: length_unit must be positive");
  const int n = cylinder_level(f, base);
  double total = 0.0;
  std::vector<double> comp(f.frames() * f.grid.size());
  for (int c = 0; c < f.components; ++c) {
    for (std::size_t i = 0; i < comp.size(); ++i) comp[i] = f.values[i * f.components + c];
    total += weighted_lq(comp, 1.0 / static_cast<double>(comp.size()), q);
    double scale = length_unit;
    for (int m = 0; m <= n; ++m, scale *= base) {
      const std::vector<double> avg = cylinder_averages(f, m, base, c);
      total += scale * weighted_lq(avg, 1.0 / static_cast<double>(avg.size()), q);
    }
  }
  return total;
}

FluxWeakNormResult flux_weak_norm_experiment(const PotentialSpec& spec, std::span<const int> L_list,
                                             std::span<const double> p, std::size_t replicas,
                                             const FluxWeakNormOptions& opts) {
  const int d = opts.dim;
  require(!L_list.empty(), "flux_weak_norm_experiment: empty L list");
  require(replicas >= 2, "flux_weak_norm_experiment: need at least 2 replicas");
  if (static_cast<int>(p.size()) != d) throw DimensionMismatch("flux_weak_norm_experiment: |p| != dim");
  require(opts.dt > 0 && opts.frames_per_unit >= 1, "flux_weak_norm_experiment: bad dt or frames_per_unit");
  const double cell = 1.0 / opts.frames_per_unit;
  const long long steps_per_frame = std::llround(cell / opts.dt);
  require(steps_per_frame >= 1 && std::abs(steps_per_frame * opts.dt - cell) < 1e-9 * cell,
          "flux_weak_norm_experiment: dt must divide the frame length");

  FluxWeakNormResult res;
  for (int L : L_list) {
    const int n = exact_log(L, opts.base);
    if (n < 0) throw BadShape("flux_weak_norm_experiment: L must be a power of the base");
    const TorusGrid g(d, L);
    const std::size_t frames = static_cast<std::size_t>(opts.frames_per_unit) * L * L;
    StationaryOptions so;
    so.dt = opts.dt;
    so.burn_in = opts.burn_in;
    so.horizon = static_cast<double>(frames) * steps_per_frame * opts.dt;

    std::vector<SpaceTimeField> runs;
    runs.reserve(replicas);
    for (std::size_t r = 0; r < replicas; ++r) {
      SpaceTimeField f(g, frames, d, opts.frames_per_unit);
      LangevinOptions lo;
      lo.dt = opts.dt;
      LangevinStepper stepper(g, spec, std::vector<double>(p.begin(), p.end()), lo);
      long long k = 0;
      const double inv = 1.0 / static_cast<double>(steps_per_frame);
      run_stationary(spec, g, p, derive_seed(opts.seed, (static_cast<std::uint64_t>(L) << 32) + r), so,
                     stepper, [&](const LangevinStepper& s, const DynamicsState&) {
                       const std::size_t t = static_cast<std::size_t>(k / steps_per_frame);
                       if (t < frames) {
                         double* row = f.values.data() + t * g.size() * d;
                         const std::span<const double> fl = s.flux();
                         for (std::size_t i = 0; i < fl.size(); ++i) row[i] += inv * fl[i];
                       }
                       ++k;
                     });
      runs.push_back(std::move(f));
    }

    FluxWeakNormRow row;
    row.L = L;
    row.mean_flux.assign(d, 0.0);
    double count = 0.0;
    for (const SpaceTimeField& f : runs) {
      for (std::size_t i = 0; i < f.values.size(); ++i) row.mean_flux[i % d] += f.values[i];
      count += static_cast<double>(f.frames() * g.size());
    }
    for (double& v : row.mean_flux) v /= count;

    row.cylinder_variance.assign(n + 1, 0.0);
    std::vector<double> cyl_count(n + 1, 0.0);
    for (SpaceTimeField& f : runs) {
      for (std::size_t i = 0; i < f.values.size(); ++i) f.values[i] -= row.mean_flux[i % d];
      row.ratio_samples.push_back(multiscale_poincare_functional(f, opts.q, opts.base) / L);
      for (int m = 0; m <= n; ++m) {
        const std::vector<double> avg = cylinder_averages(f, m, opts.base, 0);
        for (double v : avg) row.cylinder_variance[m] += v * v;
        cyl_count[m] += static_cast<double>(avg.size());
      }
    }
    for (int m = 0; m <= n; ++m) {
      row.cylinder_variance[m] /= cyl_count[m];
      row.cylinder_volume.push_back(static_cast<double>(ipow(opts.base, 2 * m + m * d)));
    }
    row.ratio = mean_and_stderr(row.ratio_samples);
    res.rows.push_back(std::move(row));
  }

  res.decreasing = true;
  res.decreasing_within_errors = true;
  for (std::size_t k = 0; k + 1 < res.rows.size(); ++k) {
    const Estimate& a = res.rows[k].ratio;
    const Estimate& b = res.rows[k + 1].ratio;
    const double drop = a.mean - b.mean;
    res.decreasing = res.decreasing && drop > 0;
    res.decreasing_within_errors =
        res.decreasing_within_errors && drop > 2.0 * std::sqrt(a.stderr_ * a.stderr_ + b.stderr_ * b.stderr_);
  }
  return res;
}

}  // namespace gradphi
