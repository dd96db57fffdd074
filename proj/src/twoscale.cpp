#include "gradphi/twoscale.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>

#include "gradphi/errors.hpp"
#include "gradphi/norms.hpp"
#include "gradphi/numerics.hpp"

namespace gradphi {

namespace {

int inverse_integer(double v, const char* what) {
  const double inv = 1.0 / v;
  const long k = std::lround(inv);
  if (k < 1 || std::abs(inv - static_cast<double>(k)) > 1e-9 * inv)
    throw BadScale(std::string(what) + " must be the inverse of an integer");
  return static_cast<int>(k);
}

int periodic_distance(int a, int b, int n) { return std::abs(periodic_delta(a, b, n)); }

}  // namespace

MesoDecomposition::MesoDecomposition(int dim, double eps, double gamma, double kappa_override)
    : dim_(dim), eps_(eps), gamma_(gamma) {
  require(dim >= 1 && dim <= 3, "build_partition: dimension must be 1, 2 or 3");
  require(eps > 0 && eps < 1, "build_partition: eps must lie in (0, 1)");
  N_ = inverse_integer(eps, "eps");
  double kappa = kappa_override;
  if (kappa <= 0) {
    require(gamma > 0 && gamma < 1, "build_partition: gamma must lie in (0, 1)");
    kappa = std::pow(eps, gamma);
  }
  require(kappa <= 1.0, "build_partition: kappa must not exceed 1");
  K_ = std::max<int>(1, static_cast<int>(std::lround(1.0 / kappa)));
  if (N_ % K_ != 0) throw BadScale("build_partition: kappa / eps is not an integer");
  L_ = N_ / K_;
  if (L_ < 4) throw BadScale("build_partition: kappa / eps must be at least 4");

  spatial_ = 1;
  for (int i = 0; i < dim_; ++i) spatial_ *= static_cast<std::size_t>(K_);
  const TorusGrid g = grid();
  sites_ = g.size();

  // One-dimensional tents around c L, normalized per axis.
  std::vector<double> w1(static_cast<std::size_t>(K_) * N_);
  for (int x = 0; x < N_; ++x) {
    double sum = 0.0;
    for (int c = 0; c < K_; ++c) {
      const double dist = periodic_distance(x, c * L_, N_);
      const double v = smootherstep(1.0 - dist / L_);
      w1[c * N_ + x] = v;
      sum += v;
    }
    for (int c = 0; c < K_; ++c) w1[c * N_ + x] /= sum;
  }
  sigma_.assign(spatial_ * sites_, 1.0);
  for (std::size_t c = 0; c < spatial_; ++c) {
    std::vector<int> cc(dim_);
    std::size_t r = c;
    for (int i = dim_ - 1; i >= 0; --i) {
      cc[i] = static_cast<int>(r % K_);
      r /= K_;
    }
    for (std::size_t x = 0; x < sites_; ++x) {
      const std::vector<int> xc = g.coords(x);
      double v = 1.0;
      for (int i = 0; i < dim_; ++i) v *= w1[cc[i] * N_ + xc[i]];
      sigma_[c * sites_ + x] = v;
    }
  }
}

MesoDecomposition build_partition(int dim, double eps, double gamma, double kappa_override) {
  return MesoDecomposition(dim, eps, gamma, kappa_override);
}

double MesoDecomposition::center_time(std::size_t z) const {
  const double k2 = 1.0 / (static_cast<double>(K_) * K_);
  return time_index(z) * k2;
}

std::vector<int> MesoDecomposition::center_site(std::size_t z) const {
  std::size_t r = spatial_index(z);
  std::vector<int> y(dim_);
  for (int i = dim_ - 1; i >= 0; --i) {
    y[i] = static_cast<int>(r % K_) * L_;
    r /= K_;
  }
  return y;
}

// Tent of half-width kappa^2 centered at (j - 1) kappa^2; the last one stays 1
// after its center.
double MesoDecomposition::raw_time(int j, double t) const {
  const double k2 = 1.0 / (static_cast<double>(K_) * K_);
  const double c = (j - 1) * k2;
  if (j == K_ * K_ && t >= c) return 1.0;
  return smootherstep(1.0 - std::abs(t - c) / k2);
}

double MesoDecomposition::raw_time_derivative(int j, double t) const {
  const double k2 = 1.0 / (static_cast<double>(K_) * K_);
  const double c = (j - 1) * k2;
  if (j == K_ * K_ && t >= c) return 0.0;
  const double sgn = t > c ? -1.0 : 1.0;
  return sgn * smootherstep_derivative(1.0 - std::abs(t - c) / k2) / k2;
}

double MesoDecomposition::time_support_begin(int j) const {
  const double k2 = 1.0 / (static_cast<double>(K_) * K_);
  return (j - 2) * k2;
}

double MesoDecomposition::time_support_end(int j) const {
  const double k2 = 1.0 / (static_cast<double>(K_) * K_);
  return j == K_ * K_ ? std::numeric_limits<double>::infinity() : j * k2;
}

double MesoDecomposition::time_weight(int j, double t) const {
  const double v = raw_time(j, t);
  if (v == 0.0) return 0.0;
  const double k2 = 1.0 / (static_cast<double>(K_) * K_);
  const int J = K_ * K_;
  const int mid = std::clamp(static_cast<int>(std::floor(t / k2)) + 1, 1, J);
  double sum = 0.0;
  for (int i = std::max(1, mid - 2); i <= std::min(J, mid + 2); ++i) sum += raw_time(i, t);
  return v / sum;
}

double MesoDecomposition::time_weight_derivative(int j, double t) const {
  const double k2 = 1.0 / (static_cast<double>(K_) * K_);
  const int J = K_ * K_;
  const int mid = std::clamp(static_cast<int>(std::floor(t / k2)) + 1, 1, J);
  double sum = 0.0, dsum = 0.0;
  for (int i = std::max(1, mid - 2); i <= std::min(J, mid + 2); ++i) {
    sum += raw_time(i, t);
    dsum += raw_time_derivative(i, t);
  }
  return raw_time_derivative(j, t) / sum - raw_time(j, t) * dsum / (sum * sum);
}

double MesoDecomposition::chi(std::size_t z, double t, std::size_t site) const {
  return time_weight(time_index(z), t) * space_weight(spatial_index(z), site);
}

double MesoDecomposition::dchi_dt(std::size_t z, double t, std::size_t site) const {
  return time_weight_derivative(time_index(z), t) * space_weight(spatial_index(z), site);
}

double MesoDecomposition::derivative_constant(int samples) const {
  require(samples >= 2, "derivative_constant: need at least 2 samples");
  const TorusGrid g = grid();
  const int d = dim_;
  const double inv = 1.0 / eps_;
  // Spatial sup norms of sigma, grad sigma, grad grad sigma.
  double a0 = 0.0, a1 = 0.0, a2 = 0.0;
  for (std::size_t c = 0; c < spatial_; ++c) {
    const double* s = &sigma_[c * sites_];
    for (std::size_t x = 0; x < sites_; ++x) {
      a0 = std::max(a0, std::abs(s[x]));
      for (int i = 0; i < d; ++i) {
        const std::size_t xi = g.forward(x, i);
        const double gi = (s[xi] - s[x]) * inv;
        a1 = std::max(a1, std::abs(gi));
        for (int k = 0; k < d; ++k) {
          const double gk = (s[g.forward(xi, k)] - s[g.forward(x, k)]) * inv;
          a2 = std::max(a2, std::abs((gk - gi) * inv));
        }
      }
    }
  }
  const double k2 = 1.0 / (static_cast<double>(K_) * K_);
  const int J = K_ * K_;
  const long n = static_cast<long>(samples) * J;
  double b0 = 0.0, b1 = 0.0;
  for (long i = 0; i <= n; ++i) {
    const double t = static_cast<double>(i) / n;
    for (int j = 1; j <= J; ++j) {
      b0 = std::max(b0, std::abs(time_weight(j, t)));
      b1 = std::max(b1, std::abs(time_weight_derivative(j, t)));
    }
  }
  const double kappa = 1.0 / K_;
  const double a[3] = {a0, a1 * kappa, a2 * kappa * kappa};
  double C = 0.0;
  for (int k = 0; k < 3; ++k) C = std::max({C, b0 * a[k], b1 * k2 * a[k]});
  return C;
}

LocalCorrector::LocalCorrector(const TorusGrid& global, std::span<const int> center, int box_side,
                               const PotentialSpec& spec, std::vector<double> slope, double dt, bool tamed)
    : box_(global.dim(), box_side),
      stepper_(box_, spec, slope,
               LangevinOptions{dt, false, tamed ? 0.0 : std::numeric_limits<double>::infinity()}) {
  const int d = global.dim();
  require(static_cast<int>(center.size()) == d, "LocalCorrector: center dimension != d");
  require(box_side >= 2 && box_side <= global.side(), "LocalCorrector: box side out of range");
  global_.resize(box_.size());
  local_.assign(global.size(), -1);
  const int half = (box_side - 1) / 2;
  std::vector<int> gc(d);
  for (std::size_t j = 0; j < box_.size(); ++j) {
    const std::vector<int> lc = box_.coords(j);
    for (int i = 0; i < d; ++i) gc[i] = center[i] - half + lc[i];
    const std::size_t g = global.index(gc);
    global_[j] = g;
    local_[g] = static_cast<std::ptrdiff_t>(j);
  }
  stepper_.set_noise_sites(global_);
  state_ = DynamicsState::flat(box_, spec, std::move(slope));
}

void LocalCorrector::start(const NoiseStream& noise, std::int64_t step, std::int64_t burn_steps,
                           double brownian_average) {
  require(burn_steps >= 0, "LocalCorrector: burn-in must be nonnegative");
  std::fill(state_.phi.values.begin(), state_.phi.values.end(), 0.0);
  state_.step = step - burn_steps;
  state_.time = 0.0;
  while (state_.step < step) stepper_.step(state_, noise);
  offset_ = std::sqrt(2.0) * brownian_average - mean(state_.phi.values);
}

void LocalCorrector::advance(const NoiseStream& noise) { stepper_.step(state_, noise); }

double LocalCorrector::mean_value() const { return mean(state_.phi.values) + offset_; }

int corrector_box_side(const MesoDecomposition& m) { return std::min(20 * m.L() + 1, m.side()); }

namespace {

// eps sum_z chi_z phi_z added to out, with per-site weights already including tau_j(t).
void add_corrector(const MesoDecomposition& m, std::size_t z, double tau, const LocalCorrector& c,
                   std::span<double> out) {
  if (tau == 0.0) return;
  const std::size_t sc = m.spatial_index(z);
  const double e = m.eps();
  for (std::size_t x = 0; x < out.size(); ++x) {
    const double s = m.space_weight(sc, x);
    if (s == 0.0) continue;
    const std::ptrdiff_t j = c.local_of(x);
    if (j < 0) throw InvalidArgument("assemble_w_eps: corrector box does not cover the bump support");
    out[x] += e * tau * s * c.value(static_cast<std::size_t>(j));
  }
}

}  // namespace

Field assemble_w_eps(const MesoDecomposition& m, double t, const Field& ubar,
                     std::span<const CorrectorRef> correctors) {
  if (!ubar.grid.same_shape(m.grid())) throw DimensionMismatch("assemble_w_eps: grid mismatch");
  Field w = ubar;
  for (const CorrectorRef& r : correctors) {
    require(r.corrector != nullptr && r.center < m.centers(), "assemble_w_eps: bad corrector reference");
    add_corrector(m, r.center, m.time_weight(m.time_index(r.center), t), *r.corrector, w.values);
  }
  return w;
}

OverlapReport corrector_overlap_ratio(const PotentialSpec& spec, int dim, int global_side, int box_side,
                                      std::span<const int> shift, std::span<const double> slope,
                                      std::uint64_t seed, double dt, double burn_in, double horizon) {
  require(static_cast<int>(shift.size()) == dim && static_cast<int>(slope.size()) == dim,
          "corrector_overlap_ratio: dimension mismatch");
  const TorusGrid global(dim, global_side);
  const NoiseStream noise(seed, global, dt);
  std::vector<int> y0(dim, 0), y1(shift.begin(), shift.end());
  const std::vector<double> p(slope.begin(), slope.end());
  LocalCorrector a(global, y0, box_side, spec, p, dt, true), b(global, y1, box_side, spec, p, dt, true);
  const auto burn = static_cast<std::int64_t>(std::llround(burn_in / dt));
  a.start(noise, 0, burn, 0.0);
  b.start(noise, 0, burn, 0.0);
  std::vector<std::pair<std::size_t, std::size_t>> overlap;
  for (std::size_t x = 0; x < global.size(); ++x)
    if (a.local_of(x) >= 0 && b.local_of(x) >= 0)
      overlap.emplace_back(static_cast<std::size_t>(a.local_of(x)), static_cast<std::size_t>(b.local_of(x)));
  require(!overlap.empty(), "corrector_overlap_ratio: boxes do not overlap");
  const auto steps = static_cast<std::int64_t>(std::llround(horizon / dt));
  double dd = 0.0, aa = 0.0;
  std::vector<double> diff(overlap.size()), av(overlap.size());
  for (std::int64_t k = 0; k < steps; ++k) {
    for (std::size_t i = 0; i < overlap.size(); ++i) {
      av[i] = a.value(overlap[i].first);
      diff[i] = av[i] - b.value(overlap[i].second);
    }
    const double md = mean(diff), ma = mean(av);
    for (std::size_t i = 0; i < overlap.size(); ++i) {
      dd += (diff[i] - md) * (diff[i] - md);
      aa += (av[i] - ma) * (av[i] - ma);
    }
    a.advance(noise);
    b.advance(noise);
  }
  OverlapReport r;
  const double n = static_cast<double>(steps) * overlap.size();
  r.overlap_sites = overlap.size();
  r.difference_l2 = std::sqrt(dd / n);
  r.corrector_l2 = std::sqrt(aa / n);
  r.ratio = r.corrector_l2 > 0 ? r.difference_l2 / r.corrector_l2 : 0.0;
  return r;
}

namespace {

double vec_norm(const double* v, int d) {
  double s = 0.0;
  for (int i = 0; i < d; ++i) s += v[i] * v[i];
  return std::sqrt(s);
}

struct Live {
  std::size_t center;
  std::unique_ptr<LocalCorrector> corrector;
};

}  // namespace

TwoScaleReport run_two_scale(const PotentialSpec& spec, const HomogenizedFlux& sigma, int dim, double eps,
                             const std::function<double(std::span<const double>)>& f,
                             const TwoScaleOptions& opts) {
  spec.validate();
  require(sigma.dim == dim && sigma.flux, "run_two_scale: homogenized flux dimension mismatch");
  require(opts.horizon > 0 && opts.horizon <= 1.0 + 1e-12, "run_two_scale: horizon must lie in (0, 1]");
  require(opts.micro_dt > 0 && opts.corrector_burn_in >= 0, "run_two_scale: bad micro step or burn-in");
  const double r_exp = spec.variant == PotentialVariant::Quadratic ? 2.0 : spec.r;
  const double gamma = opts.gamma > 0 ? opts.gamma : 1.0 / (30.0 * dim * r_exp);
  const MesoDecomposition m(dim, eps, gamma, opts.kappa);
  if (m.centers() > opts.max_centers)
    throw Unsupported("run_two_scale: number of centers exceeds max_centers");
  const long spu = std::lround(1.0 / opts.micro_dt);
  if (std::abs(spu * opts.micro_dt - 1.0) > 1e-9) throw BadScale("run_two_scale: 1 / micro_dt must be an integer");

  const int N = m.side(), d = dim, J = m.time_bumps();
  const double e = 1.0 / N;
  const double h = e * e * opts.micro_dt;
  // Steps per kappa^2 and in total.
  const std::int64_t bump = static_cast<std::int64_t>(m.L()) * m.L() * spu;
  const std::int64_t total = std::llround(opts.horizon / h);
  require(total >= 1, "run_two_scale: horizon shorter than one step");
  const TorusGrid G = m.grid();
  const TorusGrid Gm(d, N);
  const std::size_t n = G.size();
  const std::size_t S = m.spatial_centers();
  const double sqrt2 = std::sqrt(2.0);
  const double q = opts.norm_exponent > 0 ? opts.norm_exponent : r_exp;
  const double vol = std::pow(e, d);

  // Bump j is active at step k when tau_j(t_k) can be nonzero.
  auto active = [&](int j, std::int64_t k) {
    const std::int64_t c = (j - 1) * bump;
    if (j == J) return k > c - bump;
    return k > c - bump && k < c + bump;
  };

  TwoScaleReport rep;
  rep.dim = d;
  rep.eps = e;
  rep.gamma = gamma;
  rep.kappa = m.kappa();
  rep.L = m.L();
  rep.box_side = corrector_box_side(m);
  rep.centers = m.centers();
  rep.micro_dt = opts.micro_dt;
  rep.macro_dt = h;
  rep.horizon = total * h;
  rep.steps = total;
  rep.norm_exponent = q;
  rep.derivative_constant = m.derivative_constant();

  // Sites within sup-distance 2L of each spatial center.
  std::vector<std::vector<std::size_t>> region(S);
  for (std::size_t c = 0; c < S; ++c) {
    const std::vector<int> y = m.center_site(c);
    for (std::size_t x = 0; x < n; ++x) {
      const std::vector<int> xc = G.coords(x);
      bool in = true;
      for (int i = 0; i < d; ++i) in = in && periodic_distance(xc[i], y[i], N) <= 2 * m.L();
      if (in) region[c].push_back(x);
    }
  }

  const Field u0 = sample_on_torus(G, f);
  std::vector<double> grad(n * d), F(n * d), div(n), pflux(d);

  auto ubar_step = [&](std::vector<double>& u, bool compute_flux) {
    gradient_into(G, u, grad);
    if (!compute_flux) return;
    double rate = 0.0;
    for (std::size_t x = 0; x < n; ++x) {
      const std::span<const double> p(&grad[x * d], d);
      sigma.flux(p, std::span<double>(&F[x * d], d));
      if (sigma.bound) rate = std::max(rate, sigma.bound(p));
    }
    if (h * 2 * d * rate / (e * e) > 1.0)
      throw BadScale("run_two_scale: micro_dt too large for the explicit homogenized step");
    divergence_into(G, F, div);
  };

  // Pass 1: slopes p_z as averages of grad ubar over (s - 4 kappa^2, s] x (y + Lambda_2L).
  std::vector<double> psum(m.centers() * d, 0.0);
  std::vector<std::int64_t> pcount(m.centers(), 0);
  {
    std::vector<double> u = u0.values;
    for (std::int64_t k = 0; k <= total; ++k) {
      ubar_step(u, k < total);
      for (int j = 1; j <= J; ++j) {
        const std::int64_t s = j * bump;
        if (!(k > s - 4 * bump && k <= s)) continue;
        for (std::size_t c = 0; c < S; ++c) {
          const std::size_t z = (j - 1) * S + c;
          for (std::size_t x : region[c])
            for (int i = 0; i < d; ++i) psum[z * d + i] += grad[x * d + i];
          pcount[z] += static_cast<std::int64_t>(region[c].size());
        }
      }
      if (k < total)
        for (std::size_t x = 0; x < n; ++x) u[x] += h * div[x];
    }
  }
  rep.slopes.assign(m.centers() * d, 0.0);
  std::vector<double> dsig(m.centers() * d, 0.0);
  for (std::size_t z = 0; z < m.centers(); ++z) {
    if (pcount[z] == 0) continue;
    for (int i = 0; i < d; ++i) rep.slopes[z * d + i] = psum[z * d + i] / pcount[z];
    sigma.flux(std::span<const double>(&rep.slopes[z * d], d), std::span<double>(&dsig[z * d], d));
  }

  // Pass 2: stream everything.
  const NoiseStream noise(opts.seed, Gm, opts.micro_dt);
  const PotentialKernel kernel(spec);
  std::vector<double> bm(n, 0.0), dbm(n, 0.0);  // micro Brownian motion and its last increment
  DynamicsState U = DynamicsState::flat(Gm, spec, std::vector<double>(d, 0.0));
  for (std::size_t x = 0; x < n; ++x) U.phi[x] = u0[x] / e;
  LangevinStepper Ustep(Gm, spec, std::vector<double>(d, 0.0), LangevinOptions{opts.micro_dt, false, 0.0});
  Ustep.set_noise_hook([&](std::int64_t, std::span<double> inc) {
    for (std::size_t x = 0; x < n; ++x) {
      dbm[x] = inc[x];
      bm[x] += inc[x];
    }
  });
  const std::int64_t burn = std::llround(opts.corrector_burn_in / opts.micro_dt);
  const int box = corrector_box_side(m);

  std::map<std::size_t, Live> live;
  std::vector<bool> created(m.centers(), false);
  auto activate = [&](std::int64_t k) {
    for (int j = 1; j <= J; ++j) {
      if (!(active(j, k) || active(j, k + 1))) continue;
      for (std::size_t c = 0; c < S; ++c) {
        const std::size_t z = (j - 1) * S + c;
        if (created[z]) continue;
        created[z] = true;
        std::vector<double> p(rep.slopes.begin() + z * d, rep.slopes.begin() + (z + 1) * d);
        auto corr = std::make_unique<LocalCorrector>(Gm, m.center_site(z), box, spec, p, opts.micro_dt,
                                                     opts.tamed_correctors);
        double avg = 0.0;
        for (std::uint64_t g : corr->global_sites()) avg += bm[g];
        avg /= static_cast<double>(corr->global_sites().size());
        corr->start(noise, k, burn, avg);
        live.emplace(z, Live{z, std::move(corr)});
      }
    }
  };

  std::vector<double> u = u0.values, w(n), w1(n), gw(n * d), FW(n * d), divw(n);
  std::vector<double> E1(n), E1a(n), E1s(n), E4(n), E23(n * d), e3v(n * d), divE(n), phimax(n);
  std::vector<double> chisum(n), dchisum(n);
  std::vector<double> tau0(J + 1), tau1(J + 1), dtau(J + 1);

  auto assemble = [&](double t, const std::vector<double>& ub, std::vector<double>& out) {
    out = ub;
    for (const auto& [z, l] : live) add_corrector(m, z, m.time_weight(m.time_index(z), t), *l.corrector, out);
  };

  // Surrogate frames: one per micro time unit, available when T = 1 and N = base^n.
  int base = 0;
  if (opts.base > 0) {
    base = exact_log(N, opts.base) >= 0 ? opts.base : 0;
  } else {
    for (int b : {3, 2})
      if (base == 0 && exact_log(N, b) >= 1) base = b;
  }
  const bool want_surrogate = base > 0 && total == static_cast<std::int64_t>(N) * N * spu;
  SpaceTimeField Efield(Gm, want_surrogate ? static_cast<std::size_t>(N) * N : 1, 1, 1);

  double e2 = 0.0, e3 = 0.0, e1 = 0.0, e4 = 0.0, e1a = 0.0, avg_int = 0.0;
  double ubw = 0.0, ubw_bound = 0.0, uw = 0.0, uub = 0.0;
  const double qq = q;

  activate(0);
  assemble(0.0, u, w);
  for (std::int64_t k = 0; k < total; ++k) {
    const double t0 = k * h, t1 = (k + 1) * h;
    activate(k);
    for (int j = 1; j <= J; ++j) {
      tau0[j] = active(j, k) ? m.time_weight(j, t0) : 0.0;
      tau1[j] = active(j, k + 1) ? m.time_weight(j, t1) : 0.0;
      dtau[j] = active(j, k) ? m.time_weight_derivative(j, t0) : 0.0;
    }

    // Norms at t_k (left Riemann sums).
    std::fill(phimax.begin(), phimax.end(), 0.0);
    std::fill(chisum.begin(), chisum.end(), 0.0);
    std::fill(dchisum.begin(), dchisum.end(), 0.0);
    std::fill(E1a.begin(), E1a.end(), 0.0);
    std::fill(E1s.begin(), E1s.end(), 0.0);
    for (const auto& [z, l] : live) {
      const int j = m.time_index(z);
      const std::size_t c = m.spatial_index(z);
      const LocalCorrector& cr = *l.corrector;
      rep.corrector_mean_error = std::max(rep.corrector_mean_error, [&] {
        double avg = 0.0;
        for (std::uint64_t g : cr.global_sites()) avg += bm[g];
        avg /= static_cast<double>(cr.global_sites().size());
        return std::abs(cr.mean_value() - sqrt2 * avg);
      }());
      for (std::size_t x = 0; x < n; ++x) {
        const double s = m.space_weight(c, x);
        if (s == 0.0) continue;
        const double phi = cr.value(static_cast<std::size_t>(cr.local_of(x)));
        chisum[x] += tau0[j] * s;
        dchisum[x] += dtau[j] * s;
        if (tau0[j] * s > 0) phimax[x] = std::max(phimax[x], std::abs(phi));
        rep.eps_sup_phi = std::max(rep.eps_sup_phi, e * std::abs(phi));
        E1a[x] += dtau[j] * s * (e * phi - sqrt2 * e * bm[x]);
        E1s[x] += dtau[j] * s * e * phi;
      }
    }
    for (std::size_t x = 0; x < n; ++x) {
      rep.partition_error = std::max(rep.partition_error, std::abs(chisum[x] - 1.0));
      rep.partition_derivative_error = std::max(rep.partition_derivative_error, std::abs(dchisum[x]));
      rep.e1_simplification_max = std::max(rep.e1_simplification_max, std::abs(E1a[x] - E1s[x]));
      const double ue = e * U.phi[x];
      ubw += (u[x] - w[x]) * (u[x] - w[x]);
      ubw_bound += e * e * phimax[x] * phimax[x];
      uw += (ue - w[x]) * (ue - w[x]);
      uub += (ue - u[x]) * (ue - u[x]);
      rep.sup_w = std::max(rep.sup_w, std::abs(w[x]));
      rep.sup_ubar = std::max(rep.sup_ubar, std::abs(u[x]));
    }

    // Homogenized flux at t_k and the macro flux of w.
    ubar_step(u, true);
    gradient_into(G, w, gw);
    for (std::size_t x = 0; x < n; ++x) kernel.flux(&gw[x * d], d, &FW[x * d]);
    divergence_into(G, FW, divw);

    // Micro steps: U records the increments, then the correctors.
    Ustep.step(U, noise);
    for (auto& [z, l] : live) l.corrector->advance(noise);

    // E2 + E3 and E4 at t_k.
    for (std::size_t x = 0; x < n; ++x)
      for (int i = 0; i < d; ++i) E23[x * d + i] = FW[x * d + i] - F[x * d + i];
    std::fill(E4.begin(), E4.end(), 0.0);
    for (std::size_t x = 0; x < n; ++x)
      for (int i = 0; i < d; ++i) e3v[x * d + i] = -F[x * d + i];
    for (const auto& [z, l] : live) {
      const int j = m.time_index(z);
      if (tau0[j] == 0.0) continue;
      const std::size_t c = m.spatial_index(z);
      const LocalCorrector& cr = *l.corrector;
      const std::span<const double> fl = cr.flux();
      const double* ds = &dsig[z * d];
      for (std::size_t x = 0; x < n; ++x) {
        const double s = m.space_weight(c, x);
        if (s != 0.0) {
          const std::size_t lx = static_cast<std::size_t>(cr.local_of(x));
          for (int i = 0; i < d; ++i) {
            E23[x * d + i] -= tau0[j] * s * (fl[lx * d + i] - ds[i]);
            e3v[x * d + i] += tau0[j] * s * ds[i];
          }
        }
        for (int i = 0; i < d; ++i) {
          const std::size_t xb = G.backward(x, i);
          const double sb = m.space_weight(c, xb);
          if (s == sb) continue;
          const std::size_t lb = static_cast<std::size_t>(cr.local_of(xb));
          E4[x] += tau0[j] * (s - sb) / e * (fl[lb * d + i] - ds[i]);
        }
      }
    }
    divergence_into(G, E23, divE);

    // ubar and w at t_{k+1}.
    for (std::size_t x = 0; x < n; ++x) u[x] += h * div[x];
    for (auto it = live.begin(); it != live.end();) {
      if (tau0[m.time_index(it->first)] == 0.0 && tau1[m.time_index(it->first)] == 0.0 &&
          !active(m.time_index(it->first), k + 1))
        it = live.erase(it);
      else
        ++it;
    }
    assemble(t1, u, w1);

    // Discrete-time E1 with chi differences and the state at t_{k+1}.
    std::fill(E1.begin(), E1.end(), 0.0);
    for (const auto& [z, l] : live) {
      const int j = m.time_index(z);
      const double dt_tau = (tau1[j] - tau0[j]) / h;
      if (dt_tau == 0.0) continue;
      const std::size_t c = m.spatial_index(z);
      const LocalCorrector& cr = *l.corrector;
      for (std::size_t x = 0; x < n; ++x) {
        const double s = m.space_weight(c, x);
        if (s == 0.0) continue;
        E1[x] += dt_tau * s * (e * cr.value(static_cast<std::size_t>(cr.local_of(x))) - sqrt2 * e * bm[x]);
      }
    }

    double avg = 0.0, scale = 0.0;
    for (std::size_t x = 0; x < n; ++x) {
      const double lhs = (w1[x] - w[x]) / h - sqrt2 * e * dbm[x] / h;
      const double base_res = lhs - divw[x];
      const double res = base_res - (E1[x] - E4[x] - divE[x]);
      const double res_alt = base_res - (divE[x] + E1[x] + E4[x]);
      const double res_a = base_res - (E1a[x] - E4[x] - divE[x]);
      rep.residual_max = std::max(rep.residual_max, std::abs(res));
      rep.residual_alt_sign_max = std::max(rep.residual_alt_sign_max, std::abs(res_alt));
      rep.residual_analytic_e1_max = std::max(rep.residual_analytic_e1_max, std::abs(res_a));
      scale = std::max({scale, std::abs((w1[x] - w[x]) / h), std::abs(sqrt2 * e * dbm[x] / h), std::abs(divw[x]),
                        std::abs(E1[x]), std::abs(E4[x]), std::abs(divE[x])});
      const double* e3p = &e3v[x * d];
      double e2p[8];
      for (int i = 0; i < d; ++i) e2p[i] = E23[x * d + i] - e3p[i];
      e2 += std::pow(vec_norm(e2p, d), qq);
      e3 += std::pow(vec_norm(e3p, d), qq);
      e1 += E1[x] * E1[x];
      e4 += E4[x] * E4[x];
      e1a += E1a[x] * E1a[x];
      avg += E1[x] + E4[x];
      if (want_surrogate) Efield.at(static_cast<std::size_t>(k / spu), x) += (E1[x] + E4[x]) / spu;
    }
    rep.term_scale = std::max(rep.term_scale, scale);
    avg_int += h * avg / n;
    rep.average_integral_max = std::max(rep.average_integral_max, std::abs(avg_int));
    w.swap(w1);
  }

  const double cell = h * vol;
  rep.e2_lr = std::pow(cell * e2, 1.0 / qq);
  rep.e3_lr = std::pow(cell * e3, 1.0 / qq);
  rep.eps_e1_l2 = e * std::sqrt(cell * e1);
  rep.eps_e4_l2 = e * std::sqrt(cell * e4);
  rep.eps_e1_analytic_l2 = e * std::sqrt(cell * e1a);
  rep.ubar_minus_w_l2 = std::sqrt(cell * ubw);
  rep.ubar_minus_w_bound = std::sqrt(cell * ubw_bound);
  rep.u_minus_w_l2 = std::sqrt(cell * uw);
  rep.u_minus_ubar_l2 = std::sqrt(cell * uub);
  rep.tolerance = 10.0 * h * rep.term_scale;
  rep.residual_ok = rep.residual_max <= rep.tolerance;
  rep.surrogate_base = want_surrogate ? base : 0;
  rep.surrogate = want_surrogate ? multiscale_poincare_functional(Efield, 2.0, base, e)
                                 : std::numeric_limits<double>::quiet_NaN();
  return rep;
}

}  // namespace gradphi
