#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "doctest.h"
#include "gradphi/errors.hpp"
#include "gradphi/numerics.hpp"
#include "gradphi/twoscale.hpp"

using namespace gradphi;

namespace {

constexpr double kPi = std::numbers::pi;

double wave(std::span<const double> x) { return std::sin(2 * kPi * x[0]) + 0.5 * std::cos(2 * kPi * x[1]); }

TwoScaleOptions small_run() {
  TwoScaleOptions o;
  o.kappa = 0.5;
  o.micro_dt = 0.05;
  o.corrector_burn_in = 5.0;
  o.horizon = 1.0;
  o.seed = 7;
  return o;
}

}  // namespace

TEST_CASE("partition of unity identities") {
  const MesoDecomposition m = build_partition(2, 1.0 / 16, 0.1, 0.25);
  CHECK(m.L() == 4);
  CHECK(m.centers() == 16 * 16);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> ut(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> us(0, m.grid().size() - 1);
  const double k2 = m.kappa() * m.kappa();
  double worst = 0.0, worst_dt = 0.0, worst_fd = 0.0;
  for (int trial = 0; trial < 10000; ++trial) {
    const double t = ut(rng);
    const std::size_t x = us(rng);
    double s = 0.0, ds = 0.0;
    for (std::size_t z = 0; z < m.centers(); ++z) {
      const double c = m.chi(z, t, x);
      CHECK(c >= 0.0);
      CHECK(c <= 1.0 + 1e-15);
      if (c > 0) {
        // Support inside the parabolic cylinder (s - 4 kappa^2, s] x (y + Lambda_2L).
        CHECK(t > m.center_time(z) - 4 * k2);
        CHECK(t <= m.center_time(z) + 1e-15);
        const std::vector<int> y = m.center_site(z), xc = m.grid().coords(x);
        for (int i = 0; i < 2; ++i) CHECK(std::abs(periodic_delta(xc[i], y[i], 16)) <= 2 * m.L());
      }
      s += c;
      const double dc = m.dchi_dt(z, t, x);
      ds += dc;
      if (trial % 100 == 0 && t > 1e-3 && t < 1 - 1e-3) {
        const double fd = (m.chi(z, t + 1e-6, x) - m.chi(z, t - 1e-6, x)) / 2e-6;
        worst_fd = std::max(worst_fd, std::abs(fd - dc));
      }
    }
    worst = std::max(worst, std::abs(s - 1.0));
    worst_dt = std::max(worst_dt, std::abs(ds));
  }
  CHECK(worst < 1e-10);
  CHECK(worst_dt < 1e-10);
  CHECK(worst_fd < 1e-4);

  // A center point at a bump peak carries all the weight.
  const std::size_t z = 5 * m.spatial_centers() + 3;
  const std::vector<int> y = m.center_site(z);
  CHECK(m.chi(z, m.center_time(z) - k2, m.grid().index(y)) == 1.0);

  const double C = m.derivative_constant();
  CHECK(C >= 1.0);
  CHECK(std::isfinite(C));
}

TEST_CASE("partition scale snapping and errors") {
  // gamma = 1 / (30 d r) at eps = 1/16 snaps kappa to 1: one center per time.
  const MesoDecomposition m = build_partition(2, 1.0 / 16, 1.0 / 180);
  CHECK(m.inverse_kappa() == 1);
  CHECK(m.centers() == 1);
  for (double t : {0.0, 0.3, 1.0}) CHECK(m.chi(0, t, 17) == 1.0);
  CHECK_THROWS_AS(build_partition(2, 1.0 / 8, 0.1, 0.25), BadScale);
  CHECK_THROWS_AS(build_partition(2, 1.0 / 12, 0.1, 0.2), BadScale);
  CHECK_THROWS_AS(build_partition(2, 0.3, 0.1), BadScale);
}

TEST_CASE("correctors: shared noise, box mean and quadratic gradients") {
  const TorusGrid global(2, 24);
  const double dt = 0.01;
  const NoiseStream noise(3, global, dt);
  const std::vector<int> y{5, 7};
  const std::vector<double> p{0.7, -0.2};
  const PotentialSpec quad = PotentialSpec::quadratic();
  LocalCorrector a(global, y, 13, quad, p, dt), b(global, y, 13, quad, p, dt);
  a.start(noise, 10, 200, 0.3);
  b.start(noise, 10, 200, 0.3);
  CHECK(std::abs(a.mean_value() - std::sqrt(2.0) * 0.3) < 1e-12);

  // Box Brownian average tracked independently.
  double bavg = 0.3;
  std::vector<double> site0;
  const std::size_t probe = 0;
  for (int k = 0; k < 20000; ++k) {
    double inc = 0.0;
    for (std::uint64_t g : a.global_sites()) inc += noise.increment(a.step(), g);
    bavg += inc / static_cast<double>(a.global_sites().size());
    a.advance(noise);
    b.advance(noise);
    site0.push_back(a.value(a.box().forward(probe, 0)) - a.value(probe));
  }
  for (std::size_t j = 0; j < a.box().size(); ++j) CHECK(a.value(j) == b.value(j));
  CHECK(std::abs(a.mean_value() - std::sqrt(2.0) * bavg) < 1e-10);
  // E grad phi = 0, so the gradient of v_z averages to p.
  const Estimate g = batch_means(site0, 10);
  CHECK(std::abs(g.mean) < 3 * g.stderr_ + 1e-12);

  const std::size_t gsite = global.index(y);
  CHECK(a.local_of(gsite) >= 0);
  CHECK(a.global_sites()[static_cast<std::size_t>(a.local_of(gsite))] == gsite);
  const std::vector<int> far{17, 19};
  CHECK(a.local_of(global.index(far)) == -1);
}

TEST_CASE("overlap ratio of correctors on shifted boxes") {
  const PotentialSpec spec = PotentialSpec::degenerate_radial(3.0, 1.0);
  const std::vector<double> p{1.5, 0.0};
  const std::vector<int> none{0, 0}, shift{3, 0};
  const OverlapReport same = corrector_overlap_ratio(spec, 2, 20, 13, none, p, 5, 0.005, 5.0, 5.0);
  CHECK(same.ratio == 0.0);
  CHECK(same.overlap_sites == 169);
  const OverlapReport r = corrector_overlap_ratio(spec, 2, 20, 13, shift, p, 5, 0.005, 5.0, 5.0);
  CHECK(r.overlap_sites == 130);
  CHECK(r.corrector_l2 > 0);
  CHECK(std::isfinite(r.ratio));
  CHECK(r.ratio > 0);
}

TEST_CASE("zero correctors leave the homogenized solution unchanged") {
  const MesoDecomposition m = build_partition(2, 1.0 / 8, 0.1, 0.5);
  const TorusGrid micro(2, 8);
  std::vector<LocalCorrector> cs;
  for (std::size_t z = 0; z < 4; ++z)
    cs.emplace_back(micro, m.center_site(z), corrector_box_side(m), PotentialSpec::quadratic(),
                    std::vector<double>{0.0, 0.0}, 0.01);
  std::vector<CorrectorRef> refs;
  for (std::size_t z = 0; z < 4; ++z) refs.push_back({z, &cs[z]});
  const Field ubar = sample_on_torus(m.grid(), wave);
  const Field w = assemble_w_eps(m, 0.1, ubar, refs);
  for (std::size_t x = 0; x < ubar.size(); ++x) CHECK(w[x] == ubar[x]);
}

TEST_CASE("two-scale identity with the quadratic potential") {
  const TwoScaleOptions o = small_run();
  const double eps = 1.0 / 8;
  const TwoScaleReport r = run_two_scale(PotentialSpec::quadratic(), HomogenizedFlux::linear(2), 2, eps, wave, o);
  CHECK(r.steps == 64 * 20);
  CHECK(r.residual_ok);
  CHECK(r.residual_max <= r.tolerance);
  CHECK(r.residual_max < 1e-8 * r.term_scale);
  // A linear flux makes every corrector slope-independent, so all spatial
  // centers of one time bump agree and E4 vanishes.
  CHECK(r.eps_e4_l2 < 1e-12);
  CHECK(r.e1_simplification_max < 1e-10);
  CHECK(r.partition_error < 1e-10);
  CHECK(r.partition_derivative_error < 1e-10);
  CHECK(r.corrector_mean_error < 1e-9);
  CHECK(r.ubar_minus_w_l2 <= r.ubar_minus_w_bound + 1e-14);
  CHECK(r.sup_w <= r.sup_ubar + r.eps_sup_phi + 1e-14);
  CHECK(r.surrogate_base == 2);
  CHECK(std::isfinite(r.surrogate));
  CHECK(r.surrogate > 0);
  CHECK(r.eps_e1_l2 > 0);

  // Oracle for E3 = sum chi_z p_z - grad ubar: independent heat solve and slopes.
  const MesoDecomposition m = build_partition(2, eps, 0.1, 0.5);
  const TorusGrid g = m.grid();
  const double h = eps * eps * o.micro_dt;
  const int steps = 64 * 20, bump = 16 * 20;
  std::vector<std::vector<double>> grads;
  Field u = sample_on_torus(g, wave);
  for (int k = 0; k <= steps; ++k) {
    std::vector<double> gr(g.size() * 2);
    for (std::size_t x = 0; x < g.size(); ++x)
      for (int i = 0; i < 2; ++i) gr[x * 2 + i] = (u[g.forward(x, i)] - u[x]) / eps;
    grads.push_back(gr);
    Field next = u;
    for (std::size_t x = 0; x < g.size(); ++x) {
      double lap = -4 * u[x];
      for (int i = 0; i < 2; ++i) lap += u[g.forward(x, i)] + u[g.backward(x, i)];
      next[x] += h * lap / (eps * eps);
    }
    u = next;
  }
  std::vector<double> pz(m.centers() * 2, 0.0);
  for (std::size_t z = 0; z < m.centers(); ++z) {
    const int j = m.time_index(z);
    int count = 0;
    for (int k = std::max(0, (j - 4) * bump + 1); k <= std::min(steps, j * bump); ++k, ++count)
      for (std::size_t x = 0; x < g.size(); ++x)
        for (int i = 0; i < 2; ++i) pz[z * 2 + i] += grads[k][x * 2 + i];
    for (int i = 0; i < 2; ++i) pz[z * 2 + i] /= count * static_cast<double>(g.size());
    for (int i = 0; i < 2; ++i) CHECK(std::abs(pz[z * 2 + i] - r.slopes[z * 2 + i]) < 1e-10);
  }
  double e3 = 0.0;
  for (int k = 0; k < steps; ++k)
    for (std::size_t x = 0; x < g.size(); ++x)
      for (int i = 0; i < 2; ++i) {
        double v = -grads[k][x * 2 + i];
        for (std::size_t z = 0; z < m.centers(); ++z) v += m.chi(z, k * h, x) * pz[z * 2 + i];
        e3 += v * v;
      }
  e3 = std::sqrt(h * eps * eps * e3);
  CHECK(std::abs(e3 - r.e3_lr) < 1e-9 * e3);
}

TEST_CASE("two-scale: constant data, degenerate potential, limits") {
  TwoScaleOptions o = small_run();
  o.horizon = 0.25;
  const auto c = [](std::span<const double>) { return 0.4; };
  const TwoScaleReport r = run_two_scale(PotentialSpec::quadratic(), HomogenizedFlux::linear(2), 2, 0.125, c, o);
  for (double p : r.slopes) CHECK(p == 0.0);
  CHECK(r.e3_lr == 0.0);
  CHECK(r.residual_ok);
  CHECK(std::isnan(r.surrogate));

  // The identity is algebraic, so it holds for any homogenized flux.
  const PotentialSpec deg = PotentialSpec::degenerate_radial(3.0, 1.0);
  o.micro_dt = 0.01;
  const TwoScaleReport d = run_two_scale(deg, HomogenizedFlux::linear(2, 2.0), 2, 0.125, wave, o);
  CHECK(d.residual_ok);
  CHECK(d.residual_max < 1e-8 * d.term_scale);
  CHECK(d.norm_exponent == 3.0);
  CHECK(d.eps_e4_l2 > 0);
  // With the right side written as div(E2 + E3) + E1 + E4 the residual is of
  // the size of the error terms.
  CHECK(d.residual_alt_sign_max > 100 * d.tolerance);

  TwoScaleOptions capped = o;
  capped.max_centers = 8;
  CHECK_THROWS_AS(run_two_scale(deg, HomogenizedFlux::linear(2), 2, 0.125, wave, capped), Unsupported);
  TwoScaleOptions coarse = o;
  coarse.micro_dt = 0.2;
  CHECK_THROWS_AS(run_two_scale(deg, HomogenizedFlux::linear(2, 2.0), 2, 0.125, wave, coarse), BadScale);
}

TEST_CASE("two-scale in d = 1 with slopes that vary between centers") {
  // At eps = 1/32, kappa = 1/8 the slope regions no longer cover the torus.
  TwoScaleOptions o;
  o.kappa = 0.125;
  o.micro_dt = 0.05;
  o.corrector_burn_in = 5.0;
  o.seed = 11;
  const auto f = [](std::span<const double> x) { return 0.3 * std::sin(2 * kPi * x[0]); };
  const TwoScaleReport r = run_two_scale(PotentialSpec::degenerate_radial(3.0, 1.0),
                                         HomogenizedFlux::linear(1, 1.5), 1, 1.0 / 32, f, o);
  double spread = 0.0;
  for (double p : r.slopes) spread = std::max(spread, std::abs(p));
  CHECK(spread > 0.1);
  CHECK(r.residual_ok);
  CHECK(r.residual_max < 1e-8 * r.term_scale);
  CHECK(r.eps_e4_l2 > 0);
  CHECK(r.eps_e1_l2 > 0);
  CHECK(r.residual_alt_sign_max > 100 * r.tolerance);
  // Evaluating d_t chi and phi at the left endpoint leaves a Brownian-size defect.
  CHECK(r.residual_analytic_e1_max > 1e3 * r.residual_max);
  CHECK(r.e1_simplification_max < 1e-10);
  CHECK(r.surrogate_base == 2);
  CHECK(std::isfinite(r.surrogate));
}
