#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "doctest.h"
#include "gradphi/errors.hpp"
#include "gradphi/norms.hpp"

using namespace gradphi;

namespace {

Field random_field(const TorusGrid& g, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  Field u(g);
  for (double& v : u.values) v = nd(rng);
  return u;
}

SpaceTimeField random_st(const TorusGrid& g, std::size_t frames, int fpu, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  SpaceTimeField f(g, frames, 1, fpu);
  for (double& v : f.values) v = nd(rng);
  return f;
}

// L2-in-time of the per-frame dual norm.
double dual_surrogate(const SpaceTimeField& f) {
  double s = 0.0;
  for (std::size_t t = 0; t < f.frames(); ++t) {
    Field u(f.grid);
    for (std::size_t x = 0; x < f.grid.size(); ++x) u[x] = f.at(t, x);
    const double v = dual_norm_w12(u);
    s += v * v;
  }
  return std::sqrt(s / f.frames());
}

}  // namespace

TEST_CASE("Lq norms") {
  const TorusGrid g(2, 4);
  CHECK(lq_norm(Field(g, -2.5), 3.0) == doctest::Approx(2.5).epsilon(1e-14));
  Field half(g);
  for (std::size_t x = 0; x < g.size() / 2; ++x) half[x] = 1.0;
  CHECK(lq_norm(half, 2.0) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-14));
  CHECK(lq_norm(half, INFINITY) == 1.0);

  std::mt19937_64 rng(3);
  const TorusGrid ge(2, 8, 0.125);
  const Field u = random_field(ge, rng);
  double s = 0.0;
  for (double v : u.values) s += v * v;
  CHECK(std::abs(lq_norm(u, 2.0, false) - std::sqrt(s / 64.0)) < 1e-12);
  CHECK(std::abs(lq_norm(u, 2.0, true) - std::sqrt(s / 64.0)) < 1e-12);
  CHECK_THROWS_AS(lq_norm(u, 0.5), InvalidArgument);
}

TEST_CASE("W1q norm of a constant") {
  const TorusGrid g(1, 6, 0.5);
  CHECK(w1q_norm(Field(g, 2.0), 2.0) == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
  CHECK(w1q_norm(Field(g, 2.0), 2.0, false) == doctest::Approx(std::sqrt(12.0)).epsilon(1e-14));
  // On the unit torus both normalizations agree.
  const TorusGrid u(2, 4, 0.25);
  CHECK(w1q_norm(Field(u, 2.0), 2.0) == doctest::Approx(w1q_norm(Field(u, 2.0), 2.0, false)).epsilon(1e-14));
}

TEST_CASE("dual norm: zero, homogeneity, Fourier mode") {
  const TorusGrid g(2, 8, 0.25);
  CHECK(dual_norm_w12(Field(g)) == 0.0);
  std::mt19937_64 rng(5);
  const Field u = random_field(g, rng);
  Field cu = u;
  for (double& v : cu.values) v *= -3.0;
  CHECK(std::abs(dual_norm_w12(cu) - 3.0 * dual_norm_w12(u)) < 1e-10 * dual_norm_w12(u));
  CHECK_THROWS_AS(dual_norm_w12(u, true, 3.0), Unsupported);

  for (int k : {1, 2, 3}) {
    Field mode(g);
    for (std::size_t x = 0; x < g.size(); ++x)
      mode[x] = std::cos(2 * std::numbers::pi * k * g.coords(x)[1] / 8.0);
    const double s = g.scale();
    const double lambda = 2.0 / (s * s) * (1.0 - std::cos(2 * std::numbers::pi * k / 8.0));
    const double mu = 1.0 / (8 * s);
    const double exact = std::sqrt(0.5 / (mu * mu + lambda));
    CHECK(std::abs(dual_norm_w12(mode) - exact) < 1e-9 * exact);
  }
}

TEST_CASE("triangle inequality on random pairs") {
  std::mt19937_64 rng(9);
  const TorusGrid g(2, 6, 0.5);
  for (int trial = 0; trial < 20; ++trial) {
    const Field a = random_field(g, rng), b = random_field(g, rng);
    Field c(g);
    for (std::size_t x = 0; x < g.size(); ++x) c[x] = a[x] + b[x];
    for (double q : {1.0, 2.0, 3.5, double(INFINITY)})
      CHECK(lq_norm(c, q) <= lq_norm(a, q) + lq_norm(b, q) + 1e-12);
    CHECK(w1q_norm(c, 2.0) <= w1q_norm(a, 2.0) + w1q_norm(b, 2.0) + 1e-12);
    CHECK(dual_norm_w12(c) <= dual_norm_w12(a) + dual_norm_w12(b) + 1e-12);
  }
  const TorusGrid g1(1, 3);
  for (int trial = 0; trial < 20; ++trial) {
    const SpaceTimeField a = random_st(g1, 9, 1, rng), b = random_st(g1, 9, 1, rng);
    SpaceTimeField c = a;
    for (std::size_t i = 0; i < c.values.size(); ++i) c.values[i] += b.values[i];
    CHECK(multiscale_poincare_functional(c, 2.0) <=
          multiscale_poincare_functional(a, 2.0) + multiscale_poincare_functional(b, 2.0) + 1e-12);
    CHECK(lq_norm(c, 2.0) <= lq_norm(a, 2.0) + lq_norm(b, 2.0) + 1e-12);
  }
}

TEST_CASE("cylinder averages equal brute-force averages") {
  std::mt19937_64 rng(11);
  const TorusGrid g(2, 9);
  const SpaceTimeField f = random_st(g, 2 * 81, 2, rng);
  for (int m = 0; m <= 2; ++m) {
    const std::vector<double> avg = cylinder_averages(f, m, 3);
    const int bs = m == 0 ? 1 : (m == 1 ? 3 : 9);
    const int tb = 2 * bs * bs;
    const int sb = 9 / bs;
    std::size_t idx = 0;
    for (int T = 0; T < 162 / tb; ++T)
      for (int X = 0; X < sb; ++X)
        for (int Y = 0; Y < sb; ++Y, ++idx) {
          double s = 0.0;
          for (int t = T * tb; t < (T + 1) * tb; ++t)
            for (int x = X * bs; x < (X + 1) * bs; ++x)
              for (int y = Y * bs; y < (Y + 1) * bs; ++y) {
                const int c[2] = {x, y};
                s += f.at(t, g.index(c));
              }
          CHECK(std::abs(avg[idx] - s / (tb * bs * bs)) < 1e-12);
        }
    CHECK(idx == avg.size());
  }
}

TEST_CASE("multiscale functional: closed forms and shape errors") {
  for (int n : {1, 2}) {
    const int side = n == 1 ? 3 : 9;
    const TorusGrid g(1, side);
    SpaceTimeField f(g, static_cast<std::size_t>(side) * side, 1, 1);
    for (double& v : f.values) v = -1.5;
    const double want = 1.5 * (1.0 + (std::pow(3.0, n + 1) - 1.0) / 2.0);
    CHECK(std::abs(multiscale_poincare_functional(f, 2.0) - want) < 1e-12);
    SpaceTimeField h = f;
    for (double& v : h.values) v *= -2.0;
    CHECK(std::abs(multiscale_poincare_functional(h, 2.0) - 2.0 * want) < 1e-12);
  }
  // Alternating in time with two frames per unit: every cylinder average vanishes.
  const TorusGrid g(2, 3);
  SpaceTimeField z(g, 18, 1, 2);
  for (std::size_t t = 0; t < 18; ++t)
    for (std::size_t x = 0; x < g.size(); ++x) z.at(t, x) = t % 2 == 0 ? 1.0 : -1.0;
  CHECK(std::abs(multiscale_poincare_functional(z, 2.0) - 1.0) < 1e-12);

  CHECK_THROWS_AS(multiscale_poincare_functional(SpaceTimeField(TorusGrid(1, 4), 16), 2.0), BadShape);
  CHECK_THROWS_AS(multiscale_poincare_functional(SpaceTimeField(TorusGrid(1, 3), 8), 2.0), BadShape);
  CHECK(multiscale_poincare_functional(SpaceTimeField(TorusGrid(1, 4), 16), 2.0, 2) == 0.0);
  CHECK(exact_log(27, 3) == 3);
  CHECK(exact_log(12, 3) == -1);
}

TEST_CASE("multiscale functional dominates the dual-norm surrogate") {
  std::mt19937_64 rng(13);
  for (int d : {1, 2}) {
    double c0 = INFINITY;
    const TorusGrid g1(d, 3);
    for (int k = 0; k < 30; ++k) {
      const SpaceTimeField f = random_st(g1, 9, 1, rng);
      c0 = std::min(c0, multiscale_poincare_functional(f, 2.0) / dual_surrogate(f));
    }
    c0 *= 0.5;
    CHECK(c0 > 0);
    const TorusGrid g2(d, 9);
    for (int k = 0; k < 5; ++k) {
      const SpaceTimeField f = random_st(g2, 81, 1, rng);
      CHECK(multiscale_poincare_functional(f, 2.0) >= c0 * dual_surrogate(f));
    }
  }
}

TEST_CASE("flux weak-norm experiment: Gaussian shapes") {
  FluxWeakNormOptions o;
  o.dim = 2;
  o.dt = 0.01;
  o.burn_in = 5.0;
  o.base = 2;
  o.seed = 4;
  const std::vector<int> Ls{4};
  const std::vector<double> p{0.5, 0.0};
  const FluxWeakNormResult r = flux_weak_norm_experiment(PotentialSpec::quadratic(), Ls, p, 3, o);
  REQUIRE(r.rows.size() == 1);
  const FluxWeakNormRow& row = r.rows[0];
  CHECK(row.ratio_samples.size() == 3);
  CHECK(row.ratio.mean > 0);
  CHECK(std::abs(row.mean_flux[0] - 0.5) < 0.05);
  REQUIRE(row.cylinder_variance.size() == 3);
  CHECK(row.cylinder_variance[1] < row.cylinder_variance[0]);
  CHECK(row.cylinder_variance[2] < row.cylinder_variance[1]);
  const std::vector<int> bad{6};
  CHECK_THROWS_AS(flux_weak_norm_experiment(PotentialSpec::quadratic(), bad, p, 3, o), BadShape);
}
