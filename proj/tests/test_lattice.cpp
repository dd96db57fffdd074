#include <cmath>
#include <random>

#include "doctest.h"
#include "gradphi/errors.hpp"
#include "gradphi/lattice.hpp"

using namespace gradphi;

namespace {

Field random_field(const TorusGrid& g, std::mt19937_64& rng) {
  std::normal_distribution<double> n01;
  Field f(g);
  for (double& v : f.values) v = n01(rng);
  return f;
}

MatrixField random_spd(const TorusGrid& g, std::mt19937_64& rng) {
  std::normal_distribution<double> n01;
  const int d = g.dim();
  MatrixField a(g);
  std::vector<double> b(d * d);
  for (std::size_t s = 0; s < g.size(); ++s) {
    for (double& v : b) v = n01(rng);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) {
        double acc = 0.0;
        for (int k = 0; k < d; ++k) acc += b[i * d + k] * b[j * d + k];
        a.values[s * d * d + i * d + j] = acc;
      }
  }
  return a;
}

}  // namespace

TEST_CASE("grid shape and neighbor involution") {
  for (int d = 1; d <= 3; ++d) {
    const TorusGrid g(d, 5);
    CHECK(g.size() == static_cast<std::size_t>(std::pow(5, d)));
    for (std::size_t s = 0; s < g.size(); ++s)
      for (int i = 0; i < d; ++i) {
        CHECK(g.backward(g.forward(s, i), i) == s);
        CHECK(g.forward(g.backward(s, i), i) == s);
      }
    for (std::size_t s = 0; s < g.size(); ++s) CHECK(g.index(g.coords(s)) == s);
  }
}

TEST_CASE("gradient example with periodic wrap") {
  const TorusGrid g(1, 3);
  const Field u(g, {0.0, 1.0, -1.0});
  const VectorField du = gradient(u);
  CHECK(du.values == std::vector<double>{1.0, -2.0, 1.0});
}

TEST_CASE("divergence of gradient is the discrete Laplacian") {
  const TorusGrid g(1, 3);
  const Field u(g, {0.0, 1.0, -1.0});
  const Field lap = divergence(gradient(u));
  CHECK(lap.values == std::vector<double>{0.0, -3.0, 3.0});
}

TEST_CASE("elliptic apply example") {
  const TorusGrid g(1, 3);
  const MatrixField a(g, {1.0, 2.0, 3.0});
  const Field u(g, {0.0, 1.0, -1.0});
  const Field out = elliptic_apply(a, u);
  CHECK(out.values == std::vector<double>{-2.0, -5.0, 7.0});
}

TEST_CASE("constants are annihilated and sums telescope") {
  std::mt19937_64 rng(11);
  for (int d = 1; d <= 3; ++d) {
    const TorusGrid g(d, 4, 0.25);
    const Field c(g, 2.5);
    for (double v : gradient(c).values) CHECK(v == 0.0);
    for (double v : elliptic_apply(random_spd(g, rng), c).values) CHECK(v == 0.0);
    const VectorField F(g, 1.75);
    for (double v : divergence(F).values) CHECK(v == doctest::Approx(0.0));
    const Field u = random_field(g, rng);
    const VectorField du = gradient(u);
    for (int i = 0; i < d; ++i) {
      double s = 0.0;
      for (std::size_t x = 0; x < g.size(); ++x) s += du.at(x, i);
      CHECK(std::abs(s) < 1e-11);
    }
    CHECK(std::abs(sum(divergence(gradient(u)).values)) < 1e-10);
  }
}

TEST_CASE("rescaled operators divide by the mesh") {
  const TorusGrid g(1, 3, 0.5);
  const Field u(g, {0.0, 1.0, -1.0});
  CHECK(gradient(u).values == std::vector<double>{2.0, -4.0, 2.0});
  CHECK(laplacian(u).values == std::vector<double>{0.0, -12.0, 12.0});
}

TEST_CASE("integration by parts and adjointness on random instances") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> side(2, 6), dim(1, 3);
  double worst = 0.0, worst_adj = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const TorusGrid g(dim(rng), side(rng), std::uniform_real_distribution<double>(0.1, 2.0)(rng));
    const Field u = random_field(g, rng), v = random_field(g, rng);
    const MatrixField a = random_spd(g, rng);
    const Field Lu = elliptic_apply(a, u);
    const double lhs = dot(Lu.values, v.values);
    const VectorField du = gradient(u), dv = gradient(v);
    const int d = g.dim();
    double rhs = 0.0, scale = 0.0;
    for (std::size_t x = 0; x < g.size(); ++x)
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) {
          const double term = dv.at(x, i) * a.values[x * d * d + i * d + j] * du.at(x, j);
          rhs -= term;
          scale += std::abs(term);
        }
    worst = std::max(worst, std::abs(lhs - rhs) / scale);

    VectorField F(g);
    for (double& f : F.values) f = std::normal_distribution<double>()(rng);
    const double l2 = dot(divergence(F).values, u.values);
    const double r2 = -dot(F.values, du.values);
    worst_adj = std::max(worst_adj, std::abs(l2 - r2) / (std::abs(l2) + std::abs(r2) + 1e-300));
  }
  CHECK(worst < 1e-12);
  CHECK(worst_adj < 1e-12);
}

TEST_CASE("operators are linear") {
  std::mt19937_64 rng(5);
  const TorusGrid g(2, 5, 0.3);
  const Field u = random_field(g, rng), v = random_field(g, rng);
  const MatrixField a = random_spd(g, rng);
  const double al = 0.7, be = -1.9;
  Field w(g);
  for (std::size_t i = 0; i < g.size(); ++i) w[i] = al * u[i] + be * v[i];
  const Field Lu = elliptic_apply(a, u), Lv = elliptic_apply(a, v), Lw = elliptic_apply(a, w);
  for (std::size_t i = 0; i < g.size(); ++i)
    CHECK(Lw[i] == doctest::Approx(al * Lu[i] + be * Lv[i]).epsilon(1e-12));
  const VectorField gu = gradient(u), gv = gradient(v), gw = gradient(w);
  for (std::size_t i = 0; i < gw.values.size(); ++i)
    CHECK(gw.values[i] == doctest::Approx(al * gu.values[i] + be * gv.values[i]).epsilon(1e-12));
}

TEST_CASE("non-symmetric coefficients are rejected") {
  const TorusGrid g(2, 3);
  MatrixField a = MatrixField::identity(g);
  a.values[1] = 0.5;
  CHECK_THROWS_AS(elliptic_apply(a, Field(g)), NonSymmetricCoefficient);
}

TEST_CASE("shape errors") {
  const TorusGrid g(2, 3);
  CHECK_THROWS_AS(Field(g, std::vector<double>(8)), DimensionMismatch);
  CHECK_THROWS_AS(TorusGrid(2, 1), InvalidArgument);
  CHECK(periodic_delta(0, 4, 5) == 1);
  CHECK(periodic_delta(4, 0, 5) == -1);
}
