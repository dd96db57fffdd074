#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "gradphi/errors.hpp"
#include "gradphi/numerics.hpp"

using namespace gradphi;

TEST_CASE("gauss-legendre integrates polynomials of degree 2n-1 exactly") {
  for (int n : {1, 2, 5, 16, 32}) {
    const QuadratureRule q = gauss_legendre(n, 0.0, 2.0);
    for (int k = 0; k <= 2 * n - 1; ++k) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += q.weights[i] * std::pow(q.nodes[i], k);
      CHECK(s == doctest::Approx(std::pow(2.0, k + 1) / (k + 1)).epsilon(1e-13));
    }
  }
}

TEST_CASE("gauss-legendre on a smooth integrand") {
  const QuadratureRule q = gauss_legendre(20, 0.0, std::numbers::pi);
  double s = 0.0;
  for (int i = 0; i < 20; ++i) s += q.weights[i] * std::sin(q.nodes[i]);
  CHECK(s == doctest::Approx(2.0).epsilon(1e-14));
}

TEST_CASE("batch means of iid data") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n01;
  std::vector<double> x(200000);
  for (double& v : x) v = 1.5 + n01(rng);
  const Estimate e = batch_means(x, 20);
  CHECK(e.stderr_ == doctest::Approx(1.0 / std::sqrt(200000.0)).epsilon(0.4));
  CHECK(std::abs(e.mean - 1.5) < 4 * e.stderr_);
}

TEST_CASE("batch means refuses tiny series") {
  std::vector<double> x(5, 1.0);
  CHECK_THROWS_AS(batch_means(x, 20), InsufficientSamples);
}

TEST_CASE("linear fit recovers an exact line") {
  std::vector<double> x{0, 1, 2, 3}, y{1, 3, 5, 7};
  const LinearFit f = linear_fit(x, y);
  CHECK(f.slope == doctest::Approx(2.0));
  CHECK(f.intercept == doctest::Approx(1.0));
  CHECK(f.r_squared == doctest::Approx(1.0));
}

TEST_CASE("wilson interval contains the point estimate") {
  auto [lo, hi] = wilson_interval(30, 100);
  CHECK(lo < 0.3);
  CHECK(hi > 0.3);
  auto [lo0, hi0] = wilson_interval(0, 50);
  CHECK(lo0 == 0.0);
  CHECK(hi0 > 0.0);
}

TEST_CASE("smootherstep is a C2 ramp") {
  CHECK(smootherstep(0.0) == 0.0);
  CHECK(smootherstep(1.0) == 1.0);
  CHECK(smootherstep(0.5) == doctest::Approx(0.5));
  const double h = 1e-6;
  for (double s : {0.1, 0.37, 0.8}) {
    const double fd = (smootherstep(s + h) - smootherstep(s - h)) / (2 * h);
    CHECK(smootherstep_derivative(s) == doctest::Approx(fd).epsilon(1e-7));
  }
}
