#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "doctest.h"
#include "gradphi/errors.hpp"
#include "gradphi/potential.hpp"

using namespace gradphi;

namespace {

double smallest_eigenvalue(const PotentialSpec& spec, const std::vector<double>& p) {
  const int d = static_cast<int>(p.size());
  std::vector<double> h(d * d);
  potential_hessian(spec, p, h);
  Eigen::Map<const Eigen::MatrixXd> H(h.data(), d, d);
  return Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(H).eigenvalues()(0);
}

std::vector<double> random_point(std::mt19937_64& rng, int d, double rmin, double rmax) {
  std::normal_distribution<double> n01;
  std::uniform_real_distribution<double> rad(rmin, rmax);
  std::vector<double> x(d);
  double n2 = 0.0;
  for (double& v : x) {
    v = n01(rng);
    n2 += v * v;
  }
  const double t = rad(rng);
  for (double& v : x) v *= t / std::sqrt(n2);
  return x;
}

}  // namespace

TEST_CASE("radial second derivative at |x| = 2") {
  const PotentialSpec spec = PotentialSpec::degenerate_radial(4.0, 1.0);
  const std::vector<double> x{2.0, 0.0};
  const PotentialValue v = potential_eval(spec, x);
  CHECK(v.hessian[0] == doctest::Approx(12.0));
  CHECK(v.hessian[3] == doctest::Approx(2.0));  // tangential g'(2)/2
  CHECK(v.value == doctest::Approx(1.0));
  CHECK(v.gradient[0] == doctest::Approx(4.0));
}

TEST_CASE("flat region") {
  const PotentialSpec spec = PotentialSpec::degenerate_radial(3.0, 1.0);
  for (const std::vector<double>& x : {std::vector<double>{0.0, 0.0}, {0.3, -0.5}, {1.0, 0.0}}) {
    const PotentialValue v = potential_eval(spec, x);
    CHECK(v.value == 0.0);
    for (double g : v.gradient) CHECK(g == 0.0);
    for (double h : v.hessian) CHECK(h == 0.0);
  }
}

TEST_CASE("quadratic variant") {
  const PotentialSpec spec = PotentialSpec::quadratic(1.0);
  const std::vector<double> x{0.3, -2.0, 1.1};
  const PotentialValue v = potential_eval(spec, x);
  for (int i = 0; i < 3; ++i) CHECK(v.gradient[i] == doctest::Approx(x[i]));
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) CHECK(v.hessian[i * 3 + j] == (i == j ? 1.0 : 0.0));
  CHECK(lambda_plus(PotentialSpec::quadratic(3.0), x) == 3.0);
  CHECK(lambda_minus(PotentialSpec::quadratic(3.0), x) == 3.0);
}

TEST_CASE("lambda_plus examples") {
  const PotentialSpec spec = PotentialSpec::degenerate_radial(4.0, 1.0);
  CHECK(lambda_plus(spec, std::vector<double>{0.0, 0.0}) == 1.0);
  CHECK(lambda_plus(spec, std::vector<double>{0.0, 2.0}) == doctest::Approx(12.0));
}

TEST_CASE("kernel agrees with the reference evaluation") {
  std::mt19937_64 rng(8);
  for (const PotentialSpec& spec : {PotentialSpec::degenerate_radial(3.0, 1.0),
                                    PotentialSpec::degenerate_radial(2.5, 0.5),
                                    PotentialSpec::quadratic(2.0)}) {
    const PotentialKernel k(spec);
    for (int n = 0; n < 200; ++n) {
      const std::vector<double> x = random_point(rng, 2, 0.0, 5.0);
      const PotentialValue v = potential_eval(spec, x);
      double f[2], h[4];
      k.flux(x.data(), 2, f);
      k.hessian(x.data(), 2, h);
      for (int i = 0; i < 2; ++i) CHECK(f[i] == doctest::Approx(v.gradient[i]).epsilon(1e-13));
      for (int i = 0; i < 4; ++i) CHECK(h[i] == doctest::Approx(v.hessian[i]).epsilon(1e-13));
      CHECK(k.lambda_plus(x.data(), 2) == doctest::Approx(lambda_plus(spec, x)));
    }
  }
}

TEST_CASE("derivatives match finite differences") {
  std::mt19937_64 rng(99);
  const PotentialSpec spec = PotentialSpec::degenerate_radial(3.0, 1.0);
  const int d = 3;
  double worst_g = 0.0, worst_h = 0.0;
  int tested = 0;
  while (tested < 1000) {
    std::vector<double> x = random_point(rng, d, 0.0, 6.0);
    double t = 0.0;
    for (double v : x) t += v * v;
    if (std::abs(std::sqrt(t) - spec.R0) < 1e-3) continue;
    ++tested;
    const PotentialValue v = potential_eval(spec, x);
    for (int i = 0; i < d; ++i) {
      const double h = 1e-5;
      std::vector<double> xp = x, xm = x;
      xp[i] += h;
      xm[i] -= h;
      const double fd = (potential_value(spec, xp) - potential_value(spec, xm)) / (2 * h);
      worst_g = std::max(worst_g, std::abs(fd - v.gradient[i]) / (1.0 + std::abs(v.gradient[i])));
      std::vector<double> gp(d), gm(d);
      potential_gradient(spec, xp, gp);
      potential_gradient(spec, xm, gm);
      for (int j = 0; j < d; ++j) {
        const double fdh = (gp[j] - gm[j]) / (2 * h);
        worst_h = std::max(worst_h, std::abs(fdh - v.hessian[j * d + i]) / (1.0 + std::abs(v.hessian[j * d + i])));
      }
    }
  }
  CHECK(worst_g < 1e-6);
  CHECK(worst_h < 1e-5);
}

TEST_CASE("convexity inequality on random pairs") {
  std::mt19937_64 rng(7);
  const PotentialSpec spec = PotentialSpec::degenerate_radial(3.0, 1.0);
  for (int n = 0; n < 1000; ++n) {
    const std::vector<double> x = random_point(rng, 2, 0.0, 4.0), y = random_point(rng, 2, 0.0, 4.0);
    std::vector<double> g(2);
    potential_gradient(spec, x, g);
    const double lin = potential_value(spec, x) + g[0] * (y[0] - x[0]) + g[1] * (y[1] - x[1]);
    CHECK(potential_value(spec, y) >= lin - 1e-10);
  }
}

TEST_CASE("lambda_minus vanishes on the flat ball") {
  const PotentialSpec spec = PotentialSpec::degenerate_radial(3.0, 1.0);
  CHECK(lambda_minus(spec, std::vector<double>{0.0, 0.0}) == 0.0);
  CHECK(lambda_minus(spec, std::vector<double>{0.6, 0.3}) == 0.0);
  CHECK(lambda_minus(spec, std::vector<double>{0.7}) == 0.0);
}

TEST_CASE("lambda_minus is below the smallest eigenvalue and positive far out") {
  std::mt19937_64 rng(21);
  const PotentialSpec spec = PotentialSpec::degenerate_radial(3.0, 1.0);
  LambdaMinusOptions fast;
  fast.coarse_radial = 21;
  fast.coarse_transverse = 11;
  fast.refine_iterations = 20;
  for (int n = 0; n < 100; ++n) {
    const std::vector<double> p = random_point(rng, 2, 0.0, 6.0);
    CHECK(lambda_minus(spec, p, fast) <= smallest_eigenvalue(spec, p) + 1e-12);
  }
  CHECK(lambda_minus(spec, std::vector<double>{6.0, 0.0}) > 1.0);
}

TEST_CASE("lambda_minus does not increase under grid refinement") {
  const PotentialSpec spec = PotentialSpec::degenerate_radial(3.0, 1.0);
  for (const std::vector<double>& p : {std::vector<double>{2.5, 0.0}, {3.0, 4.0}, {1.5, -0.5}}) {
    LambdaMinusOptions coarse;
    coarse.coarse_radial = 11;
    coarse.coarse_transverse = 6;
    coarse.refine_starts = 0;
    LambdaMinusOptions fine = coarse;
    fine.coarse_radial = 21;  // contains the coarse grid
    fine.coarse_transverse = 11;
    LambdaMinusOptions refined = fine;
    refined.refine_starts = 4;
    const double a = lambda_minus(spec, p, coarse);
    const double b = lambda_minus(spec, p, fine);
    const double c = lambda_minus(spec, p, refined);
    CHECK(b <= a + 1e-14);
    CHECK(c <= b + 1e-14);
  }
}

TEST_CASE("lambda_minus table interpolates the direct evaluation") {
  const PotentialSpec spec = PotentialSpec::degenerate_radial(3.0, 1.0);
  const LambdaMinusTable tab(spec, 2, 8.0, 65);
  for (double r : {0.0, 0.5, 2.0, 4.0, 7.5}) {
    const std::vector<double> p{0.0, r};
    CHECK(tab(p) == doctest::Approx(lambda_minus(spec, p)).epsilon(0.02));
  }
}

TEST_CASE("assumption A report, quadratic") {
  const AssumptionReport rep = verify_assumption_A(PotentialSpec::quadratic(2.0), 2, 1.0, 5.0, 200);
  CHECK(rep.c_minus == doctest::Approx(2.0));
  CHECK(rep.c_plus == doctest::Approx(2.0));
}

TEST_CASE("assumption A report, r = 4 on [2, 10]") {
  const PotentialSpec spec = PotentialSpec::degenerate_radial(4.0, 1.0);
  const AssumptionReport rep = verify_assumption_A(spec, 2, 2.0, 10.0, 2000);
  // Closed form: tangential 4(t-1)^3/t^3 is smallest at t = 2, radial 12(t-1)^2/t^2 largest at t = 10.
  CHECK(rep.closed_form_c_minus == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(rep.closed_form_c_plus == doctest::Approx(9.72).epsilon(1e-9));
  CHECK(rep.c_minus >= rep.closed_form_c_minus - 1e-12);
  CHECK(rep.c_plus <= rep.closed_form_c_plus + 1e-12);
  CHECK(rep.c_minus == doctest::Approx(0.5).epsilon(0.05));
  CHECK(rep.c_plus == doctest::Approx(9.72).epsilon(0.05));
  CHECK(rep.max_sampler_discrepancy < 1e-9);
  CHECK(rep.min_eigenvalue >= 0.0);
  CHECK(std::isfinite(rep.R1));
  CHECK(rep.R1 > 2.0);
}
