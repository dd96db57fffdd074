#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "gradphi/errors.hpp"
#include "gradphi/parabolic.hpp"
#include "oracles.hpp"

using namespace gradphi;

TEST_CASE("identity heat kernel on three sites") {
  const TorusGrid g(1, 3);
  ParabolicOptions o;
  o.dt = 1e-3;
  o.output_every = 0.1;
  const FieldSeries P = heat_kernel(Environment::identity(g), 0.0, 1, 1.0, o);
  CHECK(P.frames.front()[1] == doctest::Approx(2.0 / 3.0));
  for (std::size_t n = 0; n < P.times.size(); ++n)
    CHECK(P.frames[n][1] == doctest::Approx(2.0 / 3.0 * std::exp(-3.0 * P.times[n])).epsilon(1e-9));
}

TEST_CASE("heat kernel matches the matrix exponential oracle") {
  for (auto [d, N] : {std::pair{1, 9}, std::pair{2, 5}, std::pair{2, 9}}) {
    const TorusGrid g(d, N);
    ParabolicOptions o;
    o.dt = 1e-4;
    o.output_every = 0.25;
    const int y = static_cast<int>(g.size() / 2);
    const FieldSeries P = heat_kernel(Environment::identity(g), 0.0, y, 2.0, o);
    double err = 0.0;
    for (std::size_t n = 0; n < P.times.size(); ++n) {
      const Eigen::VectorXd ref = oracle::identity_heat_kernel(d, N, y, P.times[n]);
      for (std::size_t s = 0; s < g.size(); ++s) err = std::max(err, std::abs(P.frames[n][s] - ref(s)));
      CHECK(std::abs(sum(P.frames[n].values)) < 1e-10);
      for (double v : P.frames[n].values) CHECK(std::abs(v) <= 1.0);
    }
    CHECK(err < 1e-6);
  }
}

TEST_CASE("explicit Euler is first order against the oracle") {
  const TorusGrid g(1, 5);
  auto error_at = [&](double dt) {
    ParabolicOptions o;
    o.dt = dt;
    o.integrator = TimeIntegrator::Euler;
    const FieldSeries P = heat_kernel(Environment::identity(g), 0.0, 0, 0.5, o);
    const Eigen::VectorXd ref = oracle::identity_heat_kernel(1, 5, 0, 0.5);
    double e = 0.0;
    for (std::size_t s = 0; s < g.size(); ++s) e = std::max(e, std::abs(P.frames.back()[s] - ref(s)));
    return e;
  };
  const double e1 = error_at(0.01), e2 = error_at(0.005);
  CHECK(e1 / e2 == doctest::Approx(2.0).epsilon(0.1));
}

TEST_CASE("heat kernel vanishes before its start time") {
  const TorusGrid g(1, 4);
  ParabolicOptions o;
  o.dt = 0.01;
  const FieldSeries P = heat_kernel(Environment::identity(g), 1.0, 0, 2.0, o);
  CHECK(series_frame_at(P, 0.5) == nullptr);
  CHECK(series_frame_at(P, 1.5) != nullptr);
}

TEST_CASE("constants are stationary") {
  const TorusGrid g(2, 4);
  ParabolicOptions o;
  o.dt = 0.01;
  const FieldSeries u = solve_linear_parabolic(Environment::identity(g, 2.0), Field(g, 3.0), 0.0, 1.0, o);
  for (double v : u.frames.back().values) CHECK(v == doctest::Approx(3.0).epsilon(1e-14));
}

TEST_CASE("manufactured solution with forcing") {
  // u = e^{-t} sin(2 pi x / N); F = du/dt - Lap u = (-1 + lambda) u.
  const int N = 16;
  const TorusGrid g(1, N);
  const double lambda = 2.0 * (1.0 - std::cos(2.0 * std::numbers::pi / N));
  auto mode = [&](double t, std::span<double> out) {
    for (int x = 0; x < N; ++x) out[x] = std::exp(-t) * std::sin(2.0 * std::numbers::pi * x / N);
  };
  Field init(g);
  mode(0.0, init.values);
  ParabolicOptions o;
  o.dt = 1e-3;
  o.output_every = 0.5;
  const FieldSeries u = solve_linear_parabolic(
      Environment::identity(g), init, 0.0, 2.0, o, [&](double t, std::span<double> out) {
        mode(t, out);
        for (double& v : out) v *= (lambda - 1.0);
      });
  std::vector<double> exact(N);
  mode(2.0, exact);
  for (int x = 0; x < N; ++x) CHECK(u.frames.back()[x] == doctest::Approx(exact[x]).epsilon(1e-8));
}

TEST_CASE("energy identity for a single Fourier mode") {
  const int N = 12;
  const TorusGrid g(1, N);
  const double lambda = 2.0 * (1.0 - std::cos(2.0 * std::numbers::pi * 2 / N));
  Field init(g);
  for (int x = 0; x < N; ++x) init[x] = std::cos(2.0 * std::numbers::pi * 2 * x / N);
  ParabolicOptions o;
  o.dt = 1e-3;
  o.output_every = 0.05;
  const Environment env = Environment::identity(g);
  const FieldSeries u = solve_linear_parabolic(env, init, 0.0, 1.0, o);
  const EnergySeries e = energy_series(u, env);
  for (std::size_t n = 0; n < e.times.size(); ++n) {
    CHECK(e.energy[n] == doctest::Approx(e.energy[0] * std::exp(-2.0 * lambda * e.times[n])).epsilon(1e-8));
    CHECK(e.dissipation[n] == doctest::Approx(lambda * e.energy[n]).epsilon(1e-8));
  }
  CHECK(e.max_relative_violation < 1e-3);
}

TEST_CASE("degenerate environment keeps the energy non-increasing") {
  const TorusGrid g(2, 6);
  MatrixField a = MatrixField::identity(g);
  for (std::size_t s = 0; s < g.size(); s += 2)
    for (int k = 0; k < 4; ++k) a.values[s * 4 + k] = 0.0;
  const Environment env = Environment::constant(a);
  ParabolicOptions o;
  o.dt = 0.01;
  o.output_every = 0.1;
  const FieldSeries P = heat_kernel(env, 0.0, 7, 3.0, o);
  const EnergySeries e = energy_series(P, env);
  for (std::size_t n = 0; n < e.times.size(); ++n) {
    CHECK(e.dissipation[n] >= 0.0);
    if (n > 0) CHECK(e.energy[n] <= e.energy[n - 1] + 1e-14);
  }
}

TEST_CASE("time-dependent environment switches frames") {
  const TorusGrid g(1, 5);
  std::vector<double> times{0.0, 0.5};
  std::vector<std::vector<double>> frames{std::vector<double>(5, 1.0), std::vector<double>(5, 3.0)};
  const Environment env(g, times, frames);
  CHECK(env.frame_index(0.2) == 0);
  CHECK(env.frame_index(0.5) == 1);
  CHECK(env.max_lambda_plus(1) == 3.0);
  ParabolicOptions o;
  o.dt = 1e-3;
  const FieldSeries P = heat_kernel(env, 0.0, 2, 1.0, o);
  // Mode-by-mode: exp(-lambda (0.5 + 3 * 0.5)).
  const Eigen::VectorXd ref = oracle::identity_heat_kernel(1, 5, 2, 2.0);
  for (int s = 0; s < 5; ++s) CHECK(P.frames.back()[s] == doctest::Approx(ref(s)).epsilon(1e-9));
}

TEST_CASE("non-symmetric environments are rejected") {
  const TorusGrid g(2, 3);
  std::vector<double> m(g.size() * 4, 0.0);
  for (std::size_t s = 0; s < g.size(); ++s) m[s * 4] = m[s * 4 + 3] = 1.0;
  m[1] = 0.3;
  CHECK_THROWS_AS(Environment(g, {0.0}, {m}), NonSymmetricCoefficient);
}

TEST_CASE("caccioppoli ratio") {
  const int L = 8;
  const TorusGrid g(2, 4 * L + 1);
  const Environment env = Environment::identity(g);
  ParabolicOptions o;
  o.dt = 0.1;
  o.output_every = 0.5;
  const std::size_t center = g.size() / 2;
  const double t_end = 4.0 * L * L;
  const FieldSeries P = heat_kernel(env, 0.0, center, t_end, o);
  CHECK(parabolic_residual(P, env, o) < 1e-8);
  const double ratio = caccioppoli_ratio(P, env, L, center, t_end);
  MESSAGE("caccioppoli ratio (L=8, d=2, identity): " << ratio);
  CHECK(std::isfinite(ratio));
  CHECK(ratio > 0.0);
  CHECK(ratio < 10.0);

  FieldSeries scaled = P;
  for (Field& f : scaled.frames)
    for (double& v : f.values) v *= -3.7;
  CHECK(caccioppoli_ratio(scaled, env, L, center, t_end) == doctest::Approx(ratio).epsilon(1e-12));

  FieldSeries constant = P;
  for (Field& f : constant.frames)
    for (double& v : f.values) v = 2.0;
  CHECK(caccioppoli_ratio(constant, env, L, center, t_end) == 0.0);

  FieldSeries zero = P;
  for (Field& f : zero.frames)
    for (double& v : f.values) v = 0.0;
  CHECK_THROWS_AS(caccioppoli_ratio(zero, env, L, center, t_end), ZeroDenominator);
}
