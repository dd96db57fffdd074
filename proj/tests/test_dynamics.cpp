#include <cmath>
#include <numeric>

#include "doctest.h"
#include "gradphi/dynamics.hpp"
#include "gradphi/errors.hpp"
#include "gradphi/numerics.hpp"
#include "oracles.hpp"

using namespace gradphi;

TEST_CASE("noise is addressed by (seed, step, site) only") {
  const TorusGrid g(2, 4);
  const NoiseStream a(42, g, 0.01), b(42, g, 0.01), c(43, g, 0.01);
  CHECK(a.normal(7, 3) == b.normal(7, 3));
  CHECK(a.normal(-5, 0) == b.normal(-5, 0));
  CHECK(a.normal(7, 3) != c.normal(7, 3));
  CHECK(a.normal(7, 3) != a.normal(8, 3));
  // Evaluation order does not matter.
  std::vector<double> fwd(g.size()), rev(g.size());
  a.increments(11, fwd, false);
  for (std::size_t s = g.size(); s-- > 0;) rev[s] = a.increment(11, s);
  CHECK(fwd == rev);
  a.increments(11, fwd, true);
  CHECK(std::abs(sum(fwd)) < 1e-15);
}

TEST_CASE("noise moments") {
  const TorusGrid g(1, 2);
  const NoiseStream n(1, g, 1.0);
  double m1 = 0, m2 = 0, m4 = 0;
  const int K = 400000;
  for (int k = 0; k < K; ++k) {
    const double z = n.normal(k, k % 7);
    m1 += z;
    m2 += z * z;
    m4 += z * z * z * z;
  }
  CHECK(std::abs(m1 / K) < 5.0 / std::sqrt(K));
  CHECK(m2 / K == doctest::Approx(1.0).epsilon(0.01));
  CHECK(m4 / K == doctest::Approx(3.0).epsilon(0.03));
}

TEST_CASE("zero noise and flat state: the step leaves phi unchanged") {
  const TorusGrid g(2, 5);
  for (const PotentialSpec& spec : {PotentialSpec::degenerate_radial(3.0, 1.0), PotentialSpec::quadratic()}) {
    DynamicsState st = DynamicsState::flat(g, spec, {2.0, -1.0});
    LangevinOptions o;
    o.dt = 0.01;
    LangevinStepper stepper(g, spec, st.slope, o);
    stepper.set_noise_hook([](std::int64_t, std::span<double> inc) {
      for (double& v : inc) v = 0.0;
    });
    const NoiseStream noise(1, g, 0.01);
    for (int k = 0; k < 10; ++k) stepper.step(st, noise);
    for (double v : st.phi.values) CHECK(v == 0.0);
  }
}

TEST_CASE("mean zero is preserved") {
  const TorusGrid g(2, 6);
  const PotentialSpec spec = PotentialSpec::degenerate_radial(3.0, 1.0);
  DynamicsState st = DynamicsState::flat(g, spec, {1.0, 0.5});
  const NoiseStream noise(9, g, 0.005);
  LangevinOptions o;
  o.dt = 0.005;
  LangevinStepper stepper(g, spec, st.slope, o);
  for (int k = 0; k < 2000; ++k) {
    stepper.step(st, noise);
    CHECK(std::abs(sum(st.phi.values)) < 1e-9);
  }
  DynamicsState st2 = DynamicsState::flat(g, spec, {1.0, 0.5});
  step_langevin(st2, noise, 0.005);
  CHECK(std::abs(sum(st2.phi.values)) < 1e-9);
}

TEST_CASE("trajectories are bit-identical for identical seeds") {
  const TorusGrid g(2, 5);
  const PotentialSpec spec = PotentialSpec::degenerate_radial(3.0, 1.0);
  StationaryOptions o;
  o.dt = 0.01;
  o.burn_in = 5.0;
  o.horizon = 5.0;
  o.record_stride = 1.0;
  const std::vector<double> p{1.0, 0.0};
  const Trajectory a = simulate_stationary(spec, g, p, 77, o);
  const Trajectory b = simulate_stationary(spec, g, p, 77, o);
  REQUIRE(a.frames.size() == b.frames.size());
  for (std::size_t k = 0; k < a.frames.size(); ++k) CHECK(a.frames[k].phi.values == b.frames[k].phi.values);
  const Trajectory c = simulate_stationary(spec, g, p, 78, o);
  CHECK(c.frames.back().phi.values != a.frames.back().phi.values);
}

TEST_CASE("huge steps are reported as non-finite") {
  const TorusGrid g(2, 4);
  const PotentialSpec spec = PotentialSpec::degenerate_radial(6.0, 0.0);
  DynamicsState st = DynamicsState::flat(g, spec, {0.0, 0.0});
  LangevinOptions o;
  o.dt = 5.0;
  o.taming_bound = 1e300;
  LangevinStepper stepper(g, spec, st.slope, o);
  const NoiseStream noise(1, g, 5.0);
  CHECK_THROWS_AS(
      [&] {
        for (int k = 0; k < 200; ++k) stepper.step(st, noise);
      }(),
      NonFinite);
}

TEST_CASE("quadratic: three-site variance matches the Gaussian oracle") {
  const TorusGrid g(1, 3);
  const PotentialSpec spec = PotentialSpec::quadratic();
  const Eigen::MatrixXd C = oracle::ou_covariance(1, 3);
  CHECK(C(0, 0) == doctest::Approx(2.0 / 9.0));
  StationaryOptions o;
  o.dt = 2e-3;
  o.burn_in = 10.0;
  o.horizon = 4000.0;
  std::vector<double> series;
  LangevinOptions lo;
  lo.dt = o.dt;
  LangevinStepper stepper(g, spec, {0.0}, lo);
  run_stationary(spec, g, std::vector<double>{0.0}, 5, o, stepper,
                 [&](const LangevinStepper&, const DynamicsState& st) {
                   if (st.step % 10 == 0) series.push_back(st.phi[0] * st.phi[0]);
                 });
  const Estimate e = batch_means(series, 20);
  // Euler bias on the only mode (eigenvalue 3) is 3 dt / 2 relative.
  const double target = C(0, 0) / (1.0 - 1.5 * o.dt);
  CHECK(std::abs(e.mean - target) < 3.0 * e.stderr_);
}

TEST_CASE("quadratic tilted dynamics: gradient is mean zero") {
  const TorusGrid g(2, 6);
  const PotentialSpec spec = PotentialSpec::quadratic();
  StationaryOptions o;
  o.dt = 0.02;
  o.burn_in = 20.0;
  o.horizon = 400.0;
  o.record_stride = 0.5;
  const Trajectory tr = simulate_stationary(spec, g, std::vector<double>{1.5, -0.5}, 3, o);
  for (int i = 0; i < 2; ++i) {
    std::vector<double> series;
    for (const Frame& f : tr.frames) {
      double acc = 0.0;
      for (std::size_t s = 0; s < g.size(); ++s) acc += f.flux[s * 2 + i];
      series.push_back(acc / g.size() - (i == 0 ? 1.5 : -0.5));
    }
    const Estimate e = batch_means(series, 20);
    CHECK(std::abs(e.mean) < 3.0 * e.stderr_ + 1e-12);
  }
}

TEST_CASE("quadratic: single-site variance has no trend after burn-in") {
  const TorusGrid g(2, 4);
  const PotentialSpec spec = PotentialSpec::quadratic();
  StationaryOptions o;
  o.dt = 0.02;
  o.burn_in = 50.0;
  o.horizon = 2000.0;
  o.record_stride = 0.2;
  const Trajectory tr = simulate_stationary(spec, g, std::vector<double>{0.0, 0.0}, 12, o);
  // Batch the squared value and regress batch means on time.
  const int B = 20;
  const std::size_t len = tr.frames.size() / B;
  std::vector<double> t, v;
  for (int b = 0; b < B; ++b) {
    double acc = 0.0;
    for (std::size_t k = b * len; k < (b + 1) * len; ++k) acc += tr.frames[k].phi[0] * tr.frames[k].phi[0];
    t.push_back(b);
    v.push_back(acc / len);
  }
  const LinearFit f = linear_fit(t, v);
  CHECK(std::abs(f.slope) < 3.0 * f.slope_stderr);
}

TEST_CASE("linearized dynamics, constant coefficients") {
  const TorusGrid g(2, 4);
  const PotentialSpec spec = PotentialSpec::quadratic(2.0);
  StationaryOptions o;
  o.dt = 0.01;
  o.burn_in = 1.0;
  o.horizon = 2.0;
  o.record_stride = 0.1;
  o.record_hessian = true;
  const Trajectory tr = simulate_stationary(spec, g, std::vector<double>{1.0, 0.0}, 4, o);
  const LinearizedTrajectory w = linearized_dynamics(tr, std::vector<double>{0.3, -0.4});
  for (std::size_t k = 0; k < w.times.size(); ++k) {
    for (double v : w.w[k].values) CHECK(v == 0.0);
    CHECK(w.form[k] == doctest::Approx(2.0 * 0.25));
  }
  const LinearizedTrajectory z = linearized_dynamics(tr, std::vector<double>{0.0, 0.0});
  for (const Field& f : z.w)
    for (double v : f.values) CHECK(v == 0.0);
}

TEST_CASE("linearized dynamics: energy bookkeeping and online tangent agree") {
  const TorusGrid g(2, 5);
  const PotentialSpec spec = PotentialSpec::degenerate_radial(3.0, 1.0);
  StationaryOptions o;
  o.dt = 0.005;
  o.burn_in = 20.0;
  o.horizon = 3.0;
  o.record_stride = o.dt;
  o.record_hessian = true;
  const std::vector<double> p{1.5, 0.0}, lambda{1.0, 0.0};
  const Trajectory tr = simulate_stationary(spec, g, p, 8, o);
  const LinearizedTrajectory w = linearized_dynamics(tr, lambda);
  CHECK(w.max_energy_violation < 0.2);
  // Energy identity per recorded interval at first order: the per-substep
  // relative violation scales with the substep.
  MESSAGE("max relative energy violation per substep: " << w.max_energy_violation);

  // The online tangent starts at the first recorded frame.
  LangevinOptions lo;
  lo.dt = o.dt;
  LangevinStepper stepper(g, spec, p, lo);
  DynamicsState st = DynamicsState::flat(g, spec, p);
  const NoiseStream noise(8, g, o.dt);
  const std::int64_t nb = std::llround(o.burn_in / o.dt);
  st.step = -nb;
  for (std::int64_t k = 0; k < nb + 1; ++k) stepper.step(st, noise);
  stepper.add_tangent(lambda);
  for (std::size_t k = 1; k < tr.frames.size(); ++k) stepper.step(st, noise);
  CHECK(st.phi.values == tr.frames.back().phi.values);
  double diff = 0.0, scale = 0.0;
  for (std::size_t s = 0; s < g.size(); ++s) {
    diff = std::max(diff, std::abs(stepper.tangent(0)[s] - w.w.back()[s]));
    scale = std::max(scale, std::abs(w.w.back()[s]));
  }
  CHECK(scale > 0.0);
  CHECK(diff < 1e-6 * scale + 1e-12);
}

TEST_CASE("brownian derivative, quadratic potential") {
  const TorusGrid g(2, 5);
  BrownianDerivativeOptions o;
  o.dt = 1e-4;
  o.xi = 1e-4;
  o.burn_in = 0.5;
  const BrownianDerivativeResult r =
      brownian_derivative_check(PotentialSpec::quadratic(), g, std::vector<double>{0.5, 0.0}, 3, 7, o);
  MESSAGE("quadratic rel_error: " << r.rel_error);
  CHECK(r.rel_error <= 1e-2);
}

TEST_CASE("brownian derivative, degenerate potential improves with smaller steps") {
  const TorusGrid g(2, 5);
  const PotentialSpec spec = PotentialSpec::degenerate_radial(3.0, 1.0);
  BrownianDerivativeOptions coarse;
  coarse.dt = 2e-3;
  coarse.xi = 0.3;
  coarse.burn_in = 2.0;
  coarse.s = 0.1;
  coarse.t = 0.3;
  coarse.T = 0.6;
  BrownianDerivativeOptions fine = coarse;
  fine.dt = 1e-4;
  fine.xi = 1e-3;
  const std::vector<double> p{1.5, 0.5};
  const double e1 = brownian_derivative_check(spec, g, p, 5, 12, coarse).rel_error;
  const double e2 = brownian_derivative_check(spec, g, p, 5, 12, fine).rel_error;
  MESSAGE("degenerate rel_error coarse " << e1 << " fine " << e2);
  CHECK(e2 < e1);
  CHECK(e2 < 1e-2);
  CHECK_THROWS_AS(brownian_derivative_check(spec, g, p, 5, 12, [&] {
                    auto z = fine;
                    z.xi = 0.0;
                    return z;
                  }()),
                  InvalidArgument);
}
