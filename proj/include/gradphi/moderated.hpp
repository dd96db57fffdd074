#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "gradphi/dynamics.hpp"
#include "gradphi/lattice.hpp"
#include "gradphi/numerics.hpp"
#include "gradphi/parabolic.hpp"
#include "gradphi/potential.hpp"

namespace gradphi {

// k(t) = delta / (1 + t)^4 and K(t) = k(t) + int_t^inf s k(s) ds.
struct ModerationKernels {
  double delta = 0.0;

  explicit ModerationKernels(double delta);
  double k(double t) const;
  double K(double t) const;
  // int_a^b k and int_a^b K in closed form (b may be infinite).
  double k_integral(double a, double b) const;
  double K_integral(double a, double b) const;
  double K_total() const { return 2.0 * delta / 3.0; }
};

// Numerical int_t^inf s k(s) ds by Gauss-Legendre after u = 1 / (1 + s).
double K_tail_quadrature(double delta, double t);

// (int_0^tau K(u) K(tau - u) du) / K(tau), composite Gauss-Legendre.
double kernel_convolution_ratio(double delta, double tau);

struct KernelConstraintReport {
  double delta = 0.0;
  double integral = 0.0;         // int_0^inf K
  double max_conv_ratio = 0.0;   // max over the tau grid of (K * K)(tau) / K(tau)
  double worst_tau = 0.0;
  double safety = 1.0;
  bool satisfied = false;        // safety * max ratio <= 1 and safety * integral <= 1
};

// Both constraints on a 200-point log-spaced grid of tau = s' - t in
// [1e-4, 1e4] (the convolution only depends on the difference).
KernelConstraintReport check_kernel_constraints(double delta, double safety = 2.0,
                                                int grid_points = 200);

// Largest delta <= 1 with check_kernel_constraints(delta, 2).satisfied, by
// bisection; computed once and cached.
double choose_delta();

enum class ModerationWindow {
  Infinite,   // s in [t, t + horizon], scale |p|_+^(r-2)
  UnitSplit,  // s in [t, 1] for t <= 1/2, s in [0, t] mirrored for t > 1/2
};

struct ModeratedOptions {
  double delta = 0.0;  // 0 selects choose_delta()
  double tail_tol = 1e-6;
  double horizon = 0.0;  // 0 selects the shortest horizon meeting tail_tol
  ModerationWindow window = ModerationWindow::Infinite;
  // UnitSplit: time rate eps^-2 (the cap is 1 there).
  double rate = 1.0;
};

struct ModeratedField {
  TorusGrid grid;
  std::vector<double> times;
  std::vector<std::vector<double>> values;  // per frame, per site
  double delta = 0.0;
  double rate = 0.0;  // |p|_+^(r-2), or eps^-2
  double horizon = 0.0;
  double truncation_bound = 0.0;
};

// Eigenvalue paths: lambda_minus[j][x], lambda_plus[j][x] at uniform times.
struct EigenvaluePaths {
  TorusGrid grid;
  std::vector<double> times;
  std::vector<std::vector<double>> lambda_minus, lambda_plus;

  static EigenvaluePaths from_trajectory(const Trajectory& traj);
};

// m(t, x) = P int_t^inf k(P (s - t)) [Lambda_-(s, x) ^ P] /
//           [(s - t)^-1 sum_{y~x} int_t^s (P + Lambda_+(s', y)) ds'] ds,
// with P = |p|_+^(r-2). The ratio is linear between frames and k is
// integrated exactly. Values are produced for every frame whose window fits
// in the path; HorizonTooShort if none does or the tail bound exceeds tol.
ModeratedField moderated_env(const EigenvaluePaths& paths, double P, const ModeratedOptions& opts);
ModeratedField moderated_env(const Trajectory& traj, const ModeratedOptions& opts);

// |p|_+^(r-2) for the potential (1 for the quadratic family).
double moderation_scale(const PotentialSpec& spec, std::span<const double> p);

struct TailRegression {
  std::vector<double> K, probability;
  LinearFit fit;
};

struct ModeratedTailReport {
  std::size_t samples = 0;
  double min = 0.0, max = 0.0, mean = 0.0;
  TailRegression upper;    // log P[m > K] against K^(r/(r-2))
  TailRegression inverse;  // log P[1/m > K] against (ln K)^(r/(r-2))
  bool degenerate = false; // all samples equal to relative 1e-9
};

ModeratedTailReport moderated_tail_report(std::span<const double> samples, double r,
                                          int points = 10);

struct ModerationRatio {
  double max_ratio = 0.0;
  std::size_t evaluated = 0;
  std::size_t skipped = 0;  // zero RHS and zero LHS
};

// max over frames t (whose K-window fits) and sites x of
// m(t, x) |grad u(t, x)|^2 / sum_{|y - x| <= 2} int_t^T K(P (s - t)) grad u . a grad u (s, y) ds.
ModerationRatio moderation_ratio(const FieldSeries& u, const Environment& env,
                                 const ModeratedField& m, double P, double K_window);

struct ExitTimeRow {
  double T = 0.0;
  std::size_t confined = 0;
  std::size_t replicas = 0;
  double probability = 0.0;
  double lo = 0.0, hi = 0.0;  // Wilson 95%
};

struct ExitTimeResult {
  std::vector<ExitTimeRow> rows;
  LinearFit fit;  // log P against (ln T)^(r/(r-2)) over rows with P > 0
};

struct ExitTimeOptions {
  double dt = 2e-3;
  double burn_in = -1.0;
  std::size_t site = 0;
  std::uint64_t seed = 1;
};

// Fraction of replicas whose |p + grad phi(t, site)| stays <= R1 on [0, T].
ExitTimeResult exit_time_experiment(const PotentialSpec& spec, const TorusGrid& grid,
                                    std::span<const double> p, double R1,
                                    std::span<const double> T_grid, std::size_t replicas,
                                    const ExitTimeOptions& opts = {});

}  // namespace gradphi
