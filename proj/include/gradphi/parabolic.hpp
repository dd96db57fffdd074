#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "gradphi/lattice.hpp"

namespace gradphi {

// Time-dependent coefficient field a(t, x), piecewise constant in time: frame
// k is in force on [times[k], times[k+1]) and the last frame forever after.
// Before times[0] the first frame applies.
class Environment {
 public:
  Environment() = default;
  Environment(const TorusGrid& grid, std::vector<double> times,
              std::vector<std::vector<double>> frames);

  static Environment constant(const MatrixField& a);
  static Environment identity(const TorusGrid& grid, double c = 1.0);

  const TorusGrid& grid() const { return grid_; }
  std::size_t frame_count() const { return times_.size(); }
  double frame_time(std::size_t k) const { return times_[k]; }
  std::size_t frame_index(double t) const;
  // End of the interval on which frame k applies (infinity for the last).
  double frame_end(std::size_t k) const;
  std::span<const double> frame(std::size_t k) const { return frames_[k]; }
  // max over sites of 1 v largest eigenvalue.
  double max_lambda_plus(std::size_t k) const { return max_lambda_plus_[k]; }
  // 1 v largest eigenvalue at one site.
  double lambda_plus(std::size_t k, std::size_t site) const;

 private:
  TorusGrid grid_;
  std::vector<double> times_;
  std::vector<std::vector<double>> frames_;
  std::vector<double> max_lambda_plus_;
};

enum class TimeIntegrator { Euler, RK4 };

struct ParabolicOptions {
  double dt = 1e-3;
  TimeIntegrator integrator = TimeIntegrator::RK4;
  // Substeps h satisfy h * 2d * max Lambda_+ / scale^2 <= cfl.
  double cfl = 0.5;
  std::size_t max_subdivision = 1u << 20;
  // Spacing of stored frames; 0 stores one frame per dt.
  double output_every = 0.0;
  bool store = true;
  // Stop early once the L2 norm (sum of squares, square-rooted) falls below this.
  double stop_below_norm = 0.0;
};

struct FieldSeries {
  std::vector<double> times;
  std::vector<Field> frames;
};

// Forcing F(t) written into `out` (one value per site).
using Forcing = std::function<void(double t, std::span<double> out)>;
// Called after every dt step with (t, u); returning false stops the solve.
using SolveObserver = std::function<bool(double t, std::span<const double> u)>;

// Solves du/dt = div a grad u + F on [t0, T] from u(t0) = init.
FieldSeries solve_linear_parabolic(const Environment& env, const Field& init, double t0, double T,
                                   const ParabolicOptions& opts, const Forcing& forcing = {},
                                   const SolveObserver& observer = {});

// Heat kernel from delta_y - 1/|T| at time s, up to time T.
FieldSeries heat_kernel(const Environment& env, double s, std::size_t y, double T,
                        const ParabolicOptions& opts, const SolveObserver& observer = {});

// Value of a series at time t (zero before the first frame, the kernel convention).
const Field* series_frame_at(const FieldSeries& series, double t);

struct EnergySeries {
  std::vector<double> times;
  std::vector<double> energy;       // sum u^2
  std::vector<double> dissipation;  // sum grad u . a grad u
  // max |E(n+1) - E(n) + (t(n+1) - t(n)) (D(n) + D(n+1))|, absolute and relative to E(0)
  double max_violation = 0.0;
  double max_relative_violation = 0.0;
};

EnergySeries energy_series(const FieldSeries& series, const Environment& env);

// [int over Q_L of sum grad u . a grad u] / [(1/L^2) int over Q_2L of sum Lambda_+ |u|^2]
// with Q_L = (t_end - L^2, t_end] x (center + [-L, L]^d). Throws ZeroDenominator
// when u vanishes on Q_2L.
double caccioppoli_ratio(const FieldSeries& series, const Environment& env, int L,
                         std::size_t center, double t_end);

// Largest relative mismatch between each stored frame and the solver
// propagation of the previous one (unforced equation).
double parabolic_residual(const FieldSeries& series, const Environment& env,
                          const ParabolicOptions& opts);

}  // namespace gradphi
