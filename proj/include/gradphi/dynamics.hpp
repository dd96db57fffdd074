#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "gradphi/lattice.hpp"
#include "gradphi/noise.hpp"
#include "gradphi/potential.hpp"

namespace gradphi {

struct DynamicsState {
  TorusGrid grid;
  PotentialSpec potential;
  std::vector<double> slope;  // d
  Field phi;
  double time = 0.0;
  std::int64_t step = 0;  // index of the next noise increment

  // phi = 0 at time step0 * dt.
  static DynamicsState flat(const TorusGrid& grid, const PotentialSpec& potential,
                            std::vector<double> slope);
};

struct LangevinOptions {
  double dt = 1e-3;
  // Project increments to mean zero (the tilted torus dynamics). The
  // rescaled hydrodynamic system uses raw increments.
  bool project_noise = true;
  // Taming bound B_max; 0 selects 10 / dt.
  double taming_bound = 0.0;
};

// Tamed Euler-Maruyama stepper with reusable scratch space. Quantities
// evaluated at the pre-step state stay readable after each step.
class LangevinStepper {
 public:
  LangevinStepper(const TorusGrid& grid, const PotentialSpec& potential,
                  std::vector<double> slope, LangevinOptions opts);

  // Advances state by one step of size opts.dt using noise index state.step.
  void step(DynamicsState& state, const NoiseStream& noise);

  // Noise addresses for each site; default is the site index itself.
  void set_noise_sites(std::vector<std::uint64_t> sites);
  // Called with the raw (unprojected) increments of each step; may modify them.
  void set_noise_hook(std::function<void(std::int64_t, std::span<double>)> hook);

  void enable_hessian(bool on) { want_hessian_ = on; }

  // Tangent fields w solving dw = div a (lambda + grad w) dt along the path.
  std::size_t add_tangent(std::vector<double> lambda);
  const Field& tangent(std::size_t k) const { return tangents_[k].w; }
  // Space averages of lambda . a (lambda + grad w) and (lambda + grad w) . a (lambda + grad w)
  // at the pre-step state of the last step.
  double tangent_form(std::size_t k) const { return tangents_[k].form; }
  double tangent_symmetric_form(std::size_t k) const { return tangents_[k].sym_form; }

  std::span<const double> flux() const { return flux_; }        // D_pV(p + grad phi)
  std::span<const double> gradient() const { return grad_; }    // grad phi
  std::span<const double> hessian() const { return hess_; }     // when enabled
  const LangevinOptions& options() const { return opts_; }

  // Evaluates flux (and Hessian if enabled) at phi without stepping.
  void evaluate(const Field& phi);

 private:
  struct Tangent {
    std::vector<double> lambda;
    Field w;
    std::vector<double> work;
    double form = 0.0, sym_form = 0.0;
  };
  TorusGrid grid_;
  PotentialKernel kernel_;
  std::vector<double> slope_;
  LangevinOptions opts_;
  double bmax_;
  bool want_hessian_ = false;
  std::vector<double> grad_, flux_, hess_, drift_, noise_;
  std::vector<std::uint64_t> sites_;
  std::function<void(std::int64_t, std::span<double>)> hook_;
  std::vector<Tangent> tangents_;
};

// One step of the tilted dynamics (allocates a stepper; use LangevinStepper in loops).
void step_langevin(DynamicsState& state, const NoiseStream& noise, double dt,
                   bool project_noise = true);

struct Frame {
  double time = 0.0;
  std::int64_t step = 0;
  Field phi;
  std::vector<double> flux;          // N^d * d
  std::vector<double> lambda_plus;   // N^d, optional
  std::vector<double> lambda_minus;  // N^d, optional
  std::vector<double> hessian;       // N^d * d * d, optional
};

struct Trajectory {
  TorusGrid grid;
  PotentialSpec potential;
  std::vector<double> slope;
  double dt = 0.0;
  std::vector<Frame> frames;
};

struct StationaryOptions {
  double dt = 1e-3;
  double burn_in = -1.0;  // negative selects 20 N^2
  double horizon = 1.0;
  double record_stride = 0.1;
  bool record_hessian = false;
  bool record_eigenvalues = false;
  bool project_noise = true;
};

// Burn-in steps run with negative noise indices so that recording starts at
// step 0, time 0.
Trajectory simulate_stationary(const PotentialSpec& spec, const TorusGrid& grid,
                               std::span<const double> p, std::uint64_t seed,
                               const StationaryOptions& opts);

// Same run, but calls observe(stepper, state) after every post-burn-in step.
// The stepper exposes the pre-step flux/Hessian of that step.
void run_stationary(const PotentialSpec& spec, const TorusGrid& grid,
                    std::span<const double> p, std::uint64_t seed, const StationaryOptions& opts,
                    LangevinStepper& stepper,
                    const std::function<void(const LangevinStepper&, const DynamicsState&)>& observe);

double default_burn_in(const TorusGrid& grid);

struct LinearizedTrajectory {
  std::vector<double> times;
  std::vector<Field> w;
  std::vector<double> form;            // space average of lambda . a (lambda + grad w)
  std::vector<double> symmetric_form;  // space average of (lambda + grad w) . a (lambda + grad w)
  double max_energy_violation = 0.0;   // relative, per step
};

// Explicit Euler for dw/dt = div a (lambda + grad w) from w = 0 in the
// environment recorded on `base` (needs record_hessian), frozen between
// frames, with substeps chosen by h * 2d * max Lambda_+ <= 0.5.
LinearizedTrajectory linearized_dynamics(const Trajectory& base, std::span<const double> lambda);

struct BrownianDerivativeOptions {
  double dt = 1e-4;
  double burn_in = 1.0;
  double s = 0.1;
  double t = 0.2;
  double T = 0.5;
  double xi = 1e-4;
};

struct BrownianDerivativeResult {
  Field fd_derivative;
  Field hk_prediction;
  double rel_error = 0.0;
};

// Central difference of phi(T) under a +-xi linear ramp of B(x) over [s, t],
// against sqrt(2)/(t-s) times the integral over [s, t] of the heat kernel
// started at x in the recorded environment.
BrownianDerivativeResult brownian_derivative_check(const PotentialSpec& spec, const TorusGrid& grid,
                                                   std::span<const double> p, std::uint64_t seed,
                                                   std::size_t site,
                                                   const BrownianDerivativeOptions& opts);

}  // namespace gradphi
