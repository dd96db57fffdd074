#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "gradphi/dynamics.hpp"
#include "gradphi/lattice.hpp"
#include "gradphi/numerics.hpp"
#include "gradphi/potential.hpp"

namespace gradphi {

// Sampling parameters shared by the Gibbs estimators. All samples come from
// the stationary Langevin chain; error bars are batch means over time blocks.
struct MonteCarloParams {
  double dt = 1e-3;
  double burn_in = -1.0;  // negative selects 20 N^2
  double horizon = 100.0;
  int batches = 20;
  std::uint64_t seed = 1;
  // Steps averaged into one stored sample (keeps long series small).
  int sample_every = 1;
};

struct VectorEstimate {
  std::vector<double> mean;
  std::vector<double> stderr_;
  std::size_t samples = 0;
};

struct HessianEstimate {
  std::vector<double> lambda;
  Estimate form;            // lambda . a (lambda + grad w)
  Estimate symmetric_form;  // (lambda + grad w) . a (lambda + grad w)
  double discrepancy = 0.0; // |form - symmetric_form|
};

struct SurfaceTensionEstimate {
  std::vector<double> p;
  double value = 0.0;
  double value_err = 0.0;
  std::vector<double> gradient;
  std::vector<double> gradient_err;
  std::vector<HessianEstimate> hessian;
  int L = 0;
  std::size_t samples = 0;
};

// Space-time average of D_pV(p + grad phi) under the stationary chain.
VectorEstimate surface_tension_gradient(const PotentialSpec& spec, const TorusGrid& grid,
                                        std::span<const double> p, const MonteCarloParams& mc);

// sigma_L(p) = int_0^1 p . D_p sigma_L(s p) ds by Gauss-Legendre in s; node k
// uses the seed derive_seed(mc.seed, k). Exactly 0 at p = 0.
Estimate surface_tension_value(const PotentialSpec& spec, const TorusGrid& grid,
                               std::span<const double> p, int n_integration_nodes,
                               const MonteCarloParams& mc);

// lambda . D^2 sigma_L(p) lambda from the tangent field w driven along the
// chain; burn-in also relaxes w.
HessianEstimate surface_tension_hessian(const PotentialSpec& spec, const TorusGrid& grid,
                                        std::span<const double> p, std::span<const double> lambda,
                                        const MonteCarloParams& mc);

// Gradient and Hessian forms from a single run, plus the integrated value when
// value_nodes >= 2.
SurfaceTensionEstimate estimate_surface_tension(const PotentialSpec& spec, const TorusGrid& grid,
                                                std::span<const double> p,
                                                const std::vector<std::vector<double>>& lambdas,
                                                int value_nodes, const MonteCarloParams& mc);

struct QuadratureOptions {
  int nodes_per_panel = 16;
  int initial_panels = 4;
  int max_panels = 256;
  double rel_tol = 1e-10;
  // Truncation: the density on the box boundary must be below this fraction of its peak.
  double tail_tol = 1e-12;
  double max_radius = 64.0;
  // Upper bound on tensor points; larger problems throw Unsupported.
  double max_points = 4e7;
};

struct QuadratureResult {
  double log_Z_ratio = 0.0;  // ln(Z_p / Z_0)
  double sigma = 0.0;        // -(1/|T|) ln(Z_p / Z_0)
  std::vector<double> gradient;
  double var_phi0 = 0.0;
  double radius = 0.0;
  int panels = 0;
  std::size_t dimension = 0;  // N^d - 1
};

// Tensor Gauss-Legendre quadrature of the Gibbs density over the mean-zero
// fields, in an orthonormal basis, on a box grown until the boundary density is
// negligible. Panels double until the estimates settle.
QuadratureResult quadrature_oracle(const PotentialSpec& spec, const TorusGrid& grid,
                                   std::span<const double> p, const QuadratureOptions& opts = {});

struct TailReport {
  std::vector<double> K;
  std::vector<double> probability;  // fraction of |grad phi| >= K
  std::vector<std::size_t> counts;
  std::size_t total = 0;
  LinearFit fit;                    // log P against K^r over nonempty points
  double exponent = 0.0;
};

// Pooled exceedances of |grad phi(x)| (Euclidean norm in R^d) over sites and frames.
TailReport gradient_tail_report(const Trajectory& traj, std::span<const double> K_grid,
                                double exponent);
TailReport tail_report_from_samples(std::span<const double> magnitudes,
                                    std::span<const double> K_grid, double exponent);

// K grid spanning the empirical quantiles 1 - p_hi .. 1 - p_lo of the samples.
std::vector<double> tail_quantile_grid(std::span<const double> magnitudes, double p_hi,
                                       double p_lo, int points);

// |grad phi(x)| for every site of every frame.
std::vector<double> gradient_magnitudes(const Trajectory& traj);

struct HsOptions {
  double start_spacing = 1.0;    // time between kernel starts
  double norm_cutoff = 1e-8;     // stop a kernel once its L2 norm is below this
  double max_kernel_time = 1e4;  // HorizonTooShort beyond this
  std::size_t site = 0;
};

struct HsResult {
  Estimate var_direct;  // E[phi(site)^2]
  Estimate var_hk;      // E[int_0^inf P(t, site; site) dt]
  double discrepancy = 0.0;
  std::size_t kernels = 0;
  double max_kernel_value = 0.0;  // sup |P| over all kernels, at most 1
};

// Variance of phi(site) directly and through the Helffer-Sjostrand
// representation. Kernels started at regular times run alongside the chain in
// its current environment until they decay; one kernel per start contributes
// one sample of the time integral.
HsResult hs_variance_check(const PotentialSpec& spec, const TorusGrid& grid,
                           std::span<const double> p, const MonteCarloParams& mc,
                           const HsOptions& hs = {});

}  // namespace gradphi
