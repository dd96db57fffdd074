#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "gradphi/dynamics.hpp"
#include "gradphi/homogenized.hpp"
#include "gradphi/lattice.hpp"
#include "gradphi/noise.hpp"
#include "gradphi/potential.hpp"

namespace gradphi {

// Space-time partition of unity on (0, 1] x T^eps. Centers z = (s_j, y_c) with
// s_j = j kappa^2 (j = 1..K^2) and y_c = c L on the lattice (c in {0..K-1}^d),
// where K = 1/kappa and L = kappa/eps. chi_z = tau_j(t) sigma_c(x) with both
// factors normalized products of C^2 smootherstep tents.
class MesoDecomposition {
 public:
  MesoDecomposition() = default;
  MesoDecomposition(int dim, double eps, double gamma, double kappa_override = 0.0);

  int dim() const { return dim_; }
  double eps() const { return eps_; }
  double gamma() const { return gamma_; }
  double kappa() const { return 1.0 / K_; }
  int inverse_kappa() const { return K_; }
  int side() const { return N_; }          // 1 / eps
  int L() const { return L_; }             // kappa / eps
  int time_bumps() const { return K_ * K_; }
  std::size_t spatial_centers() const { return spatial_; }
  std::size_t centers() const { return spatial_ * static_cast<std::size_t>(K_ * K_); }
  TorusGrid grid() const { return TorusGrid(dim_, N_, eps_); }

  // Center z = (j - 1) * spatial_centers() + c with j in 1..K^2.
  int time_index(std::size_t z) const { return static_cast<int>(z / spatial_) + 1; }
  std::size_t spatial_index(std::size_t z) const { return z % spatial_; }
  double center_time(std::size_t z) const;           // s_j
  std::vector<int> center_site(std::size_t z) const; // y_c in lattice coordinates

  // Normalized time factor and its derivative.
  double time_weight(int j, double t) const;
  double time_weight_derivative(int j, double t) const;
  // Open support of tau_j, in macro time.
  double time_support_begin(int j) const;
  double time_support_end(int j) const;
  // Normalized space factor at a site of grid().
  double space_weight(std::size_t c, std::size_t site) const { return sigma_[c * sites_ + site]; }

  double chi(std::size_t z, double t, std::size_t site) const;
  double dchi_dt(std::size_t z, double t, std::size_t site) const;

  // max over l in {0,1}, k in {0,1,2} of kappa^(2l+k) sup |d_t^l grad^k chi_z|,
  // with time sampled at `samples` points per kappa^2.
  double derivative_constant(int samples = 64) const;

 private:
  double raw_time(int j, double t) const;
  double raw_time_derivative(int j, double t) const;

  int dim_ = 0;
  double eps_ = 0.0, gamma_ = 0.0;
  int N_ = 0, K_ = 0, L_ = 0;
  std::size_t spatial_ = 0, sites_ = 0;
  std::vector<double> sigma_;  // spatial_ * sites_
};

// kappa = eps^gamma snapped to 1/K with K a positive integer (kappa_override > 0
// replaces eps^gamma). BadScale unless 1/eps is an integer and kappa/eps is an
// integer of at least 4.
MesoDecomposition build_partition(int dim, double eps, double gamma, double kappa_override = 0.0);

// Stationary Langevin dynamic on the periodic box y + Lambda (side box_side)
// embedded in the micro torus. Noise is read at the global site addresses from
// a stream on the global grid, so overlapping boxes share increments. Raw
// increments are used; the stored offset makes the box mean equal sqrt(2)
// times the box average of the global Brownian motion.
class LocalCorrector {
 public:
  LocalCorrector(const TorusGrid& global, std::span<const int> center, int box_side,
                 const PotentialSpec& spec, std::vector<double> slope, double dt, bool tamed = false);

  // Runs steps [step - burn_steps, step) from phi = 0, then sets the offset so
  // that the box mean equals sqrt(2) * brownian_average (micro units at `step`).
  void start(const NoiseStream& noise, std::int64_t step, std::int64_t burn_steps,
             double brownian_average);
  // One step; flux() then holds D_pV(p + grad phi) at the pre-step state.
  void advance(const NoiseStream& noise);

  std::int64_t step() const { return state_.step; }
  const TorusGrid& box() const { return box_; }
  std::span<const double> slope() const { return state_.slope; }
  std::span<const std::uint64_t> global_sites() const { return global_; }
  // Local index of a global site, or -1 outside the box.
  std::ptrdiff_t local_of(std::size_t global_site) const { return local_[global_site]; }
  double value(std::size_t local) const { return state_.phi[local] + offset_; }
  double mean_value() const;
  double offset() const { return offset_; }
  std::span<const double> flux() const { return stepper_.flux(); }

 private:
  TorusGrid box_;
  std::vector<std::uint64_t> global_;
  std::vector<std::ptrdiff_t> local_;
  LangevinStepper stepper_;
  DynamicsState state_;
  double offset_ = 0.0;
};

// Box side min(20 L + 1, N) used for the correctors.
int corrector_box_side(const MesoDecomposition& m);

struct CorrectorRef {
  std::size_t center = 0;
  const LocalCorrector* corrector = nullptr;
};

// w = ubar + eps sum_z chi_z(t) phi_z on the macro grid.
Field assemble_w_eps(const MesoDecomposition& m, double t, const Field& ubar,
                     std::span<const CorrectorRef> correctors);

struct OverlapReport {
  double ratio = 0.0;           // ||d - mean d|| / ||phi_1 - mean phi_1|| on the overlap
  double difference_l2 = 0.0;
  double corrector_l2 = 0.0;
  std::size_t overlap_sites = 0;
};

// Two correctors at the same slope on boxes whose centers differ by `shift`,
// driven by shared noise; compared on the overlap over [0, horizon] after burn-in.
OverlapReport corrector_overlap_ratio(const PotentialSpec& spec, int dim, int global_side, int box_side,
                                      std::span<const int> shift, std::span<const double> slope,
                                      std::uint64_t seed, double dt, double burn_in, double horizon);

struct TwoScaleOptions {
  double gamma = 0.0;            // 0 selects 1 / (30 d r)
  double kappa = 0.0;            // > 0 overrides eps^gamma
  double micro_dt = 2e-3;        // 1 / micro_dt must be an integer
  double corrector_burn_in = 50.0;  // micro time
  double horizon = 1.0;          // macro time, at most 1
  std::uint64_t seed = 1;
  std::size_t max_centers = 1u << 16;
  // The identity is exact for the untamed scheme; taming adds an O(dt^2) defect.
  bool tamed_correctors = false;
  double norm_exponent = 0.0;    // 0 selects r (2 for the quadratic potential)
  int base = 0;                  // multiscale base; 0 tries 3 then 2
};

struct TwoScaleReport {
  int dim = 0;
  double eps = 0.0, gamma = 0.0, kappa = 0.0;
  int L = 0, box_side = 0;
  std::size_t centers = 0;
  double micro_dt = 0.0, macro_dt = 0.0, horizon = 0.0;
  std::int64_t steps = 0;
  double norm_exponent = 0.0;
  std::vector<double> slopes;  // centers * d, p_z

  // Error term norms over (0, T) x T^eps.
  double e2_lr = 0.0, e3_lr = 0.0;
  double eps_e1_l2 = 0.0, eps_e4_l2 = 0.0;
  double eps_e1_analytic_l2 = 0.0;
  double average_integral_max = 0.0;  // max_t |int_0^t (E1 + E4)_T ds|
  double surrogate = 0.0;             // multiscale surrogate of E; NaN if the shape does not fit
  int surrogate_base = 0;

  // Residual of d_t(w - sqrt2 B) - div DV(grad w) - (E1 - E4 - div(E2 + E3)).
  double residual_max = 0.0;
  // Same with the right side div(E2 + E3) + E1 + E4.
  double residual_alt_sign_max = 0.0;
  // Derived sign with E1 from d_t chi at the left endpoint.
  double residual_analytic_e1_max = 0.0;
  double term_scale = 0.0;
  double tolerance = 0.0;  // 10 * macro_dt * term_scale
  bool residual_ok = false;

  double e1_simplification_max = 0.0;  // |E1 direct - E1 with sum d_t chi B dropped|
  double partition_error = 0.0;        // max |sum chi - 1|
  double partition_derivative_error = 0.0;
  double derivative_constant = 0.0;
  double corrector_mean_error = 0.0;   // max |box mean phi - sqrt2 box mean B|

  double ubar_minus_w_l2 = 0.0;
  double ubar_minus_w_bound = 0.0;     // eps || max_z |phi_z| ||
  double sup_w = 0.0, sup_ubar = 0.0, eps_sup_phi = 0.0;
  double u_minus_w_l2 = 0.0, u_minus_ubar_l2 = 0.0;
};

// Streams u^eps, ubar^eps, the correctors and w^eps over [0, T] and measures
// the error terms and the identity residual at every micro step.
// SlopeOutOfTable from sigma; Unsupported if centers exceed max_centers.
TwoScaleReport run_two_scale(const PotentialSpec& spec, const HomogenizedFlux& sigma, int dim, double eps,
                             const std::function<double(std::span<const double>)>& f,
                             const TwoScaleOptions& opts = {});

}  // namespace gradphi
