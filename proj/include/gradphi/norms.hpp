#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "gradphi/lattice.hpp"
#include "gradphi/numerics.hpp"
#include "gradphi/parabolic.hpp"
#include "gradphi/potential.hpp"

namespace gradphi {

// Space-time data on a torus sampled on a uniform time grid: frame f covers
// the time cell [f, f + 1) / frames_per_unit. Values are stored frame-major,
// then site, then component.
struct SpaceTimeField {
  TorusGrid grid;
  int components = 1;
  int frames_per_unit = 1;
  std::vector<double> values;

  SpaceTimeField() = default;
  SpaceTimeField(const TorusGrid& grid, std::size_t frames, int components = 1,
                 int frames_per_unit = 1);
  std::size_t frames() const;
  double& at(std::size_t frame, std::size_t site, int comp = 0) {
    return values[(frame * grid.size() + site) * components + comp];
  }
  double at(std::size_t frame, std::size_t site, int comp = 0) const {
    return values[(frame * grid.size() + site) * components + comp];
  }
  double duration() const { return static_cast<double>(frames()) / frames_per_unit; }
};

// Q = (t0, t1) x torus.
struct ParabolicCylinder {
  TorusGrid grid;
  double t0 = 0.0, t1 = 0.0;
  std::vector<double> frame_times;

  double volume() const { return (t1 - t0) * static_cast<double>(grid.size()); }
  bool contains(double t) const { return t >= t0 && t <= t1; }
};

// Normalized: (|T|^-1 sum |u|^q)^(1/q). Otherwise eps-weighted with eps = grid.scale():
// (eps^d sum |u|^q)^(1/q). q = infinity gives the max.
double lq_norm(std::span<const double> u, const TorusGrid& grid, double q, bool normalized = true);
double lq_norm(const Field& u, double q, bool normalized = true);
// Space-time version; time is averaged (normalized) or integrated over the cells.
double lq_norm(const SpaceTimeField& f, double q, bool normalized = true);

// Normalized: (1/(N eps)) ||u||_q + ||grad u||_q; eps-weighted: ||u||_q + ||grad u||_q.
// |grad u| is the Euclidean norm of the forward gradient.
double w1q_norm(const Field& u, double q, bool normalized = true);

// Dual of W^{1,2} with the Hilbert metric mu^2 ||v||^2 + ||grad v||^2, mu = 1 / (N eps):
// sqrt(<u, (mu^2 - Lap)^{-1} u>) with the normalized (or eps^d) pairing. One
// conjugate-gradient solve. Unsupported for q != 2.
double dual_norm_w12(const Field& u, bool normalized = true, double q = 2.0);

// Averages of component `comp` over the cylinders of scale base^m: time blocks
// of base^(2m) units, space blocks of side base^m, in frame-major, then
// row-major block order.
std::vector<double> cylinder_averages(const SpaceTimeField& f, int m, int base = 3, int comp = 0);

// ||f||_{L^q(Q)} + sum_{m=0}^{n} base^m (mean_z |(f)_{z + Q_{base^m}}|^q)^(1/q)
// on Q = (0, base^(2n)) x torus of side base^n, summed over components. BadShape
// unless the side is base^n and the frame count is frames_per_unit * base^(2n).
// Scale weights are length_unit * base^m (length_unit = eps on a rescaled torus).
double multiscale_poincare_functional(const SpaceTimeField& f, double q, int base = 3,
                                      double length_unit = 1.0);

// n with base^n == side, or -1.
int exact_log(int side, int base);

struct FluxWeakNormOptions {
  int dim = 2;
  double dt = 2e-3;
  double burn_in = 200.0;
  int frames_per_unit = 1;
  int base = 3;
  double q = 2.0;
  std::uint64_t seed = 1;
};

struct FluxWeakNormRow {
  int L = 0;
  std::vector<double> ratio_samples;  // functional / L per replica
  Estimate ratio;
  std::vector<double> mean_flux;      // pooled estimate used for centering
  // Variance over cylinders and replicas of the centered cylinder average
  // (first component), per scale m = 0..n.
  std::vector<double> cylinder_variance;
  std::vector<double> cylinder_volume;
};

struct FluxWeakNormResult {
  std::vector<FluxWeakNormRow> rows;
  // Point estimates decrease along L_list.
  bool decreasing = false;
  // Each drop ratio(L_k) - ratio(L_{k+1}) exceeds 2 sqrt(se_k^2 + se_{k+1}^2).
  bool decreasing_within_errors = false;
};

// For each L: stationary runs on the torus of side L, flux D_pV(p + grad phi)
// recorded over a time window of length L^2, centered by the pooled mean, and
// the multiscale functional divided by L.
FluxWeakNormResult flux_weak_norm_experiment(const PotentialSpec& spec, std::span<const int> L_list,
                                             std::span<const double> p, std::size_t replicas,
                                             const FluxWeakNormOptions& opts = {});

}  // namespace gradphi
