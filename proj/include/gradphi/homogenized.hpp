#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "gradphi/gibbs.hpp"
#include "gradphi/lattice.hpp"
#include "gradphi/parabolic.hpp"
#include "gradphi/potential.hpp"

namespace gradphi {

// Tensor grid of slopes over [-p_max, p_max]^d with an odd number of nodes
// per axis (so 0 is a node).
struct TableAxes {
  int dim = 2;
  double p_max = 4.0;
  int nodes_per_axis = 9;
};

// D_p sigma on the slope grid, multilinearly interpolated.
class SurfaceTensionTable {
 public:
  static constexpr int kVersion = 1;

  SurfaceTensionTable() = default;
  explicit SurfaceTensionTable(const TableAxes& axes);

  // Table filled from a closed-form flux (used for the linear case and tests).
  static SurfaceTensionTable from_function(
      const TableAxes& axes, const std::function<void(std::span<const double>, std::span<double>)>& F);
  static SurfaceTensionTable identity(const TableAxes& axes, double c = 1.0);

  const TableAxes& axes() const { return axes_; }
  int dim() const { return axes_.dim; }
  double spacing() const;
  double axis_value(int k) const;  // k in [0, nodes_per_axis)
  std::size_t node_count() const { return count_; }
  std::vector<int> node_indices(std::size_t node) const;
  std::size_t node_of(std::span<const int> indices) const;
  std::vector<double> node(std::size_t node) const;

  std::span<const double> node_flux(std::size_t node) const;
  std::span<const double> node_error(std::size_t node) const;
  void set_node(std::size_t node, std::span<const double> flux, std::span<const double> err);

  bool contains(std::span<const double> p) const;
  // Multilinear interpolation; SlopeOutOfTable outside the grid.
  void flux_at(std::span<const double> p, std::span<double> out) const;
  // Upper bound on the Jacobian norm of the interpolant in the cell containing p:
  // sqrt(||J||_1 ||J||_inf) with J_ij the largest edge difference quotient.
  double local_bound(std::span<const double> p) const;
  double max_bound() const;
  // sigma(p) - sigma(0) by Gauss-Legendre integration of p . flux(s p) over s.
  double sigma(std::span<const double> p) const;

  // Recomputes the cached cell bounds after node values change.
  void refresh();

  // Build metadata.
  PotentialSpec potential;
  int sample_L = 0;
  std::size_t ray_violations = 0;

  void write(const std::string& path) const;
  static SurfaceTensionTable read(const std::string& path);

 private:
  std::size_t cell_of(std::span<const double> p, std::vector<int>& base, std::vector<double>& frac) const;

  TableAxes axes_;
  std::size_t count_ = 0;
  std::vector<double> flux_, error_;
  std::vector<double> cell_bound_;
};

struct TableBuildOptions {
  MonteCarloParams mc;
  double symmetry_tol = 5.0;  // in combined stderr
  double ray_tol = 3.0;       // in combined stderr
  // Called after each representative node with (done, total).
  std::function<void(std::size_t, std::size_t)> progress;
};

// Samples representative slopes (nonnegative, sorted descending) at p and -p,
// antisymmetrizes, averages over the stabilizer, and fills the table by the
// signed-permutation symmetry. SymmetryViolation if F(p) and -F(-p) disagree
// beyond symmetry_tol combined stderr.
SurfaceTensionTable build_sigma_table(const PotentialSpec& spec, const TorusGrid& sample_grid,
                                      const TableAxes& axes, const TableBuildOptions& opts = {});

// Slope range for the table: safety * max |grad^eps f| over the grids used.
double table_slope_range(const Field& f, double safety = 3.0);

// Flux of the homogenized equation together with a local Jacobian bound.
struct HomogenizedFlux {
  int dim = 0;
  std::function<void(std::span<const double>, std::span<double>)> flux;
  std::function<double(std::span<const double>)> bound;

  static HomogenizedFlux linear(int dim, double c = 1.0);
  static HomogenizedFlux from_table(std::shared_ptr<const SurfaceTensionTable> table);
};

struct HomogenizedOptions {
  double dt = 1e-3;            // macro step, split into stable substeps
  double output_every = 0.0;   // 0 stores every macro step
  double cfl = 0.5;            // substep h * 2d * bound / eps^2 <= cfl
  std::size_t max_subdivision = 1u << 22;
};

// f sampled at the sites x = eps * coords of a torus with N eps = 1.
Field sample_on_torus(const TorusGrid& grid, const std::function<double(std::span<const double>)>& f);

// Explicit Euler for du/dt = div^eps flux(grad^eps u). BadScale unless
// side * scale == 1. SlopeOutOfTable, NonFinite.
FieldSeries solve_homogenized(const HomogenizedFlux& flux, const Field& init, double T,
                              const HomogenizedOptions& opts = {});

// eps^d sum_x sigma(grad^eps u(x)) for a table flux.
double homogenized_energy(const SurfaceTensionTable& table, const Field& u);

struct DiscretizationRow {
  double eps = 0.0;
  double error = 0.0;  // L2((0,T) x torus) distance to the finest solution at coarse nodes
};

struct DiscretizationReport {
  std::vector<DiscretizationRow> rows;  // ordered as eps_list
  bool monotone = false;                // errors decrease as eps decreases
  double order = 0.0;                   // slope of log error vs log eps (excluding the finest)
};

// Solves at each eps (1/eps integer, each finest-grid multiple of the coarse
// ones) and compares with the finest eps at the coarse nodes and output times.
DiscretizationReport discretization_error_check(const HomogenizedFlux& flux, int dim,
                                                const std::function<double(std::span<const double>)>& f,
                                                std::span<const double> eps_list, double T,
                                                const HomogenizedOptions& opts = {});

}  // namespace gradphi
