#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

namespace gradphi {

// Periodic grid (Z/NZ)^d with mesh `scale`. Sites are numbered row-major with
// x_1 the slowest coordinate. Copies share the neighbor tables.
class TorusGrid {
 public:
  TorusGrid() = default;
  TorusGrid(int dim, int sites_per_side, double scale = 1.0);

  int dim() const { return dim_; }
  int side() const { return side_; }
  double scale() const { return scale_; }
  std::size_t size() const { return size_; }

  // Site reached by one step along +e_dir / -e_dir.
  std::size_t forward(std::size_t site, int dir) const { return tables_->fwd[site * dim_ + dir]; }
  std::size_t backward(std::size_t site, int dir) const { return tables_->bwd[site * dim_ + dir]; }

  std::vector<int> coords(std::size_t site) const;
  // Coordinates are reduced modulo N, negative values allowed.
  std::size_t index(std::span<const int> coords) const;

  // Same lattice with a different mesh.
  TorusGrid rescaled(double scale) const;

  bool same_shape(const TorusGrid& other) const {
    return dim_ == other.dim_ && side_ == other.side_;
  }
  bool operator==(const TorusGrid& other) const {
    return same_shape(other) && scale_ == other.scale_;
  }

 private:
  struct Tables {
    std::vector<std::uint32_t> fwd, bwd;
  };
  int dim_ = 0;
  int side_ = 0;
  double scale_ = 1.0;
  std::size_t size_ = 0;
  std::shared_ptr<const Tables> tables_;
};

// One real value per site.
struct Field {
  TorusGrid grid;
  std::vector<double> values;

  Field() = default;
  explicit Field(const TorusGrid& g, double fill = 0.0) : grid(g), values(g.size(), fill) {}
  Field(const TorusGrid& g, std::vector<double> v);

  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }
  std::size_t size() const { return values.size(); }
};

// One d-vector per site, stored site-major: values[site * d + i].
struct VectorField {
  TorusGrid grid;
  std::vector<double> values;

  VectorField() = default;
  explicit VectorField(const TorusGrid& g, double fill = 0.0)
      : grid(g), values(g.size() * g.dim(), fill) {}
  VectorField(const TorusGrid& g, std::vector<double> v);

  double& at(std::size_t site, int i) { return values[site * grid.dim() + i]; }
  double at(std::size_t site, int i) const { return values[site * grid.dim() + i]; }
};

// Symmetric d x d matrix per site, values[site * d * d + i * d + j].
struct MatrixField {
  TorusGrid grid;
  std::vector<double> values;

  MatrixField() = default;
  explicit MatrixField(const TorusGrid& g, double fill = 0.0)
      : grid(g), values(g.size() * g.dim() * g.dim(), fill) {}
  MatrixField(const TorusGrid& g, std::vector<double> v);

  static MatrixField identity(const TorusGrid& g, double c = 1.0);
  // Throws NonSymmetricCoefficient if some a(x) is not symmetric.
  void check_symmetric(double tol = 1e-12) const;
};

VectorField gradient(const Field& u);
Field divergence(const VectorField& F);
// div(a grad u).
Field elliptic_apply(const MatrixField& a, const Field& u);
Field laplacian(const Field& u);

// Raw kernels used on hot paths. Sizes are not checked.
void gradient_into(const TorusGrid& g, std::span<const double> u, std::span<double> out);
void divergence_into(const TorusGrid& g, std::span<const double> F, std::span<double> out);
// div(a grad u) with a given per site as d*d blocks.
void elliptic_apply_into(const TorusGrid& g, std::span<const double> a, std::span<const double> u,
                         std::span<double> out, std::span<double> scratch);

double sum(std::span<const double> v);
double mean(std::span<const double> v);
// Euclidean inner product over all entries.
double dot(std::span<const double> a, std::span<const double> b);
// Subtracts the mean so that the values sum to zero.
void project_mean_zero(std::span<double> v);

// Periodic difference a - b reduced to (-N/2, N/2].
int periodic_delta(int a, int b, int side);

}  // namespace gradphi
