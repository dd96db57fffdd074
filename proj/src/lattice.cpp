#include "gradphi/lattice.hpp"

#include <algorithm>
#include <cmath>

#include "gradphi/errors.hpp"

namespace gradphi {

TorusGrid::TorusGrid(int dim, int sites_per_side, double scale)
    : dim_(dim), side_(sites_per_side), scale_(scale) {
  require(dim >= 1 && dim <= 8, "TorusGrid: dimension must be in [1, 8]");
  require(sites_per_side >= 2, "TorusGrid: need at least 2 sites per side");
  require(scale > 0 && std::isfinite(scale), "TorusGrid: scale must be positive");
  std::size_t n = 1;
  for (int i = 0; i < dim; ++i) {
    n *= static_cast<std::size_t>(sites_per_side);
    require(n < (std::size_t{1} << 32), "TorusGrid: too many sites");
  }
  size_ = n;

  auto t = std::make_shared<Tables>();
  t->fwd.resize(size_ * dim_);
  t->bwd.resize(size_ * dim_);
  // stride of coordinate i in the row-major numbering
  std::vector<std::size_t> stride(dim_);
  stride[dim_ - 1] = 1;
  for (int i = dim_ - 2; i >= 0; --i) stride[i] = stride[i + 1] * side_;
  for (std::size_t s = 0; s < size_; ++s) {
    for (int i = 0; i < dim_; ++i) {
      const int c = static_cast<int>((s / stride[i]) % side_);
      const std::size_t base = s - c * stride[i];
      t->fwd[s * dim_ + i] = static_cast<std::uint32_t>(base + ((c + 1) % side_) * stride[i]);
      t->bwd[s * dim_ + i] =
          static_cast<std::uint32_t>(base + ((c + side_ - 1) % side_) * stride[i]);
    }
  }
  tables_ = std::move(t);
}

std::vector<int> TorusGrid::coords(std::size_t site) const {
  std::vector<int> c(dim_);
  for (int i = dim_ - 1; i >= 0; --i) {
    c[i] = static_cast<int>(site % side_);
    site /= side_;
  }
  return c;
}

std::size_t TorusGrid::index(std::span<const int> c) const {
  if (static_cast<int>(c.size()) != dim_) throw DimensionMismatch("TorusGrid::index: wrong arity");
  std::size_t s = 0;
  for (int i = 0; i < dim_; ++i) {
    int v = c[i] % side_;
    if (v < 0) v += side_;
    s = s * side_ + v;
  }
  return s;
}

TorusGrid TorusGrid::rescaled(double scale) const {
  require(scale > 0 && std::isfinite(scale), "TorusGrid: scale must be positive");
  TorusGrid g = *this;
  g.scale_ = scale;
  return g;
}

Field::Field(const TorusGrid& g, std::vector<double> v) : grid(g), values(std::move(v)) {
  if (values.size() != g.size()) throw DimensionMismatch("Field: value count != total sites");
}

VectorField::VectorField(const TorusGrid& g, std::vector<double> v)
    : grid(g), values(std::move(v)) {
  if (values.size() != g.size() * g.dim())
    throw DimensionMismatch("VectorField: component count != d * total sites");
}

MatrixField::MatrixField(const TorusGrid& g, std::vector<double> v)
    : grid(g), values(std::move(v)) {
  if (values.size() != g.size() * g.dim() * g.dim())
    throw DimensionMismatch("MatrixField: entry count != d^2 * total sites");
}

MatrixField MatrixField::identity(const TorusGrid& g, double c) {
  MatrixField a(g);
  const int d = g.dim();
  for (std::size_t s = 0; s < g.size(); ++s)
    for (int i = 0; i < d; ++i) a.values[s * d * d + i * d + i] = c;
  return a;
}

void MatrixField::check_symmetric(double tol) const {
  const int d = grid.dim();
  for (std::size_t s = 0; s < grid.size(); ++s) {
    const double* m = &values[s * d * d];
    for (int i = 0; i < d; ++i)
      for (int j = i + 1; j < d; ++j) {
        const double scale = std::max({1.0, std::abs(m[i * d + j]), std::abs(m[j * d + i])});
        if (std::abs(m[i * d + j] - m[j * d + i]) > tol * scale)
          throw NonSymmetricCoefficient("coefficient field is not symmetric at a site");
      }
  }
}

void gradient_into(const TorusGrid& g, std::span<const double> u, std::span<double> out) {
  const int d = g.dim();
  const double inv = 1.0 / g.scale();
  for (std::size_t s = 0; s < g.size(); ++s)
    for (int i = 0; i < d; ++i) out[s * d + i] = inv * (u[g.forward(s, i)] - u[s]);
}

void divergence_into(const TorusGrid& g, std::span<const double> F, std::span<double> out) {
  const int d = g.dim();
  const double inv = 1.0 / g.scale();
  for (std::size_t s = 0; s < g.size(); ++s) {
    double acc = 0.0;
    for (int i = 0; i < d; ++i) acc += F[s * d + i] - F[g.backward(s, i) * d + i];
    out[s] = inv * acc;
  }
}

void elliptic_apply_into(const TorusGrid& g, std::span<const double> a, std::span<const double> u,
                         std::span<double> out, std::span<double> scratch) {
  const int d = g.dim();
  const double inv = 1.0 / g.scale();
  for (std::size_t s = 0; s < g.size(); ++s) {
    double grad[8];
    for (int i = 0; i < d; ++i) grad[i] = inv * (u[g.forward(s, i)] - u[s]);
    const double* m = &a[s * d * d];
    for (int i = 0; i < d; ++i) {
      double acc = 0.0;
      for (int j = 0; j < d; ++j) acc += m[i * d + j] * grad[j];
      scratch[s * d + i] = acc;
    }
  }
  divergence_into(g, scratch, out);
}

VectorField gradient(const Field& u) {
  VectorField out(u.grid);
  gradient_into(u.grid, u.values, out.values);
  return out;
}

Field divergence(const VectorField& F) {
  Field out(F.grid);
  divergence_into(F.grid, F.values, out.values);
  return out;
}

Field elliptic_apply(const MatrixField& a, const Field& u) {
  if (!a.grid.same_shape(u.grid)) throw DimensionMismatch("elliptic_apply: grid mismatch");
  a.check_symmetric();
  Field out(u.grid);
  std::vector<double> scratch(u.grid.size() * u.grid.dim());
  elliptic_apply_into(u.grid, a.values, u.values, out.values, scratch);
  return out;
}

Field laplacian(const Field& u) { return divergence(gradient(u)); }

double sum(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

double mean(std::span<const double> v) { return v.empty() ? 0.0 : sum(v) / v.size(); }

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionMismatch("dot: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void project_mean_zero(std::span<double> v) {
  const double m = mean(v);
  for (double& x : v) x -= m;
}

int periodic_delta(int a, int b, int side) {
  int d = (a - b) % side;
  if (d < 0) d += side;
  if (2 * d > side) d -= side;
  return d;
}

}  // namespace gradphi
