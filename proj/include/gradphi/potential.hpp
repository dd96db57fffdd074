#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace gradphi {

enum class PotentialVariant { DegenerateRadial, Quadratic };

// V(x) = c (|x| - R0)_+^r for the degenerate radial family, c |x|^2 / 2 for
// the quadratic one.
struct PotentialSpec {
  PotentialVariant variant = PotentialVariant::DegenerateRadial;
  double r = 3.0;
  double R0 = 1.0;
  double c = 1.0;

  static PotentialSpec degenerate_radial(double r, double R0, double c = 1.0);
  static PotentialSpec quadratic(double c = 1.0);
  void validate() const;
  std::string describe() const;
};

PotentialVariant parse_potential_variant(const std::string& name);
std::string to_string(PotentialVariant v);

struct PotentialValue {
  double value = 0.0;
  std::vector<double> gradient;  // d
  std::vector<double> hessian;   // d*d row-major
};

// Inlined evaluation of D_pV and D^2_pV for the stepping loops. Integer
// exponents are evaluated by repeated multiplication.
class PotentialKernel {
 public:
  explicit PotentialKernel(const PotentialSpec& spec)
      : quadratic_(spec.variant == PotentialVariant::Quadratic),
        c_(spec.c),
        r_(spec.r),
        R0_(spec.R0),
        int_r_(std::abs(spec.r - std::round(spec.r)) < 1e-15 && spec.r <= 12
                   ? static_cast<int>(std::round(spec.r))
                   : 0) {}

  // (u)^k with k = r - m.
  double upow(double u, int m) const {
    if (int_r_ > 0) {
      double v = 1.0;
      for (int i = 0; i < int_r_ - m; ++i) v *= u;
      return v;
    }
    return std::pow(u, r_ - m);
  }

  double value(const double* x, int d) const {
    double t2 = 0.0;
    for (int i = 0; i < d; ++i) t2 += x[i] * x[i];
    if (quadratic_) return 0.5 * c_ * t2;
    const double t = std::sqrt(t2);
    return t <= R0_ ? 0.0 : c_ * upow(t - R0_, 0);
  }

  // out = D_pV(x); returns |x|.
  double flux(const double* x, int d, double* out) const {
    double t2 = 0.0;
    for (int i = 0; i < d; ++i) t2 += x[i] * x[i];
    const double t = std::sqrt(t2);
    if (quadratic_) {
      for (int i = 0; i < d; ++i) out[i] = c_ * x[i];
      return t;
    }
    if (t <= R0_ || t == 0.0) {
      for (int i = 0; i < d; ++i) out[i] = 0.0;
      return t;
    }
    const double f = c_ * r_ * upow(t - R0_, 1) / t;
    for (int i = 0; i < d; ++i) out[i] = f * x[i];
    return t;
  }

  // Radial and tangential eigenvalues at |x| = t.
  void eigen(double t, double& radial, double& tangential) const {
    if (quadratic_) {
      radial = tangential = c_;
      return;
    }
    if (t <= R0_ || t == 0.0) {
      radial = tangential = 0.0;
      return;
    }
    const double u = t - R0_;
    const double u2 = upow(u, 2);
    radial = c_ * r_ * (r_ - 1.0) * u2;
    tangential = c_ * r_ * u2 * u / t;
  }

  // out (d*d) = D^2_pV(x).
  void hessian(const double* x, int d, double* out) const {
    double t2 = 0.0;
    for (int i = 0; i < d; ++i) t2 += x[i] * x[i];
    const double t = std::sqrt(t2);
    double rad, tan;
    eigen(t, rad, tan);
    const double diff = t > 0 ? (rad - tan) / t2 : 0.0;
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) out[i * d + j] = (i == j ? tan : 0.0) + diff * x[i] * x[j];
  }

  // 1 v largest eigenvalue.
  double lambda_plus(const double* x, int d) const {
    double t2 = 0.0;
    for (int i = 0; i < d; ++i) t2 += x[i] * x[i];
    double rad, tan;
    eigen(std::sqrt(t2), rad, tan);
    return std::max(1.0, d == 1 ? rad : std::max(rad, tan));
  }

 private:
  bool quadratic_;
  double c_, r_, R0_;
  int int_r_;
};

PotentialValue potential_eval(const PotentialSpec& spec, std::span<const double> x);

double potential_value(const PotentialSpec& spec, std::span<const double> x);
void potential_gradient(const PotentialSpec& spec, std::span<const double> x,
                        std::span<double> out);
void potential_hessian(const PotentialSpec& spec, std::span<const double> x,
                       std::span<double> out);

// Radial and tangential Hessian eigenvalues at |x| = t.
struct RadialEigen {
  double radial = 0.0;
  double tangential = 0.0;
};
RadialEigen radial_eigenvalues(const PotentialSpec& spec, double t);

// 1 v (largest eigenvalue of D^2 V(p)).
double lambda_plus(const PotentialSpec& spec, std::span<const double> p);

struct LambdaMinusOptions {
  int coarse_radial = 41;     // grid points along p
  int coarse_transverse = 21; // grid points across p (half plane)
  int refine_starts = 4;
  int refine_iterations = 60;
  int segment_nodes = 32;
};

// inf over q and unit xi of the segment average of xi . D^2V xi. The search is
// over q in the plane spanned by p and a transverse direction; q = p is always
// evaluated, so the result never exceeds the smallest eigenvalue at p.
double lambda_minus(const PotentialSpec& spec, std::span<const double> p,
                    const LambdaMinusOptions& opts = {});

// Segment-averaged smallest eigenvalue for a given endpoint q.
double segment_min_eigenvalue(const PotentialSpec& spec, std::span<const double> p,
                              std::span<const double> q, int nodes = 32);

// Lambda_minus depends on |p| only for the radial family; this caches it on a
// uniform radius grid and interpolates linearly.
class LambdaMinusTable {
 public:
  LambdaMinusTable() = default;
  LambdaMinusTable(const PotentialSpec& spec, int dim, double max_radius, int points = 257);
  double operator()(double radius) const;
  double operator()(std::span<const double> p) const;
  double max_radius() const { return max_radius_; }

 private:
  PotentialSpec spec_;
  int dim_ = 1;
  double max_radius_ = 0.0;
  double step_ = 0.0;
  std::vector<double> values_;
};

struct AssumptionReport {
  double c_minus = 0.0;      // min over samples of lambda_min / |x|^(r-2)
  double c_plus = 0.0;       // max over samples of lambda_max / |x|^(r-2)
  double min_eigenvalue = 0.0;
  double closed_form_c_minus = 0.0;
  double closed_form_c_plus = 0.0;
  double max_sampler_discrepancy = 0.0;  // |eigen solver - closed form|
  double c_lower = 0.0;      // constant c used for the R1 search
  double R1 = 0.0;           // empirical; NaN if the bound never holds
  std::size_t samples = 0;
};

// Samples |x| uniformly in [r_min, r_max] with random directions. Throws
// NumericalFailure if a sampled Hessian is indefinite.
AssumptionReport verify_assumption_A(const PotentialSpec& spec, int dim, double r_min,
                                     double r_max, int n_samples, std::uint64_t seed = 1,
                                     double c_lower = 0.0);

}  // namespace gradphi
