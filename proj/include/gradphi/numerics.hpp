#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

namespace gradphi {

struct QuadratureRule {
  std::vector<double> nodes;    // on [-1, 1]
  std::vector<double> weights;  // sum to 2
};

// n-point Gauss-Legendre rule, Newton iteration on P_n.
QuadratureRule gauss_legendre(int n);

// Same rule mapped to [a, b].
QuadratureRule gauss_legendre(int n, double a, double b);

struct Estimate {
  double mean = 0.0;
  double stderr_ = 0.0;
  std::size_t samples = 0;
};

// Batch-means estimate of the mean of a correlated series. The series is cut
// into `batches` contiguous blocks; the standard error is that of the block
// averages. Throws InsufficientSamples when fewer than 10 usable blocks.
Estimate batch_means(std::span<const double> series, int batches = 20);

// Mean and standard error from already-formed independent batch values.
Estimate mean_and_stderr(std::span<const double> values);

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_stderr = 0.0;
  double intercept_stderr = 0.0;
  double r_squared = 0.0;
};

// Ordinary least squares y = intercept + slope * x.
LinearFit linear_fit(std::span<const double> x, std::span<const double> y);

// Weighted least squares with known per-point standard deviations of y.
LinearFit weighted_linear_fit(std::span<const double> x, std::span<const double> y,
                              std::span<const double> sigma);

// Wilson score interval for k successes in n trials at normal quantile z.
std::pair<double, double> wilson_interval(std::size_t k, std::size_t n, double z = 1.96);

// C^2 ramp 0 -> 1 on [0, 1] (6s^5 - 15s^4 + 10s^3) and its derivative.
double smootherstep(double s);
double smootherstep_derivative(double s);

// Composite trapezoid of samples y at abscissae t.
double trapezoid(std::span<const double> t, std::span<const double> y);

}  // namespace gradphi
