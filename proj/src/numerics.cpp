#include "gradphi/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "gradphi/errors.hpp"

namespace gradphi {

namespace {

// P_n(x) and P_n'(x) by the three-term recurrence.
std::pair<double, double> legendre(int n, double x) {
  double p0 = 1.0, p1 = x;
  for (int k = 2; k <= n; ++k) {
    double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
    p0 = p1;
    p1 = p2;
  }
  return {p1, n * (x * p1 - p0) / (x * x - 1.0)};
}

}  // namespace

QuadratureRule gauss_legendre(int n) {
  require(n >= 1, "gauss_legendre: n must be positive");
  QuadratureRule rule;
  rule.nodes.assign(n, 0.0);
  rule.weights.assign(n, 0.0);
  if (n == 1) {
    rule.weights[0] = 2.0;
    return rule;
  }
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    for (int it = 0; it < 100; ++it) {
      auto [p, dp] = legendre(n, x);
      double dx = p / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    double dp = legendre(n, x).second;
    double w = 2.0 / ((1.0 - x * x) * dp * dp);
    rule.nodes[i] = -x;
    rule.nodes[n - 1 - i] = x;
    rule.weights[i] = w;
    rule.weights[n - 1 - i] = w;
  }
  return rule;
}

QuadratureRule gauss_legendre(int n, double a, double b) {
  QuadratureRule rule = gauss_legendre(n);
  const double half = 0.5 * (b - a), mid = 0.5 * (a + b);
  for (int i = 0; i < n; ++i) {
    rule.nodes[i] = mid + half * rule.nodes[i];
    rule.weights[i] *= half;
  }
  return rule;
}

Estimate mean_and_stderr(std::span<const double> values) {
  Estimate e;
  e.samples = values.size();
  if (values.empty()) return e;
  double m = 0.0;
  for (double v : values) m += v;
  m /= values.size();
  e.mean = m;
  if (values.size() > 1) {
    double s2 = 0.0;
    for (double v : values) s2 += (v - m) * (v - m);
    s2 /= (values.size() - 1.0);
    e.stderr_ = std::sqrt(s2 / values.size());
  }
  return e;
}

Estimate batch_means(std::span<const double> series, int batches) {
  if (batches < 10 || series.size() < 10 || static_cast<std::size_t>(batches) > series.size()) {
    if (series.size() < 10)
      throw InsufficientSamples("batch_means: fewer than 10 batches available");
    batches = std::max(10, std::min<int>(batches, static_cast<int>(series.size())));
  }
  const std::size_t len = series.size() / batches;
  std::vector<double> means(batches, 0.0);
  for (int b = 0; b < batches; ++b) {
    double s = 0.0;
    for (std::size_t i = b * len; i < (b + 1) * len; ++i) s += series[i];
    means[b] = s / len;
  }
  Estimate e = mean_and_stderr(means);
  double total = 0.0;
  for (double v : series) total += v;
  e.mean = total / series.size();
  e.samples = series.size();
  return e;
}

LinearFit linear_fit(std::span<const double> x, std::span<const double> y) {
  std::vector<double> sigma(x.size(), 1.0);
  LinearFit f = weighted_linear_fit(x, y, sigma);
  // Rescale standard errors by the residual variance (unknown noise level).
  const std::size_t n = x.size();
  if (n > 2) {
    double rss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double r = y[i] - f.intercept - f.slope * x[i];
      rss += r * r;
    }
    double s = std::sqrt(rss / (n - 2.0));
    f.slope_stderr *= s;
    f.intercept_stderr *= s;
  } else {
    f.slope_stderr = f.intercept_stderr = 0.0;
  }
  return f;
}

LinearFit weighted_linear_fit(std::span<const double> x, std::span<const double> y,
                              std::span<const double> sigma) {
  require(x.size() == y.size() && x.size() == sigma.size(), "linear fit: size mismatch");
  require(x.size() >= 2, "linear fit: need at least two points");
  double S = 0, Sx = 0, Sy = 0, Sxx = 0, Sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    require(sigma[i] > 0, "linear fit: sigma must be positive");
    double w = 1.0 / (sigma[i] * sigma[i]);
    S += w;
    Sx += w * x[i];
    Sy += w * y[i];
    Sxx += w * x[i] * x[i];
    Sxy += w * x[i] * y[i];
  }
  double det = S * Sxx - Sx * Sx;
  if (!(std::abs(det) > 0)) throw NumericalFailure("linear fit: degenerate abscissae");
  LinearFit f;
  f.slope = (S * Sxy - Sx * Sy) / det;
  f.intercept = (Sxx * Sy - Sx * Sxy) / det;
  f.slope_stderr = std::sqrt(S / det);
  f.intercept_stderr = std::sqrt(Sxx / det);
  double ybar = 0.0;
  for (double v : y) ybar += v;
  ybar /= y.size();
  double ss_tot = 0.0, ss_res = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double r = y[i] - f.intercept - f.slope * x[i];
    ss_res += r * r;
    ss_tot += (y[i] - ybar) * (y[i] - ybar);
  }
  f.r_squared = ss_tot > 0 ? 1.0 - ss_res / ss_tot : 1.0;
  return f;
}

std::pair<double, double> wilson_interval(std::size_t k, std::size_t n, double z) {
  require(n > 0, "wilson_interval: n must be positive");
  const double ph = static_cast<double>(k) / n;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / n;
  const double centre = (ph + z2 / (2.0 * n)) / denom;
  const double half = z * std::sqrt(ph * (1.0 - ph) / n + z2 / (4.0 * n * n)) / denom;
  return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

double smootherstep(double s) {
  if (s <= 0.0) return 0.0;
  if (s >= 1.0) return 1.0;
  return s * s * s * (s * (6.0 * s - 15.0) + 10.0);
}

double smootherstep_derivative(double s) {
  if (s <= 0.0 || s >= 1.0) return 0.0;
  return 30.0 * s * s * (s - 1.0) * (s - 1.0);
}

double trapezoid(std::span<const double> t, std::span<const double> y) {
  require(t.size() == y.size(), "trapezoid: size mismatch");
  double s = 0.0;
  for (std::size_t i = 1; i < t.size(); ++i) s += 0.5 * (t[i] - t[i - 1]) * (y[i] + y[i - 1]);
  return s;
}

}  // namespace gradphi
