#include "gradphi/potential.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "gradphi/errors.hpp"
#include "gradphi/numerics.hpp"

namespace gradphi {

PotentialSpec PotentialSpec::degenerate_radial(double r, double R0, double c) {
  PotentialSpec s{PotentialVariant::DegenerateRadial, r, R0, c};
  s.validate();
  return s;
}

PotentialSpec PotentialSpec::quadratic(double c) {
  PotentialSpec s{PotentialVariant::Quadratic, 2.0, 0.0, c};
  s.validate();
  return s;
}

void PotentialSpec::validate() const {
  require(c > 0 && std::isfinite(c), "potential: c must be positive");
  if (variant == PotentialVariant::DegenerateRadial) {
    require(r > 2 && std::isfinite(r), "potential: degenerate_radial needs r > 2");
    require(R0 >= 0 && std::isfinite(R0), "potential: R0 must be non-negative");
  }
}

std::string PotentialSpec::describe() const {
  std::ostringstream os;
  os << to_string(variant) << "(r=" << r << ", R0=" << R0 << ", c=" << c << ")";
  return os.str();
}

PotentialVariant parse_potential_variant(const std::string& name) {
  if (name == "degenerate_radial") return PotentialVariant::DegenerateRadial;
  if (name == "quadratic") return PotentialVariant::Quadratic;
  throw ConfigError("unknown potential variant '" + name + "'");
}

std::string to_string(PotentialVariant v) {
  return v == PotentialVariant::Quadratic ? "quadratic" : "degenerate_radial";
}

namespace {

double norm(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return std::sqrt(s);
}

}  // namespace

RadialEigen radial_eigenvalues(const PotentialSpec& spec, double t) {
  if (spec.variant == PotentialVariant::Quadratic) return {spec.c, spec.c};
  if (t <= spec.R0) return {0.0, 0.0};
  const double u = t - spec.R0;
  const double r = spec.r;
  return {spec.c * r * (r - 1.0) * std::pow(u, r - 2.0), spec.c * r * std::pow(u, r - 1.0) / t};
}

double potential_value(const PotentialSpec& spec, std::span<const double> x) {
  const double t = norm(x);
  if (spec.variant == PotentialVariant::Quadratic) return 0.5 * spec.c * t * t;
  if (t <= spec.R0) return 0.0;
  return spec.c * std::pow(t - spec.R0, spec.r);
}

void potential_gradient(const PotentialSpec& spec, std::span<const double> x,
                        std::span<double> out) {
  if (spec.variant == PotentialVariant::Quadratic) {
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = spec.c * x[i];
    return;
  }
  const double t = norm(x);
  if (t <= spec.R0 || t == 0.0) {
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = 0.0;
    return;
  }
  const double f = spec.c * spec.r * std::pow(t - spec.R0, spec.r - 1.0) / t;
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f * x[i];
}

void potential_hessian(const PotentialSpec& spec, std::span<const double> x,
                       std::span<double> out) {
  const std::size_t d = x.size();
  const double t = norm(x);
  const RadialEigen e = radial_eigenvalues(spec, t);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = (i == j) ? e.tangential : 0.0;
  if (t > 0.0 && e.radial != e.tangential) {
    const double diff = e.radial - e.tangential;
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) out[i * d + j] += diff * x[i] * x[j] / (t * t);
  }
}

PotentialValue potential_eval(const PotentialSpec& spec, std::span<const double> x) {
  PotentialValue v;
  v.value = potential_value(spec, x);
  v.gradient.resize(x.size());
  v.hessian.resize(x.size() * x.size());
  potential_gradient(spec, x, v.gradient);
  potential_hessian(spec, x, v.hessian);
  return v;
}

double lambda_plus(const PotentialSpec& spec, std::span<const double> p) {
  const RadialEigen e = radial_eigenvalues(spec, norm(p));
  const double top = p.size() == 1 ? e.radial : std::max(e.radial, e.tangential);
  return std::max(1.0, top);
}

double segment_min_eigenvalue(const PotentialSpec& spec, std::span<const double> p,
                              std::span<const double> q, int nodes) {
  const std::size_t d = p.size();
  // Split [0,1] where |p + t(q-p)| crosses R0, where the Hessian has a kink.
  std::vector<double> cuts{0.0, 1.0};
  if (spec.variant == PotentialVariant::DegenerateRadial && spec.R0 > 0) {
    double A = 0, B = 0, C = -spec.R0 * spec.R0;
    for (std::size_t i = 0; i < d; ++i) {
      const double w = q[i] - p[i];
      A += w * w;
      B += p[i] * w;
      C += p[i] * p[i];
    }
    const double disc = B * B - A * C;
    if (A > 0 && disc > 0) {
      const double s = std::sqrt(disc);
      for (double t : {(-B - s) / A, (-B + s) / A})
        if (t > 0 && t < 1) cuts.push_back(t);
    }
    std::sort(cuts.begin(), cuts.end());
  }
  require(d >= 1 && d <= 8, "segment_min_eigenvalue: dimension must be in [1, 8]");
  thread_local int cached_nodes = 0;
  thread_local QuadratureRule base;
  if (cached_nodes != nodes) {
    base = gauss_legendre(nodes);
    cached_nodes = nodes;
  }
  const PotentialKernel kernel(spec);
  Eigen::MatrixXd avg = Eigen::MatrixXd::Zero(d, d);
  double x[8], h[64];
  for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
    const double half = 0.5 * (cuts[k + 1] - cuts[k]), mid = 0.5 * (cuts[k + 1] + cuts[k]);
    if (half <= 0) continue;
    for (int n = 0; n < nodes; ++n) {
      const double t = mid + half * base.nodes[n];
      const double w = half * base.weights[n];
      for (std::size_t i = 0; i < d; ++i) x[i] = (1 - t) * p[i] + t * q[i];
      kernel.hessian(x, static_cast<int>(d), h);
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) avg(i, j) += w * h[i * d + j];
    }
  }
  if (d == 1) return avg(0, 0);
  if (d == 2) {
    const double m = 0.5 * (avg(0, 0) + avg(1, 1)), e = 0.5 * (avg(0, 0) - avg(1, 1));
    return m - std::sqrt(e * e + avg(0, 1) * avg(0, 1));
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(avg, Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0);
}

double lambda_minus(const PotentialSpec& spec, std::span<const double> p,
                    const LambdaMinusOptions& opts) {
  if (spec.variant == PotentialVariant::Quadratic) return spec.c;
  const std::size_t d = p.size();
  const double pn = norm(p);

  // Orthonormal pair (e1 along p, e2 transverse) spanning the search plane.
  std::vector<double> e1(d, 0.0), e2(d, 0.0);
  if (pn > 0) {
    for (std::size_t i = 0; i < d; ++i) e1[i] = p[i] / pn;
  } else {
    e1[0] = 1.0;
  }
  if (d >= 2) {
    std::size_t axis = 0;
    for (std::size_t i = 1; i < d; ++i)
      if (std::abs(e1[i]) < std::abs(e1[axis])) axis = i;
    e2[axis] = 1.0;
    double proj = e1[axis];
    double n2 = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      e2[i] -= proj * e1[i];
      n2 += e2[i] * e2[i];
    }
    for (double& v : e2) v /= std::sqrt(n2);
  }

  std::vector<double> q(d);
  auto eval = [&](double a, double b) {
    for (std::size_t i = 0; i < d; ++i) q[i] = a * e1[i] + b * e2[i];
    return segment_min_eigenvalue(spec, p, q, opts.segment_nodes);
  };

  const double A = 2.0 * (pn + spec.R0) + 2.0;
  const int na = opts.coarse_radial;
  const int nb = d >= 2 ? opts.coarse_transverse : 1;
  const double da = 2.0 * A / (na - 1);
  const double db = nb > 1 ? A / (nb - 1) : 0.0;

  struct Cand {
    double value, a, b;
  };
  std::vector<Cand> cands;
  cands.push_back({eval(pn, 0.0), pn, 0.0});
  for (int i = 0; i < na; ++i)
    for (int j = 0; j < nb; ++j) {
      const double a = -A + i * da, b = j * db;
      cands.push_back({eval(a, b), a, b});
    }
  std::partial_sort(cands.begin(), cands.begin() + std::min<std::size_t>(opts.refine_starts, cands.size()),
                    cands.end(), [](const Cand& x, const Cand& y) { return x.value < y.value; });
  double best = cands.front().value;

  // Pattern search around the best coarse candidates.
  const int starts = std::min<int>(opts.refine_starts, static_cast<int>(cands.size()));
  for (int s = 0; s < starts; ++s) {
    Cand c = cands[s];
    double step_a = da, step_b = nb > 1 ? db : 0.0;
    for (int it = 0; it < opts.refine_iterations && (step_a > 1e-10); ++it) {
      bool moved = false;
      const double moves[4][2] = {{step_a, 0}, {-step_a, 0}, {0, step_b}, {0, -step_b}};
      for (const auto& m : moves) {
        if (m[0] == 0 && m[1] == 0) continue;
        const double a = c.a + m[0], b = std::max(0.0, c.b + m[1]);
        const double v = eval(a, b);
        if (v < c.value) {
          c = {v, a, b};
          moved = true;
        }
      }
      if (!moved) {
        step_a *= 0.5;
        step_b *= 0.5;
      }
    }
    best = std::min(best, c.value);
  }
  return std::max(0.0, best);
}

LambdaMinusTable::LambdaMinusTable(const PotentialSpec& spec, int dim, double max_radius,
                                   int points)
    : spec_(spec), dim_(dim), max_radius_(max_radius) {
  require(points >= 2 && max_radius > 0, "LambdaMinusTable: bad grid");
  step_ = max_radius / (points - 1);
  values_.resize(points);
  std::vector<double> p(dim, 0.0);
  for (int k = 0; k < points; ++k) {
    p[0] = k * step_;
    values_[k] = lambda_minus(spec, p);
  }
}

double LambdaMinusTable::operator()(double radius) const {
  if (radius >= max_radius_) {
    std::vector<double> p(dim_, 0.0);
    p[0] = radius;
    return lambda_minus(spec_, p);
  }
  const double u = radius / step_;
  const std::size_t k = static_cast<std::size_t>(u);
  const double w = u - k;
  return (1 - w) * values_[k] + w * values_[std::min(k + 1, values_.size() - 1)];
}

double LambdaMinusTable::operator()(std::span<const double> p) const {
  return (*this)(norm(p));
}

AssumptionReport verify_assumption_A(const PotentialSpec& spec, int dim, double r_min,
                                     double r_max, int n_samples, std::uint64_t seed,
                                     double c_lower) {
  require(dim >= 1 && r_min > 0 && r_max >= r_min && n_samples > 0,
          "verify_assumption_A: bad arguments");
  const double expo = spec.variant == PotentialVariant::Quadratic ? 0.0 : spec.r - 2.0;
  if (spec.variant == PotentialVariant::DegenerateRadial)
    require(r_min > spec.R0, "verify_assumption_A: sample radii must exceed R0");

  AssumptionReport rep;
  rep.samples = n_samples;

  // Closed-form envelope on a dense radius scan.
  rep.closed_form_c_minus = std::numeric_limits<double>::infinity();
  rep.closed_form_c_plus = 0.0;
  const int scan = 20001;
  for (int k = 0; k < scan; ++k) {
    const double t = r_min + (r_max - r_min) * k / (scan - 1.0);
    const RadialEigen e = radial_eigenvalues(spec, t);
    const double lo = dim == 1 ? e.radial : std::min(e.radial, e.tangential);
    const double hi = dim == 1 ? e.radial : std::max(e.radial, e.tangential);
    const double w = std::pow(t, expo);
    rep.closed_form_c_minus = std::min(rep.closed_form_c_minus, lo / w);
    rep.closed_form_c_plus = std::max(rep.closed_form_c_plus, hi / w);
  }

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> radius(r_min, r_max);
  std::normal_distribution<double> gauss;
  rep.c_minus = std::numeric_limits<double>::infinity();
  rep.min_eigenvalue = std::numeric_limits<double>::infinity();
  std::vector<double> x(dim), h(dim * dim);
  std::vector<double> radii;
  for (int s = 0; s < n_samples; ++s) {
    double n2 = 0.0;
    for (double& v : x) {
      v = gauss(rng);
      n2 += v * v;
    }
    const double t = radius(rng);
    for (double& v : x) v *= t / std::sqrt(n2);
    radii.push_back(t);
    potential_hessian(spec, x, h);
    Eigen::Map<const Eigen::MatrixXd> H(h.data(), dim, dim);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H, Eigen::EigenvaluesOnly);
    const double lo = es.eigenvalues()(0), hi = es.eigenvalues()(dim - 1);
    const double scale = std::max(1.0, std::abs(hi));
    if (lo < -1e-10 * scale)
      throw NumericalFailure("verify_assumption_A: indefinite Hessian (convexity violation)");
    const RadialEigen e = radial_eigenvalues(spec, t);
    const double cf_lo = dim == 1 ? e.radial : std::min(e.radial, e.tangential);
    const double cf_hi = dim == 1 ? e.radial : std::max(e.radial, e.tangential);
    rep.max_sampler_discrepancy =
        std::max({rep.max_sampler_discrepancy, std::abs(lo - cf_lo), std::abs(hi - cf_hi)});
    const double w = std::pow(t, expo);
    rep.c_minus = std::min(rep.c_minus, lo / w);
    rep.c_plus = std::max(rep.c_plus, hi / w);
    rep.min_eigenvalue = std::min(rep.min_eigenvalue, lo);
  }

  // R1: smallest 2*rho such that every sampled |p| >= rho satisfies
  // Lambda_-(p) >= c |p|_+^(r-2) + 1, with |p|_+ = |p| + 1.
  rep.c_lower = c_lower > 0 ? c_lower : 0.25 * rep.closed_form_c_minus;
  std::sort(radii.begin(), radii.end());
  const int probes = std::min<int>(n_samples, 64);
  std::vector<double> probe_r;
  for (int k = 0; k < probes; ++k)
    probe_r.push_back(radii[static_cast<std::size_t>(k * (radii.size() - 1.0) / std::max(1, probes - 1))]);
  double rho = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> p(dim, 0.0);
  for (int k = probes - 1; k >= 0; --k) {
    p[0] = probe_r[k];
    const double lm = lambda_minus(spec, p);
    if (lm >= rep.c_lower * std::pow(probe_r[k] + 1.0, expo) + 1.0)
      rho = probe_r[k];
    else
      break;
  }
  rep.R1 = std::isnan(rho) ? rho : std::max(2.0 * rho, 2.0 + 1e-12);
  return rep;
}

}  // namespace gradphi
