#include "gradphi/homogenized.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>

#include "gradphi/errors.hpp"
#include "gradphi/noise.hpp"
#include "gradphi/numerics.hpp"

namespace gradphi {

SurfaceTensionTable::SurfaceTensionTable(const TableAxes& axes) : axes_(axes) {
  require(axes.dim >= 1 && axes.dim <= 4, "SurfaceTensionTable: dim must lie in [1, 4]");
  require(axes.p_max > 0, "SurfaceTensionTable: p_max must be positive");
  require(axes.nodes_per_axis >= 3 && axes.nodes_per_axis % 2 == 1,
          "SurfaceTensionTable: nodes_per_axis must be odd and at least 3");
  count_ = 1;
  for (int i = 0; i < axes.dim; ++i) count_ *= static_cast<std::size_t>(axes.nodes_per_axis);
  flux_.assign(count_ * axes.dim, 0.0);
  error_.assign(count_ * axes.dim, 0.0);
}

SurfaceTensionTable SurfaceTensionTable::from_function(
    const TableAxes& axes, const std::function<void(std::span<const double>, std::span<double>)>& F) {
  SurfaceTensionTable t(axes);
  std::vector<double> out(axes.dim), zero(axes.dim, 0.0);
  for (std::size_t k = 0; k < t.count_; ++k) {
    const std::vector<double> p = t.node(k);
    F(p, out);
    t.set_node(k, out, zero);
  }
  t.refresh();
  return t;
}

SurfaceTensionTable SurfaceTensionTable::identity(const TableAxes& axes, double c) {
  SurfaceTensionTable t = from_function(axes, [c](std::span<const double> p, std::span<double> out) {
    for (std::size_t i = 0; i < p.size(); ++i) out[i] = c * p[i];
  });
  t.potential = PotentialSpec::quadratic(c);
  return t;
}

double SurfaceTensionTable::spacing() const { return 2.0 * axes_.p_max / (axes_.nodes_per_axis - 1); }

double SurfaceTensionTable::axis_value(int k) const {
  const int m = (axes_.nodes_per_axis - 1) / 2;
  return (k - m) * spacing();
}

std::vector<int> SurfaceTensionTable::node_indices(std::size_t node) const {
  std::vector<int> idx(axes_.dim);
  for (int i = axes_.dim - 1; i >= 0; --i) {
    idx[i] = static_cast<int>(node % axes_.nodes_per_axis);
    node /= axes_.nodes_per_axis;
  }
  return idx;
}

std::size_t SurfaceTensionTable::node_of(std::span<const int> indices) const {
  std::size_t k = 0;
  for (int i = 0; i < axes_.dim; ++i) k = k * axes_.nodes_per_axis + indices[i];
  return k;
}

std::vector<double> SurfaceTensionTable::node(std::size_t node) const {
  const std::vector<int> idx = node_indices(node);
  std::vector<double> p(axes_.dim);
  for (int i = 0; i < axes_.dim; ++i) p[i] = axis_value(idx[i]);
  return p;
}

std::span<const double> SurfaceTensionTable::node_flux(std::size_t node) const {
  return {flux_.data() + node * axes_.dim, static_cast<std::size_t>(axes_.dim)};
}

std::span<const double> SurfaceTensionTable::node_error(std::size_t node) const {
  return {error_.data() + node * axes_.dim, static_cast<std::size_t>(axes_.dim)};
}

void SurfaceTensionTable::set_node(std::size_t node, std::span<const double> flux,
                                   std::span<const double> err) {
  for (int i = 0; i < axes_.dim; ++i) {
    flux_[node * axes_.dim + i] = flux[i];
    error_[node * axes_.dim + i] = err[i];
  }
}

bool SurfaceTensionTable::contains(std::span<const double> p) const {
  const double lim = axes_.p_max * (1.0 + 1e-12);
  for (double v : p)
    if (!(std::abs(v) <= lim)) return false;
  return true;
}

std::size_t SurfaceTensionTable::cell_of(std::span<const double> p, std::vector<int>& base,
                                         std::vector<double>& frac) const {
  const int d = axes_.dim, n = axes_.nodes_per_axis;
  if (static_cast<int>(p.size()) != d) throw DimensionMismatch("surface tension table: |p| != dim");
  if (!contains(p)) {
    std::ostringstream os;
    os << "slope (";
    for (int i = 0; i < d; ++i) os << (i ? ", " : "") << p[i];
    os << ") outside the table range [-" << axes_.p_max << ", " << axes_.p_max << "]^" << d;
    throw SlopeOutOfTable(os.str());
  }
  const double h = spacing();
  std::size_t cell = 0;
  for (int i = 0; i < d; ++i) {
    double x = (p[i] + axes_.p_max) / h;
    const double r = std::round(x);
    if (std::abs(x - r) < 1e-9) x = r;
    x = std::clamp(x, 0.0, static_cast<double>(n - 1));
    const int b = std::min(static_cast<int>(std::floor(x)), n - 2);
    base[i] = b;
    frac[i] = x - b;
    cell = cell * (n - 1) + b;
  }
  return cell;
}

void SurfaceTensionTable::flux_at(std::span<const double> p, std::span<double> out) const {
  const int d = axes_.dim;
  std::vector<int> base(d), idx(d);
  std::vector<double> frac(d);
  cell_of(p, base, frac);
  for (int i = 0; i < d; ++i) out[i] = 0.0;
  for (int c = 0; c < (1 << d); ++c) {
    double w = 1.0;
    for (int i = 0; i < d; ++i) {
      const bool up = (c >> i) & 1;
      w *= up ? frac[i] : 1.0 - frac[i];
      idx[i] = base[i] + (up ? 1 : 0);
    }
    if (w == 0.0) continue;
    const std::size_t k = node_of(idx);
    for (int i = 0; i < d; ++i) out[i] += w * flux_[k * d + i];
  }
}

void SurfaceTensionTable::refresh() {
  const int d = axes_.dim, n = axes_.nodes_per_axis;
  std::size_t cells = 1;
  for (int i = 0; i < d; ++i) cells *= static_cast<std::size_t>(n - 1);
  cell_bound_.assign(cells, 0.0);
  const double h = spacing();
  std::vector<int> base(d), a(d), b(d);
  std::vector<double> J(d * d);
  for (std::size_t cell = 0; cell < cells; ++cell) {
    std::size_t rest = cell;
    for (int i = d - 1; i >= 0; --i) {
      base[i] = static_cast<int>(rest % (n - 1));
      rest /= (n - 1);
    }
    std::fill(J.begin(), J.end(), 0.0);
    for (int c = 0; c < (1 << d); ++c) {
      for (int i = 0; i < d; ++i) a[i] = base[i] + ((c >> i) & 1);
      for (int j = 0; j < d; ++j) {
        if ((c >> j) & 1) continue;
        b = a;
        b[j] += 1;
        const std::size_t ka = node_of(a), kb = node_of(b);
        for (int i = 0; i < d; ++i)
          J[i * d + j] = std::max(J[i * d + j], std::abs(flux_[kb * d + i] - flux_[ka * d + i]) / h);
      }
    }
    double row = 0.0, col = 0.0;
    for (int i = 0; i < d; ++i) {
      double rs = 0.0, cs = 0.0;
      for (int j = 0; j < d; ++j) {
        rs += J[i * d + j];
        cs += J[j * d + i];
      }
      row = std::max(row, rs);
      col = std::max(col, cs);
    }
    cell_bound_[cell] = std::sqrt(row * col);
  }
}

double SurfaceTensionTable::local_bound(std::span<const double> p) const {
  require(!cell_bound_.empty(), "surface tension table: refresh() was not called");
  std::vector<int> base(axes_.dim);
  std::vector<double> frac(axes_.dim);
  return cell_bound_[cell_of(p, base, frac)];
}

double SurfaceTensionTable::max_bound() const {
  require(!cell_bound_.empty(), "surface tension table: refresh() was not called");
  return *std::max_element(cell_bound_.begin(), cell_bound_.end());
}

double SurfaceTensionTable::sigma(std::span<const double> p) const {
  static const QuadratureRule rule = gauss_legendre(16, 0.0, 1.0);
  const int d = axes_.dim;
  std::vector<double> q(d), F(d);
  double s = 0.0;
  for (std::size_t k = 0; k < rule.nodes.size(); ++k) {
    for (int i = 0; i < d; ++i) q[i] = rule.nodes[k] * p[i];
    flux_at(q, F);
    double dot = 0.0;
    for (int i = 0; i < d; ++i) dot += p[i] * F[i];
    s += rule.weights[k] * dot;
  }
  return s;
}

void SurfaceTensionTable::write(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  const int d = axes_.dim;
  os << "# gradphi surface tension table\n";
  os << "# version=" << kVersion << "\n";
  os << "# dim=" << d << "\n";
  os << "# variant=" << to_string(potential.variant) << "\n";
  os << std::setprecision(17);
  os << "# r=" << potential.r << "\n# R0=" << potential.R0 << "\n# c=" << potential.c << "\n";
  os << "# L=" << sample_L << "\n";
  os << "# p_max=" << axes_.p_max << "\n";
  os << "# nodes_per_axis=" << axes_.nodes_per_axis << "\n";
  os << "# ray_violations=" << ray_violations << "\n";
  for (int i = 0; i < d; ++i) os << (i ? "," : "") << "p" << i + 1;
  for (int i = 0; i < d; ++i) os << ",flux" << i + 1;
  for (int i = 0; i < d; ++i) os << ",err" << i + 1;
  os << "\n";
  for (std::size_t k = 0; k < count_; ++k) {
    const std::vector<double> p = node(k);
    for (int i = 0; i < d; ++i) os << (i ? "," : "") << p[i];
    for (int i = 0; i < d; ++i) os << "," << flux_[k * d + i];
    for (int i = 0; i < d; ++i) os << "," << error_[k * d + i];
    os << "\n";
  }
  if (!os) throw Error("write failed for '" + path + "'");
}

SurfaceTensionTable SurfaceTensionTable::read(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open '" + path + "'");
  std::map<std::string, std::string> meta;
  std::string line;
  std::streampos body = is.tellg();
  while (std::getline(is, line)) {
    if (line.rfind("#", 0) != 0) break;
    const auto eq = line.find('=');
    if (eq != std::string::npos) {
      std::string key = line.substr(1, eq - 1);
      key.erase(0, key.find_first_not_of(' '));
      meta[key] = line.substr(eq + 1);
    }
    body = is.tellg();
  }
  auto get = [&](const std::string& k) {
    const auto it = meta.find(k);
    if (it == meta.end()) throw FormatError("table '" + path + "': missing header key '" + k + "'");
    return it->second;
  };
  try {
    if (std::stoi(get("version")) != kVersion)
      throw FormatError("table '" + path + "': unsupported version " + get("version"));
    TableAxes axes;
    axes.dim = std::stoi(get("dim"));
    axes.p_max = std::stod(get("p_max"));
    axes.nodes_per_axis = std::stoi(get("nodes_per_axis"));
    SurfaceTensionTable t(axes);
    t.potential.variant = parse_potential_variant(get("variant"));
    t.potential.r = std::stod(get("r"));
    t.potential.R0 = std::stod(get("R0"));
    t.potential.c = std::stod(get("c"));
    t.sample_L = std::stoi(get("L"));
    t.ray_violations = std::stoul(get("ray_violations"));

    is.clear();
    is.seekg(body);
    std::getline(is, line);  // column names
    const int d = axes.dim;
    std::size_t k = 0;
    std::vector<double> vals;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      if (k >= t.count_) throw FormatError("table '" + path + "': too many rows");
      vals.clear();
      std::stringstream ss(line);
      std::string cell;
      while (std::getline(ss, cell, ',')) vals.push_back(std::stod(cell));
      if (static_cast<int>(vals.size()) != 3 * d) throw FormatError("table '" + path + "': bad row width");
      const std::vector<double> p = t.node(k);
      for (int i = 0; i < d; ++i)
        if (std::abs(vals[i] - p[i]) > 1e-9 * (1.0 + axes.p_max))
          throw FormatError("table '" + path + "': node coordinates do not match the header grid");
      t.set_node(k, std::span<const double>(vals).subspan(d, d), std::span<const double>(vals).subspan(2 * d, d));
      ++k;
    }
    if (k != t.count_) throw FormatError("table '" + path + "': too few rows");
    t.refresh();
    return t;
  } catch (const std::logic_error& e) {
    throw FormatError("table '" + path + "': " + e.what());
  }
}

namespace {

void enumerate_reps(int d, int m, std::vector<int>& cur, std::vector<std::vector<int>>& out) {
  if (static_cast<int>(cur.size()) == d) {
    out.push_back(cur);
    return;
  }
  const int hi = cur.empty() ? m : cur.back();
  for (int v = 0; v <= hi; ++v) {
    cur.push_back(v);
    enumerate_reps(d, m, cur, out);
    cur.pop_back();
  }
}

struct RepValue {
  std::vector<double> flux, err;
};

}  // namespace

SurfaceTensionTable build_sigma_table(const PotentialSpec& spec, const TorusGrid& sample_grid,
                                      const TableAxes& axes, const TableBuildOptions& opts) {
  SurfaceTensionTable table(axes);
  if (sample_grid.dim() != axes.dim) throw DimensionMismatch("build_sigma_table: grid dim != table dim");
  const int d = axes.dim;
  const int m = (axes.nodes_per_axis - 1) / 2;
  const double h = table.spacing();

  std::vector<std::vector<int>> reps;
  std::vector<int> cur;
  enumerate_reps(d, m, cur, reps);

  std::map<std::vector<int>, RepValue> values;
  for (std::size_t j = 0; j < reps.size(); ++j) {
    const std::vector<int>& r = reps[j];
    std::vector<double> p(d);
    bool zero = true;
    for (int i = 0; i < d; ++i) {
      p[i] = r[i] * h;
      zero = zero && r[i] == 0;
    }
    MonteCarloParams mc = opts.mc;
    mc.seed = derive_seed(opts.mc.seed, 2 * j);
    const VectorEstimate plus = surface_tension_gradient(spec, sample_grid, p, mc);
    RepValue v{std::vector<double>(d, 0.0), plus.stderr_};
    if (!zero) {
      std::vector<double> mp(d);
      for (int i = 0; i < d; ++i) mp[i] = -p[i];
      mc.seed = derive_seed(opts.mc.seed, 2 * j + 1);
      const VectorEstimate minus = surface_tension_gradient(spec, sample_grid, mp, mc);
      for (int i = 0; i < d; ++i) {
        const double comb = std::hypot(plus.stderr_[i], minus.stderr_[i]);
        if (std::abs(plus.mean[i] + minus.mean[i]) > opts.symmetry_tol * comb) {
          std::ostringstream os;
          os << "build_sigma_table: flux at p and -p disagree in component " << i << " at node " << j
             << " (" << plus.mean[i] << " vs " << minus.mean[i] << ", combined stderr " << comb << ")";
          throw SymmetryViolation(os.str());
        }
        v.flux[i] = 0.5 * (plus.mean[i] - minus.mean[i]);
        v.err[i] = 0.5 * comb;
      }
      // Average over the stabilizer: equal entries share a value, zero entries carry none.
      for (int a = 0; a < d;) {
        int b = a;
        while (b < d && r[b] == r[a]) ++b;
        double s = 0.0, e = 0.0;
        for (int i = a; i < b; ++i) {
          s += v.flux[i];
          e = std::max(e, v.err[i]);
        }
        for (int i = a; i < b; ++i) {
          v.flux[i] = r[a] == 0 ? 0.0 : s / (b - a);
          v.err[i] = e;
        }
        a = b;
      }
    }
    values.emplace(r, std::move(v));
    if (opts.progress) opts.progress(j + 1, reps.size());
  }

  std::vector<int> order(d), rep(d);
  std::vector<double> F(d), E(d);
  for (std::size_t k = 0; k < table.node_count(); ++k) {
    const std::vector<int> idx = table.node_indices(k);
    std::vector<int> s(d);
    for (int i = 0; i < d; ++i) s[i] = idx[i] - m;
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return std::abs(s[a]) > std::abs(s[b]); });
    for (int j = 0; j < d; ++j) rep[j] = std::abs(s[order[j]]);
    const RepValue& v = values.at(rep);
    for (int j = 0; j < d; ++j) {
      const int i = order[j];
      F[i] = (s[i] < 0 ? -1.0 : 1.0) * v.flux[j];
      E[i] = v.err[j];
    }
    table.set_node(k, F, E);
  }

  // p . F(p) along the rays through (1,..,1,0,..,0).
  for (int ones = 1; ones <= d; ++ones) {
    double prev = 0.0, prev_err = 0.0;
    for (int t = 1; t <= m; ++t) {
      std::vector<int> r(d, 0);
      for (int i = 0; i < ones; ++i) r[i] = t;
      const RepValue& v = values.at(r);
      double g = 0.0, e2 = 0.0;
      for (int i = 0; i < ones; ++i) {
        g += t * h * v.flux[i];
        e2 += (t * h * v.err[i]) * (t * h * v.err[i]);
      }
      if (g < prev - opts.ray_tol * std::sqrt(e2 + prev_err * prev_err)) ++table.ray_violations;
      prev = g;
      prev_err = std::sqrt(e2);
    }
  }

  table.potential = spec;
  table.sample_L = sample_grid.side();
  table.refresh();
  return table;
}

double table_slope_range(const Field& f, double safety) {
  const TorusGrid& g = f.grid;
  std::vector<double> grad(g.size() * g.dim());
  gradient_into(g, f.values, grad);
  double m = 0.0;
  for (double v : grad) m = std::max(m, std::abs(v));
  return safety * m;
}

HomogenizedFlux HomogenizedFlux::linear(int dim, double c) {
  HomogenizedFlux h;
  h.dim = dim;
  h.flux = [c](std::span<const double> p, std::span<double> out) {
    for (std::size_t i = 0; i < p.size(); ++i) out[i] = c * p[i];
  };
  h.bound = [c](std::span<const double>) { return c; };
  return h;
}

HomogenizedFlux HomogenizedFlux::from_table(std::shared_ptr<const SurfaceTensionTable> table) {
  require(table != nullptr, "HomogenizedFlux::from_table: null table");
  HomogenizedFlux h;
  h.dim = table->dim();
  h.flux = [table](std::span<const double> p, std::span<double> out) { table->flux_at(p, out); };
  h.bound = [table](std::span<const double> p) { return table->local_bound(p); };
  return h;
}

Field sample_on_torus(const TorusGrid& grid, const std::function<double(std::span<const double>)>& f) {
  Field u(grid);
  std::vector<double> x(grid.dim());
  for (std::size_t s = 0; s < grid.size(); ++s) {
    const std::vector<int> c = grid.coords(s);
    for (int i = 0; i < grid.dim(); ++i) x[i] = c[i] * grid.scale();
    u[s] = f(x);
  }
  return u;
}

namespace {

void check_unit_torus(const TorusGrid& g) {
  if (std::abs(g.side() * g.scale() - 1.0) > 1e-12)
    throw BadScale("homogenized solver: the grid must satisfy side * eps = 1");
}

}  // namespace

FieldSeries solve_homogenized(const HomogenizedFlux& flux, const Field& init, double T,
                              const HomogenizedOptions& opts) {
  const TorusGrid& g = init.grid;
  check_unit_torus(g);
  if (flux.dim != g.dim()) throw DimensionMismatch("solve_homogenized: flux dim != grid dim");
  require(T >= 0 && opts.dt > 0 && opts.cfl > 0, "solve_homogenized: bad T, dt or cfl");
  const std::size_t n = g.size();
  const int d = g.dim();
  const double out_dt = opts.output_every > 0 ? opts.output_every : opts.dt;
  const double inv_eps2 = 1.0 / (g.scale() * g.scale());

  std::vector<double> u = init.values, saved(n), grad(n * d), F(n * d), div(n);
  // Fills F from u and returns the rate 2d max bound / eps^2.
  auto evaluate = [&](const std::vector<double>& v) {
    gradient_into(g, v, grad);
    double bmax = 0.0;
    for (std::size_t x = 0; x < n; ++x) {
      const std::span<const double> p(grad.data() + x * d, d);
      flux.flux(p, std::span<double>(F.data() + x * d, d));
      bmax = std::max(bmax, flux.bound(p));
    }
    return 2.0 * d * bmax * inv_eps2;
  };

  FieldSeries series;
  series.times.push_back(0.0);
  series.frames.emplace_back(g, u);

  double t = 0.0;
  std::size_t out_index = 1;
  const double snap = 1e-10 * opts.dt;
  while (t < T - snap) {
    const double next_out = out_index * out_dt;
    const double h = std::max(0.0, std::min({opts.dt, T - t, next_out - t}));
    const double rate0 = evaluate(u);
    std::size_t m = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(h * rate0 / opts.cfl - 1e-12)));
    saved = u;
    for (;;) {
      if (m > opts.max_subdivision) throw NonFinite("homogenized solve: instability after maximum subdivision");
      const double hh = h / m;
      bool ok = true;
      for (std::size_t j = 0; j < m && ok; ++j) {
        const double rate = j == 0 ? rate0 : evaluate(u);
        // The bound moves with the gradient; refine if a substep leaves the stable range.
        if (j > 0 && hh * rate > 1.5 * opts.cfl) {
          ok = false;
          break;
        }
        divergence_into(g, F, div);
        for (std::size_t i = 0; i < n; ++i) u[i] += hh * div[i];
      }
      if (ok) break;
      u = saved;
      evaluate(u);
      m *= 2;
    }
    t += h;
    if (std::abs(t - next_out) <= snap) t = next_out;
    if (std::abs(t - T) <= snap) t = T;
    for (double v : u)
      if (!std::isfinite(v)) throw NonFinite("homogenized solve: non-finite state");
    if (t >= next_out - snap || t >= T - snap) {
      series.times.push_back(t);
      series.frames.emplace_back(g, u);
      if (t >= next_out - snap) ++out_index;
    }
  }
  return series;
}

double homogenized_energy(const SurfaceTensionTable& table, const Field& u) {
  const TorusGrid& g = u.grid;
  const int d = g.dim();
  std::vector<double> grad(g.size() * d);
  gradient_into(g, u.values, grad);
  double s = 0.0;
  for (std::size_t x = 0; x < g.size(); ++x) s += table.sigma(std::span<const double>(grad.data() + x * d, d));
  return std::pow(g.scale(), d) * s;
}

DiscretizationReport discretization_error_check(const HomogenizedFlux& flux, int dim,
                                                const std::function<double(std::span<const double>)>& f,
                                                std::span<const double> eps_list, double T,
                                                const HomogenizedOptions& opts) {
  require(!eps_list.empty(), "discretization_error_check: empty eps list");
  std::vector<int> sides;
  for (double e : eps_list) {
    require(e > 0, "discretization_error_check: eps must be positive");
    const int N = static_cast<int>(std::llround(1.0 / e));
    if (std::abs(N * e - 1.0) > 1e-9) throw BadScale("discretization_error_check: 1/eps must be an integer");
    sides.push_back(N);
  }
  const int Nf = *std::max_element(sides.begin(), sides.end());
  for (int N : sides)
    if (Nf % N != 0) throw BadScale("discretization_error_check: the finest grid must refine every coarser one");

  std::vector<FieldSeries> sols;
  for (int N : sides) {
    const TorusGrid g(dim, N, 1.0 / N);
    sols.push_back(solve_homogenized(flux, sample_on_torus(g, f), T, opts));
  }
  const FieldSeries& fine = sols[std::max_element(sides.begin(), sides.end()) - sides.begin()];

  DiscretizationReport rep;
  for (std::size_t k = 0; k < sides.size(); ++k) {
    const FieldSeries& s = sols[k];
    if (s.times.size() != fine.times.size())
      throw NumericalFailure("discretization_error_check: output times differ between resolutions");
    const int N = sides[k], ratio = Nf / N;
    const TorusGrid& gc = s.frames[0].grid;
    const TorusGrid& gf = fine.frames[0].grid;
    std::vector<double> e2(s.times.size());
    std::vector<int> fc(dim);
    for (std::size_t t = 0; t < s.times.size(); ++t) {
      double acc = 0.0;
      for (std::size_t y = 0; y < gc.size(); ++y) {
        const std::vector<int> c = gc.coords(y);
        for (int i = 0; i < dim; ++i) fc[i] = c[i] * ratio;
        const double diff = s.frames[t][y] - fine.frames[t][gf.index(fc)];
        acc += diff * diff;
      }
      e2[t] = std::pow(1.0 / N, dim) * acc;
    }
    const double err = s.times.size() > 1 ? std::sqrt(trapezoid(s.times, e2)) : std::sqrt(e2[0]);
    rep.rows.push_back({1.0 / N, err});
  }

  std::vector<DiscretizationRow> sorted = rep.rows;
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.eps > b.eps; });
  rep.monotone = true;
  for (std::size_t k = 0; k + 1 < sorted.size(); ++k) rep.monotone = rep.monotone && sorted[k + 1].error < sorted[k].error;
  std::vector<double> lx, ly;
  for (const auto& r : sorted)
    if (r.error > 0) {
      lx.push_back(std::log(r.eps));
      ly.push_back(std::log(r.error));
    }
  if (lx.size() >= 2) rep.order = linear_fit(lx, ly).slope;
  return rep;
}

}  // namespace gradphi
