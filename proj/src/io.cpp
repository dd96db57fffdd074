#include "gradphi/io.hpp"

#include <openssl/evp.h>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>

#include "gradphi/errors.hpp"

#ifndef GRADPHI_VERSION
#define GRADPHI_VERSION "0.0.0"
#endif

namespace gradphi {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(trim(cur));
  return out;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

Config Config::parse(const std::string& text) {
  boost::property_tree::ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.message() + " at line " + std::to_string(e.line()));
  }
  Config c;
  for (const auto& [key, node] : tree) {
    if (node.empty()) {
      c.raw_[key] = trim(node.data());
      continue;
    }
    for (const auto& [sub, leaf] : node) {
      if (!leaf.empty()) throw ConfigError("config: nested sections are not supported under " + key);
      c.raw_[key + "." + sub] = trim(leaf.data());
    }
  }
  return c;
}

Config Config::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

const std::string* Config::find(const std::string& key) const {
  used_.insert(key);
  const auto it = raw_.find(key);
  return it == raw_.end() ? nullptr : &it->second;
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
  const std::string* v = find(key);
  const std::string out = v ? *v : fallback;
  effective_[key] = out;
  return out;
}

double parse_number(const std::string& text, const std::string& field) {
  const std::string t = trim(text);
  const auto slash = t.find('/');
  auto one = [&](const std::string& s) {
    double v = 0.0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || r.ec != std::errc() || r.ptr != s.data() + s.size() || !std::isfinite(v))
      throw ConfigError(field + ": expected a number, got '" + text + "'");
    return v;
  };
  if (slash == std::string::npos) return one(t);
  const double den = one(trim(t.substr(slash + 1)));
  if (den == 0.0) throw ConfigError(field + ": zero denominator in '" + text + "'");
  return one(trim(t.substr(0, slash))) / den;
}

double Config::get_double(const std::string& key, double fallback) const {
  const std::string* v = find(key);
  const double out = v ? parse_number(*v, key) : fallback;
  effective_[key] = v ? *v : format_double(fallback);
  return out;
}

long long Config::get_int(const std::string& key, long long fallback) const {
  const std::string* v = find(key);
  long long out = fallback;
  if (v) {
    const std::string t = trim(*v);
    const auto r = std::from_chars(t.data(), t.data() + t.size(), out);
    if (t.empty() || r.ec != std::errc() || r.ptr != t.data() + t.size())
      throw ConfigError(key + ": expected an integer, got '" + *v + "'");
  }
  effective_[key] = std::to_string(out);
  return out;
}

std::uint64_t Config::get_u64(const std::string& key, std::uint64_t fallback) const {
  const std::string* v = find(key);
  std::uint64_t out = fallback;
  if (v) {
    const std::string t = trim(*v);
    const auto r = std::from_chars(t.data(), t.data() + t.size(), out);
    if (t.empty() || r.ec != std::errc() || r.ptr != t.data() + t.size())
      throw ConfigError(key + ": expected an unsigned integer, got '" + *v + "'");
  }
  effective_[key] = std::to_string(out);
  return out;
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  const std::string* v = find(key);
  bool out = fallback;
  if (v) {
    std::string t = trim(*v);
    std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
    if (t == "true" || t == "1" || t == "yes" || t == "on")
      out = true;
    else if (t == "false" || t == "0" || t == "no" || t == "off")
      out = false;
    else
      throw ConfigError(key + ": expected a boolean, got '" + *v + "'");
  }
  effective_[key] = out ? "true" : "false";
  return out;
}

std::vector<double> Config::get_doubles(const std::string& key, const std::vector<double>& fallback) const {
  const std::string* v = find(key);
  std::vector<double> out = fallback;
  if (v) {
    out.clear();
    for (const std::string& s : split(*v, ',')) out.push_back(parse_number(s, key));
    if (out.empty()) throw ConfigError(key + ": empty list");
  }
  std::string eff;
  for (std::size_t i = 0; i < out.size(); ++i) eff += (i ? "," : "") + format_double(out[i]);
  effective_[key] = v ? *v : eff;
  return out;
}

std::vector<int> Config::get_ints(const std::string& key, const std::vector<int>& fallback) const {
  const std::string* v = find(key);
  std::vector<int> out = fallback;
  if (v) {
    out.clear();
    for (const std::string& s : split(*v, ',')) {
      int x = 0;
      const auto r = std::from_chars(s.data(), s.data() + s.size(), x);
      if (s.empty() || r.ec != std::errc() || r.ptr != s.data() + s.size())
        throw ConfigError(key + ": expected integers, got '" + *v + "'");
      out.push_back(x);
    }
  }
  std::string eff;
  for (std::size_t i = 0; i < out.size(); ++i) eff += (i ? "," : "") + std::to_string(out[i]);
  effective_[key] = eff;
  return out;
}

std::vector<std::string> Config::unused_keys() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : raw_)
    if (!used_.count(k)) out.push_back(k);
  return out;
}

std::string Config::canonical() const {
  std::string out;
  for (const auto& [k, v] : raw_) out += k + "=" + v + "\n";
  return out;
}

std::string sha256_hex(const std::string& bytes) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), md, &len) != 1)
    throw Error("sha256: digest failed");
  std::ostringstream out;
  for (unsigned int i = 0; i < len; ++i) out << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return out.str();
}

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("sha256: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return sha256_hex(ss.str());
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows, const std::string& manifest_ref) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("write_csv: cannot open " + path);
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << "\n";
  for (const auto& row : rows) {
    if (row.size() != header.size()) throw DimensionMismatch("write_csv: row width != header width");
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << format_double(row[i]);
    out << "\n";
  }
  out << "# manifest: " << manifest_ref << "\n";
  if (!out) throw FormatError("write_csv: write failed for " + path);
}

std::size_t CsvTable::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw FormatError("csv: missing column " + name);
  return static_cast<std::size_t>(it - header.begin());
}

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("read_csv: cannot open " + path);
  CsvTable t;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.rfind("# manifest:", 0) == 0) {
      t.manifest = trim(line.substr(11));
      continue;
    }
    if (trim(line).empty() || line[0] == '#') continue;
    if (t.header.empty()) {
      t.header = split(line, ',');
      continue;
    }
    std::vector<double> row;
    for (const std::string& s : split(line, ','))
      row.push_back(parse_number(s, path + ":" + std::to_string(lineno)));
    if (row.size() != t.header.size()) throw FormatError(path + ":" + std::to_string(lineno) + ": row width != header width");
    t.rows.push_back(std::move(row));
  }
  if (t.header.empty()) throw FormatError("read_csv: no header in " + path);
  return t;
}

namespace {

constexpr char kMagic[8] = {'G', 'P', 'H', 'I', 'T', 'R', 'J', '1'};

template <class T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw FormatError("read_trajectory: truncated file");
  return v;
}

}  // namespace

void write_trajectory(const std::string& path, const Trajectory& traj) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("write_trajectory: cannot open " + path);
  out.write(kMagic, sizeof kMagic);
  put<std::int32_t>(out, traj.grid.dim());
  put<std::int32_t>(out, traj.grid.side());
  put<double>(out, traj.grid.scale());
  put<std::int32_t>(out, static_cast<std::int32_t>(traj.potential.variant));
  put<double>(out, traj.potential.r);
  put<double>(out, traj.potential.R0);
  put<double>(out, traj.potential.c);
  for (int i = 0; i < traj.grid.dim(); ++i) put<double>(out, i < static_cast<int>(traj.slope.size()) ? traj.slope[i] : 0.0);
  put<double>(out, traj.dt);
  put<std::uint64_t>(out, traj.frames.size());
  for (const Frame& f : traj.frames) {
    if (f.phi.size() != traj.grid.size()) throw DimensionMismatch("write_trajectory: frame size != grid size");
    put<double>(out, f.time);
    put<std::int64_t>(out, f.step);
    out.write(reinterpret_cast<const char*>(f.phi.values.data()), static_cast<std::streamsize>(f.phi.size() * sizeof(double)));
  }
  if (!out) throw FormatError("write_trajectory: write failed for " + path);
}

Trajectory read_trajectory(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("read_trajectory: cannot open " + path);
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw FormatError("read_trajectory: bad magic in " + path);
  const int d = get<std::int32_t>(in), N = get<std::int32_t>(in);
  const double scale = get<double>(in);
  if (d < 1 || d > 8 || N < 2 || !(scale > 0)) throw FormatError("read_trajectory: bad grid header");
  Trajectory t;
  t.grid = TorusGrid(d, N, scale);
  const int variant = get<std::int32_t>(in);
  if (variant < 0 || variant > 1) throw FormatError("read_trajectory: bad potential variant");
  t.potential.variant = static_cast<PotentialVariant>(variant);
  t.potential.r = get<double>(in);
  t.potential.R0 = get<double>(in);
  t.potential.c = get<double>(in);
  t.slope.resize(d);
  for (int i = 0; i < d; ++i) t.slope[i] = get<double>(in);
  t.dt = get<double>(in);
  const auto frames = get<std::uint64_t>(in);
  for (std::uint64_t k = 0; k < frames; ++k) {
    Frame f;
    f.time = get<double>(in);
    f.step = get<std::int64_t>(in);
    f.phi = Field(t.grid);
    in.read(reinterpret_cast<char*>(f.phi.values.data()), static_cast<std::streamsize>(f.phi.size() * sizeof(double)));
    if (!in) throw FormatError("read_trajectory: truncated frame");
    t.frames.push_back(std::move(f));
  }
  return t;
}

void RunManifest::add_output(const std::string& dir, const std::string& relative) {
  const std::filesystem::path p = std::filesystem::path(dir) / relative;
  ManifestOutput o;
  o.path = relative;
  o.sha256 = sha256_file(p.string());
  o.bytes = std::filesystem::file_size(p);
  outputs.push_back(o);
}

nlohmann::json RunManifest::to_json() const {
  nlohmann::json j;
  j["experiment"] = experiment;
  j["code_version"] = code_version;
  j["config_hash"] = config_hash;
  j["config"] = config;
  j["outputs"] = nlohmann::json::array();
  for (const ManifestOutput& o : outputs)
    j["outputs"].push_back({{"path", o.path}, {"sha256", o.sha256}, {"bytes", o.bytes}});
  j["wall_clock_seconds"] = wall_clock_seconds;
  j["results"] = results;
  return j;
}

void RunManifest::write(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw FormatError("manifest: cannot open " + path);
  out << to_json().dump(2) << "\n";
}

std::string code_version() { return GRADPHI_VERSION; }

}  // namespace gradphi
