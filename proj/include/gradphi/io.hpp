#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "gradphi/dynamics.hpp"
#include "json.hpp"

namespace gradphi {

// Flat key/value configuration with [sections]; keys are addressed as
// "section.key". Every lookup records the effective value, defaults included,
// so the manifest can print the complete configuration.
class Config {
 public:
  Config() = default;
  static Config parse(const std::string& text);
  static Config load(const std::string& path);

  bool has(const std::string& key) const { return raw_.count(key) > 0; }
  void set(const std::string& key, const std::string& value) { raw_[key] = value; }

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  // Comma-separated numbers; fractions a/b are accepted.
  std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback) const;
  std::vector<int> get_ints(const std::string& key, const std::vector<int>& fallback) const;

  const std::map<std::string, std::string>& entries() const { return raw_; }
  const std::map<std::string, std::string>& effective() const { return effective_; }
  // Keys present in the file that no lookup asked for.
  std::vector<std::string> unused_keys() const;
  // Sorted "key=value" lines of the explicit entries.
  std::string canonical() const;

 private:
  const std::string* find(const std::string& key) const;
  std::map<std::string, std::string> raw_;
  mutable std::map<std::string, std::string> effective_;
  mutable std::set<std::string> used_;
};

// Parses a number or a fraction a/b; ConfigError naming `field` otherwise.
double parse_number(const std::string& text, const std::string& field);

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::string& path);

// CSV with a header row and a trailing "# manifest: <ref>" line. Numbers are
// written with 17 significant digits so files are byte-reproducible.
void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows, const std::string& manifest_ref);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
  std::string manifest;
  std::size_t column(const std::string& name) const;  // FormatError if missing
};

CsvTable read_csv(const std::string& path);

// Binary trajectory: magic, grid, potential, slope, dt, then frames of
// (time, step, phi). Little-endian doubles as stored in memory.
void write_trajectory(const std::string& path, const Trajectory& traj);
Trajectory read_trajectory(const std::string& path);

struct ManifestOutput {
  std::string path;  // relative to the manifest directory
  std::string sha256;
  std::uintmax_t bytes = 0;
};

struct RunManifest {
  std::string experiment;
  std::string code_version;
  std::string config_hash;
  std::map<std::string, std::string> config;
  std::vector<ManifestOutput> outputs;
  double wall_clock_seconds = 0.0;
  nlohmann::json results = nlohmann::json::object();

  // Hashes the file at dir/relative and records it.
  void add_output(const std::string& dir, const std::string& relative);
  nlohmann::json to_json() const;
  void write(const std::string& path) const;
};

std::string code_version();

}  // namespace gradphi
