#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "gradphi/errors.hpp"
#include "gradphi/io.hpp"

using namespace gradphi;

namespace {

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "gradphi_test_io";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("config sections, fractions and effective values") {
  const Config c = Config::parse(
      "seed = 7\n"
      "# comment\n"
      "[hydro]\n"
      "eps = 1/8, 1/16 ,1/32\n"
      "replicas = 8\n"
      "quiet = yes\n"
      "dims = 1,2\n");
  CHECK(c.get_u64("seed", 0) == 7);
  const auto eps = c.get_doubles("hydro.eps", {});
  REQUIRE(eps.size() == 3);
  CHECK(eps[2] == 1.0 / 32.0);
  CHECK(c.get_int("hydro.replicas", 1) == 8);
  CHECK(c.get_bool("hydro.quiet", false));
  CHECK(c.get_ints("hydro.dims", {}) == std::vector<int>{1, 2});
  CHECK(c.get_double("hydro.dt", 0.25) == 0.25);
  CHECK(c.effective().at("hydro.dt") == "0.25");
  CHECK(c.unused_keys().empty());
  CHECK(c.canonical().find("hydro.replicas=8\n") != std::string::npos);
}

TEST_CASE("config errors name the field") {
  const Config c = Config::parse("[run]\neps = abc\nn = 2.5\nflag = maybe\nfrac = 1/0\n");
  auto message = [](auto&& fn) {
    try {
      fn();
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(message([&] { c.get_double("run.eps", 0); }).find("run.eps") != std::string::npos);
  CHECK(message([&] { c.get_int("run.n", 0); }).find("run.n") != std::string::npos);
  CHECK(message([&] { c.get_bool("run.flag", false); }).find("run.flag") != std::string::npos);
  CHECK(message([&] { c.get_double("run.frac", 0); }).find("run.frac") != std::string::npos);
  CHECK_THROWS_AS(Config::parse("[a\nb=1\n"), ConfigError);
  CHECK_THROWS_AS(Config::load("/nonexistent/gradphi.ini"), ConfigError);
  const Config u = Config::parse("typo = 1\n");
  CHECK(u.unused_keys() == std::vector<std::string>{"typo"});
}

TEST_CASE("sha256 known vectors") {
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("csv round trip is exact and byte reproducible") {
  const auto path = scratch("t.csv").string();
  const std::vector<std::vector<double>> rows = {{0.1, 1.0 / 3.0}, {-2.5e-300, 1e300}};
  write_csv(path, {"a", "b"}, rows, "manifest.json");
  const std::string h1 = sha256_file(path);
  write_csv(path, {"a", "b"}, rows, "manifest.json");
  CHECK(sha256_file(path) == h1);
  const CsvTable t = read_csv(path);
  CHECK(t.manifest == "manifest.json");
  CHECK(t.column("b") == 1);
  CHECK_THROWS_AS(t.column("c"), FormatError);
  REQUIRE(t.rows.size() == 2);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) CHECK(t.rows[i][j] == rows[i][j]);
  CHECK_THROWS_AS(write_csv(path, {"a"}, rows, "m"), DimensionMismatch);
  std::ofstream(path) << "a,b\n1,2,3\n";
  CHECK_THROWS_AS(read_csv(path), FormatError);
}

TEST_CASE("trajectory round trip and corrupt input") {
  Trajectory t;
  t.grid = TorusGrid(2, 4, 0.25);
  t.potential = PotentialSpec::degenerate_radial(3.0, 1.0, 2.0);
  t.slope = {0.5, -1.0};
  t.dt = 1e-3;
  for (int k = 0; k < 3; ++k) {
    Frame f;
    f.time = 0.1 * k;
    f.step = 100 * k;
    f.phi = Field(t.grid);
    for (std::size_t i = 0; i < f.phi.size(); ++i) f.phi[i] = std::sin(1.0 + i + k);
    t.frames.push_back(f);
  }
  const auto path = scratch("t.bin").string();
  write_trajectory(path, t);
  const Trajectory r = read_trajectory(path);
  CHECK(r.grid == t.grid);
  CHECK(r.potential.variant == t.potential.variant);
  CHECK(r.potential.c == 2.0);
  CHECK(r.slope == t.slope);
  CHECK(r.dt == t.dt);
  REQUIRE(r.frames.size() == 3);
  CHECK(r.frames[2].step == 200);
  CHECK(r.frames[2].phi.values == t.frames[2].phi.values);

  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 8);
  CHECK_THROWS_AS(read_trajectory(path), FormatError);
  std::ofstream(path) << "not a trajectory";
  CHECK_THROWS_AS(read_trajectory(path), FormatError);
}

TEST_CASE("manifest lists outputs with checksums") {
  const auto dir = scratch("").parent_path().string();
  write_csv(scratch("m.csv").string(), {"x"}, {{1.0}}, "m.json");
  RunManifest m;
  m.experiment = "demo";
  m.code_version = code_version();
  m.config = {{"seed", "1"}};
  m.add_output(dir, "m.csv");
  const auto j = m.to_json();
  CHECK(j["outputs"][0]["sha256"] == sha256_file(scratch("m.csv").string()));
  CHECK(j["outputs"][0]["bytes"].get<std::uintmax_t>() == std::filesystem::file_size(scratch("m.csv")));
  CHECK(j["code_version"] == "0.1.0");
}
