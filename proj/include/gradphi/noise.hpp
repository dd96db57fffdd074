#pragma once

#include <cstdint>
#include <span>

#include "gradphi/lattice.hpp"

namespace gradphi {

// splitmix64 finalizer.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Independent seed for a numbered sub-stream (replica, slope node, ...).
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream);

// Counter-based Gaussian increments: the value for (step, site) depends on
// the master seed and those two integers only. Step indices may be negative
// (burn-in before the reference time 0).
class NoiseStream {
 public:
  NoiseStream() = default;
  NoiseStream(std::uint64_t master_seed, const TorusGrid& grid, double dt);

  std::uint64_t seed() const { return seed_; }
  const TorusGrid& grid() const { return grid_; }
  double dt() const { return dt_; }

  // Standard normal for (step, site).
  double normal(std::int64_t step, std::uint64_t site) const;
  // sqrt(dt) * normal(step, site).
  double increment(std::int64_t step, std::uint64_t site) const;

  // Increments on every grid site, optionally projected to mean zero.
  void increments(std::int64_t step, std::span<double> out, bool project) const;
  // Increments at explicit site addresses (boxes embedded in a larger torus).
  void increments(std::int64_t step, std::span<const std::uint64_t> sites, std::span<double> out,
                  bool project) const;

 private:
  std::uint64_t seed_ = 0;
  TorusGrid grid_;
  double dt_ = 0.0;
  double sqrt_dt_ = 0.0;
};

}  // namespace gradphi
