#include "gradphi/noise.hpp"

#include <cmath>
#include <numbers>

#include "gradphi/errors.hpp"

namespace gradphi {

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  return mix64(mix64(master ^ 0x5851f42d4c957f2dULL) ^ mix64(stream + 0x14057b7ef767814fULL));
}

NoiseStream::NoiseStream(std::uint64_t master_seed, const TorusGrid& grid, double dt)
    : seed_(master_seed), grid_(grid), dt_(dt), sqrt_dt_(std::sqrt(dt)) {
  require(dt > 0 && std::isfinite(dt), "NoiseStream: dt must be positive");
}

double NoiseStream::normal(std::int64_t step, std::uint64_t site) const {
  const std::uint64_t base = mix64(mix64(seed_ ^ static_cast<std::uint64_t>(step)) ^ (site * 0xd6e8feb86659fd93ULL));
  const std::uint64_t a = mix64(base);
  const std::uint64_t b = mix64(base ^ 0xa0761d6478bd642fULL);
  // u1 in (0, 1], u2 in [0, 1)
  const double u1 = (static_cast<double>(a >> 11) + 1.0) * 0x1.0p-53;
  const double u2 = static_cast<double>(b >> 11) * 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double NoiseStream::increment(std::int64_t step, std::uint64_t site) const {
  return sqrt_dt_ * normal(step, site);
}

void NoiseStream::increments(std::int64_t step, std::span<double> out, bool project) const {
  for (std::size_t s = 0; s < out.size(); ++s) out[s] = sqrt_dt_ * normal(step, s);
  if (project) project_mean_zero(out);
}

void NoiseStream::increments(std::int64_t step, std::span<const std::uint64_t> sites,
                             std::span<double> out, bool project) const {
  for (std::size_t s = 0; s < out.size(); ++s) out[s] = sqrt_dt_ * normal(step, sites[s]);
  if (project) project_mean_zero(out);
}

}  // namespace gradphi
