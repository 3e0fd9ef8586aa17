#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace gridtrip {

// Deterministic draws on top of the bit-specified mt19937_64 engine. The
// standard distributions are implementation-defined, so seeded outputs that
// must reproduce across toolchains go through these helpers instead.

[[nodiscard]] inline double uniform01(std::mt19937_64& gen) {
  return static_cast<double>(gen() >> 11) * 0x1.0p-53;
}

[[nodiscard]] inline double uniform(std::mt19937_64& gen, double lo, double hi) {
  return lo + (hi - lo) * uniform01(gen);
}

[[nodiscard]] inline int uniform_int(std::mt19937_64& gen, int lo, int hi) {
  // Inclusive bounds; modulo bias is irrelevant at these range sizes.
  const auto span = static_cast<std::uint64_t>(hi - lo + 1);
  return lo + static_cast<int>(gen() % span);
}

// Box-Muller without state; burns two draws per variate.
[[nodiscard]] inline double normal01(std::mt19937_64& gen) {
  const double u1 = uniform01(gen);
  const double u2 = uniform01(gen);
  constexpr double kTwoPi = 6.283185307179586476925286766559;
  return std::sqrt(-2.0 * std::log(u1 + 1e-300)) * std::cos(kTwoPi * u2);
}

[[nodiscard]] inline double normal(std::mt19937_64& gen, double mean, double stddev) {
  return mean + stddev * normal01(gen);
}

}  // namespace gridtrip
