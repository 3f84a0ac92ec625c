#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace vqw2v {

using Rng = std::mt19937_64;

/// Derives an independent, reproducible substream from a base seed and a
/// stream name ("data", "negatives", "gumbel", "mask", ...).
inline Rng make_stream(std::uint64_t seed, const std::string& name) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(std::hash<std::string>{}(name)),
                    static_cast<std::uint32_t>(name.size())};
  return Rng(seq);
}

/// Uniform draw in [0, 1).
inline double uniform01(Rng& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

/// Uniform integer in [0, n).
inline std::int64_t uniform_index(Rng& rng, std::int64_t n) {
  return std::uniform_int_distribution<std::int64_t>(0, n - 1)(rng);
}

inline std::string rng_state(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

inline void restore_rng(Rng& rng, const std::string& state) {
  std::istringstream is(state);
  is >> rng;
}

}  // namespace vqw2v
