#pragma once

#include <cstdint>
#include <random>

namespace dollocat {

using Rng = std::mt19937_64;

// splitmix64; used to derive well-separated substream seeds from one 64-bit seed.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  return Rng{mix64(mix64(seed) ^ mix64(stream * 0x9e3779b97f4a7c15ull + 1))};
}

inline double uniform01(Rng& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline int uniform_int(Rng& rng, int lo, int hi) {  // inclusive bounds
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

inline double exponential(Rng& rng, double rate) {
  return std::exponential_distribution<double>(rate)(rng);
}

inline long poisson(Rng& rng, double mean) {
  return std::poisson_distribution<long>(mean)(rng);
}

}  // namespace dollocat
