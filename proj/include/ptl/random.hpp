#pragma once

#include <cstdint>
#include <random>

namespace ptl {

/// The one generator type used across the library. Every stochastic operation
/// takes it by reference so callers own seeding and stream separation.
using Rng = std::mt19937_64;

/// Derives an independent seed for a sub-stream (worker, fold, session).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finaliser
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline double uniform01(Rng& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

inline bool coin(Rng& rng, double p = 0.5) { return uniform01(rng) < p; }

}  // namespace ptl
