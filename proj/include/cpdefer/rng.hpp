#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

namespace cpdefer {

using Rng = std::mt19937_64;

// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derives an independent stream seed from a master seed and a task path,
/// e.g. derive_seed(master, split, alpha_index, strategy).
template <typename... Parts>
constexpr std::uint64_t derive_seed(std::uint64_t master, Parts... parts) {
  std::uint64_t h = mix64(master);
  ((h = mix64(h ^ static_cast<std::uint64_t>(parts))), ...);
  return h;
}

/// Uniform integer in [0, n). Consumes nothing from the stream when n == 1,
/// so single-candidate choices never perturb later draws.
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  if (n <= 1) return 0;
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = Rng::max() - (Rng::max() % bound);
  std::uint64_t draw = rng();
  while (draw >= limit) draw = rng();
  return static_cast<std::size_t>(draw % bound);
}

/// Uniform double in [0, 1) with 53 random bits.
inline double uniform_unit(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace cpdefer
