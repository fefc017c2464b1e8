#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

// Deterministic randomness helpers. std::mt19937_64 is fully specified by the
// standard, but the std distributions are not, so bounded ints and gaussians
// are generated here by hand to keep seeded runs reproducible across
// toolchains (replay files and manifests depend on that).
namespace fjd::rng {

using Engine = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Mixes an arbitrary number of seed words into one engine seed.
inline Engine seeded(std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) {
  std::uint64_t s = splitmix64(a);
  s = splitmix64(s ^ splitmix64(b + 0x517cc1b727220a95ULL));
  s = splitmix64(s ^ splitmix64(c + 0x2545f4914f6cdd1dULL));
  return Engine(s);
}

// Uniform integer in [0, n) by rejection; n must be positive.
inline std::uint64_t next_below(Engine& eng, std::uint64_t n) {
  const std::uint64_t limit = std::uint64_t(-1) - std::uint64_t(-1) % n;
  std::uint64_t v;
  do {
    v = eng();
  } while (v >= limit);
  return v % n;
}

// Uniform double in [0, 1) with 53 random bits.
inline double next_unit(Engine& eng) {
  return double(eng() >> 11) * 0x1.0p-53;
}

// Standard normal via Box-Muller; consumes two uniforms per value.
inline double next_gaussian(Engine& eng) {
  double u1;
  do {
    u1 = next_unit(eng);
  } while (u1 <= 0.0);
  const double u2 = next_unit(eng);
  const double r = std::sqrt(-2.0 * std::log(u1));
  return r * std::cos(6.283185307179586476925286766559 * u2);
}

}  // namespace fjd::rng
