#pragma once

#include <cmath>
#include <cstdint>

namespace mkv {

// Counter-based random streams: every draw is a pure function of
// (seed, stream, id, slot), so parallel evaluation order cannot perturb the
// sample and a run is reproducible from its seed alone.
namespace rng {

enum class Stream : std::uint64_t {
  kInit = 1,       // initial-law draws, id = particle
  kBrownian = 2,   // Brownian increments, id = particle, slot = step*dim+coord
  kSampler = 3,    // hypothesis-check sampling
  kTagged = 4,     // tagged-particle noise in value-function Monte Carlo
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix(std::uint64_t seed, std::uint64_t stream,
                         std::uint64_t id, std::uint64_t slot) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ (stream * 0xD6E8FEB86659FD93ULL));
  h = splitmix64(h ^ (id * 0xA0761D6478BD642FULL));
  h = splitmix64(h ^ (slot * 0xE7037ED1A0B428DBULL));
  return h;
}

// Uniform in (0,1); never returns 0 or 1.
inline double uniform(std::uint64_t seed, Stream stream, std::uint64_t id,
                      std::uint64_t slot) {
  const std::uint64_t h = mix(seed, static_cast<std::uint64_t>(stream), id, slot);
  return (static_cast<double>(h >> 11) + 0.5) * 0x1.0p-53;
}

// Standard normal via Box-Muller; slot space is split in two so a draw and
// its partner never collide with neighbouring slots.
inline double gaussian(std::uint64_t seed, Stream stream, std::uint64_t id,
                       std::uint64_t slot) {
  const double u1 = uniform(seed, stream, id, 2 * slot);
  const double u2 = uniform(seed, stream, id, 2 * slot + 1);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

}  // namespace rng
}  // namespace mkv
