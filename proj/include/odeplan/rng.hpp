#pragma once

#include <cstdint>
#include <cmath>
#include <random>

namespace odeplan {

// Finalizer of the splitmix64 generator; used as the documented seed-derivation
// hash: stream seed = mix(master ^ mix(tag1) ^ mix(tag2) ...).
inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t run,
                                           std::uint64_t stream) {
  return splitmix64(master ^ splitmix64(run + 1) ^ splitmix64((stream + 1) << 32));
}

using Rng = std::mt19937_64;

// Uniform in [0, 1). Hand-mapped from raw bits so draws do not depend on the
// standard library's distribution implementation.
inline double draw_uniform(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Standard normal via Marsaglia polar rejection.
inline double draw_normal(Rng& rng) {
  for (;;) {
    const double a = 2.0 * draw_uniform(rng) - 1.0;
    const double b = 2.0 * draw_uniform(rng) - 1.0;
    const double s = a * a + b * b;
    if (s > 0.0 && s < 1.0) {
      return a * std::sqrt(-2.0 * std::log(s) / s);
    }
  }
}

}  // namespace odeplan
