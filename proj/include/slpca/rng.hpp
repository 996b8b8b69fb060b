#pragma once

#include <cmath>
#include <cstdint>

namespace slpca {

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}
}  // namespace detail

/// Deterministic generator with platform-independent draws.  Normals use
/// Box-Muller on explicit 53-bit uniforms so that seeded runs are
/// bit-reproducible regardless of the standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(detail::splitmix64(seed ^ 0x8f2d3a6b1c49e07dULL)) {}

  /// Independent stream for a (seed, stream-index) pair; used to hand
  /// replicates, restarts and bootstrap draws their own generators.
  static Rng derive(std::uint64_t seed, std::uint64_t stream) {
    Rng r(0);
    r.state_ = detail::splitmix64(detail::splitmix64(seed) ^ detail::splitmix64(~stream));
    return r;
  }

  std::uint64_t next_u64() {
    state_ = detail::splitmix64(state_);
    return state_;
  }

  /// Uniform on [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform on (0, 1].
  double uniform_open() { return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53; }

  double normal() {
    const double u1 = uniform_open();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
  }

  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::uint64_t state_;
};

}  // namespace slpca
