#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace beamkit::rng {

// Mixes 64-bit state into a well-distributed output word (splitmix64).
// Used to derive independent per-trajectory streams from (seed, index)
// without correlations between neighboring indices.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ull;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Deterministic stream with engine-only variates.  std distributions are
// implementation-defined, so uniforms and Gaussians are generated by hand to
// keep seeded runs bit-identical across standard libraries.
class Stream {
 public:
  Stream(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t s = seed;
    splitmix64(s);
    s ^= 0x6a09e667f3bcc909ull + index * 0x9e3779b97f4a7c15ull;
    engine_.seed(splitmix64(s));
  }

  // uniform on [0, 1)
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // uniform on (0, 1]
  double uniform_positive() {
    return (static_cast<double>(engine_() >> 11) + 1.0) * 0x1.0p-53;
  }

  // standard normal via Box-Muller, spare value cached
  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform_positive();
    double u2 = uniform();
    double radius = std::sqrt(-2.0 * std::log(u1));
    double angle = 2.0 * M_PI * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace beamkit::rng
