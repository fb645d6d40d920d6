#pragma once

#include <cmath>
#include <cstdint>

namespace mapstat {

// Deterministic stream-splittable RNG. Every Monte Carlo consumer derives its
// own stream from (seed, stream_index) so results are independent of thread
// count and work-stealing order.
//
// splitmix64 is used both as the stream-derivation hash and to seed the
// xoshiro256++ state; u01 takes the top 53 bits.

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

class rng_stream {
public:
  rng_stream(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t sm = seed ^ (0x9E3779B97F4A7C15ULL * (stream + 1));
    for (auto& w : s_) w = splitmix64(sm);
    have_normal_ = false;
  }

  std::uint64_t next_u64() {
    auto rotl = [](std::uint64_t x, int k) {
      return (x << k) | (x >> (64 - k));
    };
    std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform on [0,1): 53-bit resolution, never returns 1.
  double u01() { return double(next_u64() >> 11) * 0x1.0p-53; }

  // Standard normal via polar Box-Muller (pair cached).
  double normal() {
    if (have_normal_) {
      have_normal_ = false;
      return cached_;
    }
    double u, v, r2;
    do {
      u = 2.0 * u01() - 1.0;
      v = 2.0 * u01() - 1.0;
      r2 = u * u + v * v;
    } while (r2 >= 1.0 || r2 == 0.0);
    double f = std::sqrt(-2.0 * std::log(r2) / r2);
    cached_ = v * f;
    have_normal_ = true;
    return u * f;
  }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

private:
  std::uint64_t s_[4];
  double cached_ = 0.0;
  bool have_normal_ = false;
};

}  // namespace mapstat
