#pragma once

// Deterministic, splittable random streams.
//
// A stream is xoshiro256++ seeded from a 64-bit key via splitmix64. Child
// streams are derived from (key, stream-id) with a hash combine, so workers
// can draw independently without sharing state. Gaussians come from the
// Box-Muller transform applied to 53-bit uniforms (the second variate of a
// pair is cached). Same key => same draw sequence, bit for bit.

#include <cmath>
#include <cstdint>
#include <numbers>

namespace icl {

class Rng {
 public:
  Rng() : Rng(0) {}
  explicit Rng(std::uint64_t key) : key_(key) {
    std::uint64_t s = key;
    for (auto& w : state_) w = splitmix64(s);
    if ((state_[0] | state_[1] | state_[2] | state_[3]) == 0) state_[0] = 1;
  }

  std::uint64_t key() const { return key_; }

  // Independent stream for a given id; deriving the same id twice yields the
  // same stream regardless of how much the parent has been consumed.
  Rng child(std::uint64_t stream_id) const { return Rng(combine(key_, stream_id)); }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0,1) with 53 random bits.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Standard normal.
  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    // u1 in (0,1] so log(u1) is finite.
    const double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    // Rejection sampling to kill modulo bias.
    const std::uint64_t limit = ~std::uint64_t(0) - ~std::uint64_t(0) % n;
    std::uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return v % n;
  }

  static std::uint64_t splitmix64(std::uint64_t& s) {
    s += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = s;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  static std::uint64_t combine(std::uint64_t key, std::uint64_t id) {
    std::uint64_t s = key ^ (0x9E3779B97F4A7C15ULL + (id << 6) + (id >> 2) + id * 0xD1B54A32D192ED03ULL);
    std::uint64_t z = splitmix64(s);
    return z ^ splitmix64(s);
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  std::uint64_t key_ = 0;
  std::uint64_t state_[4] = {};
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace icl
