#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>

#include "graphmaker/common.hpp"

namespace graphmaker {

namespace detail {
inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}
}  // namespace detail

// xoshiro256** seeded through splitmix64. Bit-exact across platforms, cheap
// to fork into independent substreams keyed by (seed, step, cell), which is
// what makes per-cell sampling order-independent and reproducible.
class Rng {
 public:
  explicit Rng(uint64_t seed) { reseed(seed); }

  Rng(uint64_t seed, std::initializer_list<uint64_t> key) {
    uint64_t s = seed;
    for (uint64_t k : key) {
      s = detail::splitmix64(s) ^ (k * 0x9e3779b97f4a7c15ULL);
    }
    reseed(s);
  }

  // Independent substream for a keyed cell of work.
  Rng fork(uint64_t a, uint64_t b = 0, uint64_t c = 0) const {
    uint64_t s = state_[0] ^ (state_[2] << 1);
    return Rng(s, {a, b, c});
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0, 1), 53-bit resolution.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  bool bernoulli(double p) { return next_double() < p; }

  // Unbiased uniform integer in [0, n).
  uint64_t next_below(uint64_t n) {
    if (n == 0) throw ArgumentError("next_below: n must be positive");
    const uint64_t threshold = (0 - n) % n;
    for (;;) {
      const uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  // Inverse-CDF draw from a probability vector.
  int sample_discrete(std::span<const double> probs) {
    double u = next_double();
    double acc = 0.0;
    const int n = static_cast<int>(probs.size());
    for (int i = 0; i < n; ++i) {
      acc += probs[i];
      if (u < acc) return i;
    }
    return n - 1;
  }

  // Binomial(n, p) by geometric skips between successes; O(np) expected.
  int64_t binomial(int64_t n, double p) {
    if (n < 0) throw ArgumentError("binomial: n must be nonnegative");
    if (p <= 0.0 || n == 0) return 0;
    if (p >= 1.0) return n;
    const bool flip = p > 0.5;
    const double q = flip ? 1.0 - p : p;
    const double log1mq = std::log1p(-q);
    int64_t successes = 0;
    int64_t i = -1;
    for (;;) {
      double u = next_double();
      if (u <= 0.0) u = 0x1.0p-53;
      i += 1 + static_cast<int64_t>(std::floor(std::log(u) / log1mq));
      if (i >= n || i < 0) break;  // i < 0 guards overflow on extreme skips
      ++successes;
    }
    return flip ? n - successes : successes;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[next_below(i)]);
    }
  }

  // Uniform on [-limit, limit].
  double uniform_sym(double limit) { return (2.0 * next_double() - 1.0) * limit; }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  void reseed(uint64_t seed) {
    uint64_t s = seed;
    for (auto& w : state_) w = detail::splitmix64(s);
  }

  std::array<uint64_t, 4> state_;
};

}  // namespace graphmaker
