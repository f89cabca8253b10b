#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <vector>

namespace ssnet {

// splitmix64 finalizer; good enough avalanche for a counter-based stream.
constexpr uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Counter-based generator: a key derived from (seed, path...) plus an
// incrementing counter. Streams keyed on disjoint paths are independent,
// so per-epoch / per-channel work can run in any order and still be
// reproducible.
class CounterRng {
 public:
  explicit CounterRng(uint64_t seed) : key_(splitmix64(seed)) {}
  CounterRng(uint64_t seed, std::initializer_list<uint64_t> path) : key_(splitmix64(seed)) {
    for (uint64_t p : path) key_ = splitmix64(key_ ^ (p + 0x9e3779b97f4a7c15ULL));
  }

  CounterRng split(uint64_t tag) const {
    CounterRng r(0);
    r.key_ = splitmix64(key_ ^ (tag + 0x9e3779b97f4a7c15ULL));
    return r;
  }

  uint64_t next_u64() { return splitmix64(key_ + 0x2545f4914f6cdd1dULL * ++ctr_); }

  // uniform in [0, 1), 53-bit resolution
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Box-Muller; draws two uniforms per call, one output kept.
  double next_normal() {
    double u1 = next_double();
    double u2 = next_double();
    while (u1 <= 0.0) u1 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  // uniform integer in [0, n) via rejection sampling
  uint64_t next_below(uint64_t n) {
    if (n == 0) return 0;
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return v % n;
  }

  template <typename Vec>
  void shuffle(Vec& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  uint64_t key_;
  uint64_t ctr_ = 0;
};

}  // namespace ssnet
