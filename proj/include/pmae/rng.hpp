// rng.hpp -- deterministic counter-based random streams.
//
// Every random draw in the project flows from one root seed. Component
// streams are derived by stable string labels, so adding a consumer never
// shifts the draws seen by another. Identical seed + identical call
// sequence gives identical results on any platform (no std::distribution
// involvement).
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>

#include "pmae/common.hpp"

namespace pmae {

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}
}  // namespace detail

class Rng {
 public:
  Rng() : Rng(0) {}
  explicit Rng(std::uint64_t seed) : seed_(seed), counter_(0) {}

  std::uint64_t seed() const { return seed_; }
  // Draws consumed so far; (seed, position) fully determines the stream.
  std::uint64_t position() const { return counter_; }

  // Independent child stream, stable under the label.
  Rng derive(const std::string& label) const {
    return Rng(detail::splitmix64(seed_ ^ fnv1a(label)));
  }
  Rng derive(const std::string& label, std::uint64_t index) const {
    return Rng(detail::splitmix64(seed_ ^ fnv1a(label) ^ (0x51ed2701u + index * 0x2545f4914f6cdd1dull)));
  }

  std::uint64_t next_u64() { return detail::splitmix64(seed_ + 0x632be59bd9b4e019ull * ++counter_); }

  double uniform() {  // [0, 1)
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n); n > 0. Lemire multiply-shift, no rejection loop.
  int uniform_int(int n) {
    check(n > 0, "Rng::uniform_int: n must be positive");
    return static_cast<int>((static_cast<unsigned __int128>(next_u64()) * static_cast<std::uint64_t>(n)) >> 64);
  }

  double gaussian() {  // Box-Muller, two fresh uniforms per draw
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }
  double gaussian(double mean, double std) { return mean + std * gaussian(); }

  double truncated_gaussian(double mean, double std, double lo, double hi) {
    for (;;) {
      double x = gaussian(mean, std);
      if (x >= lo && x <= hi) return x;
    }
  }

  template <class It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::int64_t>(last - first);
    for (std::int64_t i = n - 1; i > 0; --i) {
      std::swap(first[i], first[uniform_int(static_cast<int>(i + 1))]);
    }
  }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_;
};

}  // namespace pmae
