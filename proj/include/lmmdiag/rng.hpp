#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace lmmdiag {

// Counter-based splitmix64 stream.  Replicate r of a run seeded with s draws
// from Rng::stream(s, r), so parallel loops produce results independent of
// the scheduling order.  All draws (including normals, via Box-Muller) are
// generated here rather than with <random> distributions to keep outputs
// bit-identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  static Rng stream(std::uint64_t seed, std::uint64_t index) {
    // mix the pair (seed, index) into one well-spread state
    std::uint64_t x = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return Rng(x ^ (x >> 31));
  }

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1)
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // unbiased uniform integer in [0, bound)
  std::uint64_t next_below(std::uint64_t bound) {
    std::uint64_t threshold = (-bound) % bound;
    for (;;) {
      std::uint64_t r = next_u64();
      if (r >= threshold) return r % bound;
    }
  }

  double next_normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = next_double();
    double u2 = next_double();
    double radius = std::sqrt(-2.0 * std::log(u1));
    double angle = 6.283185307179586476925286766559 * u2;
    spare_ = radius * std::sin(angle);
    have_spare_ = true;
    return radius * std::cos(angle);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace lmmdiag
