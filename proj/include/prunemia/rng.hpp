#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace prunemia {

// Counter-based pseudo-random generator. Each draw is a pure function of
// (key, counter), so independently keyed substreams never interact and a
// stream's output does not depend on what any other stream consumed.
class Rng {
 public:
  explicit Rng(std::uint64_t key) : key_(key) {}

  std::uint64_t next_u64() { return mix(key_ + 0x9e3779b97f4a7c15ull * ++counter_); }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Rejection-free modulo is fine here: n is tiny
  // relative to 2^64 in every use, so the bias is far below double precision.
  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

  // Standard normal via Box-Muller. The spare value is cached so consecutive
  // draws cost one transform per pair.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // In-place Fisher-Yates. std::shuffle is implementation-defined, so runs
  // would not be reproducible across standard libraries.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  static std::uint64_t mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ull;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebull;
    z ^= z >> 31;
    return z;
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Derives a substream key from (seed, label, indices...). FNV-1a over the
// label keeps distinct consumer names on distinct streams.
inline std::uint64_t stream_key(std::uint64_t seed, std::string_view label) {
  std::uint64_t h = 0xcbf29ce484222325ull ^ Rng::mix(seed);
  for (unsigned char c : label) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return Rng::mix(h);
}

template <typename... Ix>
std::uint64_t stream_key(std::uint64_t seed, std::string_view label, Ix... indices) {
  std::uint64_t h = stream_key(seed, label);
  ((h = Rng::mix(h ^ (0x9e3779b97f4a7c15ull + static_cast<std::uint64_t>(indices)))), ...);
  return h;
}

template <typename... Ix>
Rng substream(std::uint64_t seed, std::string_view label, Ix... indices) {
  return Rng(stream_key(seed, label, indices...));
}

}  // namespace prunemia
