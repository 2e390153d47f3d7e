#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace randbox {

/// splitmix64 finalizer; used to derive independent stream seeds from
/// (seed, tag...) tuples so parallel workers never share a stream.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t hash_combine(std::uint64_t h, std::uint64_t v) noexcept {
  return splitmix64(h ^ (v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2)));
}

inline std::uint64_t derive_stream(std::uint64_t seed) { return splitmix64(seed); }

template <class... Tags>
std::uint64_t derive_stream(std::uint64_t seed, std::uint64_t tag, Tags... rest) {
  return derive_stream(hash_combine(seed, tag), rest...);
}

/// Counter-mode splitmix64 stream: trivially cheap to construct, so it suits
/// per-box noise keys where a full mt19937 state init would dominate.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t key) : key_(key) {}

  std::uint64_t next_u64() { return splitmix64(key_ + 0x632be59bd9b4e019ULL * ++ctr_); }

  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

 private:
  std::uint64_t key_;
  std::uint64_t ctr_ = 0;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

/// Deterministic RNG stream. Distributions are hand-rolled on top of
/// mt19937_64 so sequences are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  /// Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). n must be >= 1.
  int uniform_int(int n) {
    return static_cast<int>((static_cast<unsigned __int128>(next_u64()) *
                             static_cast<unsigned __int128>(n)) >> 64);
  }

  /// Standard normal via Box-Muller (both outputs used).
  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  /// N(0,1) truncated to [-2,2] by rejection, then mapped linearly to [0,1].
  double truncated_gaussian_01() {
    double g = gaussian();
    while (g < -2.0 || g > 2.0) g = gaussian();
    return (g + 2.0) * 0.25;
  }

 private:
  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace randbox
