#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace progspace {

/// splitmix64 finaliser; a bijective 64-bit mixer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t combine_keys(std::uint64_t a, std::uint64_t b) { return mix64(mix64(a) ^ (b * 0xd1342543de82ef95ULL)); }

/// Counter-based generator: draw i of the stream keyed by `key` is a pure function of (key, i),
/// so results never depend on scheduling or on how a stream is split across workers.
class CounterRng {
 public:
  constexpr explicit CounterRng(std::uint64_t key) : key_(mix64(key)) {}

  constexpr std::uint64_t bits(std::uint64_t counter) const {
    return mix64(key_ ^ mix64(counter * 0x9e3779b97f4a7c15ULL + 0x632be59bd9b4e019ULL));
  }
  /// Uniform on [0, 1) with 53-bit resolution.
  double unit(std::uint64_t counter) const { return static_cast<double>(bits(counter) >> 11) * 0x1.0p-53; }
  /// Uniform on [0, 1) with 24-bit resolution; the float32 sampling grid.
  double unit24(std::uint64_t counter) const { return static_cast<double>(bits(counter) >> 40) * 0x1.0p-24; }
  /// Open interval (0, 1]; safe as the argument of log.
  double unit_open(std::uint64_t counter) const { return (static_cast<double>(bits(counter) >> 11) + 1.0) * 0x1.0p-53; }
  /// Standard normal (Box-Muller on two consecutive counters).
  double normal(std::uint64_t counter) const {
    const double u1 = unit_open(2 * counter);
    const double u2 = unit(2 * counter + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

 private:
  std::uint64_t key_;
};

/// Unbiased index in [0, n) from a 64-bit engine (Lemire's method). Portable, unlike
/// std::uniform_int_distribution whose output is implementation-defined.
template <typename Engine>
std::uint64_t uniform_index(Engine& engine, std::uint64_t n) {
  std::uint64_t x = engine();
  unsigned __int128 m = static_cast<unsigned __int128>(x) * n;
  auto low = static_cast<std::uint64_t>(m);
  if (low < n) {
    const std::uint64_t threshold = (0 - n) % n;
    while (low < threshold) {
      x = engine();
      m = static_cast<unsigned __int128>(x) * n;
      low = static_cast<std::uint64_t>(m);
    }
  }
  return static_cast<std::uint64_t>(m >> 64);
}

inline std::mt19937_64 seeded_engine(std::uint64_t seed, std::uint64_t stream = 0) {
  return std::mt19937_64(combine_keys(seed, stream));
}

}  // namespace progspace
