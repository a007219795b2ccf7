#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace fedmtd {

// Deterministic random stream. The mt19937_64 engine is fully specified by
// the standard; the distribution mappings below are implemented here instead
// of using std:: distributions so that identical seeds produce identical
// streams on every platform and standard library.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1): top 53 bits of the engine output.
  double uniform_unit() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform_unit(); }

  // Uniform integer in [0, n), n > 0. Modulo bias is negligible for n << 2^64.
  std::uint64_t uniform_index(std::uint64_t n) { return engine_() % n; }

  // Standard normal via Box-Muller. One spare value is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform_unit();
    double u2 = uniform_unit();
    while (u1 <= 0.0) u1 = uniform_unit();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}
}  // namespace detail

// Derives an independent child seed from a parent seed and a tag path.
// Used to give every client/component its own stream.
inline std::uint64_t child_seed(std::uint64_t parent, std::string_view tag,
                                std::uint64_t index = 0) {
  std::uint64_t h = detail::splitmix64(parent);
  for (const char c : tag) {
    h = detail::splitmix64(h ^ static_cast<std::uint64_t>(static_cast<unsigned char>(c)));
  }
  return detail::splitmix64(h ^ index);
}

}  // namespace fedmtd
