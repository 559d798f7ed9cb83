#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace sacla {

// Deterministic counter-based RNG (splitmix64 core). All randomness in the
// library flows through this type so that runs are reproducible across
// platforms; the standard <random> distributions are implementation-defined
// and would break cross-build determinism of stored expected values.
struct Rng {
  std::uint64_t state = 0x9e3779b97f4a7c15ull;

  explicit Rng(std::uint64_t seed = 0) : state(seed + 0x9e3779b97f4a7c15ull) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1). 53-bit resolution.
  double uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // One standard normal draw via Box-Muller. Consumes two u64s; the second
  // Box-Muller output is discarded so the state stream stays simple to
  // serialize.
  double normal() {
    double u1 = uniform01();
    double u2 = uniform01();
    // avoid log(0)
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(6.283185307179586476925286766559 * u2);
  }

  std::uint64_t next_below(std::uint64_t n) {
    // modulo bias is < 2^-40 for n up to ~2^24 buffer sizes; acceptable here
    return next_u64() % n;
  }

  // Derive an independent stream keyed by a label (FNV-1a over the label
  // mixed into the current seed). Does not advance this generator.
  Rng derive(std::string_view label) const {
    std::uint64_t h = 1469598103934665603ull;
    for (char c : label) {
      h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
      h *= 1099511628211ull;
    }
    Rng r;
    r.state = state ^ h;
    r.next_u64();  // decorrelate
    return r;
  }

  Rng derive(std::uint64_t index) const {
    Rng r;
    r.state = state ^ (0x5851f42d4c957f2dull * (index + 1));
    r.next_u64();
    return r;
  }
};

}  // namespace sacla
