// Deterministic random number streams.
//
// Every generator in the library takes an explicit Rng so callers own the
// stream layout. derive_stream() hashes (master, purpose, index) into an
// independent substream; the harness uses it so that, e.g., changing the
// epoch count cannot change the sampled dataset.
#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace maskshift {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer on [lo, hi] via rejection-free modulo of a wide range.
  std::uint64_t uniform_index(std::uint64_t n) {
    // n is tiny relative to 2^64 everywhere we use this; modulo bias is < 2^-50.
    return gen_() % n;
  }

  // Standard normal via Box-Muller (no cached second value, so the call
  // sequence alone determines the stream).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return r * std::cos(6.283185307179586476925286766559 * u2);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::mt19937_64 gen_;
};

// Independent substream of a master seed, keyed by purpose and index.
inline Rng derive_stream(std::uint64_t master, std::uint64_t purpose,
                         std::uint64_t index = 0) {
  std::uint64_t s = master;
  std::uint64_t h = splitmix64(s);
  s ^= purpose * 0x9e3779b97f4a7c15ULL;
  h ^= splitmix64(s);
  s ^= index * 0xd1342543de82ef95ULL;
  h ^= splitmix64(s);
  return Rng(h);
}

}  // namespace maskshift
