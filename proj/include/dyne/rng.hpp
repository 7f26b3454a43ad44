#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace dyne {

// Deterministic random source. All randomness in a run flows from one root
// seed; components derive independent child streams via child(). Sampling
// avoids std::*_distribution so that sequences are identical across standard
// library implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(splitmix(seed)), root_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // in [0, 1)
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // in [0, n)
  int uniform_int(int n) {
    int i = static_cast<int>(uniform() * n);
    return i < n ? i : n - 1;
  }

  // Box-Muller; one draw per call keeps call sites easy to reason about.
  double normal() {
    double u1 = static_cast<double>((gen_() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  double normal(double mean, double std) { return mean + std * normal(); }

  // Independent child stream keyed by a label and an index.
  Rng child(std::string_view tag, uint64_t index = 0) const {
    uint64_t h = 1469598103934665603ull;
    auto mix = [&h](uint64_t x) {
      for (int i = 0; i < 8; ++i) {
        h ^= (x >> (8 * i)) & 0xff;
        h *= 1099511628211ull;
      }
    };
    mix(root_);
    for (char c : tag) {
      h ^= static_cast<uint8_t>(c);
      h *= 1099511628211ull;
    }
    mix(index);
    return Rng(h);
  }

  uint64_t root_seed() const { return root_; }

 private:
  static uint64_t splitmix(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

  std::mt19937_64 gen_;
  uint64_t root_;
};

}  // namespace dyne
