#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace restgrad {

/// Counter-based 64-bit generator (SplitMix64 finalizer over a keyed
/// counter).  Every draw is a pure function of (key, counter), so streams
/// can be split deterministically: derive a new key from a parent key and a
/// stream label, and independent streams never share state.
class Rng {
public:
  explicit Rng(std::uint64_t key) : key_(key), counter_(0) {}

  /// Child generator for a labelled stream.  Used to give each replication,
  /// each sample batch, etc. its own independent deterministic stream.
  Rng stream(std::uint64_t label) const {
    return Rng(mix(key_ ^ mix(label + 0x9e3779b97f4a7c15ull)));
  }

  std::uint64_t next_u64() { return mix(key_ + (++counter_) * 0x9e3779b97f4a7c15ull); }

  /// Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform integer in [0, n).
  std::uint64_t uniform_index(std::uint64_t n) {
    // Rejection-free modulo is fine here: n is tiny relative to 2^64.
    return next_u64() % n;
  }

  /// Standard normal via Box-Muller.  Draws two uniforms per call and keeps
  /// no cached state, so the draw count per call is fixed.
  double gaussian() {
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Random sign, +1 or -1.
  double sign() { return (next_u64() & 1ull) ? 1.0 : -1.0; }

private:
  static std::uint64_t mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ull;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebull;
    z ^= z >> 31;
    return z;
  }

  std::uint64_t key_;
  std::uint64_t counter_;
};

}  // namespace restgrad
