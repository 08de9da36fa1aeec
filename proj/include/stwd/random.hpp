#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace stwd {

using Rng = std::mt19937_64;

// SplitMix64 finalizer; a bijective 64-bit mixer.
std::uint64_t mix64(std::uint64_t x) noexcept;

// Derives an independent stream seed from a master seed and a path of stream
// identifiers, e.g. derive_seed(master, {rep_index, kStreamFit}). The result
// depends only on its arguments, never on scheduling.
std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path) noexcept;

inline Rng make_rng(std::uint64_t seed) { return Rng(mix64(seed)); }

// Standard normal draws from a private engine.
class NormalStream {
 public:
  explicit NormalStream(std::uint64_t seed) : rng_(make_rng(seed)) {}
  double operator()() { return dist_(rng_); }
  Rng& engine() { return rng_; }

 private:
  Rng rng_;
  std::normal_distribution<double> dist_{0.0, 1.0};
};

}  // namespace stwd
