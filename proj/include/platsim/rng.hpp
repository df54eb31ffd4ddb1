#pragma once

// Deterministic splittable RNG. Every simulation run gets its own stream
// derived from (base seed, run index), so results do not depend on worker
// scheduling. The core generator is SplitMix64: small state, cheap next(),
// good enough statistics for Monte Carlo at this scale.

#include <cmath>
#include <cstdint>
#include <numbers>

namespace platsim {

namespace detail {

// SplitMix64 output function (Vigna). Bijective mix of a 64-bit word.
inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace detail

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  // Derives an independent stream keyed by `key`. Used for per-run streams
  // and for auxiliary consumers (bootstrap, permutation subsampling) so they
  // never perturb each other's draw sequences.
  Rng split(std::uint64_t key) const {
    return Rng(detail::mix64(state_ + 0x9e3779b97f4a7c15ULL * (key + 1)));
  }

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return detail::mix64(state_);
  }

  // Uniform double in [0, 1), 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n). Lemire multiply-shift; the modulo bias is
  // below 2^-32 for the small n used here and irrelevant next to determinism.
  std::uint32_t uniform_below(std::uint32_t n) {
    return static_cast<std::uint32_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  // Standard normal via Box-Muller; consumes exactly two uniforms per pair,
  // caching the second value, so the draw count stays deterministic.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    // u1 in (0, 1] so the log is finite.
    double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  std::uint64_t state() const { return state_; }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

// Stream for one simulation run of one experiment.
inline Rng run_rng(std::uint64_t base_seed, std::uint64_t run_index) {
  return Rng(base_seed).split(run_index);
}

}  // namespace platsim
