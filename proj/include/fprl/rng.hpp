#pragma once

#include <cstdint>
#include <random>

namespace fprl {

// One splitmix64 step; advances `state`.
std::uint64_t splitmix64(std::uint64_t& state);

// Independent stream seed for (master, stream).
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream);

/// Deterministic random source. Uses mt19937_64 (bit-exact across standard
/// libraries) and its own conversions, so draws are reproducible everywhere.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace fprl
