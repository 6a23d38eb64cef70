#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace pwrf {

// Deterministic random source. mt19937_64 output is fixed by the standard;
// the uniform/normal transforms are written out explicitly instead of using
// std::*_distribution (whose algorithms are implementation-defined), so two
// builds given the same seed draw identical streams.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; one fresh pair per call, the second half is discarded to
  // keep the stream position independent of call parity.
  double normal(double mean = 0.0, double stddev = 1.0);

  // Integer in [0, n).
  std::int64_t below(std::int64_t n);

  // Fisher-Yates over indices 0..n-1.
  std::vector<std::int64_t> permutation(std::int64_t n);

 private:
  std::mt19937_64 engine_;
};

// Stable 64-bit hash (FNV-1a) used to derive per-name / per-index seeds so
// initialization does not depend on creation order.
std::uint64_t hash_seed(std::uint64_t base, const std::string& tag);
std::uint64_t hash_seed(std::uint64_t base, std::uint64_t index);

}  // namespace pwrf
