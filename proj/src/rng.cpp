#include "pwrf/rng.hpp"

#include <cmath>

#include "pwrf/error.hpp"

namespace pwrf {

double Rng::normal(double mean, double stddev) {
  // u1 in (0,1] so the log is finite.
  double u1 = 1.0 - uniform();
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  return mean + stddev * r * std::cos(6.283185307179586476925286766559 * u2);
}

std::int64_t Rng::below(std::int64_t n) {
  check_contract(n > 0, "Rng::below needs n > 0");
  // Rejection sampling over the top bits to stay unbiased.
  const std::uint64_t un = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % un;
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return static_cast<std::int64_t>(x % un);
}

std::vector<std::int64_t> Rng::permutation(std::int64_t n) {
  std::vector<std::int64_t> p(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] = i;
  for (std::int64_t i = n - 1; i > 0; --i) {
    std::int64_t j = below(i + 1);
    std::swap(p[static_cast<std::size_t>(i)], p[static_cast<std::size_t>(j)]);
  }
  return p;
}

static std::uint64_t fnv1a(std::uint64_t h, const unsigned char* p, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

std::uint64_t hash_seed(std::uint64_t base, const std::string& tag) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  h = fnv1a(h, reinterpret_cast<const unsigned char*>(&base), sizeof(base));
  h = fnv1a(h, reinterpret_cast<const unsigned char*>(tag.data()), tag.size());
  return h;
}

std::uint64_t hash_seed(std::uint64_t base, std::uint64_t index) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  h = fnv1a(h, reinterpret_cast<const unsigned char*>(&base), sizeof(base));
  h = fnv1a(h, reinterpret_cast<const unsigned char*>(&index), sizeof(index));
  return h;
}

}  // namespace pwrf
