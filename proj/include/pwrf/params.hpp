#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pwrf/tensor.hpp"

namespace pwrf {

// Initialization recipes. Each parameter is drawn from an Rng seeded by
// (store seed, parameter name), so values do not depend on creation order.
struct Init {
  enum class Kind { zeros, ones, constant, uniform_sym, identity4_noise, uniform_avg };
  Kind kind = Kind::zeros;
  double a = 0.0;

  static Init zeros() { return {Kind::zeros, 0.0}; }
  static Init ones() { return {Kind::ones, 0.0}; }
  static Init constant(double v) { return {Kind::constant, v}; }
  // U(-bound, bound)
  static Init uniform_sym(double bound) { return {Kind::uniform_sym, bound}; }
  // Xavier bound from explicit fans.
  static Init xavier(std::int64_t fan_in, std::int64_t fan_out);
  // Flattened 4x4 identity blocks plus N(0, sigma^2) noise.
  static Init identity4_noise(double sigma) { return {Kind::identity4_noise, sigma}; }
  // Constant 1/n averaging weights (n from the tensor size).
  static Init uniform_avg() { return {Kind::uniform_avg, 0.0}; }
};

// Named-parameter registry. get() creates on first use and returns the
// existing tensor afterwards (shapes must agree), which is how parameter
// sharing across modality branches works: shared branches ask for the same
// name. std::map keeps iteration order deterministic.
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed) : seed_(seed) {}

  Tensor get(const std::string& name, const Shape& shape, const Init& init);
  bool has(const std::string& name) const { return params_.count(name) > 0; }

  // Insert a pre-built value (checkpoint loading). Fails on duplicates.
  void put(const std::string& name, Tensor value);

  std::vector<Parameter*> all();  // name order
  void zero_grads();
  std::uint64_t seed() const { return seed_; }
  std::size_t count() const { return params_.size(); }

 private:
  std::uint64_t seed_;
  std::map<std::string, Parameter> params_;
};

}  // namespace pwrf
