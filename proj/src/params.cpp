#include "pwrf/params.hpp"

#include <cmath>

#include "pwrf/rng.hpp"

namespace pwrf {

Init Init::xavier(std::int64_t fan_in, std::int64_t fan_out) {
  return uniform_sym(std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)));
}

Tensor ParamStore::get(const std::string& name, const Shape& shape, const Init& init) {
  auto it = params_.find(name);
  if (it != params_.end()) {
    check_shape(it->second.tensor.shape() == shape,
                "parameter '" + name + "' requested with shape " + shape_str(shape) +
                    " but exists with " + shape_str(it->second.tensor.shape()));
    return it->second.tensor;
  }

  const std::int64_t n = numel(shape);
  std::vector<double> data(static_cast<std::size_t>(n), 0.0);
  Rng rng(hash_seed(seed_, name));
  switch (init.kind) {
    case Init::Kind::zeros:
      break;
    case Init::Kind::ones:
      std::fill(data.begin(), data.end(), 1.0);
      break;
    case Init::Kind::constant:
      std::fill(data.begin(), data.end(), init.a);
      break;
    case Init::Kind::uniform_sym:
      for (double& v : data) v = rng.uniform(-init.a, init.a);
      break;
    case Init::Kind::identity4_noise:
      check_shape(n % 16 == 0, "identity4_noise needs a multiple of 16 elements");
      for (std::int64_t b = 0; b < n / 16; ++b)
        for (int r = 0; r < 4; ++r)
          for (int c = 0; c < 4; ++c)
            data[static_cast<std::size_t>(b * 16 + r * 4 + c)] =
                (r == c ? 1.0 : 0.0) + (init.a > 0.0 ? rng.normal(0.0, init.a) : 0.0);
      break;
    case Init::Kind::uniform_avg:
      std::fill(data.begin(), data.end(), 1.0 / static_cast<double>(n));
      break;
  }

  Tensor t = Tensor::from_data(shape, std::move(data), true);
  params_.emplace(name, Parameter{t, name});
  return t;
}

void ParamStore::put(const std::string& name, Tensor value) {
  check_contract(params_.find(name) == params_.end(), "parameter '" + name + "' already exists");
  value.set_requires_grad(true);
  params_.emplace(name, Parameter{value, name});
}

std::vector<Parameter*> ParamStore::all() {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (auto& [k, v] : params_) out.push_back(&v);
  return out;
}

void ParamStore::zero_grads() {
  for (auto& [k, v] : params_) v.tensor.zero_grad();
}

}  // namespace pwrf
