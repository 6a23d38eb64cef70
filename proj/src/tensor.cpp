#include "pwrf/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "pwrf/kernels.hpp"
#include "pwrf/rng.hpp"

namespace pwrf {

std::int64_t numel(const Shape& s) {
  std::int64_t n = 1;
  for (std::int64_t e : s) {
    check_shape(e >= 1, "extent must be positive, got " + shape_str(s));
    n *= e;
  }
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

std::vector<double>& Tensor::Node::grad_buf() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return from_data(std::move(shape), {}, requires_grad);
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
  std::int64_t n = numel(shape);
  return from_data(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), v),
                   requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  const std::int64_t n = numel(shape);
  if (data.empty()) data.assign(static_cast<std::size_t>(n), 0.0);
  check_shape(static_cast<std::int64_t>(data.size()) == n,
              "data length " + std::to_string(data.size()) + " != numel of " + shape_str(shape));
  for (double v : data)
    check(std::isfinite(v), "nonfinite", "tensor constructed with non-finite value");
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double v) { return from_data({1}, {v}); }

double Tensor::item() const {
  check_contract(size() == 1, "item() on non-scalar tensor " + shape_str(shape()));
  return node_->value[0];
}

double Tensor::at(std::initializer_list<std::int64_t> idx) const {
  check_shape(static_cast<int>(idx.size()) == rank(), "at(): index rank mismatch");
  std::int64_t flat = 0;
  int a = 0;
  for (std::int64_t i : idx) {
    check_shape(i >= 0 && i < dim(a), "at(): index out of range");
    flat = flat * dim(a) + i;
    ++a;
  }
  return node_->value[static_cast<std::size_t>(flat)];
}

void Tensor::set_requires_grad(bool rg) {
  check_contract(node_->inputs.empty(), "requires_grad can only be toggled on leaves");
  node_->requires_grad = rg;
}

const std::vector<double>& Tensor::grad() const {
  return node_->grad_buf();
}

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

std::vector<double>& Tensor::mutable_values() { return node_->value; }

void Tensor::backward() const {
  check_contract(size() == 1, "backward() requires a scalar, got " + shape_str(shape()));
  if (!node_->requires_grad) return;

  // Iterative post-order DFS over grad-requiring nodes.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      Node* child = n->inputs[next++].get();
      if (child->requires_grad && !seen.count(child)) {
        seen.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  // Interior grads are per-sweep scratch; only leaf (parameter) grads
  // accumulate across repeated backward calls.
  for (Node* n : order)
    if (!n->inputs.empty() && !n->grad.empty()) std::fill(n->grad.begin(), n->grad.end(), 0.0);

  node_->grad_buf()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn) n->backward_fn(*n);
  }
}

namespace detail {

Tensor make_op(const char* name, Shape shape, std::vector<double> value,
               std::vector<Tensor> inputs, std::function<void(Tensor::Node&)> backward_fn) {
  const std::int64_t n = numel(shape);
  check_shape(static_cast<std::int64_t>(value.size()) == n, std::string(name) + ": bad value size");
  for (double v : value)
    check(std::isfinite(v), "nonfinite", std::string(name) + " produced a non-finite value");

  auto node = std::make_shared<Tensor::Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = name;
  bool rg = false;
  for (const Tensor& t : inputs) rg = rg || t.requires_grad();
  node->requires_grad = rg;
  if (rg) {
    node->inputs.reserve(inputs.size());
    for (Tensor& t : inputs) node->inputs.push_back(t.node());
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

void accumulate(std::vector<double>& dst, const std::vector<double>& src) {
  kernels::active().add(dst.data(), src.data(), dst.data(), static_cast<std::int64_t>(dst.size()));
}

}  // namespace detail

double grad_check(const std::function<Tensor()>& f, const std::vector<Parameter*>& params,
                  double eps, int components_per_param, std::uint64_t select_seed) {
  check_contract(eps > 0, "grad_check: eps must be positive");
  for (Parameter* p : params) p->tensor.zero_grad();
  Tensor loss = f();
  loss.backward();

  double worst = 0.0;
  for (Parameter* p : params) {
    const std::vector<double>& analytic = p->tensor.grad();
    std::vector<double>& vals = p->tensor.mutable_values();
    const std::int64_t n = static_cast<std::int64_t>(vals.size());

    std::vector<std::int64_t> picks;
    if (components_per_param < 0 || components_per_param >= n) {
      picks.resize(static_cast<std::size_t>(n));
      for (std::int64_t i = 0; i < n; ++i) picks[static_cast<std::size_t>(i)] = i;
    } else {
      Rng rng(hash_seed(select_seed, p->name));
      std::unordered_set<std::int64_t> chosen;
      while (static_cast<int>(chosen.size()) < components_per_param)
        chosen.insert(rng.below(n));
      picks.assign(chosen.begin(), chosen.end());
      std::sort(picks.begin(), picks.end());
    }

    for (std::int64_t i : picks) {
      const double orig = vals[static_cast<std::size_t>(i)];
      vals[static_cast<std::size_t>(i)] = orig + eps;
      const double lp = f().item();
      vals[static_cast<std::size_t>(i)] = orig - eps;
      const double lm = f().item();
      vals[static_cast<std::size_t>(i)] = orig;
      const double numeric = (lp - lm) / (2.0 * eps);
      const double rel =
          std::fabs(analytic[static_cast<std::size_t>(i)] - numeric) / std::max(1.0, std::fabs(numeric));
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace pwrf
