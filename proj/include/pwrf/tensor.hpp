#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "pwrf/error.hpp"

namespace pwrf {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& s);
std::string shape_str(const Shape& s);

// Dense row-major float64 tensor with an optional reverse-mode tape.
//
// A Tensor is a handle onto a graph node; ops link output nodes to their
// input nodes, and backward() walks the graph in reverse topological order.
// Values are immutable after construction except for gradient buffers.
// There is no global state: independent graphs can live on separate threads.
class Tensor {
 public:
  struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until first needed
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> inputs;
    // Reads this->grad, accumulates into inputs' grad buffers.
    std::function<void(Node&)> backward_fn;

    std::vector<double>& grad_buf();  // lazily zero-initialized
  };

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double v, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double v);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  std::int64_t dim(int axis) const { return node_->shape[static_cast<std::size_t>(axis)]; }
  std::int64_t size() const { return static_cast<std::int64_t>(node_->value.size()); }

  const double* data() const { return node_->value.data(); }
  const std::vector<double>& values() const { return node_->value; }
  double item() const;
  double at(std::initializer_list<std::int64_t> idx) const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool rg);  // leaves only
  bool has_grad() const { return !node_->grad.empty(); }
  const std::vector<double>& grad() const;
  void zero_grad();

  // Reverse-mode sweep from a scalar. Gradients accumulate across calls
  // until zero_grad(). Non-scalar callee is a contract error.
  void backward() const;

  std::shared_ptr<Node> node() const { return node_; }
  Node* raw() const { return node_.get(); }

  // Mutable access for construction-time fills (leaves only; using it on an
  // op output would break the recorded graph).
  std::vector<double>& mutable_values();

 private:
  std::shared_ptr<Node> node_;
};

// A named leaf with requires_grad, the unit of optimization/persistence.
struct Parameter {
  Tensor tensor;
  std::string name;
};

// Max over sampled parameter components of
//   |analytic - central_difference| / max(1, |central_difference|).
// f must rebuild its graph from the live parameter tensors on every call.
// components_per_param < 0 checks every component; otherwise a deterministic
// sample (seeded by select_seed and the parameter name) of that many.
double grad_check(const std::function<Tensor()>& f, const std::vector<Parameter*>& params,
                  double eps = 1e-5, int components_per_param = -1,
                  std::uint64_t select_seed = 0);

namespace detail {
// Shared op-construction helper: allocates the node, wires inputs, checks
// finiteness of the forward value.
Tensor make_op(const char* name, Shape shape, std::vector<double> value,
               std::vector<Tensor> inputs, std::function<void(Tensor::Node&)> backward_fn);
void accumulate(std::vector<double>& dst, const std::vector<double>& src);
}  // namespace detail

}  // namespace pwrf
