#pragma once

// Minimal reverse-mode automatic differentiation over dense float64 tensors.
//
// A Tensor is a cheap handle to a shared graph node. Operations in ops.hpp
// create new nodes and, when any input requires a gradient, record a backward
// closure. Tensor::backward() runs those closures in reverse topological order
// and accumulates gradients into every reachable node, including parameters,
// whose gradients persist until explicitly cleared.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace c2f::ag {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_string(const Shape& shape);

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;
  bool requires_grad = false;

  std::vector<double>& ensure_grad();
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor constant(Shape shape, std::vector<double> values);
  static Tensor zeros(Shape shape);
  // Leaf that accumulates gradients across backward passes.
  static Tensor parameter(Shape shape, std::vector<double> values);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  std::size_t rows() const { return node_->shape.at(0); }
  std::size_t cols() const { return node_->shape.at(1); }

  std::span<const double> values() const { return node_->value; }
  std::span<double> mutable_values() { return node_->value; }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->ensure_grad(); }
  double item() const;
  double at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  void zero_grad() { node_->grad.clear(); }

  // Copy of the values without graph history.
  Tensor detach() const;

  // Seeds d(self)/d(self) = 1 for a scalar and propagates to all inputs.
  void backward() const;

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& shared_node() const { return node_; }
  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Creates the output node of an op. The backward closure is attached only when
// recording is enabled and at least one input requires a gradient.
Tensor make_result(Shape shape, std::vector<double> values,
                   std::vector<Tensor> inputs,
                   std::function<void(Node&)> backward_fn);

}  // namespace c2f::ag
