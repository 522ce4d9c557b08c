#include "c2f/autograd.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "c2f/error.hpp"

namespace c2f::ag {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ", ";
    out << shape[i];
  }
  out << ')';
  return out.str();
}

std::vector<double>& Node::ensure_grad() {
  if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  return grad;
}

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  if (numel(shape) != values.size()) {
    throw ShapeError("tensor shape " + shape_string(shape) + " does not match " +
                     std::to_string(values.size()) + " values");
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape) {
  const auto n = numel(shape);
  return constant(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  Tensor t = constant(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  return t;
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape()));
  return node_->value[0];
}

Tensor Tensor::detach() const { return constant(shape(), node_->value); }

void Tensor::backward() const {
  if (size() != 1) throw ShapeError("backward() requires a scalar output");
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order of the subgraph that
  // requires gradients.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  node_->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
  }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

Tensor make_result(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                   std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  const bool needs = g_grad_enabled &&
                     std::any_of(inputs.begin(), inputs.end(),
                                 [](const Tensor& t) { return t.requires_grad(); });
  if (needs) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& t : inputs) node->inputs.push_back(t.shared_node());
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

}  // namespace c2f::ag
