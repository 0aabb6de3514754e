// SPDX-License-Identifier: Apache-2.0
#include "hmt/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "hmt/error.hpp"

namespace hmt {
namespace {

thread_local bool g_grad_mode = true;

}  // namespace

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << "x";
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::vector<double>& detail::Node::ensure_grad() {
  if (grad.empty() && !value.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

Tensor::Tensor() = default;

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  auto node = std::make_shared<detail::Node>();
  node->value.assign(shape_size(shape), value);
  node->shape = std::move(shape);
  return Tensor(std::move(node));
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  if (shape_size(shape) != values.size()) {
    raise(ErrorKind::kDimension, "tensor shape " + shape_string(shape) + " holds " +
                                     std::to_string(shape_size(shape)) + " values, got " +
                                     std::to_string(values.size()));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value) { return from({}, {value}); }

Tensor Tensor::row(std::vector<double> values) {
  const std::size_t n = values.size();
  return from({1, n}, std::move(values));
}

std::size_t Tensor::rows() const {
  if (rank() != 2) raise(ErrorKind::kDimension, "expected rank-2 tensor, got " + shape_string(shape()));
  return shape()[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) raise(ErrorKind::kDimension, "expected rank-2 tensor, got " + shape_string(shape()));
  return shape()[1];
}

double Tensor::item() const {
  if (size() != 1) raise(ErrorKind::kContract, "item() on tensor of shape " + shape_string(shape()));
  return node_->value[0];
}

double Tensor::at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }

Tensor& Tensor::set_requires_grad(bool on) {
  node_->requires_grad = on;
  return *this;
}

Tensor Tensor::detach() const {
  auto node = std::make_shared<detail::Node>();
  node->shape = node_->shape;
  node->value = node_->value;
  return Tensor(std::move(node));
}

void Tensor::backward() const {
  if (!defined() || size() != 1) {
    raise(ErrorKind::kContract,
          "backward() needs a scalar loss, got shape " + (defined() ? shape_string(shape()) : "<undefined>"));
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS; reversing it gives a topological order with
  // the loss first.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  node_->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
  }
  // Interior gradients are scratch; only leaves keep accumulating.
  for (detail::Node* node : order) {
    if (!node->leaf) node->grad.clear();
  }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_mode) { g_grad_mode = false; }
NoGradGuard::~NoGradGuard() { g_grad_mode = previous_; }

bool grad_mode_enabled() { return g_grad_mode; }

}  // namespace hmt
