// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace hmt {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

// One vertex of the recorded computation graph. Values are row-major doubles.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until something flows into it
  bool requires_grad = false;
  bool leaf = true;
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this->grad and accumulates into inputs[i]->grad.
  std::function<void(Node&)> backward_fn;

  std::vector<double>& ensure_grad();
};

}  // namespace detail

/// Dense tensor handle with reverse-mode gradient support.
///
/// Copies share the underlying node, like a smart pointer. Operations in
/// ops.hpp record a graph whenever at least one input requires a gradient
/// and grad mode is enabled; `backward()` walks that graph once in reverse
/// topological order.
class Tensor {
 public:
  Tensor();

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from(Shape shape, std::vector<double> values);
  static Tensor scalar(double value);
  static Tensor row(std::vector<double> values);

  bool defined() const { return node_ != nullptr; }

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  // Only meaningful for rank-2 tensors.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const { return node_->value; }
  /// Mutating a tensor that is already part of a recorded graph invalidates
  /// that graph; intended for parameters between optimizer steps and for
  /// finite-difference probing.
  std::span<double> mutable_data() { return node_->value; }
  double item() const;
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on);
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.clear(); }

  /// New leaf holding a copy of the values, outside any graph.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  /// Accumulates d(this)/d(leaf) into every requires_grad leaf reachable
  /// from this scalar.
  void backward() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Disables graph recording on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled();

}  // namespace hmt
