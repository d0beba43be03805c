#pragma once

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "mrsn/tensor.hpp"

namespace mrsn {

template <typename T>
struct GraphNode {
  BasicArray<T> value;
  BasicArray<T> grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<GraphNode>> parents;
  std::function<void(GraphNode&)> backward_fn;

  /// Gradient buffer, zero-initialized on first touch.
  BasicArray<T>& grad_buffer() {
    if (grad.empty()) grad = BasicArray<T>(value.shape());
    return grad;
  }
  bool has_grad() const { return !grad.empty(); }
  void zero_grad() { grad = BasicArray<T>(); }
};

/// Handle to a value in a dynamically recorded computation graph.
template <typename T>
class Var {
 public:
  using Node = GraphNode<T>;

  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Var constant(BasicArray<T> value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    return Var(std::move(node));
  }
  static Var leaf(BasicArray<T> value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->requires_grad = true;
    return Var(std::move(node));
  }

  bool defined() const { return static_cast<bool>(node_); }
  const BasicArray<T>& value() const { return node_->value; }
  BasicArray<T>& mutable_value() { return node_->value; }
  const BasicArray<T>& grad() const { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Disables graph recording on this thread while alive (inference paths).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool saved_;
};

bool grad_enabled();

/// Creates an op result. The backward closure is recorded only when recording
/// is enabled and at least one parent requires a gradient; the closure reads
/// the result's gradient from its argument and accumulates into parents.
template <typename T>
Var<T> make_result(BasicArray<T> value, std::vector<Var<T>> parents,
                   std::function<void(GraphNode<T>&)> backward_fn) {
  auto node = std::make_shared<GraphNode<T>>();
  node->value = std::move(value);
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& p : parents) needs = needs || p.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node());
    node->backward_fn = std::move(backward_fn);
  }
  return Var<T>(std::move(node));
}

/// Reverse-mode sweep from a single-element root, seeding d(root) = 1.
template <typename T>
void backward(const Var<T>& root);

}  // namespace mrsn
