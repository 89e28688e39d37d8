#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "omlab/array.hpp"

namespace omlab {

class Node;

namespace detail {

struct NodeImpl;
using BackwardFn = std::function<void(NodeImpl& self)>;

struct NodeImpl {
  Array value;
  std::vector<double> grad;  // empty until materialized
  bool requires_grad = false;
  bool is_leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<NodeImpl>> parents;
  BackwardFn backward;

  /// Gradient buffer of parent `i`, allocated on first use; nullptr when the
  /// parent does not take gradients.
  double* parent_grad(std::size_t i);
};

/// Wraps a freshly computed value into a graph node. Checks finiteness.
Node make_op(const char* op, Array value, std::vector<Node> parents, BackwardFn fn);

}  // namespace detail

/// Handle to a value in the dynamic computation graph. Copies share state.
class Node {
 public:
  Node() = default;

  /// Trainable leaf.
  static Node parameter(Array value);
  /// Leaf that never receives gradient.
  static Node constant(Array value);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Array& value() const { return impl_->value; }
  const Shape& shape() const { return impl_->value.shape; }
  std::size_t size() const { return impl_->value.size(); }
  double item() const;
  bool requires_grad() const { return impl_->requires_grad; }
  bool is_leaf() const { return impl_->is_leaf; }
  const char* op() const { return impl_->op; }

  bool has_grad() const { return !impl_->grad.empty(); }
  /// Gradient as an array of the value's shape (zeros if never materialized).
  Array grad() const;
  const std::vector<double>& grad_data() const { return impl_->grad; }
  std::vector<double>& mutable_grad() { return impl_->grad; }
  void zero_grad() { impl_->grad.clear(); }

  /// Leaf values may be updated in place by optimizers.
  Array& mutable_value();

  detail::NodeImpl* impl() const noexcept { return impl_.get(); }
  const std::shared_ptr<detail::NodeImpl>& shared() const noexcept { return impl_; }

 private:
  friend Node detail::make_op(const char*, Array, std::vector<Node>, detail::BackwardFn);
  explicit Node(std::shared_ptr<detail::NodeImpl> impl) : impl_(std::move(impl)) {}

  std::shared_ptr<detail::NodeImpl> impl_;
};

/// Reverse-mode sweep from a scalar. Gradients accumulate into every reachable
/// node with requires_grad set.
void backward(const Node& loss);

/// Whether new ops record their backward closures (thread-local).
bool grad_enabled() noexcept;

/// Disables graph recording for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace omlab
