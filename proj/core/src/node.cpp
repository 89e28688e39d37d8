#include "omlab/node.hpp"

#include <unordered_set>

#include "omlab/error.hpp"

namespace omlab {

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

namespace detail {

double* NodeImpl::parent_grad(std::size_t i) {
  NodeImpl& p = *parents[i];
  if (!p.requires_grad) return nullptr;
  if (p.grad.empty()) p.grad.assign(p.value.size(), 0.0);
  return p.grad.data();
}

Node make_op(const char* op, Array value, std::vector<Node> parents, BackwardFn fn) {
  if (!value.all_finite()) {
    throw NumericError(std::string("non-finite output from ") + op + " " + shape_string(value.shape));
  }
  auto impl = std::make_shared<NodeImpl>();
  impl->value = std::move(value);
  impl->op = op;
  impl->is_leaf = false;
  bool needs = false;
  if (g_grad_enabled) {
    for (const Node& p : parents) needs = needs || p.requires_grad();
  }
  if (needs) {
    impl->requires_grad = true;
    impl->parents.reserve(parents.size());
    for (const Node& p : parents) impl->parents.push_back(p.shared());
    impl->backward = std::move(fn);
  }
  return Node(std::move(impl));
}

}  // namespace detail

Node Node::parameter(Array value) {
  auto impl = std::make_shared<detail::NodeImpl>();
  impl->value = std::move(value);
  impl->requires_grad = true;
  return Node(std::move(impl));
}

Node Node::constant(Array value) {
  auto impl = std::make_shared<detail::NodeImpl>();
  impl->value = std::move(value);
  impl->requires_grad = false;
  return Node(std::move(impl));
}

double Node::item() const {
  if (impl_->value.size() != 1) {
    throw ContractError("Node::item on shape " + shape_string(impl_->value.shape));
  }
  return impl_->value[0];
}

Array Node::grad() const {
  if (impl_->grad.empty()) return Array(impl_->value.shape, 0.0);
  return Array(impl_->value.shape, impl_->grad);
}

Array& Node::mutable_value() {
  if (!impl_->is_leaf) throw ContractError("Node::mutable_value on a non-leaf node");
  return impl_->value;
}

void backward(const Node& loss) {
  if (!loss.defined()) throw ContractError("backward: undefined node");
  if (loss.size() != 1) {
    throw ContractError("backward: loss must be scalar, got " + shape_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS yields a topological order (parents first).
  std::vector<detail::NodeImpl*> order;
  std::unordered_set<detail::NodeImpl*> visited;
  std::vector<std::pair<detail::NodeImpl*, std::size_t>> stack;
  stack.emplace_back(loss.impl(), 0);
  visited.insert(loss.impl());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::NodeImpl* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  detail::NodeImpl* root = loss.impl();
  if (root->grad.empty()) root->grad.assign(1, 0.0);
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::NodeImpl* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
}

}  // namespace omlab
