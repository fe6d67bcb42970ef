#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace nextscale {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

// Strict numeric checking: when enabled, ops reject NaN/Inf inputs.
bool strict_checks_enabled();
void set_strict_checks(bool on);

// Gradient recording can be suspended (frozen models, data preparation).
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> values;
  std::vector<T> grad;  // allocated lazily, same length as values
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<std::shared_ptr<Node<T>>> parents;
  // Reads this node's grad, accumulates into the parents' grads.
  std::function<void(Node<T>&)> backward_fn;

  void ensure_grad() {
    if (grad.empty()) grad.assign(values.size(), T(0));
  }
};

}  // namespace detail

template <typename T>
class Tensor {
 public:
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto node = std::make_shared<detail::Node<T>>();
    node->values.assign(static_cast<size_t>(shape_numel(shape)), T(0));
    node->shape = std::move(shape);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.values().begin(), t.values().end(), value);
    return t;
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return full({}, value, requires_grad);
  }

  static Tensor from_values(Shape shape, std::vector<T> values,
                            bool requires_grad = false) {
    if (static_cast<int64_t>(values.size()) != shape_numel(shape)) {
      throw std::invalid_argument("Tensor::from_values: " + shape_str(shape) +
                                  " does not hold " +
                                  std::to_string(values.size()) + " elements");
    }
    auto node = std::make_shared<detail::Node<T>>();
    node->shape = std::move(shape);
    node->values = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t dim() const { return static_cast<int64_t>(node_->shape.size()); }
  int64_t numel() const { return static_cast<int64_t>(node_->values.size()); }
  int64_t size(int64_t d) const { return node_->shape[static_cast<size_t>(d)]; }

  std::vector<T>& values() { return node_->values; }
  const std::vector<T>& values() const { return node_->values; }
  T* data() { return node_->values.data(); }
  const T* data() const { return node_->values.data(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) {
    if (on && !node_->is_leaf) {
      throw std::logic_error("requires_grad can only be toggled on leaves");
    }
    node_->requires_grad = on;
  }

  bool has_grad() const { return !node_->grad.empty(); }
  std::vector<T>& grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  const std::vector<T>& grad() const { return node_->grad; }
  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }

  T item() const {
    if (numel() != 1) {
      throw std::invalid_argument("item() on non-scalar tensor " +
                                  shape_str(shape()));
    }
    return node_->values[0];
  }

  bool is_leaf() const { return node_->is_leaf; }
  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

// Reverse-mode sweep from a scalar loss. Grads of interior nodes are
// zeroed before the sweep; leaf grads accumulate additively across calls.
template <typename T>
void backward(const Tensor<T>& loss) {
  if (loss.numel() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got " +
                                shape_str(loss.shape()));
  }
  using Node = detail::Node<T>;
  using NodePtr = std::shared_ptr<Node>;

  // Iterative post-order topological sort over the recorded graph.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<NodePtr, size_t>> stack;
  stack.emplace_back(loss.node(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next_child] = stack.back();
    if (next_child < node->parents.size()) {
      NodePtr child = node->parents[next_child++];
      if (child->requires_grad && !visited.count(child.get())) {
        visited.insert(child.get());
        stack.emplace_back(std::move(child), 0);
      }
    } else {
      order.push_back(node.get());
      stack.pop_back();
    }
  }

  for (Node* node : order) {
    if (!node->is_leaf) node->grad.assign(node->values.size(), T(0));
  }
  Node* root = loss.node().get();
  root->ensure_grad();
  root->grad[0] += T(1);

  // `order` is post-order (parents before consumers); walk it backwards.
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward_fn) node->backward_fn(*node);
  }
}

namespace detail {

template <typename T>
void check_finite(const char* op, const std::vector<T>& values) {
  if (!strict_checks_enabled()) return;
  for (T v : values) {
    if (!std::isfinite(v)) {
      throw std::domain_error(std::string(op) +
                              ": non-finite value in input under strict checks");
    }
  }
}

// Wires a freshly computed op result into the graph. The backward closure
// is only recorded when recording is enabled and some input needs grads.
template <typename T>
Tensor<T> make_op(Shape shape, std::vector<T> values,
                  std::vector<typename Tensor<T>::NodePtr> parents,
                  std::function<void(Node<T>&)> backward_fn) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->is_leaf = false;
  if (grad_enabled()) {
    for (const auto& p : parents) {
      if (p->requires_grad) {
        node->requires_grad = true;
        break;
      }
    }
  }
  if (node->requires_grad) {
    node->parents = std::move(parents);
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor<T>(std::move(node));
}

}  // namespace detail

}  // namespace nextscale
