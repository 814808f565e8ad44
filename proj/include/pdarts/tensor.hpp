#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "pdarts/error.hpp"

namespace pdarts {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

inline std::string to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace detail {

inline thread_local bool grad_disabled = false;

/// Running total of elements produced by primitive operations on this thread.
inline thread_local std::int64_t produced_elements = 0;

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this->grad and accumulates into parents' grads.
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

}  // namespace detail

inline bool grad_enabled() { return !detail::grad_disabled; }

/// Disables graph recording for its lifetime (inference, shape probes).
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_disabled) { detail::grad_disabled = true; }
  ~NoGradGuard() { detail::grad_disabled = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Dense row-major array with reverse-mode gradient tracking. Copies share
/// storage; a Tensor is a handle onto one node of the recorded graph.
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using Node = detail::Node<T>;

  Tensor() = default;

  static Tensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false) {
    if (pdarts::numel(shape) != static_cast<std::int64_t>(data.size())) {
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + to_string(shape));
    }
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), T(0), requires_grad);
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    for (auto d : shape) {
      if (d < 0) throw ShapeError("negative dimension in shape " + to_string(shape));
    }
    std::vector<T> data(static_cast<std::size_t>(pdarts::numel(shape)), value);
    return from_data(std::move(shape), std::move(data), requires_grad);
  }

  static Tensor scalar(T value) { return from_data({}, {value}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::int64_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t ndim() const { return node_->shape.size(); }
  std::int64_t numel() const { return static_cast<std::int64_t>(node_->data.size()); }

  std::span<const T> data() const { return node_->data; }
  /// Writable view; only meaningful for leaves (parameters, inputs).
  std::span<T> mutable_data() { return node_->data; }
  T item() const {
    if (node_->data.size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool value) { node_->requires_grad = value; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.clear(); }

  const char* op_name() const { return node_->op; }
  bool is_leaf() const { return node_->is_leaf(); }

  /// Same data, no history.
  Tensor detach() const { return from_data(shape(), node_->data, false); }

  /// Reverse pass from a scalar. Leaves accumulate into grad; the recorded
  /// graph behind this tensor is released afterwards.
  void backward() const;

  /// Internal access for operation implementations.
  const std::shared_ptr<Node>& impl() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  template <typename U>
  friend Tensor<U> make_result(Shape, std::vector<U>, std::vector<Tensor<U>>, const char*,
                               std::function<void(detail::Node<U>&)>);

  std::shared_ptr<Node> node_;
};

/// Wraps freshly computed data as a graph node. The backward closure is only
/// recorded when some input requires a gradient and recording is enabled.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, std::vector<Tensor<T>> inputs, const char* op,
                      std::function<void(detail::Node<T>&)> backward_fn) {
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  detail::produced_elements += static_cast<std::int64_t>(node->data.size());
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& in : inputs) needs = needs || (in.defined() && in.requires_grad());
  }
  if (needs) {
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (auto& in : inputs) node->parents.push_back(in.defined() ? in.impl() : nullptr);
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor<T>(std::move(node));
}

template <typename T>
void Tensor<T>::backward() const {
  if (node_->data.size() != 1) {
    throw ShapeError("backward() requires a scalar loss, got shape " + to_string(shape()));
  }
  if (!node_->requires_grad) return;
  if (node_->is_leaf()) {
    node_->ensure_grad()[0] += T(1);
    return;
  }

  // Iterative post-order DFS over interior nodes gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen{node_.get()};
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p && p->requires_grad && !p->is_leaf() && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->ensure_grad().assign(1, T(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->grad.empty()) n->backward_fn(*n);
  }
  for (Node* n : order) {
    n->backward_fn = nullptr;
    n->parents.clear();
    n->grad.clear();
    n->grad.shrink_to_fit();
  }
}

}  // namespace pdarts
