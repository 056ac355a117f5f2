#pragma once

// Dense row-major tensors with reverse-mode automatic differentiation.
//
// A Tensor is a cheap handle to a shared node. Nodes produced by
// differentiable operations keep their parents and a backward rule, so the
// set of nodes reachable from a loss forms the tape. Nodes are created in
// dependency order, which makes the reachable graph a DAG; backward() visits
// it in reverse topological order, once per node.

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "alcfcn/errors.hpp"

namespace alcfcn {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw DimensionError("negative extent in shape");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

inline std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace detail {
inline thread_local bool grad_enabled = true;
}  // namespace detail

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled) { detail::grad_enabled = false; }
  ~NoGradGuard() { detail::grad_enabled = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() { return detail::grad_enabled; }

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  bool consumed = false;
  std::string_view op = "leaf";
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward;

  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
  bool is_leaf() const { return !backward; }
};

template <typename T>
class Tensor {
 public:
  using value_type = T;
  using Node = TensorNode<T>;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false) {
    if (shape_numel(shape) != data.size()) {
      throw DimensionError("data length " + std::to_string(data.size()) + " does not match shape " +
                           shape_string(shape));
    }
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }
  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    std::vector<T> data(shape_numel(shape), value);
    return from_data(std::move(shape), std::move(data), requires_grad);
  }
  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), T(0), requires_grad);
  }
  static Tensor scalar(T value, bool requires_grad = false) {
    return from_data({}, {value}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  int dim(std::size_t i) const {
    if (i >= rank()) throw DimensionError("dimension index out of range for " + shape_string(shape()));
    return node_->shape[i];
  }
  std::size_t numel() const { return node_->data.size(); }
  std::span<const T> data() const { return node_->data; }
  T operator[](std::size_t i) const { return node_->data[i]; }

  // In-place access for leaves such as parameters; graph results are immutable.
  std::span<T> mutable_data() {
    if (!node_->is_leaf()) throw ContractError("mutable_data() on a non-leaf tensor");
    return node_->data;
  }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  void zero_grad() {
    node_->grad.clear();
    node_->consumed = false;
  }
  void scale_grad(T factor) {
    for (auto& g : node_->grad) g *= factor;
  }
  std::string_view op() const { return node_->op; }

  T item() const {
    if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape()));
    return node_->data[0];
  }

  Tensor detach() const { return from_data(shape(), node_->data, false); }

  template <typename U>
  Tensor<U> cast(bool requires_grad) const {
    std::vector<U> out(node_->data.begin(), node_->data.end());
    return Tensor<U>::from_data(shape(), std::move(out), requires_grad);
  }

  const std::shared_ptr<Node>& node() const { return node_; }

  // Populates grad on every requires_grad ancestor of this scalar.
  void backward() const {
    if (numel() != 1) {
      throw ContractError("backward() requires a scalar loss, got shape " + shape_string(shape()));
    }
    if (!node_->requires_grad) throw ContractError("backward() on a tensor that does not require grad");
    if (node_->consumed) {
      throw ContractError("backward() already ran from this loss; gradients would accumulate twice");
    }

    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
    visited.insert(node_.get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        Node* parent = node->parents[next++].get();
        if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }

    node_->grad_buffer()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node* n = *it;
      if (n->backward && !n->grad.empty()) n->backward(*n);
    }
    node_->consumed = true;
  }

 private:
  std::shared_ptr<Node> node_;
};

// Creates the result node of a differentiable operation. The backward rule and
// parent links are only retained when recording is on and a parent needs grad.
template <typename T>
Tensor<T> make_result(std::string_view op, Shape shape, std::vector<T> data,
                      const std::vector<Tensor<T>>& parents,
                      std::function<void(TensorNode<T>&)> backward) {
  auto node = std::make_shared<TensorNode<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& p : parents) needs = needs || p.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    for (const auto& p : parents) node->parents.push_back(p.node());
    node->backward = std::move(backward);
  }
  return Tensor<T>(std::move(node));
}

// Gradient buffer of parent `i`, or nullptr when that parent is not tracked.
template <typename T>
std::vector<T>* parent_grad(TensorNode<T>& self, std::size_t i) {
  auto& p = *self.parents[i];
  return p.requires_grad ? &p.grad_buffer() : nullptr;
}

}  // namespace alcfcn
