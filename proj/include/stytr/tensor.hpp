#pragma once

// Dense row-major tensor with reverse-mode automatic differentiation.
//
// A Tensor is a cheap handle to an immutable graph node. Operations in
// ops.hpp / spatial.hpp produce new nodes; when any operand requires a
// gradient the result records its operands and a backward closure. Calling
// backward() on a scalar result walks the graph once in reverse topological
// order and accumulates gradients into every node that requires them.
//
// Leaf tensors created with requires_grad = true are the trainable
// parameters. Their values may be updated in place by an optimizer through
// mutable_data(); intermediate results are never mutated.

#include <algorithm>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "stytr/error.hpp"

namespace stytr {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const Node&)> backward;

  bool is_leaf() const { return parents.empty(); }

  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<Node<T>>;

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : node_(std::make_shared<Node<T>>()) {
    if (shape_numel(shape) != data.size()) {
      throw DimensionError("tensor shape " + shape_str(shape) + " holds " +
                           std::to_string(shape_numel(shape)) +
                           " elements but " + std::to_string(data.size()) +
                           " values were given");
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), T(0), requires_grad);
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return Tensor(Shape{1}, std::vector<T>{value}, requires_grad);
  }

  // Internal: wraps an already-built node.
  static Tensor from_node(NodePtr node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const NodePtr& node() const { return node_; }

  const Shape& shape() const { return node_->shape; }
  std::size_t ndim() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }
  const T& operator[](std::size_t i) const { return node_->data[i]; }

  // In-place access for optimizers and initializers. Only valid on leaves.
  std::span<T> mutable_data() {
    if (!node_->is_leaf()) {
      throw Error("mutable_data() is only allowed on leaf tensors");
    }
    return node_->data;
  }

  T item() const {
    if (numel() != 1) {
      throw DimensionError("item() needs a single-element tensor, got " +
                           shape_str(shape()));
    }
    return node_->data[0];
  }

  T at(std::initializer_list<std::size_t> index) const {
    if (index.size() != ndim()) {
      throw DimensionError("index rank does not match tensor " +
                           shape_str(shape()));
    }
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (std::size_t i : index) {
      if (i >= node_->shape[axis]) {
        throw DimensionError("index out of range for tensor " +
                             shape_str(shape()));
      }
      flat = flat * node_->shape[axis] + i;
      ++axis;
    }
    return node_->data[flat];
  }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }

  // Gradient accumulated by backward(); zeros if none reached this tensor.
  std::vector<T> grad() const {
    if (node_->grad.empty()) return std::vector<T>(numel(), T(0));
    return node_->grad;
  }

  void zero_grad() const { node_->grad.clear(); }

  // Copy of the values with no graph history.
  Tensor detach() const { return Tensor(shape(), node_->data, false); }

  // Reverse-mode sweep from this single-element tensor.
  void backward() const {
    if (numel() != 1) {
      throw DimensionError("backward() needs a scalar loss, got " +
                           shape_str(shape()));
    }
    if (!requires_grad()) {
      throw Error("backward() on a tensor that does not require grad");
    }
    const auto order = topological_order();
    for (Node<T>* n : order) {
      if (!n->is_leaf()) n->grad.clear();
    }
    node_->grad_buffer()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node<T>* n = *it;
      if (n->backward && !n->grad.empty()) n->backward(*n);
    }
  }

 private:
  // Post-order DFS restricted to nodes that require grad; each node once.
  std::vector<Node<T>*> topological_order() const {
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->parents.size()) {
        Node<T>* p = n->parents[next++].get();
        if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    return order;
  }

  NodePtr node_;
};

namespace detail {

// Builds an op result. Operands and the backward closure are only kept when
// at least one operand requires a gradient.
template <typename T, typename Backward>
Tensor<T> make_result(Shape shape, std::vector<T> data,
                      std::vector<std::shared_ptr<Node<T>>> parents,
                      Backward&& backward) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  const bool needs = std::any_of(parents.begin(), parents.end(),
                                 [](const auto& p) { return p->requires_grad; });
  if (needs) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::forward<Backward>(backward);
  }
  return Tensor<T>::from_node(std::move(node));
}

template <typename T>
void accumulate(Node<T>& target, std::span<const T> delta) {
  auto& g = target.grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

}  // namespace detail

}  // namespace stytr
