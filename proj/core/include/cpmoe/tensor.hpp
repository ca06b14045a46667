// SPDX-FileCopyrightText: © 2026 The cpmoe Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace cpmoe {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape) noexcept;
std::string to_string(const Shape& shape);

template <typename T>
struct Node;

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

/// One vertex of the reverse-mode record. `backward` reads this node's grad
/// and accumulates into the grads of `parents`.
template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<NodePtr<T>> parents;
  std::function<void(Node&)> backward;

  std::span<T> grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad;
  }
};

/// Dense row-major array with an attached gradient. Copies share the node.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(NodePtr<T> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const T> data() const { return node_->value; }
  /// Mutable access to values. Only meaningful for leaves (parameters,
  /// inputs); editing an interior node does not re-run its consumers.
  std::span<T> mutable_data() { return node_->value; }
  T item() const;
  T at(std::initializer_list<std::size_t> index) const;

  /// Gradient accumulated so far; all zeros when nothing has flowed in.
  std::span<const T> grad() const { return node_->grad_buffer(); }
  std::span<T> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad();

  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  /// Copy of the values with no history.
  Tensor detach() const;

  const char* op() const { return node_->op; }
  const NodePtr<T>& node() const noexcept { return node_; }

 private:
  NodePtr<T> node_;
};

/// Reverse sweep from a scalar. Interior gradients are reset before each
/// sweep; leaf gradients accumulate across calls until zero_grad().
template <typename T>
void backward(const Tensor<T>& loss);

/// Builds an interior node. Parents that do not require grad are dropped from
/// the record; when none require grad the result is a constant.
template <typename T>
Tensor<T> make_node(const char* op, Shape shape, std::vector<T> value,
                    std::initializer_list<Tensor<T>> parents,
                    std::function<void(Node<T>&)> backward_fn);

template <typename T>
Tensor<T> make_node(const char* op, Shape shape, std::vector<T> value,
                    const std::vector<Tensor<T>>& parents,
                    std::function<void(Node<T>&)> backward_fn);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace cpmoe
