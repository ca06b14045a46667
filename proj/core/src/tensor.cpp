// SPDX-FileCopyrightText: © 2026 The cpmoe Authors
//
// SPDX-License-Identifier: Apache-2.0

#include "cpmoe/tensor.hpp"

#include <algorithm>
#include <unordered_set>
#include <utility>

#include "cpmoe/errors.hpp"

namespace cpmoe {

std::size_t numel(const Shape& shape) noexcept {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace {

template <typename T>
NodePtr<T> new_leaf(Shape shape, std::vector<T> values, bool requires_grad) {
  for (std::size_t e : shape) {
    if (e == 0) throw ConfigError("tensor: zero extent in shape " + to_string(shape));
  }
  if (numel(shape) != values.size()) {
    throw ConfigError("tensor: shape " + to_string(shape) + " does not hold " +
                      std::to_string(values.size()) + " values");
  }
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return node;
}

}  // namespace

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = cpmoe::numel(shape);
  return Tensor(new_leaf<T>(std::move(shape), std::vector<T>(n, T(0)), requires_grad));
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  const std::size_t n = cpmoe::numel(shape);
  return Tensor(new_leaf<T>(std::move(shape), std::vector<T>(n, value), requires_grad));
}

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> values, bool requires_grad) {
  return Tensor(new_leaf<T>(std::move(shape), std::move(values), requires_grad));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return Tensor(new_leaf<T>(Shape{1}, std::vector<T>{value}, requires_grad));
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) {
    throw ContractError("item(): tensor of shape " + to_string(shape()) + " is not scalar");
  }
  return node_->value[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) throw ContractError("at(): index rank mismatch");
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= node_->shape[axis]) throw ContractError("at(): index out of range");
    flat = flat * node_->shape[axis] + i;
    ++axis;
  }
  return node_->value[flat];
}

template <typename T>
void Tensor<T>::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(new_leaf<T>(node_->shape, node_->value, false));
}

template <typename T>
Tensor<T> make_node(const char* op, Shape shape, std::vector<T> value,
                    const std::vector<Tensor<T>>& parents,
                    std::function<void(Node<T>&)> backward_fn) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  bool any = false;
  for (const auto& p : parents) any = any || p.requires_grad();
  if (any) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (const auto& p : parents) node->parents.push_back(p.node());
    node->backward = std::move(backward_fn);
  }
  return Tensor<T>(std::move(node));
}

template <typename T>
Tensor<T> make_node(const char* op, Shape shape, std::vector<T> value,
                    std::initializer_list<Tensor<T>> parents,
                    std::function<void(Node<T>&)> backward_fn) {
  return make_node<T>(op, std::move(shape), std::move(value),
                      std::vector<Tensor<T>>(parents), std::move(backward_fn));
}

template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward(): loss must be a scalar, got shape " +
                        (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
  }
  Node<T>* root = loss.node().get();
  if (!root->requires_grad) return;

  // Iterative post-order DFS over nodes that carry gradient.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node<T>* n : order) {
    if (n->backward) n->grad.assign(n->value.size(), T(0));
  }
  root->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward) n->backward(*n);
  }
}

template class Tensor<float>;
template class Tensor<double>;

template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);

template Tensor<float> make_node<float>(const char*, Shape, std::vector<float>,
                                        std::initializer_list<Tensor<float>>,
                                        std::function<void(Node<float>&)>);
template Tensor<double> make_node<double>(const char*, Shape, std::vector<double>,
                                          std::initializer_list<Tensor<double>>,
                                          std::function<void(Node<double>&)>);
template Tensor<float> make_node<float>(const char*, Shape, std::vector<float>,
                                        const std::vector<Tensor<float>>&,
                                        std::function<void(Node<float>&)>);
template Tensor<double> make_node<double>(const char*, Shape, std::vector<double>,
                                          const std::vector<Tensor<double>>&,
                                          std::function<void(Node<double>&)>);

}  // namespace cpmoe
