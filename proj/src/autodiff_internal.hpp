// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The tfsed Authors

#pragma once

#include <Eigen/Core>

#include "tfsed/autodiff.hpp"

namespace tfsed::ad::detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

template <typename T>
MapMat<T> as_mat(std::span<T> s, std::size_t rows, std::size_t cols) {
  return MapMat<T>(s.data(), static_cast<Eigen::Index>(rows),
                   static_cast<Eigen::Index>(cols));
}

template <typename T>
ConstMapMat<T> as_mat(std::span<const T> s, std::size_t rows, std::size_t cols) {
  return ConstMapMat<T>(s.data(), static_cast<Eigen::Index>(rows),
                        static_cast<Eigen::Index>(cols));
}

/// Creates the result node of an op. The closure is kept only when grad
/// recording is on and some input needs a gradient.
template <typename T>
Var<T> record(Tensor<T> value, const std::vector<Var<T>>& inputs,
              std::function<void(Node<T>&)> backward_fn) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->is_leaf = false;
    node->parents.reserve(inputs.size());
    for (const auto& in : inputs) node->parents.push_back(in.shared());
    node->backward_fn = std::move(backward_fn);
  }
  return Var<T>(std::move(node));
}

/// Gradient buffer of parent `i` if it participates in backprop, else empty.
template <typename T>
std::span<T> parent_grad(Node<T>& self, std::size_t i) {
  Node<T>* p = self.parents[i].get();
  if (p == nullptr || !p->requires_grad) return {};
  return p->value.ensure_grad();
}

template <typename T>
const Tensor<T>& parent_value(const Node<T>& self, std::size_t i) {
  return self.parents[i]->value;
}

}  // namespace tfsed::ad::detail
