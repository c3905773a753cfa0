// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The tfsed Authors

#pragma once

// Reverse-mode automatic differentiation over dense tensors.
//
// Every op records a node holding its forward value and a closure that
// pushes the node's gradient into its parents. backward() runs the closures
// in reverse topological order and then releases the graph. All ops are
// templated on the scalar so the same code runs in float for training and
// in double for finite-difference replay.

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "tfsed/rng.hpp"
#include "tfsed/tensor.hpp"

namespace tfsed::ad {

template <typename T>
struct Node {
  Tensor<T> value;
  bool requires_grad = false;
  bool is_leaf = true;
  bool released = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
};

/// Shared handle to a graph node. Copies alias the same node.
template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Var constant(Tensor<T> value) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    return Var(std::move(n));
  }

  static Var parameter(Tensor<T> value) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = true;
    return Var(std::move(n));
  }

  bool defined() const noexcept { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool has_grad() const { return node_->value.has_grad(); }
  std::span<const T> grad() const { return node_->value.grad(); }
  std::span<const T> data() const { return node_->value.data(); }
  void zero_grad() { node_->value.zero_grad(); }
  void clear_grad() { node_->value.clear_grad(); }
  Node<T>* node() const noexcept { return node_.get(); }
  const std::shared_ptr<Node<T>>& shared() const noexcept { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled() noexcept;

/// Populates gradients of every reachable node from a scalar loss. Gradients
/// of leaves accumulate across calls; the graph itself is single-use.
template <typename T>
void backward(const Var<T>& loss);

enum class Mode { kTrain, kEval };
enum class Padding { kSame, kValid };
enum class Activation { kRelu, kSigmoid, kTanh, kSoftmax };

struct Conv2dOptions {
  std::size_t stride_t = 1;
  std::size_t stride_f = 1;
  Padding padding = Padding::kSame;
};

/// Running statistics owned by one batchnorm layer.
template <typename T>
struct BatchNormStats {
  std::vector<T> mean;
  std::vector<T> var;
  std::uint64_t updates = 0;
  double momentum = 0.9;
  double eps = 1e-5;

  explicit BatchNormStats(std::size_t channels = 0)
      : mean(channels, T(0)), var(channels, T(1)) {}

  template <typename U>
  BatchNormStats<U> cast() const {
    BatchNormStats<U> out(mean.size());
    std::copy(mean.begin(), mean.end(), out.mean.begin());
    std::copy(var.begin(), var.end(), out.var.begin());
    out.updates = updates;
    out.momentum = momentum;
    out.eps = eps;
    return out;
  }
};

template <typename T>
struct GruWeights {
  Var<T> w_ih;  // [3U x D], gate rows ordered z, r, n
  Var<T> w_hh;  // [3U x U]
  Var<T> b;     // [3U]
};

// Structural ops.
template <typename T> Var<T> reshape(const Var<T>& x, Shape shape);
template <typename T> Var<T> detach(const Var<T>& x);
template <typename T> Var<T> channels_to_features(const Var<T>& x);
template <typename T> Var<T> select_step(const Var<T>& x, std::size_t t);
template <typename T> Var<T> stack_steps(const std::vector<Var<T>>& steps);

// Elementwise and reductions.
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& x, T factor);
template <typename T> Var<T> sum(const Var<T>& x);
template <typename T> Var<T> mean(const Var<T>& x);
template <typename T> Var<T> max_last(const Var<T>& x);
template <typename T>
Var<T> rescale_to_sum(const Var<T>& x, T total, T eps, bool uniform_fallback);

// Activations. softmax normalizes along `axis`.
template <typename T> Var<T> relu(const Var<T>& x);
template <typename T> Var<T> sigmoid(const Var<T>& x);
template <typename T> Var<T> tanh(const Var<T>& x);
template <typename T> Var<T> softmax(const Var<T>& x, std::size_t axis);
template <typename T>
Var<T> activation(const Var<T>& x, Activation kind, std::size_t softmax_axis = 0);

// Linear algebra.
template <typename T> Var<T> matmul(const Var<T>& a, const Var<T>& b);
/// x [m x k] times w^T [k x n] plus optional bias [n].
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& bias);

// Convolutional stack. Inputs are [C x T x F] or batched [N x C x T x F].
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& kernels, const Var<T>& bias,
              Conv2dOptions options = {});
template <typename T>
Var<T> maxpool2d(const Var<T>& x, std::size_t window_t, std::size_t window_f);
template <typename T>
Var<T> batchnorm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                 BatchNormStats<T>& stats, Mode mode);
template <typename T>
Var<T> dropout(const Var<T>& x, double p, Mode mode, Rng& rng);

// Recurrent ops. gx holds the precomputed input projection [N x 3U].
template <typename T>
Var<T> gru_step(const Var<T>& gx, const Var<T>& h_prev, const Var<T>& w_hh);
template <typename T>
Var<T> gru_cell(const Var<T>& x, const Var<T>& h_prev, const GruWeights<T>& w);

/// Bias-corrected Adam state for a fixed list of parameters.
struct AdamState {
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::uint64_t step_count = 0;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename T>
void adam_step(std::vector<Var<T>>& params, AdamState& state);

template <typename T>
void zero_grads(std::vector<Var<T>>& params) {
  for (auto& p : params) p.zero_grad();
}

}  // namespace tfsed::ad
