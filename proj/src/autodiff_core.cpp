// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The tfsed Authors

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "autodiff_internal.hpp"

namespace tfsed::ad {

using detail::as_mat;
using detail::parent_grad;
using detail::parent_value;
using detail::record;

namespace {
thread_local bool g_grad_enabled = true;

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  check(a == b, ErrorCode::kDimension,
        std::string(op) + ": shape mismatch " + shape_string(a) + " vs " +
            shape_string(b));
}
}  // namespace

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() noexcept { return g_grad_enabled; }

template <typename T>
void backward(const Var<T>& loss) {
  check(loss.defined(), ErrorCode::kState, "backward: undefined loss");
  check(loss.size() == 1, ErrorCode::kDimension,
        "backward: loss must be a scalar, got shape " +
            shape_string(loss.shape()));
  Node<T>* root = loss.node();
  check(!root->released, ErrorCode::kState,
        "backward: graph already consumed by a previous backward call");
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root, 0}};
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p && p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  auto seed = root->value.ensure_grad();
  seed[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn && n->value.has_grad()) n->backward_fn(*n);
  }
  for (Node<T>* n : order) {
    if (n->is_leaf) continue;
    n->backward_fn = nullptr;
    n->parents.clear();
    n->released = true;
  }
}

// ---------------------------------------------------------------------------
// Structural

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  Tensor<T> out(std::move(shape), AlignedVector<T>(x.data().begin(), x.data().end()));
  return record<T>(std::move(out), {x}, [](Node<T>& self) {
    auto gx = parent_grad(self, 0);
    auto g = self.value.grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
  });
}

template <typename T>
Var<T> detach(const Var<T>& x) {
  return Var<T>::constant(Tensor<T>(x.shape(), AlignedVector<T>(x.data().begin(), x.data().end())));
}

template <typename T>
Var<T> channels_to_features(const Var<T>& x) {
  check(x.value().rank() == 4, ErrorCode::kDimension,
        "channels_to_features expects [N x C x T x F], got " +
            shape_string(x.shape()));
  const std::size_t n = x.shape()[0], c = x.shape()[1], t = x.shape()[2],
                    f = x.shape()[3];
  Tensor<T> out({n, t, c * f});
  auto in = x.data();
  auto o = out.data();
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t s = 0; s < t; ++s)
        for (std::size_t k = 0; k < f; ++k)
          o[(b * t + s) * c * f + ch * f + k] = in[((b * c + ch) * t + s) * f + k];
  return record<T>(std::move(out), {x}, [n, c, t, f](Node<T>& self) {
    auto gx = parent_grad(self, 0);
    auto g = self.value.grad();
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t s = 0; s < t; ++s)
          for (std::size_t k = 0; k < f; ++k)
            gx[((b * c + ch) * t + s) * f + k] += g[(b * t + s) * c * f + ch * f + k];
  });
}

template <typename T>
Var<T> select_step(const Var<T>& x, std::size_t t) {
  check(x.value().rank() == 3, ErrorCode::kDimension,
        "select_step expects [N x T x K], got " + shape_string(x.shape()));
  const std::size_t n = x.shape()[0], steps = x.shape()[1], k = x.shape()[2];
  check(t < steps, ErrorCode::kDimension, "select_step: step out of range");
  Tensor<T> out({n, k});
  for (std::size_t b = 0; b < n; ++b)
    std::copy_n(x.data().begin() + (b * steps + t) * k, k,
                out.data().begin() + b * k);
  return record<T>(std::move(out), {x}, [n, steps, k, t](Node<T>& self) {
    auto gx = parent_grad(self, 0);
    auto g = self.value.grad();
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t j = 0; j < k; ++j) gx[(b * steps + t) * k + j] += g[b * k + j];
  });
}

template <typename T>
Var<T> stack_steps(const std::vector<Var<T>>& steps) {
  check(!steps.empty(), ErrorCode::kDimension, "stack_steps: no steps");
  const Shape& s0 = steps.front().shape();
  check(s0.size() == 2, ErrorCode::kDimension, "stack_steps expects [N x K] steps");
  const std::size_t n = s0[0], k = s0[1], count = steps.size();
  Tensor<T> out({n, count, k});
  for (std::size_t t = 0; t < count; ++t) {
    require_same_shape(steps[t].shape(), s0, "stack_steps");
    auto src = steps[t].data();
    for (std::size_t b = 0; b < n; ++b)
      std::copy_n(src.begin() + b * k, k, out.data().begin() + (b * count + t) * k);
  }
  return record<T>(std::move(out), steps, [n, k, count](Node<T>& self) {
    auto g = self.value.grad();
    for (std::size_t t = 0; t < count; ++t) {
      auto gs = parent_grad(self, t);
      if (gs.empty()) continue;
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t j = 0; j < k; ++j) gs[b * k + j] += g[(b * count + t) * k + j];
    }
  });
}

// ---------------------------------------------------------------------------
// Elementwise and reductions

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  auto out = Tensor<T>::uninitialized(a.shape());
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a.data()[i] + b.data()[i];
  return record<T>(std::move(out), {a, b}, [](Node<T>& self) {
    auto g = self.value.grad();
    for (std::size_t p = 0; p < 2; ++p) {
      auto gp = parent_grad(self, p);
      for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[i];
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  auto out = Tensor<T>::uninitialized(a.shape());
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a.data()[i] - b.data()[i];
  return record<T>(std::move(out), {a, b}, [](Node<T>& self) {
    auto g = self.value.grad();
    auto ga = parent_grad(self, 0);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
    auto gb = parent_grad(self, 1);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  auto out = Tensor<T>::uninitialized(a.shape());
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a.data()[i] * b.data()[i];
  return record<T>(std::move(out), {a, b}, [](Node<T>& self) {
    auto g = self.value.grad();
    const auto& av = parent_value(self, 0);
    const auto& bv = parent_value(self, 1);
    auto ga = parent_grad(self, 0);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * bv[i];
    auto gb = parent_grad(self, 1);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * av[i];
  });
}

template <typename T>
Var<T> scale(const Var<T>& x, T factor) {
  auto out = Tensor<T>::uninitialized(x.shape());
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = factor * x.data()[i];
  return record<T>(std::move(out), {x}, [factor](Node<T>& self) {
    auto g = self.value.grad();
    auto gx = parent_grad(self, 0);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += factor * g[i];
  });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  double acc = 0.0;
  for (T v : x.data()) acc += v;
  Tensor<T> out({1}, static_cast<T>(acc));
  return record<T>(std::move(out), {x}, [](Node<T>& self) {
    const T g = self.value.grad()[0];
    auto gx = parent_grad(self, 0);
    for (auto& v : gx) v += g;
  });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  return scale(sum(x), static_cast<T>(1.0 / static_cast<double>(x.size())));
}

template <typename T>
Var<T> max_last(const Var<T>& x) {
  const Shape& s = x.shape();
  const std::size_t k = s.back();
  const std::size_t rows = x.size() / k;
  Shape out_shape(s.begin(), s.end() - 1);
  if (out_shape.empty()) out_shape = {1};
  Tensor<T> out(out_shape);
  std::vector<std::size_t> argmax(rows);
  auto in = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j)
      if (in[r * k + j] > in[r * k + best]) best = j;
    argmax[r] = r * k + best;
    out[r] = in[argmax[r]];
  }
  return record<T>(std::move(out), {x}, [argmax = std::move(argmax)](Node<T>& self) {
    auto g = self.value.grad();
    auto gx = parent_grad(self, 0);
    for (std::size_t r = 0; r < argmax.size(); ++r) gx[argmax[r]] += g[r];
  });
}

template <typename T>
Var<T> rescale_to_sum(const Var<T>& x, T total, T eps, bool uniform_fallback) {
  const std::size_t k = x.shape().back();
  const std::size_t rows = x.size() / k;
  Tensor<T> out(x.shape());
  std::vector<T> denom(rows);
  std::vector<char> fallback(rows, 0);
  auto in = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    T s = 0;
    for (std::size_t j = 0; j < k; ++j) s += in[r * k + j];
    if (uniform_fallback && s <= T(0)) {
      fallback[r] = 1;
      for (std::size_t j = 0; j < k; ++j) out[r * k + j] = T(1);
      continue;
    }
    denom[r] = s + eps;
    for (std::size_t j = 0; j < k; ++j) out[r * k + j] = total * in[r * k + j] / denom[r];
  }
  return record<T>(std::move(out), {x},
                   [k, rows, total, denom = std::move(denom),
                    fallback = std::move(fallback)](Node<T>& self) {
                     auto g = self.value.grad();
                     auto gx = parent_grad(self, 0);
                     const auto& xv = parent_value(self, 0);
                     for (std::size_t r = 0; r < rows; ++r) {
                       if (fallback[r]) continue;
                       T dot = 0;
                       for (std::size_t j = 0; j < k; ++j) dot += g[r * k + j] * xv[r * k + j];
                       const T inv = T(1) / denom[r];
                       for (std::size_t j = 0; j < k; ++j)
                         gx[r * k + j] += total * inv * (g[r * k + j] - dot * inv);
                     }
                   });
}

// ---------------------------------------------------------------------------
// Activations

template <typename T>
Var<T> relu(const Var<T>& x) {
  auto out = Tensor<T>::uninitialized(x.shape());
  T* o = out.data().data();
  const T* xs = x.data().data();
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) o[i] = std::max(xs[i], T(0));
  return record<T>(std::move(out), {x}, [](Node<T>& self) {
    const T* g = self.value.grad().data();
    const T* y = self.value.data().data();
    auto gxs = parent_grad(self, 0);
    T* gx = gxs.data();
    for (std::size_t i = 0; i < gxs.size(); ++i) gx[i] += y[i] > T(0) ? g[i] : T(0);
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  auto out = Tensor<T>::uninitialized(x.shape());
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = T(1) / (T(1) + std::exp(-x.data()[i]));
  return record<T>(std::move(out), {x}, [](Node<T>& self) {
    auto g = self.value.grad();
    auto y = self.value.data();
    auto gx = parent_grad(self, 0);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * y[i] * (T(1) - y[i]);
  });
}

template <typename T>
Var<T> tanh(const Var<T>& x) {
  auto out = Tensor<T>::uninitialized(x.shape());
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::tanh(x.data()[i]);
  return record<T>(std::move(out), {x}, [](Node<T>& self) {
    auto g = self.value.grad();
    auto y = self.value.data();
    auto gx = parent_grad(self, 0);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * (T(1) - y[i] * y[i]);
  });
}

template <typename T>
Var<T> softmax(const Var<T>& x, std::size_t axis) {
  const Shape& s = x.shape();
  check(axis < s.size(), ErrorCode::kDimension, "softmax: axis out of range");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  Tensor<T> out(s);
  auto in = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * len * inner + i;
      T mx = in[base];
      for (std::size_t j = 1; j < len; ++j) mx = std::max(mx, in[base + j * inner]);
      T z = 0;
      for (std::size_t j = 0; j < len; ++j) {
        const T e = std::exp(in[base + j * inner] - mx);
        out[base + j * inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < len; ++j) out[base + j * inner] /= z;
    }
  return record<T>(std::move(out), {x}, [outer, inner, len](Node<T>& self) {
    auto g = self.value.grad();
    auto y = self.value.data();
    auto gx = parent_grad(self, 0);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t base = o * len * inner + i;
        T dot = 0;
        for (std::size_t j = 0; j < len; ++j) dot += g[base + j * inner] * y[base + j * inner];
        for (std::size_t j = 0; j < len; ++j)
          gx[base + j * inner] += y[base + j * inner] * (g[base + j * inner] - dot);
      }
  });
}

template <typename T>
Var<T> activation(const Var<T>& x, Activation kind, std::size_t softmax_axis) {
  switch (kind) {
    case Activation::kRelu: return relu(x);
    case Activation::kSigmoid: return sigmoid(x);
    case Activation::kTanh: return tanh(x);
    case Activation::kSoftmax: return softmax(x, softmax_axis);
  }
  fail(ErrorCode::kParameter, "unknown activation");
}

// ---------------------------------------------------------------------------
// Linear algebra

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  check(a.value().rank() == 2 && b.value().rank() == 2, ErrorCode::kDimension,
        "matmul expects rank-2 operands");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  check(b.shape()[0] == k, ErrorCode::kDimension,
        "matmul: inner dimensions disagree " + shape_string(a.shape()) + " x " +
            shape_string(b.shape()));
  Tensor<T> out({m, n});
  as_mat(out.data(), m, n).noalias() = as_mat(a.data(), m, k) * as_mat(b.data(), k, n);
  return record<T>(std::move(out), {a, b}, [m, k, n](Node<T>& self) {
    auto g = as_mat(std::span<const T>(self.value.grad()), m, n);
    if (auto ga = parent_grad(self, 0); !ga.empty())
      as_mat(ga, m, k).noalias() += g * as_mat(parent_value(self, 1).data(), k, n).transpose();
    if (auto gb = parent_grad(self, 1); !gb.empty())
      as_mat(gb, k, n).noalias() += as_mat(parent_value(self, 0).data(), m, k).transpose() * g;
  });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& bias) {
  check(x.value().rank() == 2 && w.value().rank() == 2, ErrorCode::kDimension,
        "linear expects rank-2 input and weight");
  const std::size_t m = x.shape()[0], k = x.shape()[1], n = w.shape()[0];
  check(w.shape()[1] == k, ErrorCode::kDimension,
        "linear: weight " + shape_string(w.shape()) + " does not accept input " +
            shape_string(x.shape()));
  if (bias.defined())
    check(bias.size() == n, ErrorCode::kDimension, "linear: bias length mismatch");
  Tensor<T> out({m, n});
  auto y = as_mat(out.data(), m, n);
  y.noalias() = as_mat(x.data(), m, k) * as_mat(w.data(), n, k).transpose();
  if (bias.defined()) {
    auto b = Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.data().data(),
                                                                  static_cast<Eigen::Index>(n));
    y.rowwise() += b;
  }
  return record<T>(std::move(out), {x, w, bias}, [m, k, n](Node<T>& self) {
    auto g = as_mat(std::span<const T>(self.value.grad()), m, n);
    if (auto gx = parent_grad(self, 0); !gx.empty())
      as_mat(gx, m, k).noalias() += g * as_mat(parent_value(self, 1).data(), n, k);
    if (auto gw = parent_grad(self, 1); !gw.empty())
      as_mat(gw, n, k).noalias() += g.transpose() * as_mat(parent_value(self, 0).data(), m, k);
    if (self.parents[2]) {
      if (auto gb = parent_grad(self, 2); !gb.empty()) {
        auto col = g.colwise().sum();
        for (std::size_t j = 0; j < n; ++j) gb[j] += col(static_cast<Eigen::Index>(j));
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Adam

template <typename T>
void adam_step(std::vector<Var<T>>& params, AdamState& state) {
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.size(), 0.0);
      state.second_moment.emplace_back(p.size(), 0.0);
    }
  }
  check(state.first_moment.size() == params.size() &&
            state.second_moment.size() == params.size(),
        ErrorCode::kState, "adam_step: moment arrays do not match parameter count");
  for (std::size_t i = 0; i < params.size(); ++i) {
    check(params[i].defined() && params[i].has_grad(), ErrorCode::kState,
          "adam_step: parameter " + std::to_string(i) + " has no gradient");
    check(state.first_moment[i].size() == params[i].size(), ErrorCode::kState,
          "adam_step: moment size mismatch for parameter " + std::to_string(i));
  }
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto data = params[i].mutable_value().data();
    auto grad = params[i].grad();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    for (std::size_t j = 0; j < data.size(); ++j) {
      const double g = grad[j];
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
      const double m_hat = m[j] / c1;
      const double v_hat = v[j] / c2;
      data[j] = static_cast<T>(data[j] - state.learning_rate * m_hat /
                                             (std::sqrt(v_hat) + state.epsilon));
    }
  }
}

#define TFSED_INSTANTIATE_CORE(T)                                                  \
  template void backward<T>(const Var<T>&);                                        \
  template Var<T> reshape<T>(const Var<T>&, Shape);                                \
  template Var<T> detach<T>(const Var<T>&);                                        \
  template Var<T> channels_to_features<T>(const Var<T>&);                          \
  template Var<T> select_step<T>(const Var<T>&, std::size_t);                      \
  template Var<T> stack_steps<T>(const std::vector<Var<T>>&);                      \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                            \
  template Var<T> sub<T>(const Var<T>&, const Var<T>&);                            \
  template Var<T> mul<T>(const Var<T>&, const Var<T>&);                            \
  template Var<T> scale<T>(const Var<T>&, T);                                      \
  template Var<T> sum<T>(const Var<T>&);                                           \
  template Var<T> mean<T>(const Var<T>&);                                          \
  template Var<T> max_last<T>(const Var<T>&);                                      \
  template Var<T> rescale_to_sum<T>(const Var<T>&, T, T, bool);                    \
  template Var<T> relu<T>(const Var<T>&);                                          \
  template Var<T> sigmoid<T>(const Var<T>&);                                       \
  template Var<T> tanh<T>(const Var<T>&);                                          \
  template Var<T> softmax<T>(const Var<T>&, std::size_t);                          \
  template Var<T> activation<T>(const Var<T>&, Activation, std::size_t);           \
  template Var<T> matmul<T>(const Var<T>&, const Var<T>&);                         \
  template Var<T> linear<T>(const Var<T>&, const Var<T>&, const Var<T>&);          \
  template void adam_step<T>(std::vector<Var<T>>&, AdamState&);

TFSED_INSTANTIATE_CORE(float)
TFSED_INSTANTIATE_CORE(double)

}  // namespace tfsed::ad
