// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The tfsed Authors

#include <cmath>

#include "autodiff_internal.hpp"

namespace tfsed::ad {

using detail::as_mat;
using detail::RowMat;
using detail::parent_grad;
using detail::parent_value;
using detail::record;

// h' = (1 - z) * n + z * h with
//   z = sigmoid(gx_z + U_z h), r = sigmoid(gx_r + U_r h),
//   n = tanh(gx_n + r * (U_n h)).
// Input biases live in gx; the recurrent projection carries none.
template <typename T>
Var<T> gru_step(const Var<T>& gx, const Var<T>& h_prev, const Var<T>& w_hh) {
  check(gx.value().rank() == 2 && h_prev.value().rank() == 2 && w_hh.value().rank() == 2,
        ErrorCode::kDimension, "gru_step expects rank-2 operands");
  const std::size_t n = h_prev.shape()[0], u = h_prev.shape()[1];
  check(gx.shape()[0] == n && gx.shape()[1] == 3 * u, ErrorCode::kDimension,
        "gru_step: input projection " + shape_string(gx.shape()) + " incompatible with state " +
            shape_string(h_prev.shape()));
  check(w_hh.shape()[0] == 3 * u && w_hh.shape()[1] == u, ErrorCode::kDimension,
        "gru_step: recurrent weight must be [3U x U], got " + shape_string(w_hh.shape()));

  RowMat<T> gh = as_mat(h_prev.data(), n, u) * as_mat(w_hh.data(), 3 * u, u).transpose();
  std::vector<T> z(n * u), r(n * u), cand(n * u), ghn(n * u);
  Tensor<T> out({n, u});
  auto x = gx.data();
  auto h = h_prev.data();
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t j = 0; j < u; ++j) {
      const std::size_t i = b * u + j;
      const auto row = static_cast<Eigen::Index>(b);
      const T az = x[b * 3 * u + j] + gh(row, static_cast<Eigen::Index>(j));
      const T ar = x[b * 3 * u + u + j] + gh(row, static_cast<Eigen::Index>(u + j));
      z[i] = T(1) / (T(1) + std::exp(-az));
      r[i] = T(1) / (T(1) + std::exp(-ar));
      ghn[i] = gh(row, static_cast<Eigen::Index>(2 * u + j));
      cand[i] = std::tanh(x[b * 3 * u + 2 * u + j] + r[i] * ghn[i]);
      out[i] = (T(1) - z[i]) * cand[i] + z[i] * h[i];
    }

  return record<T>(std::move(out), {gx, h_prev, w_hh},
                   [n, u, z = std::move(z), r = std::move(r), cand = std::move(cand),
                    ghn = std::move(ghn)](Node<T>& self) {
                     auto g = self.value.grad();
                     const auto& hv = parent_value(self, 1);
                     const auto& wv = parent_value(self, 2);
                     RowMat<T> dgx(n, 3 * u);
                     for (std::size_t b = 0; b < n; ++b)
                       for (std::size_t j = 0; j < u; ++j) {
                         const std::size_t i = b * u + j;
                         const auto row = static_cast<Eigen::Index>(b);
                         const T dz = g[i] * (hv[i] - cand[i]);
                         const T dn = g[i] * (T(1) - z[i]);
                         const T dan = dn * (T(1) - cand[i] * cand[i]);
                         const T dr = dan * ghn[i];
                         dgx(row, static_cast<Eigen::Index>(j)) = dz * z[i] * (T(1) - z[i]);
                         dgx(row, static_cast<Eigen::Index>(u + j)) = dr * r[i] * (T(1) - r[i]);
                         dgx(row, static_cast<Eigen::Index>(2 * u + j)) = dan;
                       }
                     if (auto gg = parent_grad(self, 0); !gg.empty())
                       as_mat(gg, n, 3 * u) += dgx;
                     // Gradient w.r.t. the recurrent projection differs from dgx
                     // only in the candidate block, which is gated by r.
                     RowMat<T> dgh = dgx;
                     for (std::size_t b = 0; b < n; ++b)
                       for (std::size_t j = 0; j < u; ++j)
                         dgh(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(2 * u + j)) *=
                             r[b * u + j];
                     if (auto gh = parent_grad(self, 1); !gh.empty()) {
                       auto ghm = as_mat(gh, n, u);
                       ghm.noalias() += dgh * as_mat(wv.data(), 3 * u, u);
                       for (std::size_t i = 0; i < n * u; ++i) gh[i] += g[i] * z[i];
                     }
                     if (auto gw = parent_grad(self, 2); !gw.empty())
                       as_mat(gw, 3 * u, u).noalias() += dgh.transpose() * as_mat(hv.data(), n, u);
                   });
}

template <typename T>
Var<T> gru_cell(const Var<T>& x, const Var<T>& h_prev, const GruWeights<T>& w) {
  const bool vector_input = x.value().rank() == 1;
  check(vector_input == (h_prev.value().rank() == 1), ErrorCode::kDimension,
        "gru_cell: input and state must both be vectors or both be batches");
  Var<T> xb = vector_input ? reshape(x, {1, x.size()}) : x;
  Var<T> hb = vector_input ? reshape(h_prev, {1, h_prev.size()}) : h_prev;
  check(w.w_ih.value().rank() == 2 && w.w_ih.shape()[1] == xb.shape()[1], ErrorCode::kDimension,
        "gru_cell: input weight does not match input dimension");
  Var<T> h = gru_step(linear(xb, w.w_ih, w.b), hb, w.w_hh);
  return vector_input ? reshape(h, {h.size()}) : h;
}

template Var<float> gru_step<float>(const Var<float>&, const Var<float>&, const Var<float>&);
template Var<double> gru_step<double>(const Var<double>&, const Var<double>&, const Var<double>&);
template Var<float> gru_cell<float>(const Var<float>&, const Var<float>&, const GruWeights<float>&);
template Var<double> gru_cell<double>(const Var<double>&, const Var<double>&,
                                      const GruWeights<double>&);

}  // namespace tfsed::ad
