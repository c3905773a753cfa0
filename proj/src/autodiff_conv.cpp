// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The tfsed Authors

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <utility>

#include "autodiff_internal.hpp"

namespace tfsed::ad {

using detail::as_mat;
using detail::parent_grad;
using detail::parent_value;
using detail::record;

namespace {

/// Batch/channel/time/frequency view of a rank-3 or rank-4 activation.
struct Layout {
  std::size_t n, c, t, f;
  bool batched;
};

Layout layout_of(const Shape& s, const char* op) {
  if (s.size() == 4) return {s[0], s[1], s[2], s[3], true};
  if (s.size() == 3) return {1, s[0], s[1], s[2], false};
  fail(ErrorCode::kDimension, std::string(op) + " expects [C x T x F] or [N x C x T x F], got " +
                                  shape_string(s));
}

Shape make_shape(const Layout& l) {
  if (l.batched) return {l.n, l.c, l.t, l.f};
  return {l.c, l.t, l.f};
}

struct ConvGeometry {
  Layout in;
  std::size_t co, kt, kf, st, sf, to, fo, pad_t, pad_f;

  std::size_t rows() const { return in.c * kt * kf; }
  std::size_t positions() const { return to * fo; }
};

std::size_t same_out(std::size_t in, std::size_t stride) { return (in + stride - 1) / stride; }

ConvGeometry conv_geometry(const Shape& x, const Shape& k, const Conv2dOptions& o) {
  ConvGeometry g{};
  g.in = layout_of(x, "conv2d");
  check(k.size() == 4, ErrorCode::kDimension,
        "conv2d kernels must be [C_out x C_in x kT x kF], got " + shape_string(k));
  check(o.stride_t > 0 && o.stride_f > 0, ErrorCode::kDimension,
        "conv2d: stride must be non-zero");
  check(k[1] == g.in.c, ErrorCode::kDimension,
        "conv2d: kernel expects " + std::to_string(k[1]) + " input channels, input has " +
            std::to_string(g.in.c));
  g.co = k[0];
  g.kt = k[2];
  g.kf = k[3];
  g.st = o.stride_t;
  g.sf = o.stride_f;
  if (o.padding == Padding::kSame) {
    g.to = same_out(g.in.t, g.st);
    g.fo = same_out(g.in.f, g.sf);
    const std::size_t need_t = (g.to - 1) * g.st + g.kt;
    const std::size_t need_f = (g.fo - 1) * g.sf + g.kf;
    g.pad_t = need_t > g.in.t ? (need_t - g.in.t) / 2 : 0;
    g.pad_f = need_f > g.in.f ? (need_f - g.in.f) / 2 : 0;
    check(g.kt <= g.in.t + 2 * g.pad_t + 1 && g.kf <= g.in.f + 2 * g.pad_f + 1,
          ErrorCode::kDimension, "conv2d: kernel larger than padded input");
  } else {
    check(g.kt <= g.in.t && g.kf <= g.in.f, ErrorCode::kDimension,
          "conv2d: kernel larger than input under valid padding");
    g.to = (g.in.t - g.kt) / g.st + 1;
    g.fo = (g.in.f - g.kf) / g.sf + 1;
    g.pad_t = g.pad_f = 0;
  }
  return g;
}

// Output columns [lo, hi) whose source column of*sf + j - pad_f is in range.
std::pair<std::size_t, std::size_t> valid_columns(const ConvGeometry& g, std::size_t j) {
  std::size_t lo = 0;
  if (g.pad_f > j) lo = (g.pad_f - j + g.sf - 1) / g.sf;
  if (g.in.f + g.pad_f <= j) return {0, 0};
  const std::size_t hi = std::min(g.fo, (g.in.f - 1 + g.pad_f - j) / g.sf + 1);
  return {std::min(lo, hi), hi};
}

template <typename T>
void im2col(const ConvGeometry& g, const T* x, T* cols) {
  const std::size_t p = g.positions();
  for (std::size_t c = 0; c < g.in.c; ++c)
    for (std::size_t i = 0; i < g.kt; ++i)
      for (std::size_t j = 0; j < g.kf; ++j) {
        T* row = cols + ((c * g.kt + i) * g.kf + j) * p;
        const auto [lo, hi] = valid_columns(g, j);
        for (std::size_t ot = 0; ot < g.to; ++ot) {
          const auto src_t = static_cast<std::ptrdiff_t>(ot * g.st + i) -
                             static_cast<std::ptrdiff_t>(g.pad_t);
          T* dst = row + ot * g.fo;
          if (src_t < 0 || src_t >= static_cast<std::ptrdiff_t>(g.in.t) || lo == hi) {
            std::fill_n(dst, g.fo, T(0));
            continue;
          }
          const T* src = x + (c * g.in.t + static_cast<std::size_t>(src_t)) * g.in.f;
          std::fill_n(dst, lo, T(0));
          // lo * sf + j >= pad_f, so the source index never underflows.
          if (g.sf == 1) {
            std::copy(src + (lo + j - g.pad_f), src + (hi + j - g.pad_f), dst + lo);
          } else {
            for (std::size_t of = lo; of < hi; ++of) dst[of] = src[of * g.sf + j - g.pad_f];
          }
          std::fill(dst + hi, dst + g.fo, T(0));
        }
      }
}

template <typename T>
void col2im_add(const ConvGeometry& g, const T* cols, T* dx) {
  const std::size_t p = g.positions();
  for (std::size_t c = 0; c < g.in.c; ++c)
    for (std::size_t i = 0; i < g.kt; ++i)
      for (std::size_t j = 0; j < g.kf; ++j) {
        const T* row = cols + ((c * g.kt + i) * g.kf + j) * p;
        const auto [lo, hi] = valid_columns(g, j);
        if (lo == hi) continue;
        for (std::size_t ot = 0; ot < g.to; ++ot) {
          const auto src_t = static_cast<std::ptrdiff_t>(ot * g.st + i) -
                             static_cast<std::ptrdiff_t>(g.pad_t);
          if (src_t < 0 || src_t >= static_cast<std::ptrdiff_t>(g.in.t)) continue;
          T* dst = dx + (c * g.in.t + static_cast<std::size_t>(src_t)) * g.in.f;
          const T* src = row + ot * g.fo;
          for (std::size_t of = lo; of < hi; ++of) dst[of * g.sf + j - g.pad_f] += src[of];
        }
      }
}

}  // namespace

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& kernels, const Var<T>& bias,
              Conv2dOptions options) {
  const ConvGeometry g = conv_geometry(x.shape(), kernels.shape(), options);
  if (bias.defined())
    check(bias.size() == g.co, ErrorCode::kDimension, "conv2d: bias length mismatch");
  const std::size_t k = g.rows(), p = g.positions();
  const std::size_t in_stride = g.in.c * g.in.t * g.in.f;
  Layout out_layout{g.in.n, g.co, g.to, g.fo, g.in.batched};
  auto out = Tensor<T>::uninitialized(make_shape(out_layout));
  AlignedVector<T> cols(k * p);
  auto w = as_mat(kernels.data(), g.co, k);
  for (std::size_t b = 0; b < g.in.n; ++b) {
    im2col(g, x.data().data() + b * in_stride, cols.data());
    auto y = as_mat(out.data().subspan(b * g.co * p, g.co * p), g.co, p);
    y.noalias() = w * as_mat(std::span<const T>(cols), k, p);
    if (bias.defined())
      for (std::size_t c = 0; c < g.co; ++c) y.row(static_cast<Eigen::Index>(c)).array() += bias.data()[c];
  }
  return record<T>(std::move(out), {x, kernels, bias}, [g, k, p, in_stride](Node<T>& self) {
    auto gy_all = std::span<const T>(self.value.grad());
    const auto& xv = parent_value(self, 0);
    const auto& wv = parent_value(self, 1);
    auto gx = parent_grad(self, 0);
    auto gw = parent_grad(self, 1);
    std::span<T> gb;
    if (self.parents[2]) gb = parent_grad(self, 2);
    AlignedVector<T> cols(k * p);
    for (std::size_t b = 0; b < g.in.n; ++b) {
      auto gy = as_mat(gy_all.subspan(b * g.co * p, g.co * p), g.co, p);
      if (!gw.empty()) {
        im2col(g, xv.data().data() + b * in_stride, cols.data());
        as_mat(gw, g.co, k).noalias() += gy * as_mat(std::span<const T>(cols), k, p).transpose();
      }
      if (!gb.empty()) {
        auto rs = gy.rowwise().sum();
        for (std::size_t c = 0; c < g.co; ++c) gb[c] += rs(static_cast<Eigen::Index>(c));
      }
      if (!gx.empty()) {
        as_mat(std::span<T>(cols), k, p).noalias() = as_mat(wv.data(), g.co, k).transpose() * gy;
        col2im_add(g, cols.data(), gx.data() + b * in_stride);
      }
    }
  });
}

template <typename T>
Var<T> maxpool2d(const Var<T>& x, std::size_t window_t, std::size_t window_f) {
  check(window_t >= 1 && window_f >= 1, ErrorCode::kDimension,
        "maxpool2d: window dimensions must be >= 1");
  const Layout in = layout_of(x.shape(), "maxpool2d");
  const Layout ol{in.n, in.c, same_out(in.t, window_t), same_out(in.f, window_f), in.batched};
  auto out = Tensor<T>::uninitialized(make_shape(ol));
  std::vector<std::size_t> argmax(out.size());
  auto src = x.data();
  std::size_t o = 0;
  for (std::size_t plane = 0; plane < in.n * in.c; ++plane) {
    const std::size_t base = plane * in.t * in.f;
    for (std::size_t ot = 0; ot < ol.t; ++ot)
      for (std::size_t of = 0; of < ol.f; ++of, ++o) {
        std::size_t best = base + ot * window_t * in.f + of * window_f;
        const std::size_t t_end = std::min(in.t, (ot + 1) * window_t);
        const std::size_t f_end = std::min(in.f, (of + 1) * window_f);
        for (std::size_t t = ot * window_t; t < t_end; ++t)
          for (std::size_t f = of * window_f; f < f_end; ++f) {
            const std::size_t idx = base + t * in.f + f;
            if (src[idx] > src[best]) best = idx;
          }
        argmax[o] = best;
        out[o] = src[best];
      }
  }
  return record<T>(std::move(out), {x}, [argmax = std::move(argmax)](Node<T>& self) {
    auto g = self.value.grad();
    auto gx = parent_grad(self, 0);
    for (std::size_t i = 0; i < argmax.size(); ++i) gx[argmax[i]] += g[i];
  });
}

template <typename T>
Var<T> batchnorm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                 BatchNormStats<T>& stats, Mode mode) {
  const Layout l = layout_of(x.shape(), "batchnorm");
  check(gamma.size() == l.c && beta.size() == l.c, ErrorCode::kDimension,
        "batchnorm: gamma/beta length must equal channel count " + std::to_string(l.c));
  check(stats.mean.size() == l.c && stats.var.size() == l.c, ErrorCode::kDimension,
        "batchnorm: running statistics sized for a different channel count");
  const std::size_t plane = l.t * l.f;
  const std::size_t count = l.n * plane;
  auto xs = x.data();
  std::vector<T> mu(l.c), invstd(l.c);

  if (mode == Mode::kTrain) {
    for (std::size_t c = 0; c < l.c; ++c) {
      double s = 0.0, ss = 0.0;
      for (std::size_t b = 0; b < l.n; ++b) {
        const T* p = xs.data() + (b * l.c + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) s += p[i];
      }
      const double m = s / static_cast<double>(count);
      for (std::size_t b = 0; b < l.n; ++b) {
        const T* p = xs.data() + (b * l.c + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const double d = p[i] - m;
          ss += d * d;
        }
      }
      const double var = ss / static_cast<double>(count);
      mu[c] = static_cast<T>(m);
      invstd[c] = static_cast<T>(1.0 / std::sqrt(var + stats.eps));
      const double unbiased = count > 1 ? ss / static_cast<double>(count - 1) : var;
      if (stats.updates == 0) {
        stats.mean[c] = static_cast<T>(m);
        stats.var[c] = static_cast<T>(unbiased);
      } else {
        stats.mean[c] = static_cast<T>(stats.momentum * stats.mean[c] + (1.0 - stats.momentum) * m);
        stats.var[c] =
            static_cast<T>(stats.momentum * stats.var[c] + (1.0 - stats.momentum) * unbiased);
      }
    }
    ++stats.updates;
  } else {
    check(stats.updates > 0, ErrorCode::kState,
          "batchnorm: eval mode requires running statistics from at least one training update");
    for (std::size_t c = 0; c < l.c; ++c) {
      mu[c] = stats.mean[c];
      invstd[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(stats.var[c]) + stats.eps));
    }
  }

  auto out = Tensor<T>::uninitialized(x.shape());
  AlignedVector<T> xhat(x.size());
  for (std::size_t b = 0; b < l.n; ++b)
    for (std::size_t c = 0; c < l.c; ++c) {
      const std::size_t off = (b * l.c + c) * plane;
      const T gm = gamma.data()[c], bt = beta.data()[c];
      for (std::size_t i = 0; i < plane; ++i) {
        const T h = (xs[off + i] - mu[c]) * invstd[c];
        xhat[off + i] = h;
        out[off + i] = gm * h + bt;
      }
    }

  const bool train = mode == Mode::kTrain;
  return record<T>(std::move(out), {x, gamma, beta},
                   [l, plane, count, train, invstd = std::move(invstd),
                    xhat = std::move(xhat)](Node<T>& self) {
                     auto g = self.value.grad();
                     auto gx = parent_grad(self, 0);
                     auto gg = parent_grad(self, 1);
                     auto gbeta = parent_grad(self, 2);
                     const auto& gamma_v = parent_value(self, 1);
                     for (std::size_t c = 0; c < l.c; ++c) {
                       double sum_g = 0.0, sum_gh = 0.0;
                       for (std::size_t b = 0; b < l.n; ++b) {
                         const std::size_t off = (b * l.c + c) * plane;
                         for (std::size_t i = 0; i < plane; ++i) {
                           sum_g += g[off + i];
                           sum_gh += static_cast<double>(g[off + i]) * xhat[off + i];
                         }
                       }
                       if (!gg.empty()) gg[c] += static_cast<T>(sum_gh);
                       if (!gbeta.empty()) gbeta[c] += static_cast<T>(sum_g);
                       if (gx.empty()) continue;
                       const T k = gamma_v[c] * invstd[c];
                       const T mean_g = static_cast<T>(sum_g / static_cast<double>(count));
                       const T mean_gh = static_cast<T>(sum_gh / static_cast<double>(count));
                       for (std::size_t b = 0; b < l.n; ++b) {
                         const std::size_t off = (b * l.c + c) * plane;
                         T* dx = gx.data() + off;
                         const T* dy = g.data() + off;
                         const T* h = xhat.data() + off;
                         if (train) {
                           for (std::size_t i = 0; i < plane; ++i)
                             dx[i] += k * (dy[i] - mean_g - h[i] * mean_gh);
                         } else {
                           for (std::size_t i = 0; i < plane; ++i) dx[i] += k * dy[i];
                         }
                       }
                     }
                   });
}

template <typename T>
Var<T> dropout(const Var<T>& x, double p, Mode mode, Rng& rng) {
  check(p >= 0.0 && p < 1.0, ErrorCode::kParameter,
        "dropout: probability must satisfy 0 <= p < 1, got " + std::to_string(p));
  if (mode == Mode::kEval || p == 0.0) return x;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  AlignedVector<T> mask(x.size());
  // Two 32-bit uniforms per engine draw; drop when u < p * 2^32.
  const auto threshold = static_cast<std::uint64_t>(std::ldexp(p, 32));
  for (std::size_t i = 0; i < mask.size(); i += 2) {
    const std::uint64_t r = rng.next_u64();
    mask[i] = (r & 0xffffffffULL) < threshold ? T(0) : keep_scale;
    if (i + 1 < mask.size()) mask[i + 1] = (r >> 32) < threshold ? T(0) : keep_scale;
  }
  auto out = Tensor<T>::uninitialized(x.shape());
  T* o = out.data().data();
  const T* xs = x.data().data();
  for (std::size_t i = 0; i < mask.size(); ++i) o[i] = xs[i] * mask[i];
  return record<T>(std::move(out), {x}, [mask = std::move(mask)](Node<T>& self) {
    const T* g = self.value.grad().data();
    auto gxs = parent_grad(self, 0);
    T* gx = gxs.data();
    for (std::size_t i = 0; i < gxs.size(); ++i) gx[i] += g[i] * mask[i];
  });
}

#define TFSED_INSTANTIATE_CONV(T)                                                         \
  template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, const Var<T>&, Conv2dOptions); \
  template Var<T> maxpool2d<T>(const Var<T>&, std::size_t, std::size_t);                 \
  template Var<T> batchnorm<T>(const Var<T>&, const Var<T>&, const Var<T>&,              \
                               BatchNormStats<T>&, Mode);                                \
  template Var<T> dropout<T>(const Var<T>&, double, Mode, Rng&);

TFSED_INSTANTIATE_CONV(float)
TFSED_INSTANTIATE_CONV(double)

}  // namespace tfsed::ad
