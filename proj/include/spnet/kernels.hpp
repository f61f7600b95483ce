// Copyright 2026 The SPNet Authors.
// SPDX-License-Identifier: Apache-2.0

// Tape-free numeric kernels. Both the autodiff ops and the inference runtime
// call these, so a given switch evaluates through identical arithmetic on
// either path.

#ifndef SPNET_KERNELS_HPP_
#define SPNET_KERNELS_HPP_

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "spnet/tensor.hpp"

namespace spnet::kernels {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

/// C[m,n] (+)= op(A) * op(B), all row-major.
template <typename T>
void gemm(const T* a, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k, bool trans_a,
          bool trans_b, bool accumulate) {
  const auto M = static_cast<Eigen::Index>(m);
  const auto N = static_cast<Eigen::Index>(n);
  const auto K = static_cast<Eigen::Index>(k);
  MapMat<T> C(c, M, N);
  auto run = [&](const auto& A, const auto& B) {
    if (accumulate) {
      C.noalias() += A * B;
    } else {
      C.noalias() = A * B;
    }
  };
  if (!trans_a && !trans_b) {
    run(ConstMapMat<T>(a, M, K), ConstMapMat<T>(b, K, N));
  } else if (trans_a && !trans_b) {
    run(ConstMapMat<T>(a, K, M).transpose(), ConstMapMat<T>(b, K, N));
  } else if (!trans_a && trans_b) {
    run(ConstMapMat<T>(a, M, K), ConstMapMat<T>(b, N, K).transpose());
  } else {
    run(ConstMapMat<T>(a, K, M).transpose(), ConstMapMat<T>(b, N, K).transpose());
  }
}

struct ConvGeometry {
  std::size_t batch = 1, in_channels = 1, in_h = 1, in_w = 1;
  std::size_t filters = 1, kernel_h = 1, kernel_w = 1;
  std::size_t stride = 1, padding = 0;
  std::size_t out_h = 1, out_w = 1;

  std::size_t patch() const { return in_channels * kernel_h * kernel_w; }
  std::size_t positions() const { return out_h * out_w; }

  static ConvGeometry make(const Shape& input, const Shape& filters, std::size_t stride,
                           std::size_t padding) {
    if (input.size() != 4 || filters.size() != 4) {
      throw ShapeError("conv2d expects NCHW input and KIHW filters, got input " +
                       shape_str(input) + " filters " + shape_str(filters));
    }
    if (input[1] != filters[1]) {
      throw ShapeError("conv2d channel mismatch: input " + shape_str(input) + " filters " +
                       shape_str(filters));
    }
    if (stride == 0) throw ShapeError("conv2d stride must be >= 1");
    ConvGeometry g;
    g.batch = input[0];
    g.in_channels = input[1];
    g.in_h = input[2];
    g.in_w = input[3];
    g.filters = filters[0];
    g.kernel_h = filters[2];
    g.kernel_w = filters[3];
    g.stride = stride;
    g.padding = padding;
    const auto span_h = g.in_h + 2 * padding;
    const auto span_w = g.in_w + 2 * padding;
    if (span_h < g.kernel_h || span_w < g.kernel_w || (span_h - g.kernel_h) % stride != 0 ||
        (span_w - g.kernel_w) % stride != 0) {
      throw ShapeError("conv2d geometry does not tile: input " + shape_str(input) + " filters " +
                       shape_str(filters) + " stride " + std::to_string(stride) + " padding " +
                       std::to_string(padding));
    }
    g.out_h = (span_h - g.kernel_h) / stride + 1;
    g.out_w = (span_w - g.kernel_w) / stride + 1;
    return g;
  }
};

/// cols[(i*kh + y)*kw + x][(n*out_h + oy)*out_w + ox], zero outside the image.
template <typename T>
void im2col(const Tensor<T>& input, const ConvGeometry& g, std::vector<T>& cols) {
  const std::size_t ncols = g.batch * g.positions();
  cols.assign(g.patch() * ncols, T(0));
  const T* in = input.ptr();
  for (std::size_t i = 0; i < g.in_channels; ++i) {
    for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
        T* row = cols.data() + ((i * g.kernel_h + ky) * g.kernel_w + kx) * ncols;
        for (std::size_t n = 0; n < g.batch; ++n) {
          const T* plane = in + (n * g.in_channels + i) * g.in_h * g.in_w;
          for (std::size_t oy = 0; oy < g.out_h; ++oy) {
            const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                            static_cast<std::ptrdiff_t>(g.padding);
            T* dst = row + (n * g.out_h + oy) * g.out_w;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
            for (std::size_t ox = 0; ox < g.out_w; ++ox) {
              const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                              static_cast<std::ptrdiff_t>(g.padding);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
              dst[ox] = plane[iy * static_cast<std::ptrdiff_t>(g.in_w) + ix];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const std::vector<T>& cols, const ConvGeometry& g, Tensor<T>& grad_input) {
  const std::size_t ncols = g.batch * g.positions();
  T* out = grad_input.ptr();
  for (std::size_t i = 0; i < g.in_channels; ++i) {
    for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
        const T* row = cols.data() + ((i * g.kernel_h + ky) * g.kernel_w + kx) * ncols;
        for (std::size_t n = 0; n < g.batch; ++n) {
          T* plane = out + (n * g.in_channels + i) * g.in_h * g.in_w;
          for (std::size_t oy = 0; oy < g.out_h; ++oy) {
            const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                            static_cast<std::ptrdiff_t>(g.padding);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
            const T* src = row + (n * g.out_h + oy) * g.out_w;
            for (std::size_t ox = 0; ox < g.out_w; ++ox) {
              const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                              static_cast<std::ptrdiff_t>(g.padding);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
              plane[iy * static_cast<std::ptrdiff_t>(g.in_w) + ix] += src[ox];
            }
          }
        }
      }
    }
  }
}

/// [K, N*P] -> [N, K, P]
template <typename T>
void kc_to_nchw(const std::vector<T>& kc, const ConvGeometry& g, T* out) {
  const std::size_t P = g.positions();
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t k = 0; k < g.filters; ++k) {
      const T* src = kc.data() + k * g.batch * P + n * P;
      std::copy(src, src + P, out + (n * g.filters + k) * P);
    }
  }
}

template <typename T>
void nchw_to_kc(const T* in, const ConvGeometry& g, std::vector<T>& kc) {
  const std::size_t P = g.positions();
  kc.resize(g.filters * g.batch * P);
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t k = 0; k < g.filters; ++k) {
      const T* src = in + (n * g.filters + k) * P;
      std::copy(src, src + P, kc.data() + k * g.batch * P + n * P);
    }
  }
}

/// Forward convolution; `cols` receives the im2col buffer for reuse in backward.
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& filters, std::size_t stride,
                         std::size_t padding, std::vector<T>& cols) {
  const auto g = ConvGeometry::make(input.shape(), filters.shape(), stride, padding);
  im2col(input, g, cols);
  std::vector<T> kc(g.filters * g.batch * g.positions());
  gemm(filters.ptr(), cols.data(), kc.data(), g.filters, g.batch * g.positions(), g.patch(), false,
       false, false);
  Tensor<T> out(Shape{g.batch, g.filters, g.out_h, g.out_w});
  kc_to_nchw(kc, g, out.ptr());
  return out;
}

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& filters, std::size_t stride,
                         std::size_t padding) {
  std::vector<T> cols;
  return conv2d_forward(input, filters, stride, padding, cols);
}

/// Accumulates input and filter gradients (either pointer may be null).
template <typename T>
void conv2d_backward(const Tensor<T>& grad_out, const Tensor<T>& filters,
                     const std::vector<T>& cols, const ConvGeometry& g, Tensor<T>* grad_input,
                     Tensor<T>* grad_filters) {
  std::vector<T> dkc;
  nchw_to_kc(grad_out.ptr(), g, dkc);
  const std::size_t ncols = g.batch * g.positions();
  if (grad_filters) {
    gemm(dkc.data(), cols.data(), grad_filters->ptr(), g.filters, g.patch(), ncols, false, true,
         true);
  }
  if (grad_input) {
    std::vector<T> dcols(g.patch() * ncols);
    gemm(filters.ptr(), dkc.data(), dcols.data(), g.patch(), ncols, g.filters, true, false, false);
    col2im(dcols, g, *grad_input);
  }
}

/// out[n,m] = sum_d x[n,d] w[m,d] + b[m]
template <typename T>
Tensor<T> dense_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(1) || b.size() != w.dim(0)) {
    throw ShapeError("dense shape mismatch: input " + shape_str(x.shape()) + " weights " +
                     shape_str(w.shape()) + " bias " + shape_str(b.shape()));
  }
  const auto N = x.dim(0), M = w.dim(0), D = x.dim(1);
  Tensor<T> out(Shape{N, M});
  gemm(x.ptr(), w.ptr(), out.ptr(), N, M, D, false, true, false);
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t m = 0; m < M; ++m) out[n * M + m] += b[m];
  }
  return out;
}

struct BatchStats {
  std::vector<double> mean;
  std::vector<double> var;  // biased
};

/// Per-channel statistics over N,H,W. Accumulates in double.
template <typename T>
BatchStats channel_stats(const Tensor<T>& x) {
  const auto N = x.dim(0), C = x.dim(1);
  const std::size_t P = x.size() / (N * C);
  BatchStats s{std::vector<double>(C, 0.0), std::vector<double>(C, 0.0)};
  const double count = static_cast<double>(N * P);
  for (std::size_t c = 0; c < C; ++c) {
    double sum = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      const T* p = x.ptr() + (n * C + c) * P;
      for (std::size_t i = 0; i < P; ++i) sum += static_cast<double>(p[i]);
    }
    const double mean = sum / count;
    double sq = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      const T* p = x.ptr() + (n * C + c) * P;
      for (std::size_t i = 0; i < P; ++i) {
        const double d = static_cast<double>(p[i]) - mean;
        sq += d * d;
      }
    }
    s.mean[c] = mean;
    s.var[c] = sq / count;
  }
  return s;
}

/// y = gamma * (x - mean) / sqrt(var + eps) + beta, per channel. Used for both
/// batch-statistics (train) and running-statistics (eval) normalization.
template <typename T>
Tensor<T> bn_apply(const Tensor<T>& x, std::span<const T> mean, std::span<const T> var,
                   std::span<const T> gamma, std::span<const T> beta, T eps,
                   std::vector<T>* inv_std_out = nullptr, Tensor<T>* xhat_out = nullptr) {
  const auto N = x.dim(0), C = x.dim(1);
  const std::size_t P = x.size() / (N * C);
  Tensor<T> y(x.shape());
  std::vector<T> inv_std(C);
  for (std::size_t c = 0; c < C; ++c) inv_std[c] = T(1) / std::sqrt(var[c] + eps);
  if (xhat_out) *xhat_out = Tensor<T>(x.shape());
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      const T* src = x.ptr() + (n * C + c) * P;
      T* dst = y.ptr() + (n * C + c) * P;
      T* xh = xhat_out ? xhat_out->ptr() + (n * C + c) * P : nullptr;
      for (std::size_t i = 0; i < P; ++i) {
        const T h = (src[i] - mean[c]) * inv_std[c];
        if (xh) xh[i] = h;
        dst[i] = gamma[c] * h + beta[c];
      }
    }
  }
  if (inv_std_out) *inv_std_out = std::move(inv_std);
  return y;
}

/// Eval-mode BN as a per-channel affine: scale = gamma / sqrt(var + eps),
/// shift = beta - mean * scale, computed in double. Shared by eval-mode
/// normalization and the merged export so both round identically.
template <typename T>
std::pair<std::vector<T>, std::vector<T>> bn_fold(std::span<const T> mean, std::span<const T> var,
                                                 std::span<const T> gamma, std::span<const T> beta, T eps) {
  std::vector<T> scale(mean.size()), shift(mean.size());
  for (std::size_t c = 0; c < mean.size(); ++c) {
    const double sc = static_cast<double>(gamma[c]) / std::sqrt(static_cast<double>(var[c]) + static_cast<double>(eps));
    scale[c] = static_cast<T>(sc);
    shift[c] = static_cast<T>(static_cast<double>(beta[c]) - static_cast<double>(mean[c]) * sc);
  }
  return {std::move(scale), std::move(shift)};
}

/// Per-channel affine y = x * scale + shift (merged-BN inference form).
template <typename T>
Tensor<T> channel_affine(const Tensor<T>& x, std::span<const T> scale, std::span<const T> shift) {
  const auto N = x.dim(0), C = x.dim(1);
  const std::size_t P = x.size() / (N * C);
  Tensor<T> y(x.shape());
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      const T* src = x.ptr() + (n * C + c) * P;
      T* dst = y.ptr() + (n * C + c) * P;
      for (std::size_t i = 0; i < P; ++i) dst[i] = src[i] * scale[c] + shift[c];
    }
  }
  return y;
}

template <typename T>
Tensor<T> add_channel_bias(const Tensor<T>& x, std::span<const T> bias) {
  const auto N = x.dim(0), C = x.dim(1);
  const std::size_t P = x.size() / (N * C);
  Tensor<T> y(x);
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      T* dst = y.ptr() + (n * C + c) * P;
      for (std::size_t i = 0; i < P; ++i) dst[i] += bias[c];
    }
  }
  return y;
}

/// [N,C,H,W] -> [N,C] spatial mean.
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  if (x.rank() != 4) throw ShapeError("global_avg_pool expects NCHW, got " + shape_str(x.shape()));
  const auto N = x.dim(0), C = x.dim(1);
  const std::size_t P = x.dim(2) * x.dim(3);
  Tensor<T> out(Shape{N, C});
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      const T* src = x.ptr() + (n * C + c) * P;
      T sum = 0;
      for (std::size_t i = 0; i < P; ++i) sum += src[i];
      out[n * C + c] = sum / static_cast<T>(P);
    }
  }
  return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
  return y;
}

template <typename T>
Tensor<T> clip(const Tensor<T>& x, T lo, T hi) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::min(std::max(x[i], lo), hi);
  return y;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  Tensor<T> y(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) y[i] = a[i] + b[i];
  return y;
}

/// Row-wise log-softmax with max subtraction.
template <typename T>
Tensor<T> log_softmax(const Tensor<T>& logits) {
  if (logits.rank() != 2) throw ShapeError("log_softmax expects [N,C], got " + shape_str(logits.shape()));
  const auto N = logits.dim(0), C = logits.dim(1);
  Tensor<T> out(logits.shape());
  for (std::size_t n = 0; n < N; ++n) {
    const T* row = logits.ptr() + n * C;
    const T mx = *std::max_element(row, row + C);
    T sum = 0;
    for (std::size_t c = 0; c < C; ++c) sum += std::exp(row[c] - mx);
    const T lse = mx + std::log(sum);
    for (std::size_t c = 0; c < C; ++c) out[n * C + c] = row[c] - lse;
  }
  return out;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  Tensor<T> out = log_softmax(logits);
  for (auto& v : out.data()) v = std::exp(v);
  return out;
}

/// Row argmax, lowest index on ties.
template <typename T>
std::vector<std::size_t> argmax_rows(const Tensor<T>& logits) {
  const auto N = logits.dim(0), C = logits.dim(1);
  std::vector<std::size_t> out(N);
  for (std::size_t n = 0; n < N; ++n) {
    const T* row = logits.ptr() + n * C;
    std::size_t best = 0;
    for (std::size_t c = 1; c < C; ++c) {
      if (row[c] > row[best]) best = c;
    }
    out[n] = best;
  }
  return out;
}

}  // namespace spnet::kernels

#endif  // SPNET_KERNELS_HPP_
