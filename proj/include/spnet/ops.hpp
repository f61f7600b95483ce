// Copyright 2026 The SPNet Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef SPNET_OPS_HPP_
#define SPNET_OPS_HPP_

#include <cmath>
#include <memory>
#include <span>

#include "spnet/kernels.hpp"
#include "spnet/tape.hpp"

namespace spnet::ops {

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, std::size_t stride, std::size_t padding) {
  auto cols = std::make_shared<std::vector<T>>();
  auto out = kernels::conv2d_forward(x.value(), w.value(), stride, padding, *cols);
  const auto g = kernels::ConvGeometry::make(x.shape(), w.shape(), stride, padding);
  const auto xi = x.id(), wi = w.id();
  return x.tape().record(std::move(out), {x, w}, [=](Tape<T>& t, const Tensor<T>& gy) {
    Tensor<T>* gx = t.requires_grad(xi) ? &t.grad_buffer(xi) : nullptr;
    Tensor<T>* gw = t.requires_grad(wi) ? &t.grad_buffer(wi) : nullptr;
    kernels::conv2d_backward(gy, t.value(wi), *cols, g, gx, gw);
  });
}

template <typename T>
Var<T> dense(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  auto out = kernels::dense_forward(x.value(), w.value(), b.value());
  const auto xi = x.id(), wi = w.id(), bi = b.id();
  return x.tape().record(std::move(out), {x, w, b}, [=](Tape<T>& t, const Tensor<T>& gy) {
    const auto& xv = t.value(xi);
    const auto& wv = t.value(wi);
    const auto N = xv.dim(0), D = xv.dim(1), M = wv.dim(0);
    if (t.requires_grad(xi)) {
      kernels::gemm(gy.ptr(), wv.ptr(), t.grad_buffer(xi).ptr(), N, D, M, false, false, true);
    }
    if (t.requires_grad(wi)) {
      kernels::gemm(gy.ptr(), xv.ptr(), t.grad_buffer(wi).ptr(), M, D, N, true, false, true);
    }
    if (t.requires_grad(bi)) {
      auto& gb = t.grad_buffer(bi);
      for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t m = 0; m < M; ++m) gb[m] += gy[n * M + m];
      }
    }
  });
}

namespace detail {
template <typename T>
bool is_scalar(const Tensor<T>& t) {
  return t.size() == 1;
}

template <typename T>
Shape broadcast_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() == b.shape()) return a.shape();
  if (is_scalar(b)) return a.shape();
  if (is_scalar(a)) return b.shape();
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                   shape_str(b.shape()));
}

/// Adds g into the slot for `id`, summing down to a scalar if `id` was broadcast.
template <typename T>
void accumulate_maybe_reduced(Tape<T>& t, std::size_t id, const Tensor<T>& g) {
  if (!t.requires_grad(id)) return;
  auto& buf = t.grad_buffer(id);
  if (buf.size() == g.size()) {
    for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
  } else {
    T s = 0;
    for (auto v : g.data()) s += v;
    buf[0] += s;
  }
}
}  // namespace detail

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  Tensor<T> out(detail::broadcast_shape(av, bv, "add"));
  const bool sa = av.size() == 1 && out.size() != 1, sb = bv.size() == 1 && out.size() != 1;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[sa ? 0 : i] + bv[sb ? 0 : i];
  const auto ai = a.id(), bi = b.id();
  return a.tape().record(std::move(out), {a, b}, [=](Tape<T>& t, const Tensor<T>& gy) {
    detail::accumulate_maybe_reduced(t, ai, gy);
    detail::accumulate_maybe_reduced(t, bi, gy);
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  Tensor<T> out(detail::broadcast_shape(av, bv, "mul"));
  const bool sa = av.size() == 1 && out.size() != 1, sb = bv.size() == 1 && out.size() != 1;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[sa ? 0 : i] * bv[sb ? 0 : i];
  const auto ai = a.id(), bi = b.id();
  return a.tape().record(std::move(out), {a, b}, [=](Tape<T>& t, const Tensor<T>& gy) {
    const auto& A = t.value(ai);
    const auto& B = t.value(bi);
    Tensor<T> ga(gy.shape()), gb(gy.shape());
    for (std::size_t i = 0; i < gy.size(); ++i) {
      ga[i] = gy[i] * B[sb ? 0 : i];
      gb[i] = gy[i] * A[sa ? 0 : i];
    }
    detail::accumulate_maybe_reduced(t, ai, ga);
    detail::accumulate_maybe_reduced(t, bi, gb);
  });
}

template <typename T>
Var<T> scale(const Var<T>& x, T s) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.value()[i] * s;
  const auto xi = x.id();
  return x.tape().record(std::move(out), {x}, [=](Tape<T>& t, const Tensor<T>& gy) {
    auto& gx = t.grad_buffer(xi);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * s;
  });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  auto out = kernels::relu(x.value());
  const auto xi = x.id();
  return x.tape().record(std::move(out), {x}, [=](Tape<T>& t, const Tensor<T>& gy) {
    const auto& xv = t.value(xi);
    auto& gx = t.grad_buffer(xi);
    for (std::size_t i = 0; i < gy.size(); ++i) {
      if (xv[i] > T(0)) gx[i] += gy[i];
    }
  });
}

template <typename T>
Var<T> tanh(const Var<T>& x) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x.value()[i]);
  const auto xi = x.id();
  auto y = out;
  return x.tape().record(std::move(out), {x}, [=](Tape<T>& t, const Tensor<T>& gy) {
    auto& gx = t.grad_buffer(xi);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * (T(1) - y[i] * y[i]);
  });
}

/// Gradient passes only where lo <= x <= hi.
template <typename T>
Var<T> clip(const Var<T>& x, T lo, T hi) {
  auto out = kernels::clip(x.value(), lo, hi);
  const auto xi = x.id();
  return x.tape().record(std::move(out), {x}, [=](Tape<T>& t, const Tensor<T>& gy) {
    const auto& xv = t.value(xi);
    auto& gx = t.grad_buffer(xi);
    for (std::size_t i = 0; i < gy.size(); ++i) {
      if (xv[i] >= lo && xv[i] <= hi) gx[i] += gy[i];
    }
  });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  T s = 0;
  for (auto v : x.value().data()) s += v;
  const auto xi = x.id();
  return x.tape().record(Tensor<T>::scalar(s), {x}, [=](Tape<T>& t, const Tensor<T>& gy) {
    auto& gx = t.grad_buffer(xi);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[0];
  });
}

/// Mean over the batch of -log softmax(logits)[label].
template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, std::span<const int> labels) {
  const auto& z = logits.value();
  if (z.rank() != 2 || z.dim(0) != labels.size()) {
    throw ShapeError("softmax_cross_entropy: logits " + shape_str(z.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  const auto N = z.dim(0), C = z.dim(1);
  for (auto l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= C) {
      throw ValueError("softmax_cross_entropy: label " + std::to_string(l) + " outside [0, " +
                       std::to_string(C) + ")");
    }
  }
  auto logp = kernels::log_softmax(z);
  T loss = 0;
  for (std::size_t n = 0; n < N; ++n) loss -= logp[n * C + static_cast<std::size_t>(labels[n])];
  loss /= static_cast<T>(N);
  std::vector<int> lab(labels.begin(), labels.end());
  const auto zi = logits.id();
  return logits.tape().record(
      Tensor<T>::scalar(loss), {logits}, [=](Tape<T>& t, const Tensor<T>& gy) {
        auto& gz = t.grad_buffer(zi);
        const T k = gy[0] / static_cast<T>(N);
        for (std::size_t n = 0; n < N; ++n) {
          for (std::size_t c = 0; c < C; ++c) {
            const T p = std::exp(logp[n * C + c]);
            const T onehot = static_cast<std::size_t>(lab[n]) == c ? T(1) : T(0);
            gz[n * C + c] += k * (p - onehot);
          }
        }
      });
}

/// Mean over the batch of KL(p_teacher || softmax(logits_student)). The
/// teacher enters as a plain tensor, so no gradient can reach it.
template <typename T>
Var<T> kl_divergence(const Tensor<T>& p_teacher, const Var<T>& logits_student) {
  const auto& z = logits_student.value();
  require_same_shape(p_teacher, z, "kl_divergence");
  if (z.rank() != 2) throw ShapeError("kl_divergence expects [N,C], got " + shape_str(z.shape()));
  const auto N = z.dim(0), C = z.dim(1);
  for (std::size_t n = 0; n < N; ++n) {
    double s = 0;
    for (std::size_t c = 0; c < C; ++c) {
      const T p = p_teacher[n * C + c];
      if (!(p >= T(0))) throw ValueError("kl_divergence: teacher row has a negative entry");
      s += static_cast<double>(p);
    }
    if (std::abs(s - 1.0) > 1e-5) {
      throw ValueError("kl_divergence: teacher row " + std::to_string(n) + " sums to " +
                       std::to_string(s) + ", expected 1");
    }
  }
  auto logq = kernels::log_softmax(z);
  T loss = 0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const T p = p_teacher[i];
    if (p > T(0)) loss += p * (std::log(p) - logq[i]);
  }
  loss /= static_cast<T>(N);
  const auto zi = logits_student.id();
  Tensor<T> pt = p_teacher;
  return logits_student.tape().record(
      Tensor<T>::scalar(loss), {logits_student}, [=](Tape<T>& t, const Tensor<T>& gy) {
        auto& gz = t.grad_buffer(zi);
        const T k = gy[0] / static_cast<T>(N);
        for (std::size_t n = 0; n < N; ++n) {
          T mass = 0;
          for (std::size_t c = 0; c < C; ++c) mass += pt[n * C + c];
          for (std::size_t c = 0; c < C; ++c) {
            gz[n * C + c] += k * (std::exp(logq[n * C + c]) * mass - pt[n * C + c]);
          }
        }
      });
}

/// Unnormalized squared L2 distance; gradients reach both arguments.
template <typename T>
Var<T> mse(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.value(), b.value(), "mse");
  T s = 0;
  for (std::size_t i = 0; i < a.value().size(); ++i) {
    const T d = a.value()[i] - b.value()[i];
    s += d * d;
  }
  const auto ai = a.id(), bi = b.id();
  return a.tape().record(Tensor<T>::scalar(s), {a, b}, [=](Tape<T>& t, const Tensor<T>& gy) {
    const auto& A = t.value(ai);
    const auto& B = t.value(bi);
    const bool ga_on = t.requires_grad(ai), gb_on = t.requires_grad(bi);
    for (std::size_t i = 0; i < A.size(); ++i) {
      const T g = T(2) * (A[i] - B[i]) * gy[0];
      if (ga_on) t.grad_buffer(ai)[i] += g;
      if (gb_on) t.grad_buffer(bi)[i] -= g;
    }
  });
}

/// Batch-statistics normalization. Writes the batch mean and biased variance
/// to `mean_out`/`var_out` for the caller's running-statistic update.
template <typename T>
Var<T> batch_norm_train(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps,
                        std::vector<double>* mean_out = nullptr,
                        std::vector<double>* var_out = nullptr) {
  const auto& xv = x.value();
  if (xv.rank() < 2 || gamma.value().size() != xv.dim(1) || beta.value().size() != xv.dim(1)) {
    throw ShapeError("batch_norm: input " + shape_str(xv.shape()) + " gamma " +
                     shape_str(gamma.shape()) + " beta " + shape_str(beta.shape()));
  }
  const auto stats = kernels::channel_stats(xv);
  const auto C = xv.dim(1);
  std::vector<T> mean(C), var(C);
  for (std::size_t c = 0; c < C; ++c) {
    mean[c] = static_cast<T>(stats.mean[c]);
    var[c] = static_cast<T>(stats.var[c]);
  }
  std::vector<T> inv_std;
  auto xhat = std::make_shared<Tensor<T>>();
  (void)kernels::bn_apply<T>(xv, mean, var, gamma.value().data(), beta.value().data(), eps, &inv_std,
                             xhat.get());
  const auto [scale, shift] = kernels::bn_fold<T>(mean, var, gamma.value().data(), beta.value().data(), eps);
  auto out = kernels::channel_affine<T>(xv, scale, shift);
  if (mean_out) *mean_out = stats.mean;
  if (var_out) *var_out = stats.var;
  const auto xi = x.id(), gi = gamma.id(), bi = beta.id();
  return x.tape().record(
      std::move(out), {x, gamma, beta}, [=](Tape<T>& t, const Tensor<T>& gy) {
        const auto N = gy.dim(0);
        const std::size_t P = gy.size() / (N * C);
        const auto& gv = t.value(gi);
        const T M = static_cast<T>(N * P);
        for (std::size_t c = 0; c < C; ++c) {
          T sum_g = 0, sum_gx = 0;
          for (std::size_t n = 0; n < N; ++n) {
            const std::size_t off = (n * C + c) * P;
            for (std::size_t i = 0; i < P; ++i) {
              sum_g += gy[off + i];
              sum_gx += gy[off + i] * (*xhat)[off + i];
            }
          }
          if (t.requires_grad(gi)) t.grad_buffer(gi)[c] += sum_gx;
          if (t.requires_grad(bi)) t.grad_buffer(bi)[c] += sum_g;
          if (t.requires_grad(xi)) {
            auto& gx = t.grad_buffer(xi);
            const T k = gv[c] * inv_std[c] / M;
            for (std::size_t n = 0; n < N; ++n) {
              const std::size_t off = (n * C + c) * P;
              for (std::size_t i = 0; i < P; ++i) {
                gx[off + i] += k * (M * gy[off + i] - sum_g - (*xhat)[off + i] * sum_gx);
              }
            }
          }
        }
      });
}

/// Running-statistics normalization (statistics are constants).
template <typename T>
Var<T> batch_norm_eval(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                       std::span<const T> mean, std::span<const T> var, T eps) {
  const auto& xv = x.value();
  const auto C = xv.dim(1);
  if (gamma.value().size() != C || beta.value().size() != C || mean.size() != C ||
      var.size() != C) {
    throw ShapeError("batch_norm_eval: input " + shape_str(xv.shape()) +
                     " does not match statistics of length " + std::to_string(mean.size()));
  }
  std::vector<T> inv_std;
  auto xhat = std::make_shared<Tensor<T>>();
  (void)kernels::bn_apply<T>(xv, mean, var, gamma.value().data(), beta.value().data(), eps, &inv_std,
                             xhat.get());
  const auto [scale, shift] = kernels::bn_fold<T>(mean, var, gamma.value().data(), beta.value().data(), eps);
  auto out = kernels::channel_affine<T>(xv, scale, shift);
  const auto xi = x.id(), gi = gamma.id(), bi = beta.id();
  return x.tape().record(
      std::move(out), {x, gamma, beta}, [=](Tape<T>& t, const Tensor<T>& gy) {
        const auto N = gy.dim(0);
        const std::size_t P = gy.size() / (N * C);
        const auto& gv = t.value(gi);
        for (std::size_t n = 0; n < N; ++n) {
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t off = (n * C + c) * P;
            for (std::size_t i = 0; i < P; ++i) {
              if (t.requires_grad(gi)) t.grad_buffer(gi)[c] += gy[off + i] * (*xhat)[off + i];
              if (t.requires_grad(bi)) t.grad_buffer(bi)[c] += gy[off + i];
              if (t.requires_grad(xi)) t.grad_buffer(xi)[off + i] += gy[off + i] * gv[c] * inv_std[c];
            }
          }
        }
      });
}

template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  auto out = kernels::global_avg_pool(x.value());
  const auto xi = x.id();
  const auto shape = x.shape();
  return x.tape().record(std::move(out), {x}, [=](Tape<T>& t, const Tensor<T>& gy) {
    const std::size_t N = shape[0], C = shape[1], P = shape[2] * shape[3];
    auto& gx = t.grad_buffer(xi);
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t c = 0; c < C; ++c) {
        const T g = gy[n * C + c] / static_cast<T>(P);
        T* dst = gx.ptr() + (n * C + c) * P;
        for (std::size_t i = 0; i < P; ++i) dst[i] += g;
      }
    }
  });
}

/// First `k` filters and first `i` input channels of a [K,I,h,w] bank.
template <typename T>
Tensor<T> slice_filters_value(const Tensor<T>& w, std::size_t k, std::size_t i) {
  const auto& s = w.shape();
  if (s.size() != 4 || k == 0 || i == 0 || k > s[0] || i > s[1]) {
    throw ShapeError("slice_filters: cannot take [" + std::to_string(k) + "," + std::to_string(i) +
                     "] from " + shape_str(s));
  }
  const std::size_t hw = s[2] * s[3];
  Tensor<T> out(Shape{k, i, s[2], s[3]});
  for (std::size_t a = 0; a < k; ++a) {
    const T* src = w.ptr() + a * s[1] * hw;
    std::copy(src, src + i * hw, out.ptr() + a * i * hw);
  }
  return out;
}

template <typename T>
Var<T> slice_filters(const Var<T>& w, std::size_t k, std::size_t i) {
  if (k == w.shape()[0] && i == w.shape()[1]) return w;
  auto out = slice_filters_value(w.value(), k, i);
  const auto wi = w.id();
  const auto full = w.shape();
  return w.tape().record(std::move(out), {w}, [=](Tape<T>& t, const Tensor<T>& gy) {
    const std::size_t hw = full[2] * full[3];
    auto& gw = t.grad_buffer(wi);
    for (std::size_t a = 0; a < k; ++a) {
      for (std::size_t j = 0; j < i * hw; ++j) gw[a * full[1] * hw + j] += gy[a * i * hw + j];
    }
  });
}

/// First `n` entries of a vector.
template <typename T>
Var<T> slice_prefix(const Var<T>& v, std::size_t n) {
  if (n == v.value().size()) return v;
  if (n == 0 || n > v.value().size()) {
    throw ShapeError("slice_prefix: " + std::to_string(n) + " of " + shape_str(v.shape()));
  }
  Tensor<T> out(Shape{n}, std::vector<T>(v.value().ptr(), v.value().ptr() + n));
  const auto vi = v.id();
  return v.tape().record(std::move(out), {v}, [=](Tape<T>& t, const Tensor<T>& gy) {
    auto& gv = t.grad_buffer(vi);
    for (std::size_t i = 0; i < n; ++i) gv[i] += gy[i];
  });
}

/// First `d` columns of an [M,D] matrix.
template <typename T>
Tensor<T> slice_columns_value(const Tensor<T>& w, std::size_t d) {
  const auto M = w.dim(0), D = w.dim(1);
  if (d == 0 || d > D) throw ShapeError("slice_columns: " + std::to_string(d) + " of " + shape_str(w.shape()));
  Tensor<T> out(Shape{M, d});
  for (std::size_t m = 0; m < M; ++m) std::copy(w.ptr() + m * D, w.ptr() + m * D + d, out.ptr() + m * d);
  return out;
}

template <typename T>
Var<T> slice_columns(const Var<T>& w, std::size_t d) {
  if (d == w.shape()[1]) return w;
  auto out = slice_columns_value(w.value(), d);
  const auto wi = w.id();
  const auto M = w.shape()[0], D = w.shape()[1];
  return w.tape().record(std::move(out), {w}, [=](Tape<T>& t, const Tensor<T>& gy) {
    auto& gw = t.grad_buffer(wi);
    for (std::size_t m = 0; m < M; ++m) {
      for (std::size_t j = 0; j < d; ++j) gw[m * D + j] += gy[m * d + j];
    }
  });
}

}  // namespace spnet::ops

#endif  // SPNET_OPS_HPP_
