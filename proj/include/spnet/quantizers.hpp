// Copyright 2026 The SPNet Authors.
// SPDX-License-Identifier: Apache-2.0

// k-bit quantizers with straight-through gradients.
//
// Conventions shared by every family:
//   * rounding is half-away-from-zero (std::round);
//   * sign(0) = +1, so the 1-bit codebook is exactly {-1, +1};
//   * the straight-through mask is inclusive: 1[|x| <= 1].

#ifndef SPNET_QUANTIZERS_HPP_
#define SPNET_QUANTIZERS_HPP_

#include <algorithm>
#include <cmath>
#include <optional>
#include <set>
#include <string>

#include "spnet/tape.hpp"

namespace spnet::quant {

enum class Family { Identity, TanhBased, ReLUBased, Logarithmic, Sign };
enum class Target { Weights, Activations };

inline const char* family_name(Family f) {
  switch (f) {
    case Family::Identity: return "identity";
    case Family::TanhBased: return "tanh";
    case Family::ReLUBased: return "relu";
    case Family::Logarithmic: return "log";
    case Family::Sign: return "sign";
  }
  return "?";
}

/// Which quantizer governs a tensor. Identity is full precision (reported
/// as 32 bits). For k-bit non-identity specs the codebook has 2^k entries.
struct QuantizerSpec {
  Family family = Family::Identity;
  int bits = 32;
  Target target = Target::Weights;

  static QuantizerSpec make(Family family, int bits, Target target) {
    if (family == Family::Identity) return {Family::Identity, 32, target};
    if (bits < 1 || bits > 31) {
      throw ValueError(std::string("quantizer bits must be in [1, 31], got ") +
                       std::to_string(bits));
    }
    if (family == Family::Sign && bits != 1) throw ValueError("sign quantizer requires bits = 1");
    if (family == Family::ReLUBased && bits == 1) {
      throw ValueError("relu quantizer does not support 1-bit (use the tanh family)");
    }
    // A 1-bit tanh quantizer degenerates to a constant; the 1-bit path is sign.
    if (family == Family::TanhBased && bits == 1) family = Family::Sign;
    return {family, bits, target};
  }

  bool identity() const { return family == Family::Identity; }

  std::string to_string() const {
    return std::string(family_name(family)) + ":" + std::to_string(bits);
  }

  bool operator==(const QuantizerSpec&) const = default;
};

template <typename T>
T sign_value(T x) {
  return x >= T(0) ? T(1) : T(-1);
}

/// Base quantizer: sign for k = 1, else round((2^k - 1) x) / (2^k - 1).
template <typename T>
T base_q(T x, int k) {
  if (k < 1) throw ValueError("base_q: k must be >= 1");
  if (k == 1) return sign_value(x);
  const T levels = static_cast<T>((1u << k) - 1u);
  return std::round(levels * x) / levels;
}

template <typename T>
Tensor<T> base_q(const Tensor<T>& x, int k) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = base_q(x[i], k);
  return y;
}

template <typename T>
bool ste_pass(T x) {
  return std::abs(x) <= T(1);
}

/// upstream * 1[|x| <= 1]
template <typename T>
Tensor<T> ste_backward(const Tensor<T>& upstream, const Tensor<T>& x_pre_quant) {
  require_same_shape(upstream, x_pre_quant, "ste_backward");
  Tensor<T> g(upstream.shape());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = ste_pass(x_pre_quant[i]) ? upstream[i] : T(0);
  return g;
}

template <typename T>
Tensor<T> sign_quant(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = sign_value(x[i]);
  return y;
}

/// max |tanh(x)| over the tensor; 0 for an all-zero tensor.
template <typename T>
T tanh_scale(const Tensor<T>& x) {
  T m = 0;
  for (auto v : x.data()) m = std::max(m, std::abs(std::tanh(v)));
  return m;
}

/// 2 * Q(tanh(x) / (2 max|tanh x|) + 1/2) - 1, with `scale` = max|tanh x|.
template <typename T>
T tanh_quant_scalar(T x, int k, T scale) {
  if (scale == T(0)) return T(0);
  const T u = std::tanh(x) / (T(2) * scale) + T(0.5);
  return T(2) * base_q(u, k) - T(1);
}

template <typename T>
Tensor<T> tanh_quant(const Tensor<T>& x, int k) {
  if (k == 1) return sign_quant(x);
  const T scale = tanh_scale(x);
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = tanh_quant_scalar(x[i], k, scale);
  return y;
}

template <typename T>
Tensor<T> relu_quant(const Tensor<T>& x, int k) {
  if (k < 2) throw ValueError("relu_quant requires k >= 2");
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = base_q(std::min(std::max(x[i], T(0)), T(1)), k);
  return y;
}

/// Exponent range (log2 |x|) over the nonzero entries of a tensor.
struct LogStats {
  double min_exp = 0;
  double max_exp = 0;
};

template <typename T>
std::optional<LogStats> log_stats(const Tensor<T>& x) {
  std::optional<LogStats> s;
  for (auto v : x.data()) {
    if (v == T(0)) continue;
    const double e = std::log2(std::abs(static_cast<double>(v)));
    if (!s) {
      s = LogStats{e, e};
    } else {
      s->min_exp = std::min(s->min_exp, e);
      s->max_exp = std::max(s->max_exp, e);
    }
  }
  return s;
}

/// sign(x) * 2^e_hat with e_hat = rescale(Q(normalize(log2|x|))); 0 stays 0.
/// When all exponents coincide the normalization is degenerate and e_hat = e.
template <typename T>
T log_quant_scalar(T x, int k, const LogStats& s) {
  if (x == T(0)) return T(0);
  const double e = std::log2(std::abs(static_cast<double>(x)));
  const double range = s.max_exp - s.min_exp;
  double e_hat;
  if (range == 0.0) {
    e_hat = s.min_exp;
  } else {
    const double n = (e - s.min_exp) / range;
    e_hat = base_q(n, k) * range + s.min_exp;
  }
  return static_cast<T>(sign_value(static_cast<double>(x)) * std::exp2(e_hat));
}

template <typename T>
Tensor<T> log_quant(const Tensor<T>& x, int k) {
  if (k < 1) throw ValueError("log_quant requires k >= 1");
  Tensor<T> y(x.shape());
  const auto s = log_stats(x);
  if (!s) return y;
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = log_quant_scalar(x[i], k, *s);
  return y;
}

/// Forward quantization for any spec.
template <typename T>
Tensor<T> quantize_value(const Tensor<T>& x, const QuantizerSpec& spec) {
  switch (spec.family) {
    case Family::Identity: return x;
    case Family::Sign: return sign_quant(x);
    case Family::TanhBased: return tanh_quant(x, spec.bits);
    case Family::ReLUBased: return relu_quant(x, spec.bits);
    case Family::Logarithmic: return log_quant(x, spec.bits);
  }
  return x;
}

/// Straight-through gradient for any spec. For the tanh family the mask is
/// applied to the pre-map u = tanh(x)/(2m) + 1/2 (always inside [0, 1]) and
/// composed with du/dx = (1 - tanh^2 x) / (2m), m held constant; the outer
/// affine map contributes a factor 2.
template <typename T>
Tensor<T> quantize_backward(const Tensor<T>& upstream, const Tensor<T>& x, const QuantizerSpec& spec) {
  require_same_shape(upstream, x, "quantize_backward");
  switch (spec.family) {
    case Family::Identity: return upstream;
    case Family::Sign:
    case Family::Logarithmic: return ste_backward(upstream, x);
    case Family::ReLUBased: {
      Tensor<T> g(x.shape());
      for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] = (x[i] >= T(0) && x[i] <= T(1)) ? upstream[i] : T(0);
      }
      return g;
    }
    case Family::TanhBased: {
      const T m = tanh_scale(x);
      Tensor<T> g(x.shape());
      if (m == T(0)) return g;
      for (std::size_t i = 0; i < g.size(); ++i) {
        const T th = std::tanh(x[i]);
        const T u = th / (T(2) * m) + T(0.5);
        g[i] = ste_pass(u) ? upstream[i] * T(2) * (T(1) - th * th) / (T(2) * m) : T(0);
      }
      return g;
    }
  }
  return upstream;
}

/// Quantization as a tape op.
template <typename T>
Var<T> quantize(const Var<T>& x, const QuantizerSpec& spec) {
  if (spec.identity()) return x;
  auto out = quantize_value(x.value(), spec);
  const auto xi = x.id();
  return x.tape().record(std::move(out), {x}, [=](Tape<T>& t, const Tensor<T>& gy) {
    auto g = quantize_backward(gy, t.value(xi), spec);
    t.accumulate(xi, g);
  });
}

/// Sorted permissible output values.
struct Codebook {
  std::vector<double> values;
};

/// Attainable outputs for fixed tensor statistics. Tanh/ReLU/Sign grids are
/// statistic-free; the logarithmic family needs the exponent range and lists
/// the 2^k positive magnitudes (the negative side mirrors them).
inline Codebook enumerate_codebook(const QuantizerSpec& spec, std::optional<LogStats> stats = {}) {
  Codebook cb;
  const int k = spec.bits;
  switch (spec.family) {
    case Family::Identity: throw ValueError("identity quantizer has no codebook");
    case Family::Sign: cb.values = {-1.0, 1.0}; break;
    case Family::TanhBased:
    case Family::ReLUBased: {
      const unsigned levels = (1u << k) - 1u;
      for (unsigned i = 0; i <= levels; ++i) {
        const double g = static_cast<double>(i) / levels;
        cb.values.push_back(spec.family == Family::TanhBased ? 2.0 * g - 1.0 : g);
      }
      break;
    }
    case Family::Logarithmic: {
      if (!stats) throw ValueError("logarithmic codebook needs exponent statistics");
      std::set<double> vals;
      if (k == 1) {
        // Q(n) = sign(n) = +1 for every normalized exponent n >= 0.
        vals.insert(std::exp2(stats->max_exp));
      } else {
        const unsigned levels = (1u << k) - 1u;
        const double range = stats->max_exp - stats->min_exp;
        for (unsigned i = 0; i <= levels; ++i) {
          vals.insert(std::exp2(static_cast<double>(i) / levels * range + stats->min_exp));
        }
      }
      cb.values.assign(vals.begin(), vals.end());
      break;
    }
  }
  return cb;
}

}  // namespace spnet::quant

#endif  // SPNET_QUANTIZERS_HPP_
