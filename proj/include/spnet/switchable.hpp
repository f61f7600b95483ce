// Copyright 2026 The SPNet Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef SPNET_SWITCHABLE_HPP_
#define SPNET_SWITCHABLE_HPP_

#include <cmath>
#include <numeric>
#include <optional>
#include <utility>

#include "spnet/ops.hpp"
#include "spnet/quantizers.hpp"

namespace spnet {

/// Width multiplier as an exact fraction in (0, 1], so that the number of
/// active filters ceil(K * width) never depends on floating-point rounding.
class Width {
 public:
  Width() = default;
  Width(std::int64_t num, std::int64_t den) {
    if (den <= 0 || num <= 0 || num > den) {
      throw ValueError("width must be a fraction in (0, 1], got " + std::to_string(num) + "/" +
                       std::to_string(den));
    }
    const auto g = std::gcd(num, den);
    num_ = num / g;
    den_ = den / g;
  }

  /// Accepts "1", "1.0", "0.25" or "1/4".
  static Width parse(const std::string& text) {
    const std::string s = trim(text);
    auto digits = [&](const std::string& d) {
      if (d.empty() || d.size() > 12 || d.find_first_not_of("0123456789") != std::string::npos) {
        throw ValueError("invalid width '" + text + "'");
      }
      return std::stoll(d);
    };
    if (const auto slash = s.find('/'); slash != std::string::npos) {
      return Width(digits(s.substr(0, slash)), digits(s.substr(slash + 1)));
    }
    const auto dot = s.find('.');
    if (dot == std::string::npos) return Width(digits(s), 1);
    const std::string ip = s.substr(0, dot), fp = s.substr(dot + 1);
    std::int64_t den = 1;
    for (std::size_t i = 0; i < fp.size(); ++i) den *= 10;
    const std::int64_t whole = ip.empty() ? 0 : digits(ip);
    const std::int64_t frac = fp.empty() ? 0 : digits(fp);
    return Width(whole * den + frac, den);
  }

  std::int64_t num() const { return num_; }
  std::int64_t den() const { return den_; }
  double value() const { return static_cast<double>(num_) / static_cast<double>(den_); }

  /// ceil(channels * width), never less than 1.
  std::size_t apply(std::size_t channels) const {
    const auto c = static_cast<std::int64_t>(channels);
    return static_cast<std::size_t>(std::max<std::int64_t>(1, (c * num_ + den_ - 1) / den_));
  }

  /// Decimal form when exact ("1.0", "0.25"), else "n/d".
  std::string to_string() const {
    std::int64_t scale = 10;
    int places = 1;
    while (scale % den_ != 0 && places < 9) {
      scale *= 10;
      ++places;
    }
    if (scale % den_ != 0) return std::to_string(num_) + "/" + std::to_string(den_);
    const std::int64_t scaled = num_ * (scale / den_);
    std::string frac = std::to_string(scaled % scale);
    if (frac.size() < static_cast<std::size_t>(places)) {
      frac.insert(0, static_cast<std::size_t>(places) - frac.size(), '0');
    }
    while (frac.size() > 1 && frac.back() == '0') frac.pop_back();
    return std::to_string(scaled / scale) + "." + frac;
  }

  bool operator==(const Width&) const = default;

 private:
  std::int64_t num_ = 1;
  std::int64_t den_ = 1;
};

/// One runtime operating point. 32 bits means full precision.
struct SwitchConfig {
  int bits_w = 32;
  int bits_a = 32;
  Width width;

  bool full_precision() const { return bits_w == 32 && bits_a == 32; }

  std::string to_string() const {
    return "(" + std::to_string(bits_w) + "," + std::to_string(bits_a) + "," + width.to_string() + ")";
  }

  static void validate_bits(int bits, const char* what) {
    if (bits < 1 || bits > 32) {
      throw ValueError(std::string(what) + " must be in [1, 32], got " + std::to_string(bits));
    }
  }

  bool operator==(const SwitchConfig&) const = default;
};

/// Registered switches in training order, plus the BN slot each maps to.
class SwitchRegistry {
 public:
  SwitchRegistry() = default;
  SwitchRegistry(std::vector<SwitchConfig> switches, bool shared_bn)
      : switches_(std::move(switches)), shared_bn_(shared_bn) {
    if (switches_.empty()) throw ConfigError("switch list must not be empty");
    for (std::size_t i = 0; i < switches_.size(); ++i) {
      SwitchConfig::validate_bits(switches_[i].bits_w, "bits_w");
      SwitchConfig::validate_bits(switches_[i].bits_a, "bits_a");
      for (std::size_t j = 0; j < i; ++j) {
        if (switches_[i] == switches_[j]) {
          throw ConfigError("switch " + switches_[i].to_string() + " registered twice");
        }
      }
    }
  }

  const std::vector<SwitchConfig>& switches() const { return switches_; }
  std::size_t size() const { return switches_.size(); }
  bool shared_bn() const { return shared_bn_; }
  std::size_t bn_slots() const { return shared_bn_ ? 1 : switches_.size(); }

  std::optional<std::size_t> find(const SwitchConfig& s) const {
    for (std::size_t i = 0; i < switches_.size(); ++i) {
      if (switches_[i] == s) return i;
    }
    return std::nullopt;
  }

  std::string describe() const {
    std::string out;
    for (std::size_t i = 0; i < switches_.size(); ++i) {
      if (i) out += ",";
      out += switches_[i].to_string();
    }
    return out;
  }

  std::size_t index_of(const SwitchConfig& s) const {
    if (auto i = find(s)) return *i;
    throw SwitchError("switch " + s.to_string() + " is not registered; registered switches: " +
                      describe());
  }

 private:
  std::vector<SwitchConfig> switches_;
  bool shared_bn_ = false;
};

/// A selected switch: registry position plus its BN slot.
struct ActiveSwitch {
  std::size_t index = 0;
  std::size_t bn_slot = 0;
  SwitchConfig config;
};

inline ActiveSwitch switch_select(const SwitchRegistry& registry, const SwitchConfig& s) {
  const auto i = registry.index_of(s);
  return ActiveSwitch{i, registry.shared_bn() ? 0 : i, s};
}

enum class Mode { Train, Eval };
enum class Ordering { ConvBnRelu, ConvReluBn };

/// Per-switch batch normalization: private running statistics and private
/// affine parameters for every BN slot.
template <typename T>
struct SBNState {
  std::size_t channels = 0;
  T momentum = T(0.1);
  T eps = T(1e-5);
  std::vector<Tensor<T>> running_mean;
  std::vector<Tensor<T>> running_var;
  std::vector<Parameter<T>> gamma;
  std::vector<Parameter<T>> beta;

  SBNState() = default;
  SBNState(std::size_t channels_, std::size_t slots, const std::string& name) : channels(channels_) {
    for (std::size_t s = 0; s < slots; ++s) {
      running_mean.emplace_back(Shape{channels}, T(0));
      running_var.emplace_back(Shape{channels}, T(1));
      gamma.emplace_back(name + "/s" + std::to_string(s) + "/gamma", Tensor<T>(Shape{channels}, T(1)));
      beta.emplace_back(name + "/s" + std::to_string(s) + "/beta", Tensor<T>(Shape{channels}, T(0)));
    }
  }

  std::size_t slots() const { return running_mean.size(); }
};

/// Normalizes the first K' = x.dim(1) channels with the slot's state. Train
/// mode uses batch statistics (biased variance) and updates that slot's
/// running estimates (unbiased variance); eval mode uses the running ones.
template <typename T>
Var<T> sbn_forward(Tape<T>& tape, SBNState<T>& state, const Var<T>& x, std::size_t slot, Mode mode) {
  if (slot >= state.slots()) throw SwitchError("BN slot " + std::to_string(slot) + " out of range");
  const auto k = x.shape().at(1);
  if (k > state.channels) {
    throw ShapeError("switchable BN over " + std::to_string(state.channels) + " channels got input " +
                     shape_str(x.shape()));
  }
  auto gamma = ops::slice_prefix(tape.param(state.gamma[slot]), k);
  auto beta = ops::slice_prefix(tape.param(state.beta[slot]), k);
  auto& mean = state.running_mean[slot];
  auto& var = state.running_var[slot];
  if (mode == Mode::Eval) {
    return ops::batch_norm_eval(x, gamma, beta, std::span<const T>(mean.ptr(), k),
                                std::span<const T>(var.ptr(), k), state.eps);
  }
  std::vector<double> bmean, bvar;
  auto y = ops::batch_norm_train(x, gamma, beta, state.eps, &bmean, &bvar);
  const double count = static_cast<double>(x.value().size() / k);
  const double unbias = count > 1 ? count / (count - 1) : 1.0;
  const T m = state.momentum;
  for (std::size_t c = 0; c < k; ++c) {
    mean[c] = (T(1) - m) * mean[c] + m * static_cast<T>(bmean[c]);
    var[c] = (T(1) - m) * var[c] + m * static_cast<T>(bvar[c] * unbias);
  }
  return y;
}

/// Quantizer families used by a model, one for weights and one for activations.
struct QuantScheme {
  quant::Family weight_family = quant::Family::TanhBased;
  quant::Family activation_family = quant::Family::ReLUBased;
  bool clip_full_precision = true;

  quant::QuantizerSpec weights(int bits) const {
    if (bits >= 32) return quant::QuantizerSpec::make(quant::Family::Identity, 32, quant::Target::Weights);
    return quant::QuantizerSpec::make(weight_family, bits, quant::Target::Weights);
  }

  quant::QuantizerSpec activations(int bits) const {
    if (bits >= 32) return quant::QuantizerSpec::make(quant::Family::Identity, 32, quant::Target::Activations);
    return quant::QuantizerSpec::make(activation_family, bits, quant::Target::Activations);
  }

  /// Range full-precision activations are clipped to so they stay on the
  /// same scale as the quantized switches. The log family is unbounded.
  std::optional<std::pair<double, double>> full_precision_clip() const {
    if (!clip_full_precision) return std::nullopt;
    switch (activation_family) {
      case quant::Family::TanhBased:
      case quant::Family::Sign: return std::make_pair(-1.0, 1.0);
      case quant::Family::ReLUBased: return std::make_pair(0.0, 1.0);
      default: return std::nullopt;
    }
  }
};

/// Applies the switch's activation quantizer (or the full-precision clip).
template <typename T>
Var<T> quantize_activations(const Var<T>& x, const QuantScheme& scheme, int bits_a) {
  const auto spec = scheme.activations(bits_a);
  if (!spec.identity()) return quant::quantize(x, spec);
  if (auto r = scheme.full_precision_clip()) {
    return ops::clip(x, static_cast<T>(r->first), static_cast<T>(r->second));
  }
  return x;
}

/// Whether a layer ends with its nonlinearity (Full) or stops after BN
/// (NoActivation: residual second convs under ConvBnRelu, projections).
enum class LayerRole { Full, NoActivation };

/// Convolution with quantized inputs and weights, slimmed to the active
/// width, followed by switchable BN and ReLU in the configured order.
/// The master weights stay real-valued; only their per-call image is quantized.
template <typename T>
struct QuantConvLayer {
  std::string name;
  Parameter<T> weights;  // [K, I, h, w]
  std::size_t stride = 1;
  std::size_t padding = 0;
  SBNState<T> sbn;
  Ordering ordering = Ordering::ConvBnRelu;
  bool quantized = true;    // false for the stem
  bool slim_input = true;   // false when the input is the image

  struct Output {
    Var<T> out;
    Var<T> tap;  // pre-activation
    Var<T> conv;
  };

  QuantConvLayer() = default;
  QuantConvLayer(std::string name_, std::size_t in_ch, std::size_t out_ch, std::size_t kernel,
                 std::size_t stride_, std::size_t padding_, std::size_t bn_slots, Ordering ordering_,
                 bool quantized_, bool slim_input_)
      : name(name_),
        weights(name_ + "/weight", Tensor<T>(Shape{out_ch, in_ch, kernel, kernel})),
        stride(stride_),
        padding(padding_),
        sbn(out_ch, bn_slots, name_ + "/bn"),
        ordering(ordering_),
        quantized(quantized_),
        slim_input(slim_input_) {}

  std::size_t out_channels() const { return weights.value.dim(0); }
  std::size_t in_channels() const { return weights.value.dim(1); }

  std::size_t active_out(const Width& w) const { return w.apply(out_channels()); }
  std::size_t active_in(const Width& w) const { return slim_input ? w.apply(in_channels()) : in_channels(); }

  /// Activation-quantized input and weight image actually convolved.
  std::pair<Var<T>, Var<T>> operands(Tape<T>& tape, const Var<T>& input, const ActiveSwitch& sw,
                                     const QuantScheme& scheme) {
    const auto k = active_out(sw.config.width);
    const auto i = active_in(sw.config.width);
    if (input.shape().size() != 4 || input.shape()[1] != i) {
      throw ShapeError(name + ": expected " + std::to_string(i) + " input channels at width " +
                       sw.config.width.to_string() + ", got input " + shape_str(input.shape()));
    }
    auto w = ops::slice_filters(tape.param(weights), k, i);
    if (!quantized) return {input, w};
    auto xq = quantize_activations(input, scheme, sw.config.bits_a);
    auto wq = quant::quantize(w, scheme.weights(sw.config.bits_w));
    return {xq, wq};
  }

  Output forward(Tape<T>& tape, const Var<T>& input, const ActiveSwitch& sw, const QuantScheme& scheme,
                 Mode mode, LayerRole role = LayerRole::Full) {
    auto [xq, wq] = operands(tape, input, sw, scheme);
    auto o = ops::conv2d(xq, wq, stride, padding);
    Output r;
    r.conv = o;
    if (role == LayerRole::NoActivation) {
      r.out = sbn_forward(tape, sbn, o, sw.bn_slot, mode);
      r.tap = r.out;
    } else if (ordering == Ordering::ConvBnRelu) {
      r.tap = sbn_forward(tape, sbn, o, sw.bn_slot, mode);
      r.out = ops::relu(r.tap);
    } else {
      r.tap = o;
      r.out = sbn_forward(tape, sbn, ops::relu(o), sw.bn_slot, mode);
    }
    return r;
  }

  std::vector<Parameter<T>*> parameters() {
    std::vector<Parameter<T>*> ps{&weights};
    for (auto& g : sbn.gamma) ps.push_back(&g);
    for (auto& b : sbn.beta) ps.push_back(&b);
    return ps;
  }
};

}  // namespace spnet

#endif  // SPNET_SWITCHABLE_HPP_
