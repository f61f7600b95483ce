// Copyright 2026 The SPNet Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef SPNET_NETWORK_HPP_
#define SPNET_NETWORK_HPP_

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "spnet/switchable.hpp"

namespace spnet {

enum class Architecture { PlainCNN, MiniResNet };

/// Weight / activation quantizer pairings.
enum class QuantizerFamily {
  TanhBased,            // tanh on weights and activations
  TanhWeightsReLUActs,  // tanh on weights, relu on activations ("relu-based")
  LogWeightsLogActs,
  TanhWeightsLogActs,
};

enum class OrderingChoice { Auto, ConvBnRelu, ConvReluBn };

inline QuantScheme scheme_for(QuantizerFamily f, bool clip_full_precision) {
  using quant::Family;
  QuantScheme s;
  s.clip_full_precision = clip_full_precision;
  switch (f) {
    case QuantizerFamily::TanhBased:
      s.weight_family = Family::TanhBased;
      s.activation_family = Family::TanhBased;
      break;
    case QuantizerFamily::TanhWeightsReLUActs:
      s.weight_family = Family::TanhBased;
      s.activation_family = Family::ReLUBased;
      break;
    case QuantizerFamily::LogWeightsLogActs:
      s.weight_family = Family::Logarithmic;
      s.activation_family = Family::Logarithmic;
      break;
    case QuantizerFamily::TanhWeightsLogActs:
      s.weight_family = Family::TanhBased;
      s.activation_family = Family::Logarithmic;
      break;
  }
  return s;
}

struct ModelSpec {
  Architecture architecture = Architecture::PlainCNN;
  std::size_t input_channels = 3;
  std::size_t num_classes = 4;
  std::size_t stem_channels = 16;
  std::vector<std::size_t> channels;  // per block (plain) or per residual pair; empty = default
  std::vector<std::size_t> strides;   // same length as channels; empty = default
  QuantizerFamily family = QuantizerFamily::TanhWeightsReLUActs;
  std::vector<SwitchConfig> switches{SwitchConfig{}};
  OrderingChoice ordering = OrderingChoice::Auto;
  bool clip_full_precision = true;
  bool shared_bn = false;
  std::vector<std::size_t> taps;  // quantized-block indices feeding the feature loss; empty = all

  std::vector<std::size_t> resolved_channels() const {
    if (!channels.empty()) return channels;
    if (architecture == Architecture::PlainCNN) return {32, 32, 64, 64};
    return {32, 64, 64};
  }

  std::vector<std::size_t> resolved_strides() const {
    if (!strides.empty()) return strides;
    if (architecture == Architecture::PlainCNN) return {1, 2, 1, 2};
    return {1, 2, 2};
  }

  std::size_t quantized_blocks() const {
    const auto n = resolved_channels().size();
    return architecture == Architecture::PlainCNN ? n : 2 * n;
  }

  QuantScheme scheme() const { return scheme_for(family, clip_full_precision); }

  /// ConvReluBn exactly when 1-bit tanh activations are registered, so that
  /// {-1, +1} activations stay representable after the normalization.
  Ordering required_ordering() const {
    bool one_bit_acts = false;
    for (const auto& s : switches) one_bit_acts = one_bit_acts || s.bits_a == 1;
    const bool tanh_acts = scheme().activation_family == quant::Family::TanhBased;
    return (tanh_acts && one_bit_acts) ? Ordering::ConvReluBn : Ordering::ConvBnRelu;
  }

  Ordering resolved_ordering() const {
    const auto req = required_ordering();
    if (ordering == OrderingChoice::Auto) return req;
    const auto want = ordering == OrderingChoice::ConvBnRelu ? Ordering::ConvBnRelu : Ordering::ConvReluBn;
    if (want != req) {
      throw ConfigError(std::string("ordering: ") +
                        (want == Ordering::ConvBnRelu ? "conv_bn_relu" : "conv_relu_bn") +
                        " is inconsistent with the quantizer family and switch list (requires " +
                        (req == Ordering::ConvBnRelu ? "conv_bn_relu" : "conv_relu_bn") + ")");
    }
    return want;
  }

  void validate() const {
    if (switches.empty()) throw ConfigError("switches: the switch list must not be empty");
    SwitchRegistry check(switches, shared_bn);
    const auto sc = scheme();
    for (const auto& s : switches) {
      try {
        (void)sc.weights(s.bits_w);
        (void)sc.activations(s.bits_a);
      } catch (const ValueError& e) {
        throw ConfigError("switches: " + s.to_string() + " invalid for this quantizer family: " + e.what());
      }
    }
    const auto ch = resolved_channels();
    const auto st = resolved_strides();
    if (ch.empty() || ch.size() != st.size()) {
      throw ConfigError("channels/strides: lists must be non-empty and of equal length");
    }
    for (auto c : ch) if (c == 0) throw ConfigError("channels: entries must be >= 1");
    for (auto s : st) if (s == 0) throw ConfigError("strides: entries must be >= 1");
    if (input_channels == 0 || num_classes < 2 || stem_channels == 0) {
      throw ConfigError("model: input_channels >= 1, num_classes >= 2, stem_channels >= 1 required");
    }
    for (auto t : taps) {
      if (t >= quantized_blocks()) {
        throw ConfigError("taps: index " + std::to_string(t) + " out of range (" +
                          std::to_string(quantized_blocks()) + " quantized blocks)");
      }
    }
    (void)resolved_ordering();
  }

  /// Rejects image sizes some convolution cannot tile exactly, naming the
  /// first layer that fails.
  void check_image_size(std::size_t height, std::size_t width) const {
    std::size_t h = height, w = width;
    auto step = [&](const std::string& layer, std::size_t k, std::size_t s, std::size_t p) {
      for (auto* d : {&h, &w}) {
        if (*d + 2 * p < k || (*d + 2 * p - k) % s != 0) {
          throw ConfigError("image size " + std::to_string(height) + "x" + std::to_string(width) + " does not tile at " +
                            layer + " (input " + std::to_string(h) + "x" + std::to_string(w) + ", stride " +
                            std::to_string(s) + ")");
        }
      }
      h = (h + 2 * p - k) / s + 1;
      w = (w + 2 * p - k) / s + 1;
    };
    step("stem", 3, 1, 1);
    const auto ch = resolved_channels();
    const auto st = resolved_strides();
    for (std::size_t i = 0; i < ch.size(); ++i) {
      const auto name = (architecture == Architecture::PlainCNN ? "block" : "res") + std::to_string(i);
      if (architecture == Architecture::PlainCNN) {
        step(name, 3, st[i], 1);
      } else {
        step(name + "/a", 3, st[i], 1);
        step(name + "/b", 3, 1, 1);
      }
    }
  }
};

struct OpCount {
  std::uint64_t mult_accs = 0;
  std::uint64_t weight_bytes = 0;
  std::uint64_t activation_bytes_peak = 0;
};

/// Stem conv, quantized conv blocks (plain or residual pairs), global average
/// pooling and a dense head. Stem and head are never quantized.
template <typename T = float>
class Model {
 public:
  struct Result {
    Var<T> logits;
    std::vector<Var<T>> taps;
  };

  struct ResidualPair {
    QuantConvLayer<T> a;
    QuantConvLayer<T> b;
    std::optional<QuantConvLayer<T>> projection;
  };

  explicit Model(ModelSpec spec, std::uint64_t init_seed = 0) : spec_(std::move(spec)) {
    spec_.validate();
    registry_ = SwitchRegistry(spec_.switches, spec_.shared_bn);
    scheme_ = spec_.scheme();
    ordering_ = spec_.resolved_ordering();
    const auto slots = registry_.bn_slots();
    stem_ = QuantConvLayer<T>("stem", spec_.input_channels, spec_.stem_channels, 3, 1, 1, slots, ordering_,
                              false, false);
    const auto ch = spec_.resolved_channels();
    const auto st = spec_.resolved_strides();
    std::size_t prev = spec_.stem_channels;
    for (std::size_t i = 0; i < ch.size(); ++i) {
      if (spec_.architecture == Architecture::PlainCNN) {
        blocks_.emplace_back("block" + std::to_string(i), prev, ch[i], 3, st[i], 1, slots, ordering_, true, true);
      } else {
        ResidualPair p{
            QuantConvLayer<T>("res" + std::to_string(i) + "/a", prev, ch[i], 3, st[i], 1, slots, ordering_, true, true),
            QuantConvLayer<T>("res" + std::to_string(i) + "/b", ch[i], ch[i], 3, 1, 1, slots, ordering_, true, true),
            std::nullopt};
        if (prev != ch[i] || st[i] != 1) {
          p.projection = QuantConvLayer<T>("res" + std::to_string(i) + "/proj", prev, ch[i], 1, st[i], 0, slots,
                                           ordering_, true, true);
        }
        pairs_.push_back(std::move(p));
      }
      prev = ch[i];
    }
    head_w_ = Parameter<T>("head/weight", Tensor<T>(Shape{spec_.num_classes, prev}));
    head_b_ = Parameter<T>("head/bias", Tensor<T>(Shape{spec_.num_classes}));
    initialize(init_seed);
  }

  const ModelSpec& spec() const { return spec_; }
  const SwitchRegistry& registry() const { return registry_; }
  const QuantScheme& scheme() const { return scheme_; }
  Ordering ordering() const { return ordering_; }

  ActiveSwitch select(const SwitchConfig& s) const { return switch_select(registry_, s); }

  Result forward(Tape<T>& tape, const Tensor<T>& batch, const SwitchConfig& s, Mode mode) {
    return forward(tape, batch, select(s), mode);
  }

  Result forward(Tape<T>& tape, const Tensor<T>& batch, const ActiveSwitch& sw, Mode mode) {
    if (batch.rank() != 4 || batch.dim(1) != spec_.input_channels) {
      throw ShapeError("model input must be [N," + std::to_string(spec_.input_channels) + ",H,W], got " +
                       shape_str(batch.shape()));
    }
    Result r;
    std::vector<Var<T>> all_taps;
    auto x = tape.constant(batch);
    auto h = stem_.forward(tape, x, sw, scheme_, mode).out;
    if (spec_.architecture == Architecture::PlainCNN) {
      for (auto& b : blocks_) {
        auto o = b.forward(tape, h, sw, scheme_, mode);
        all_taps.push_back(o.tap);
        h = o.out;
      }
    } else {
      const auto role_b = ordering_ == Ordering::ConvBnRelu ? LayerRole::NoActivation : LayerRole::Full;
      for (auto& p : pairs_) {
        auto oa = p.a.forward(tape, h, sw, scheme_, mode);
        all_taps.push_back(oa.tap);
        auto ob = p.b.forward(tape, oa.out, sw, scheme_, mode, role_b);
        all_taps.push_back(ob.tap);
        auto shortcut = p.projection ? p.projection->forward(tape, h, sw, scheme_, mode, LayerRole::NoActivation).out : h;
        auto sum = ops::add(ob.out, shortcut);
        h = ordering_ == Ordering::ConvBnRelu ? ops::relu(sum) : sum;
      }
    }
    auto pooled = ops::global_avg_pool(h);
    auto w = ops::slice_columns(tape.param(head_w_), pooled.shape()[1]);
    r.logits = ops::dense(pooled, w, tape.param(head_b_));
    if (spec_.taps.empty()) {
      r.taps = std::move(all_taps);
    } else {
      for (auto t : spec_.taps) r.taps.push_back(all_taps.at(t));
    }
    return r;
  }

  /// Eval-mode logits without recording gradients.
  Tensor<T> predict(const Tensor<T>& batch, const SwitchConfig& s) {
    Tape<T> tape(false);
    return forward(tape, batch, s, Mode::Eval).logits.value();
  }

  std::vector<Parameter<T>*> parameters() {
    std::vector<Parameter<T>*> ps;
    for (auto* l : layers()) {
      for (auto* p : l->parameters()) ps.push_back(p);
    }
    ps.push_back(&head_w_);
    ps.push_back(&head_b_);
    return ps;
  }

  /// Shared real-valued weights (conv filters and head), excluding BN.
  std::vector<Parameter<T>*> master_weights() {
    std::vector<Parameter<T>*> ps;
    for (auto* l : layers()) ps.push_back(&l->weights);
    ps.push_back(&head_w_);
    ps.push_back(&head_b_);
    return ps;
  }

  void zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
  }

  /// Every conv layer in a fixed order: stem, then blocks / pair members.
  std::vector<QuantConvLayer<T>*> layers() {
    std::vector<QuantConvLayer<T>*> ls{&stem_};
    for (auto& b : blocks_) ls.push_back(&b);
    for (auto& p : pairs_) {
      ls.push_back(&p.a);
      ls.push_back(&p.b);
      if (p.projection) ls.push_back(&*p.projection);
    }
    return ls;
  }

  /// Visits every persistent tensor (weights, BN affine and running state)
  /// with a stable name, in a fixed order.
  void visit_state(const std::function<void(const std::string&, Tensor<T>&)>& f) {
    for (auto* l : layers()) {
      f(l->weights.name, l->weights.value);
      for (std::size_t s = 0; s < l->sbn.slots(); ++s) {
        f(l->sbn.gamma[s].name, l->sbn.gamma[s].value);
        f(l->sbn.beta[s].name, l->sbn.beta[s].value);
        f(l->name + "/bn/s" + std::to_string(s) + "/running_mean", l->sbn.running_mean[s]);
        f(l->name + "/bn/s" + std::to_string(s) + "/running_var", l->sbn.running_var[s]);
      }
    }
    f(head_w_.name, head_w_.value);
    f(head_b_.name, head_b_.value);
  }

  QuantConvLayer<T>& stem() { return stem_; }
  std::vector<QuantConvLayer<T>>& blocks() { return blocks_; }
  std::vector<ResidualPair>& pairs() { return pairs_; }
  Parameter<T>& head_weight() { return head_w_; }
  Parameter<T>& head_bias() { return head_b_; }

 private:
  /// Fan-in scaled Gaussian (std sqrt(2 / fan_in)) for every conv and the
  /// head, drawn in layer order from the Init stream; BN gamma 1, beta 0.
  void initialize(std::uint64_t seed) {
    auto rng = Rng::stream(seed, StreamPurpose::Init);
    auto fill = [&](Tensor<T>& w, std::size_t fan_in) {
      const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
      for (auto& v : w.data()) v = static_cast<T>(rng.normal(0.0, sd));
    };
    for (auto* l : layers()) {
      const auto& s = l->weights.value.shape();
      fill(l->weights.value, s[1] * s[2] * s[3]);
    }
    fill(head_w_.value, head_w_.value.dim(1));
  }

  ModelSpec spec_;
  SwitchRegistry registry_;
  QuantScheme scheme_;
  Ordering ordering_ = Ordering::ConvBnRelu;
  QuantConvLayer<T> stem_;
  std::vector<QuantConvLayer<T>> blocks_;
  std::vector<ResidualPair> pairs_;
  Parameter<T> head_w_;
  Parameter<T> head_b_;
};

template <typename T = float>
Model<T> build_model(const ModelSpec& spec, std::uint64_t init_seed = 0) {
  return Model<T>(spec, init_seed);
}

/// Per-sample analytic cost of one switch on an in_h x in_w input.
/// weight_bytes packs quantized weights at bits_w (stem/head stay 32-bit);
/// activation_bytes_peak is the largest (layer input + layer output) footprint,
/// with quantized-layer inputs stored at bits_a and outputs at 32 bits.
template <typename T>
OpCount count_ops_and_bytes(Model<T>& model, const SwitchConfig& s, std::size_t in_h, std::size_t in_w) {
  (void)model.select(s);
  OpCount c;
  auto bytes = [](std::uint64_t n, int bits) { return (n * static_cast<std::uint64_t>(bits) + 7) / 8; };
  auto conv = [&](QuantConvLayer<T>& l, std::size_t h, std::size_t w) {
    const auto k = l.active_out(s.width), i = l.active_in(s.width);
    const auto& shp = l.weights.value.shape();
    const auto g = kernels::ConvGeometry::make(Shape{1, i, h, w}, Shape{k, i, shp[2], shp[3]}, l.stride, l.padding);
    const std::uint64_t nweights = k * i * shp[2] * shp[3];
    c.mult_accs += static_cast<std::uint64_t>(g.positions()) * nweights;
    c.weight_bytes += l.quantized ? bytes(nweights, s.bits_w) : 4 * nweights;
    const std::uint64_t in_n = i * h * w, out_n = k * g.positions();
    const auto in_b = l.quantized ? bytes(in_n, s.bits_a) : 4 * in_n;
    c.activation_bytes_peak = std::max<std::uint64_t>(c.activation_bytes_peak, in_b + 4 * out_n);
    return std::make_pair(g.out_h, g.out_w);
  };
  auto [h, w] = conv(model.stem(), in_h, in_w);
  if (model.spec().architecture == Architecture::PlainCNN) {
    for (auto& b : model.blocks()) std::tie(h, w) = conv(b, h, w);
  } else {
    for (auto& p : model.pairs()) {
      auto [h2, w2] = conv(p.a, h, w);
      conv(p.b, h2, w2);
      if (p.projection) conv(*p.projection, h, w);
      h = h2;
      w = w2;
    }
  }
  const auto d = s.width.apply(model.head_weight().value.dim(1));
  const auto classes = model.head_weight().value.dim(0);
  c.mult_accs += d * classes;
  c.weight_bytes += 4 * (d * classes + classes);
  return c;
}

}  // namespace spnet

#endif  // SPNET_NETWORK_HPP_
