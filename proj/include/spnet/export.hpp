// Copyright 2026 The SPNet Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef SPNET_EXPORT_HPP_
#define SPNET_EXPORT_HPP_

#include <optional>
#include <string>
#include <vector>

#include "spnet/binary.hpp"
#include "spnet/config.hpp"
#include "spnet/io.hpp"
#include "spnet/network.hpp"

namespace spnet {

inline constexpr std::uint16_t kMergedVersion = 1;

/// One conv layer of a single-switch deployment artifact. Weights are the
/// slimmed, already-quantized image; BN is either folded into the weights
/// (scale empty, shift acts as a bias) or kept as a per-channel affine.
struct MergedLayer {
  std::string name;
  bool quantized = true;
  bool normalize_only = false;  // BN without a following nonlinearity
  bool folded = false;
  std::size_t stride = 1, padding = 0;
  Tensor<float> weights;
  std::optional<binary::BitTensor> packed;  // set when every weight is +-1
  std::vector<float> scale, shift;

  std::size_t payload_bytes() const { return packed ? packed->words.size() * 8 : weights.size() * 4; }
};

struct MergedModel {
  std::string config;  // canonical text of the training run
  SwitchConfig sw;
  Architecture architecture = Architecture::PlainCNN;
  Ordering ordering = Ordering::ConvBnRelu;
  QuantScheme scheme;
  std::vector<MergedLayer> layers;  // stem, then blocks or (a, b[, proj]) per pair
  std::vector<bool> has_projection;
  Tensor<float> head_w, head_b;

  /// Stored weight bytes over the quantized layers only.
  std::size_t quantized_payload_bytes() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.quantized ? l.payload_bytes() : 0;
    return n;
  }

  bool binary_capable() const {
    return sw.bits_w == 1 && sw.bits_a == 1 && scheme.weights(1).family == quant::Family::Sign &&
           scheme.activations(1).family == quant::Family::Sign;
  }
};

/// Builds the merged artifact for switch `s`. Warnings (folds that the
/// ordering or quantized weights forbid) are appended to `warnings`.
inline MergedModel export_merged(Model<float>& model, const RunConfig& rc, const SwitchConfig& s, bool fold,
                                 std::vector<std::string>& warnings) {
  const auto sw = model.select(s);
  MergedModel out;
  out.config = emit_canonical(rc);
  out.sw = s;
  out.architecture = model.spec().architecture;
  out.ordering = model.ordering();
  out.scheme = model.scheme();

  auto merge = [&](QuantConvLayer<float>& l, bool normalize_only) {
    MergedLayer m;
    m.name = l.name;
    m.quantized = l.quantized;
    m.normalize_only = normalize_only;
    m.stride = l.stride;
    m.padding = l.padding;
    const auto k = l.active_out(s.width);
    const auto i = l.active_in(s.width);
    auto w = ops::slice_filters_value(l.weights.value, k, i);
    if (l.quantized) w = quant::quantize_value(w, out.scheme.weights(s.bits_w));
    const auto slot = sw.bn_slot;
    auto [scale, shift] = kernels::bn_fold<float>(
        std::span<const float>(l.sbn.running_mean[slot].ptr(), k), std::span<const float>(l.sbn.running_var[slot].ptr(), k),
        std::span<const float>(l.sbn.gamma[slot].value.ptr(), k), std::span<const float>(l.sbn.beta[slot].value.ptr(), k),
        l.sbn.eps);
    m.scale = std::move(scale);
    m.shift = std::move(shift);
    const bool bn_follows_conv = normalize_only || out.ordering == Ordering::ConvBnRelu;
    const bool weights_free = !l.quantized || s.bits_w == 32;
    // Log activation quantizers take their range from the smallest nonzero
    // magnitude, so even last-bit changes from folding can move every level.
    const bool log_downstream = out.scheme.activations(s.bits_a).family == quant::Family::Logarithmic;
    if (fold && bn_follows_conv && weights_free && !log_downstream) {
      const auto per = w.size() / k;
      for (std::size_t c = 0; c < k; ++c) {
        for (std::size_t j = 0; j < per; ++j) w[c * per + j] *= m.scale[c];
      }
      m.scale.clear();
      m.folded = true;
    } else if (fold && !bn_follows_conv) {
      warnings.push_back(l.name + ": ReLU sits between conv and BN, so BN cannot fold into the weights; kept as affine");
    } else if (fold && !weights_free) {
      warnings.push_back(l.name + ": folding would move quantized weights off their codebook; kept as affine");
    } else if (fold) {
      warnings.push_back(l.name + ": log activation statistics are rounding-sensitive, so BN is kept as affine");
    }
    const bool pm1 = std::all_of(w.data().begin(), w.data().end(), [](float v) { return v == 1.0f || v == -1.0f; });
    if (l.quantized && pm1) m.packed = binary::pack(w);
    m.weights = std::move(w);
    out.layers.push_back(std::move(m));
  };

  const bool b_plain = out.ordering == Ordering::ConvBnRelu;
  merge(model.stem(), false);
  for (auto& b : model.blocks()) merge(b, false);
  for (auto& p : model.pairs()) {
    merge(p.a, false);
    merge(p.b, b_plain);
    out.has_projection.push_back(p.projection.has_value());
    if (p.projection) merge(*p.projection, true);
  }
  const auto d = s.width.apply(model.head_weight().value.dim(1));
  out.head_w = ops::slice_columns_value(model.head_weight().value, d);
  out.head_b = model.head_bias().value;
  return out;
}

/// Executes a merged artifact. With `binary` set, quantized convs run as
/// xnor-popcount over packed operands; every other step is shared with the
/// float path.
class InferenceModel {
 public:
  explicit InferenceModel(MergedModel m) : m_(std::move(m)) {
    for (const auto& l : m_.layers) {
      packed_.push_back(l.packed ? std::optional(binary::pack_filters(l.weights)) : std::nullopt);
    }
  }

  const MergedModel& merged() const { return m_; }

  Tensor<float> forward(const Tensor<float>& x, bool binary = false) const {
    if (binary && !m_.binary_capable()) {
      throw SwitchError("binary inference needs a 1-bit weight and activation switch with sign quantizers, got " +
                        m_.sw.to_string());
    }
    std::size_t li = 0;
    auto h = run(li++, x, binary);
    if (m_.architecture == Architecture::PlainCNN) {
      while (li < m_.layers.size()) h = run(li++, h, binary);
    } else {
      for (bool proj : m_.has_projection) {
        auto a = run(li++, h, binary);
        auto b = run(li++, a, binary);
        auto shortcut = proj ? run(li++, h, binary) : h;
        auto sum = kernels::add(b, shortcut);
        h = m_.ordering == Ordering::ConvBnRelu ? kernels::relu(sum) : sum;
      }
    }
    return kernels::dense_forward(kernels::global_avg_pool(h), m_.head_w, m_.head_b);
  }

 private:
  Tensor<float> run(std::size_t li, const Tensor<float>& x, bool binary) const {
    const auto& l = m_.layers[li];
    Tensor<float> in = x;
    if (l.quantized) {
      const auto spec = m_.scheme.activations(m_.sw.bits_a);
      if (!spec.identity()) {
        in = quant::quantize_value(x, spec);
      } else if (auto r = m_.scheme.full_precision_clip()) {
        in = kernels::clip(x, static_cast<float>(r->first), static_cast<float>(r->second));
      }
    }
    if (in.rank() != 4 || in.dim(1) != l.weights.dim(1)) {
      throw ShapeError(l.name + ": expected " + std::to_string(l.weights.dim(1)) + " input channels, got " +
                       shape_str(in.shape()));
    }
    Tensor<float> conv = binary && packed_[li]
                             ? binary::binary_conv_infer<float>(binary::pack(in), *packed_[li], l.stride, l.padding)
                             : kernels::conv2d_forward(in, l.weights, l.stride, l.padding);
    auto bn = [&](const Tensor<float>& t) {
      return l.folded ? kernels::add_channel_bias<float>(t, l.shift)
                      : kernels::channel_affine<float>(t, l.scale, l.shift);
    };
    if (l.normalize_only) return bn(conv);
    if (m_.ordering == Ordering::ConvBnRelu) return kernels::relu(bn(conv));
    return bn(kernels::relu(conv));
  }

  MergedModel m_;
  std::vector<std::optional<binary::PackedFilters>> packed_;
};

inline std::vector<std::uint8_t> encode(const MergedModel& m) {
  io::ByteWriter w;
  w.magic("SPMG");
  w.u16(kMergedVersion);
  w.str(m.config);
  w.u8(static_cast<std::uint8_t>(m.sw.bits_w));
  w.u8(static_cast<std::uint8_t>(m.sw.bits_a));
  w.u64(static_cast<std::uint64_t>(m.sw.width.num()));
  w.u64(static_cast<std::uint64_t>(m.sw.width.den()));
  auto floats = [&](std::span<const float> v) {
    w.u32(static_cast<std::uint32_t>(v.size()));
    for (auto f : v) w.f32(f);
  };
  w.u32(static_cast<std::uint32_t>(m.layers.size()));
  for (const auto& l : m.layers) {
    w.str(l.name);
    w.u8(l.quantized);
    w.u8(l.normalize_only);
    w.u8(l.folded);
    w.u8(l.packed.has_value());
    w.u32(static_cast<std::uint32_t>(l.stride));
    w.u32(static_cast<std::uint32_t>(l.padding));
    for (auto d : l.weights.shape()) w.u64(d);
    if (l.packed) {
      for (auto word : l.packed->words) w.u64(word);
    } else {
      floats(l.weights.data());
    }
    floats(l.scale);
    floats(l.shift);
  }
  w.u64(m.head_w.dim(0));
  w.u64(m.head_w.dim(1));
  floats(m.head_w.data());
  floats(m.head_b.data());
  return w.take();
}

inline MergedModel decode_merged(const std::vector<std::uint8_t>& bytes) {
  io::ByteReader r(bytes, "merged export");
  const auto magic = r.magic();
  if (magic != "SPMG") {
    throw FormatError("merged export: bad magic '" + magic + "'; this is " + io::describe_magic(magic) +
                      ", not a merged export");
  }
  const auto version = r.u16();
  if (version != kMergedVersion) {
    throw FormatError("merged export: unsupported version " + std::to_string(version) + " (expected " +
                      std::to_string(kMergedVersion) + ")");
  }
  MergedModel m;
  m.config = r.str();
  const auto rc = parse_config(m.config);
  m.sw.bits_w = r.u8();
  m.sw.bits_a = r.u8();
  const auto num = static_cast<std::int64_t>(r.u64());
  const auto den = static_cast<std::int64_t>(r.u64());
  m.sw.width = Width(num, den);
  m.architecture = rc.model.architecture;
  m.ordering = rc.model.resolved_ordering();
  m.scheme = rc.model.scheme();
  auto floats = [&] {
    std::vector<float> v(r.u32());
    r.need(v.size() * 4);
    for (auto& f : v) f = r.f32();
    return v;
  };
  const auto n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    MergedLayer l;
    l.name = r.str();
    l.quantized = r.u8();
    l.normalize_only = r.u8();
    l.folded = r.u8();
    const bool packed = r.u8();
    l.stride = r.u32();
    l.padding = r.u32();
    Shape s(4);
    for (auto& d : s) d = static_cast<std::size_t>(r.u64());
    const auto count = s[0] * s[1] * s[2] * s[3];
    if (packed) {
      binary::BitTensor b{s, count, std::vector<std::uint64_t>(binary::words_for(count))};
      r.need(b.words.size() * 8);
      for (auto& word : b.words) word = r.u64();
      l.weights = binary::unpack<float>(b);
      l.packed = std::move(b);
    } else {
      auto v = floats();
      if (v.size() != count) throw FormatError("merged export: " + l.name + " weight count does not match its shape");
      l.weights = Tensor<float>(s, std::move(v));
    }
    l.scale = floats();
    l.shift = floats();
    if (l.shift.size() != s[0] || (!l.folded && l.scale.size() != s[0])) {
      throw FormatError("merged export: " + l.name + " has malformed BN parameters");
    }
    m.layers.push_back(std::move(l));
  }
  const auto rows = static_cast<std::size_t>(r.u64()), cols = static_cast<std::size_t>(r.u64());
  auto hw = floats();
  if (hw.size() != rows * cols) throw FormatError("merged export: head weight count does not match its shape");
  m.head_w = Tensor<float>(Shape{rows, cols}, std::move(hw));
  m.head_b = Tensor<float>(Shape{rows}, floats());
  if (m.architecture == Architecture::MiniResNet) {
    // Pair layout is recovered from the layer names.
    for (const auto& l : m.layers) {
      if (l.name.ends_with("/b")) m.has_projection.push_back(false);
      if (l.name.ends_with("/proj")) m.has_projection.back() = true;
    }
  }
  if (r.remaining() != 0) throw FormatError("merged export: " + std::to_string(r.remaining()) + " trailing bytes");
  return m;
}

inline void save_merged(const std::string& path, const MergedModel& m) { io::write_file(path, encode(m)); }
inline MergedModel load_merged(const std::string& path) { return decode_merged(io::read_file(path)); }

}  // namespace spnet

#endif  // SPNET_EXPORT_HPP_
