// Copyright 2026 The SPNet Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef SPNET_DATA_HPP_
#define SPNET_DATA_HPP_

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "spnet/io.hpp"
#include "spnet/tensor.hpp"

namespace spnet::data {

inline constexpr std::uint16_t kDatasetVersion = 1;

/// Labelled u8 images plus the per-channel standardization stored with them.
struct Dataset {
  std::size_t channels = 3, height = 9, width = 9, num_classes = 4;
  std::vector<float> mean;  // per channel, in [0,1] pixel units
  std::vector<float> stddev;
  std::vector<std::uint16_t> labels;
  std::vector<std::uint8_t> pixels;  // count x C x H x W

  std::size_t size() const { return labels.size(); }
  std::size_t image_size() const { return channels * height * width; }

  void validate() const {
    if (channels == 0 || height == 0 || width == 0) throw FormatError("dataset: zero image dimension");
    if (num_classes < 2) throw FormatError("dataset: num_classes must be >= 2");
    if (mean.size() != channels || stddev.size() != channels) throw FormatError("dataset: missing channel stats");
    for (auto s : stddev) {
      if (!(s > 0)) throw FormatError("dataset: channel std must be positive");
    }
    if (pixels.size() != size() * image_size()) throw FormatError("dataset: pixel count does not match header");
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] >= num_classes) {
        throw FormatError("dataset: record " + std::to_string(i) + " has label " + std::to_string(labels[i]) +
                          " >= num_classes " + std::to_string(num_classes));
      }
    }
  }

  /// Records [begin, end) sharing this dataset's header and statistics.
  Dataset slice(std::size_t begin, std::size_t end) const {
    Dataset d = *this;
    d.labels.assign(labels.begin() + static_cast<std::ptrdiff_t>(begin), labels.begin() + static_cast<std::ptrdiff_t>(end));
    d.pixels.assign(pixels.begin() + static_cast<std::ptrdiff_t>(begin * image_size()),
                    pixels.begin() + static_cast<std::ptrdiff_t>(end * image_size()));
    return d;
  }

  /// Standardized float images for the given record indices, [N, C, H, W].
  Tensor<float> images(std::span<const std::size_t> idx) const {
    Tensor<float> x(Shape{idx.size(), channels, height, width});
    const auto plane = height * width;
    for (std::size_t n = 0; n < idx.size(); ++n) {
      const auto* src = pixels.data() + idx[n] * image_size();
      float* dst = x.ptr() + n * image_size();
      for (std::size_t c = 0; c < channels; ++c) {
        const float m = mean[c], inv = 1.0f / stddev[c];
        for (std::size_t j = 0; j < plane; ++j) {
          dst[c * plane + j] = (static_cast<float>(src[c * plane + j]) / 255.0f - m) * inv;
        }
      }
    }
    return x;
  }

  std::vector<int> label_batch(std::span<const std::size_t> idx) const {
    std::vector<int> y(idx.size());
    for (std::size_t n = 0; n < idx.size(); ++n) y[n] = labels[idx[n]];
    return y;
  }
};

inline std::vector<std::uint8_t> encode(const Dataset& d) {
  d.validate();
  io::ByteWriter w;
  w.magic("SPDS");
  w.u16(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(d.size()));
  w.u8(static_cast<std::uint8_t>(d.channels));
  w.u16(static_cast<std::uint16_t>(d.height));
  w.u16(static_cast<std::uint16_t>(d.width));
  w.u16(static_cast<std::uint16_t>(d.num_classes));
  for (std::size_t c = 0; c < d.channels; ++c) {
    w.f32(d.mean[c]);
    w.f32(d.stddev[c]);
  }
  const auto img = d.image_size();
  for (std::size_t i = 0; i < d.size(); ++i) {
    w.u16(d.labels[i]);
    w.raw(d.pixels.data() + i * img, img);
  }
  return w.take();
}

inline Dataset decode(const std::vector<std::uint8_t>& bytes) {
  io::ByteReader r(bytes, "dataset");
  const auto magic = r.magic();
  if (magic != "SPDS") {
    throw FormatError("dataset: bad magic '" + magic + "'; this is " + io::describe_magic(magic) + ", not a dataset");
  }
  const auto version = r.u16();
  if (version != kDatasetVersion) {
    throw FormatError("dataset: unsupported version " + std::to_string(version) + " (expected " +
                      std::to_string(kDatasetVersion) + ")");
  }
  Dataset d;
  const auto count = r.u32();
  d.channels = r.u8();
  d.height = r.u16();
  d.width = r.u16();
  d.num_classes = r.u16();
  for (std::size_t c = 0; c < d.channels; ++c) {
    d.mean.push_back(r.f32());
    d.stddev.push_back(r.f32());
  }
  const auto img = d.image_size();
  const std::size_t expected = static_cast<std::size_t>(count) * (2 + img);
  if (r.remaining() < expected) {
    throw FormatError("dataset: truncated file (" + std::to_string(count) + " records need " +
                      std::to_string(expected) + " bytes, " + std::to_string(r.remaining()) + " present)");
  }
  if (r.remaining() > expected) {
    throw FormatError("dataset: " + std::to_string(r.remaining() - expected) + " trailing bytes after " +
                      std::to_string(count) + " records");
  }
  d.labels.resize(count);
  d.pixels.resize(static_cast<std::size_t>(count) * img);
  for (std::size_t i = 0; i < count; ++i) {
    d.labels[i] = r.u16();
    r.raw(d.pixels.data() + i * img, img);
  }
  d.validate();
  return d;
}

inline void write_dataset(const std::string& path, const Dataset& d) { io::write_file(path, encode(d)); }
inline Dataset read_dataset(const std::string& path) { return decode(io::read_file(path)); }

struct SyntheticOptions {
  std::size_t classes = 4;
  std::size_t count = 2000;
  std::size_t channels = 3, height = 9, width = 9;
  std::uint64_t seed = 0;
  double noise = 0.2;
};

/// Class-conditional images: a Gaussian color blob whose hue encodes
/// class / 2 and a grating whose orientation (horizontal or vertical) encodes
/// class % 2, with per-sample jitter in strength, phase, frequency and
/// position plus pixel noise. Both cues survive horizontal flips and small
/// shifts. Labels are balanced and the record order is shuffled.
inline Dataset generate_synthetic(const SyntheticOptions& o) {
  if (o.classes < 2) throw ValueError("generate_synthetic: classes must be >= 2");
  if (o.classes > 65535) throw ValueError("generate_synthetic: too many classes");
  if (o.channels == 0 || o.channels > 255 || o.height == 0 || o.width == 0 || o.height > 65535 || o.width > 65535) {
    throw ValueError("generate_synthetic: image dimensions out of range");
  }
  Dataset d;
  d.channels = o.channels;
  d.height = o.height;
  d.width = o.width;
  d.num_classes = o.classes;
  auto rng = Rng::stream(o.seed, StreamPurpose::Data);

  const std::size_t hues = (o.classes + 1) / 2;
  auto color = [&](std::size_t hue, std::size_t c) {
    const double angle = 2 * std::numbers::pi * (static_cast<double>(hue) / static_cast<double>(hues) +
                                                 static_cast<double>(c) / static_cast<double>(o.channels));
    return std::cos(angle);
  };

  std::vector<std::uint16_t> labels(o.count);
  for (std::size_t i = 0; i < o.count; ++i) labels[i] = static_cast<std::uint16_t>(i % o.classes);
  rng.shuffle(labels.begin(), labels.end());

  const auto img = o.channels * o.height * o.width;
  d.labels = labels;
  d.pixels.resize(o.count * img);
  std::vector<double> sum(o.channels, 0.0), sq(o.channels, 0.0);
  const double H = static_cast<double>(o.height), W = static_cast<double>(o.width);
  for (std::size_t i = 0; i < o.count; ++i) {
    const std::size_t cls = labels[i];
    const std::size_t hue = cls / 2;
    const bool vertical = cls % 2 == 1;
    const double strength = rng.uniform(0.35, 1.0);
    const double cy = rng.uniform(0.25, 0.75) * (H - 1), cx = rng.uniform(0.25, 0.75) * (W - 1);
    const double radius = rng.uniform(0.2, 0.35) * std::min(H, W);
    const double freq = rng.uniform(0.18, 0.32);
    const double phase = rng.uniform(0.0, 2 * std::numbers::pi);
    const double brightness = rng.uniform(-0.08, 0.08);
    for (std::size_t c = 0; c < o.channels; ++c) {
      const double tint = color(hue, c);
      for (std::size_t y = 0; y < o.height; ++y) {
        for (std::size_t x = 0; x < o.width; ++x) {
          const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
          const double blob = std::exp(-(dy * dy + dx * dx) / (2 * radius * radius));
          const double t = vertical ? static_cast<double>(x) : static_cast<double>(y);
          const double grating = std::sin(2 * std::numbers::pi * freq * t + phase);
          double v = 0.5 + brightness + strength * (0.22 * tint * blob + 0.16 * grating) + rng.normal(0.0, o.noise);
          v = std::clamp(v, 0.0, 1.0);
          const auto u = static_cast<std::uint8_t>(std::lround(v * 255.0));
          d.pixels[i * img + (c * o.height + y) * o.width + x] = u;
          const double f = u / 255.0;
          sum[c] += f;
          sq[c] += f * f;
        }
      }
    }
  }
  const double per = static_cast<double>(o.count * o.height * o.width);
  for (std::size_t c = 0; c < o.channels; ++c) {
    const double m = o.count ? sum[c] / per : 0.0;
    const double var = o.count ? std::max(sq[c] / per - m * m, 0.0) : 0.0;
    d.mean.push_back(static_cast<float>(m));
    d.stddev.push_back(static_cast<float>(var > 1e-12 ? std::sqrt(var) : 1.0));
  }
  return d;
}

/// The last floor(n * val_fraction) records form the validation split.
inline std::pair<Dataset, Dataset> split_validation(const Dataset& d, double val_fraction) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw ConfigError("val_fraction must lie in (0, 1), got " + format_double(val_fraction));
  }
  const auto n_val = static_cast<std::size_t>(std::floor(static_cast<double>(d.size()) * val_fraction));
  if (n_val == 0 || n_val == d.size()) {
    throw ConfigError("val_fraction " + format_double(val_fraction) + " leaves an empty split of " +
                      std::to_string(d.size()) + " records");
  }
  return {d.slice(0, d.size() - n_val), d.slice(d.size() - n_val, d.size())};
}

/// Mirrors image n of a batch left to right in place.
inline void flip_horizontal(Tensor<float>& x, std::size_t n) {
  const auto C = x.dim(1), H = x.dim(2), W = x.dim(3);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t y = 0; y < H; ++y) {
      float* row = x.ptr() + ((n * C + c) * H + y) * W;
      std::reverse(row, row + W);
    }
  }
}

/// Shifts image n by (dy, dx) with zero fill: the random crop of a
/// zero-padded image.
inline void shift(Tensor<float>& x, std::size_t n, int dy, int dx) {
  const auto C = x.dim(1), H = x.dim(2), W = x.dim(3);
  std::vector<float> out(C * H * W, 0.0f);
  const float* src = x.ptr() + n * C * H * W;
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t y = 0; y < H; ++y) {
      const auto sy = static_cast<std::ptrdiff_t>(y) + dy;
      if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(H)) continue;
      for (std::size_t xx = 0; xx < W; ++xx) {
        const auto sx = static_cast<std::ptrdiff_t>(xx) + dx;
        if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(W)) continue;
        out[(c * H + y) * W + xx] = src[(c * H + static_cast<std::size_t>(sy)) * W + static_cast<std::size_t>(sx)];
      }
    }
  }
  std::copy(out.begin(), out.end(), x.ptr() + n * C * H * W);
}

/// Random horizontal flip (p = 0.5) and random crop with `pad` pixels of
/// zero padding, per image. Disabled augmentation is the identity.
inline void augment(Tensor<float>& batch, Rng& rng, bool enabled = true, int pad = 2) {
  if (!enabled) return;
  if (batch.rank() != 4) throw ShapeError("augment expects [N,C,H,W], got " + shape_str(batch.shape()));
  for (std::size_t n = 0; n < batch.dim(0); ++n) {
    const bool flip = rng.bernoulli(0.5);
    const int dy = static_cast<int>(rng.below(static_cast<std::uint64_t>(2 * pad + 1))) - pad;
    const int dx = static_cast<int>(rng.below(static_cast<std::uint64_t>(2 * pad + 1))) - pad;
    if (flip) flip_horizontal(batch, n);
    if (dy != 0 || dx != 0) shift(batch, n, dy, dx);
  }
}

/// Record order for one epoch: a permutation drawn from the Shuffle stream
/// for (seed, epoch), so any epoch can be regenerated without replaying
/// the ones before it.
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  auto rng = Rng::stream(seed, StreamPurpose::Shuffle, epoch);
  rng.shuffle(idx.begin(), idx.end());
  return idx;
}

}  // namespace spnet::data

#endif  // SPNET_DATA_HPP_
