// Copyright 2026 The SPNet Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef SPNET_BINARY_HPP_
#define SPNET_BINARY_HPP_

#include <bit>
#include <chrono>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "spnet/kernels.hpp"
#include "spnet/tensor.hpp"

namespace spnet::binary {

/// {-1,+1} values packed 64 per word. Element j lives in word j / 64 at bit
/// j % 64 (least significant first); a set bit means +1. Bits past `length`
/// in the last word are zero.
struct BitTensor {
  Shape shape;
  std::size_t length = 0;
  std::vector<std::uint64_t> words;

  std::size_t padding_bits() const { return words.size() * 64 - length; }
  bool bit(std::size_t j) const { return (words[j >> 6] >> (j & 63)) & 1u; }
  bool operator==(const BitTensor&) const = default;
};

inline std::size_t words_for(std::size_t bits) { return (bits + 63) / 64; }

template <typename T>
BitTensor pack(const Tensor<T>& x) {
  BitTensor b{x.shape(), x.size(), std::vector<std::uint64_t>(words_for(x.size()), 0)};
  for (std::size_t j = 0; j < x.size(); ++j) {
    if (x[j] == T(1)) {
      b.words[j >> 6] |= std::uint64_t{1} << (j & 63);
    } else if (x[j] != T(-1)) {
      throw ValueError("pack: element " + std::to_string(j) + " is not +1 or -1");
    }
  }
  return b;
}

template <typename T = float>
Tensor<T> unpack(const BitTensor& b) {
  Tensor<T> x(b.shape);
  for (std::size_t j = 0; j < b.length; ++j) x[j] = b.bit(j) ? T(1) : T(-1);
  return x;
}

inline std::uint64_t tail_mask(std::size_t bits_in_last_word) {
  return bits_in_last_word == 64 ? ~std::uint64_t{0} : (std::uint64_t{1} << bits_in_last_word) - 1;
}

/// sum_i a_i b_i for packed {-1,+1} vectors: 2 * popcount(xnor(a, b)) - n.
inline std::int64_t xnor_popcount_dot(const std::uint64_t* a, const std::uint64_t* b, std::size_t n) {
  const std::size_t full = n / 64;
  std::int64_t matches = 0;
  for (std::size_t w = 0; w < full; ++w) matches += std::popcount(~(a[w] ^ b[w]));
  if (n % 64) matches += std::popcount(~(a[full] ^ b[full]) & tail_mask(n % 64));
  return 2 * matches - static_cast<std::int64_t>(n);
}

inline std::int64_t xnor_popcount_dot(const BitTensor& a, const BitTensor& b) {
  if (a.length != b.length) {
    throw ShapeError("xnor_popcount_dot: lengths " + std::to_string(a.length) + " and " +
                     std::to_string(b.length) + " differ");
  }
  return xnor_popcount_dot(a.words.data(), b.words.data(), a.length);
}

/// Filters packed row by row; each row holds one (in_channels, kh, kw) patch.
struct PackedFilters {
  std::size_t filters = 0, in_channels = 0, kh = 0, kw = 0;
  std::size_t patch = 0, words_per_row = 0;
  std::vector<std::uint64_t> bits;
};

template <typename T>
PackedFilters pack_filters(const Tensor<T>& w) {
  if (w.rank() != 4) throw ShapeError("pack_filters: expected rank-4 weights, got " + shape_str(w.shape()));
  PackedFilters f{w.dim(0), w.dim(1), w.dim(2), w.dim(3), 0, 0, {}};
  f.patch = f.in_channels * f.kh * f.kw;
  f.words_per_row = words_for(f.patch);
  f.bits.assign(f.filters * f.words_per_row, 0);
  for (std::size_t k = 0; k < f.filters; ++k) {
    for (std::size_t j = 0; j < f.patch; ++j) {
      const T v = w[k * f.patch + j];
      if (v == T(1)) {
        f.bits[k * f.words_per_row + (j >> 6)] |= std::uint64_t{1} << (j & 63);
      } else if (v != T(-1)) {
        throw ValueError("pack_filters: weight is not +1 or -1");
      }
    }
  }
  return f;
}

/// Convolution of packed {-1,+1} activations (N, C, H, W) with packed filters.
/// Zero padding contributes nothing: padded taps are excluded through a
/// validity mask, so each output equals the float convolution of the
/// unpacked operands with zero padding.
template <typename T = float>
Tensor<T> binary_conv_infer(const BitTensor& x, const PackedFilters& f, std::size_t stride, std::size_t padding) {
  if (x.shape.size() != 4) throw ShapeError("binary_conv_infer: expected rank-4 input, got " + shape_str(x.shape));
  const auto g = kernels::ConvGeometry::make(x.shape, Shape{f.filters, f.in_channels, f.kh, f.kw}, stride, padding);
  Tensor<T> y(Shape{g.batch, g.filters, g.out_h, g.out_w});
  std::vector<std::uint64_t> patch(f.words_per_row), valid(f.words_per_row);
  const std::size_t plane = g.in_h * g.in_w;
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
      for (std::size_t ox = 0; ox < g.out_w; ++ox) {
        std::fill(patch.begin(), patch.end(), 0);
        std::fill(valid.begin(), valid.end(), 0);
        std::int64_t count = 0;
        std::size_t j = 0;
        for (std::size_t c = 0; c < g.in_channels; ++c) {
          for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
            const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(padding);
            for (std::size_t kx = 0; kx < g.kernel_w; ++kx, ++j) {
              const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(padding);
              if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h) ||
                  ix >= static_cast<std::ptrdiff_t>(g.in_w)) {
                continue;
              }
              const std::size_t src = (n * g.in_channels + c) * plane + static_cast<std::size_t>(iy) * g.in_w +
                                      static_cast<std::size_t>(ix);
              const std::uint64_t bit = std::uint64_t{1} << (j & 63);
              valid[j >> 6] |= bit;
              if (x.bit(src)) patch[j >> 6] |= bit;
              ++count;
            }
          }
        }
        for (std::size_t k = 0; k < g.filters; ++k) {
          const std::uint64_t* row = f.bits.data() + k * f.words_per_row;
          std::int64_t matches = 0;
          for (std::size_t w = 0; w < f.words_per_row; ++w) matches += std::popcount(~(patch[w] ^ row[w]) & valid[w]);
          y[((n * g.filters + k) * g.out_h + oy) * g.out_w + ox] = static_cast<T>(2 * matches - count);
        }
      }
    }
  }
  return y;
}

struct BenchRow {
  std::size_t size = 0;
  double float_ns = 0;
  double packed_ns = 0;
  double ratio = 0;
};

namespace detail {
inline float float_dot(const float* a, const float* b, std::size_t n) {
  float s = 0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

template <typename F>
double time_per_call_ns(F&& fn, std::size_t reps) {
  using clock = std::chrono::steady_clock;
  double best = 1e300;
  for (int trial = 0; trial < 5; ++trial) {
    const auto t0 = clock::now();
    for (std::size_t r = 0; r < reps; ++r) fn();
    const auto t1 = clock::now();
    best = std::min(best, std::chrono::duration<double, std::nano>(t1 - t0).count() / static_cast<double>(reps));
  }
  return best;
}
}  // namespace detail

/// Times a float dot product against the packed dot at each vector length.
/// Each row reports the best of five trials of nanoseconds per dot.
inline std::vector<BenchRow> kernel_bench(const std::vector<std::size_t>& sizes, std::uint64_t seed = 1) {
  std::vector<BenchRow> rows;
  Rng rng(seed);
  for (std::size_t n : sizes) {
    if (n == 0) throw ValueError("kernel_bench: size must be positive");
    Tensor<float> a(Shape{n}), b(Shape{n});
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = rng.bernoulli(0.5) ? 1.f : -1.f;
      b[i] = rng.bernoulli(0.5) ? 1.f : -1.f;
    }
    const auto pa = pack(a), pb = pack(b);
    const std::size_t reps = std::max<std::size_t>(200, (std::size_t{1} << 22) / n);
    volatile float fsink = 0;
    volatile std::int64_t isink = 0;
    const float* ap = a.ptr();
    const float* bp = b.ptr();
    const std::uint64_t* aw = pa.words.data();
    const std::uint64_t* bw = pb.words.data();
    BenchRow row;
    row.size = n;
    row.float_ns = detail::time_per_call_ns([&] { fsink = fsink + detail::float_dot(ap, bp, n); }, reps);
    row.packed_ns = detail::time_per_call_ns([&] { isink = isink + xnor_popcount_dot(aw, bw, n); }, reps);
    row.ratio = row.float_ns / row.packed_ns;
    if (static_cast<std::int64_t>(detail::float_dot(ap, bp, n)) != xnor_popcount_dot(pa, pb)) {
      throw Error("kernel_bench: packed and float dot products disagree");
    }
    rows.push_back(row);
  }
  return rows;
}

inline std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::ostringstream os;
  os << "size,float-ns,packed-ns,ratio\n";
  for (const auto& r : rows) {
    os << r.size << ',' << format_double(r.float_ns) << ',' << format_double(r.packed_ns) << ','
       << format_double(r.ratio) << '\n';
  }
  return os.str();
}

}  // namespace spnet::binary

#endif  // SPNET_BINARY_HPP_
