// Copyright 2026 The SPNet Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "oracles.hpp"
#include "spnet/quantizers.hpp"

namespace spnet::quant {
namespace {

std::set<double> distinct(const Tensor<double>& t) { return {t.data().begin(), t.data().end()}; }

Tensor<double> sweep(double lo, double hi, double step) {
  std::vector<double> v;
  for (double x = lo; x <= hi + 1e-12; x += step) v.push_back(x);
  return Tensor<double>(Shape{v.size()}, v);
}

TEST(BaseQ, Examples) {
  EXPECT_DOUBLE_EQ(base_q(0.5, 2), 2.0 / 3.0);
  auto s = base_q(Tensor<double>(Shape{3}, {-0.2, 0.3, 0.0}), 1);
  EXPECT_EQ(s.storage(), (std::vector<double>{-1, 1, 1}));
}

TEST(BaseQ, ThreeBitSweepHasEightLevels) {
  auto out = base_q(sweep(0.0, 1.0, 1e-4), 3);
  auto d = distinct(out);
  ASSERT_EQ(d.size(), 8u);
  int i = 0;
  for (double v : d) EXPECT_DOUBLE_EQ(v, i++ / 7.0);
}

TEST(Ste, MaskExamples) {
  Tensor<double> x(Shape{3}, {1.5, 0.5, 1.0});
  Tensor<double> up(Shape{3}, {7, 2, 3});
  EXPECT_EQ(ste_backward(up, x).storage(), (std::vector<double>{0, 2, 3}));
}

TEST(TanhQuant, Examples) {
  EXPECT_EQ(tanh_quant(Tensor<double>(Shape{2}, {0.5, -0.5}), 2).storage(), (std::vector<double>{1, -1}));
  auto z = tanh_quant(Tensor<double>(Shape{2}, {0.0, 0.8}), 2);
  EXPECT_NEAR(z[0], 1.0 / 3.0, 1e-15);

  // Scalar evaluation written out independently.
  const double xs[3] = {0.2, 0.5, -1.0};
  double m = 0;
  for (double x : xs) m = std::max(m, std::fabs(std::tanh(x)));
  auto got = tanh_quant(Tensor<double>(Shape{3}, {0.2, 0.5, -1.0}), 2);
  for (int i = 0; i < 3; ++i) {
    const double u = std::tanh(xs[i]) / (2 * m) + 0.5;
    const double want = 2 * (std::round(3 * u) / 3) - 1;
    EXPECT_DOUBLE_EQ(got[static_cast<std::size_t>(i)], want);
  }
  // 0.2 -> u = 0.598 -> round(1.79) = 2 -> 1/3 ; 0.5 -> 0.731 -> 2 -> 1/3 ; -1 -> 0 -> -1
  EXPECT_NEAR(got[0], 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(got[1], 1.0 / 3.0, 1e-15);
  EXPECT_EQ(got[2], -1.0);
}

TEST(TanhQuant, AllZeroInputStaysZero) {
  auto z = tanh_quant(Tensor<double>(Shape{4}), 3);
  for (auto v : z.data()) EXPECT_EQ(v, 0.0);
}

TEST(TanhQuant, OneBitRoutesToSign) {
  auto s = QuantizerSpec::make(Family::TanhBased, 1, Target::Activations);
  EXPECT_EQ(s.family, Family::Sign);
  EXPECT_EQ(quantize_value(Tensor<double>(Shape{3}, {-0.1, 0.0, 2.0}), s).storage(),
            (std::vector<double>{-1, 1, 1}));
}

TEST(ReluQuant, Examples) {
  EXPECT_EQ(relu_quant(Tensor<double>::scalar(-0.3), 2)[0], 0.0);
  EXPECT_EQ(relu_quant(Tensor<double>::scalar(2.0), 2)[0], 1.0);
  EXPECT_DOUBLE_EQ(relu_quant(Tensor<double>::scalar(0.4), 2)[0], 1.0 / 3.0);
  EXPECT_THROW(QuantizerSpec::make(Family::ReLUBased, 1, Target::Activations), ValueError);
}

TEST(LogQuant, Examples) {
  EXPECT_EQ(log_quant(Tensor<double>::scalar(0.0), 3)[0], 0.0);
  for (int k = 1; k <= 4; ++k) EXPECT_EQ(log_quant(Tensor<double>::scalar(0.25), k)[0], 0.25);

  // normalize -> base_q -> rescale -> reconstruct, by hand.
  const std::vector<double> xs{0.1, 0.5, -2.0};
  std::vector<double> e;
  for (double x : xs) e.push_back(std::log2(std::fabs(x)));
  const double lo = *std::min_element(e.begin(), e.end()), hi = *std::max_element(e.begin(), e.end());
  auto got = log_quant(Tensor<double>(Shape{3}, xs), 2);
  for (std::size_t i = 0; i < 3; ++i) {
    const double n = (e[i] - lo) / (hi - lo);
    const double q = std::round(3 * n) / 3;
    const double want = (xs[i] < 0 ? -1.0 : 1.0) * std::pow(2.0, q * (hi - lo) + lo);
    EXPECT_NEAR(got[i], want, 1e-14 * std::fabs(want));
  }
  EXPECT_NEAR(got[0], 0.1, 1e-14);
  EXPECT_NEAR(got[1], std::pow(2.0, (2.0 / 3.0) * (1 - lo) + lo), 1e-14);
  EXPECT_NEAR(got[2], -2.0, 1e-14);
}

TEST(SignQuant, Examples) {
  auto s = sign_quant(Tensor<double>(Shape{3}, {-0.2, 0.3, 0.0}));
  EXPECT_EQ(s.storage(), (std::vector<double>{-1, 1, 1}));
  for (auto v : s.data()) EXPECT_EQ(v * v, 1.0);
}

TEST(Codebook, Grids) {
  EXPECT_EQ(enumerate_codebook(QuantizerSpec::make(Family::ReLUBased, 2, Target::Activations)).values,
            (std::vector<double>{0, 1.0 / 3, 2.0 / 3, 1}));
  auto tanh_cb = enumerate_codebook(QuantizerSpec::make(Family::TanhBased, 2, Target::Weights)).values;
  ASSERT_EQ(tanh_cb.size(), 4u);
  EXPECT_DOUBLE_EQ(tanh_cb[0], -1);
  EXPECT_DOUBLE_EQ(tanh_cb[1], -1.0 / 3);
  EXPECT_DOUBLE_EQ(tanh_cb[2], 1.0 / 3);
  EXPECT_DOUBLE_EQ(tanh_cb[3], 1);
  EXPECT_EQ(enumerate_codebook(QuantizerSpec::make(Family::Sign, 1, Target::Weights)).values,
            (std::vector<double>{-1, 1}));
  EXPECT_THROW(enumerate_codebook(QuantizerSpec{}), ValueError);
  for (int k = 2; k <= 4; ++k) {
    auto cb = enumerate_codebook(QuantizerSpec::make(Family::Logarithmic, k, Target::Activations), LogStats{-4, 1});
    ASSERT_EQ(cb.values.size(), 1u << k);
    const double levels = (1 << k) - 1;
    for (std::size_t i = 0; i < cb.values.size(); ++i) {
      EXPECT_NEAR(std::log2(cb.values[i]), -4 + 5 * (static_cast<double>(i) / levels), 1e-12);
    }
  }
}

// Property: a dense sweep spanning the family's range hits every codebook
// value and nothing else.
TEST(QuantizerProperties, DenseSweepHitsExactlyTheCodebook) {
  for (int k = 1; k <= 4; ++k) {
    const auto levels = std::size_t{1} << k;
    {
      auto spec = QuantizerSpec::make(Family::TanhBased, k, Target::Weights);
      auto d = distinct(quantize_value(sweep(-3, 3, 1e-4), spec));
      EXPECT_EQ(d.size(), levels) << "tanh k=" << k;
      for (double v : d) EXPECT_TRUE(v >= -1 && v <= 1);
    }
    if (k >= 2) {
      auto d = distinct(relu_quant(sweep(-0.5, 1.5, 1e-4), k));
      EXPECT_EQ(d.size(), levels) << "relu k=" << k;
      auto cb = enumerate_codebook(QuantizerSpec::make(Family::ReLUBased, k, Target::Activations)).values;
      std::size_t i = 0;
      for (double v : d) EXPECT_NEAR(v, cb[i++], 1e-15);
    }
    {
      // One-sided sweep: 2^k exponent levels for k >= 2. At k = 1 the exponent
      // collapses to the maximum and only the sign carries information, so
      // the sweep is two-sided.
      auto x = k >= 2 ? sweep(0.01, 4.0, 1e-4) : sweep(-4.0, 4.0, 1e-3);
      auto d = distinct(log_quant(x, k));
      d.erase(0.0);
      EXPECT_EQ(d.size(), levels) << "log k=" << k;
      for (double v : d) {
        const double e = std::log2(std::fabs(v));
        EXPECT_TRUE(std::isfinite(e));
      }
    }
  }
  EXPECT_EQ(distinct(sign_quant(sweep(-2, 2, 1e-4))).size(), 2u);
}

TEST(QuantizerProperties, IdempotentOnTheGrid) {
  Rng rng(21);
  for (int k = 1; k <= 4; ++k) {
    const int levels = (1 << k) - 1;
    for (int i = 0; i <= levels; ++i) {
      const double g = static_cast<double>(i) / levels;
      if (k > 1) {
        EXPECT_EQ(base_q(g, k), g);
        EXPECT_EQ(relu_quant(Tensor<double>::scalar(g), k)[0], g);
      }
    }
    // Tanh family: inputs whose pre-map lands on the grid return 2g - 1.
    if (k > 1) {
      const double m = std::tanh(1.5);
      std::vector<double> xs{1.5};
      for (int i = 0; i <= levels; ++i) {
        const double g = static_cast<double>(i) / levels;
        xs.push_back(std::atanh((2 * g - 1) * m * 0.999999999));
      }
      auto out = tanh_quant(Tensor<double>(Shape{xs.size()}, xs), k);
      for (int i = 0; i <= levels; ++i) {
        EXPECT_NEAR(out[static_cast<std::size_t>(i) + 1], 2.0 * i / levels - 1, 1e-15);
      }
    }
    // Sign and log quantizers are fixed points on their own outputs.
    for (int rep = 0; rep < 50; ++rep) {
      auto x = testing::random_tensor<double>(Shape{32}, rng, -4, 4);
      auto s = sign_quant(x);
      EXPECT_EQ(sign_quant(s), s);
      auto l = log_quant(x, k);
      auto ll = log_quant(l, k);
      for (std::size_t i = 0; i < l.size(); ++i) EXPECT_NEAR(ll[i], l[i], 1e-12 * std::fabs(l[i]));
    }
  }
}

TEST(QuantizerProperties, RangeClosureAndMonotonicity) {
  Rng rng(33);
  for (int rep = 0; rep < 10000; ++rep) {
    const int k = 1 + static_cast<int>(rng.below(4));
    const double a = rng.uniform(-3, 3), b = rng.uniform(-3, 3);
    const double lo = std::min(a, b), hi = std::max(a, b);
    // Fixed tensor statistics shared by both points.
    const double m = rng.uniform(0.1, 1.0);
    const LogStats ls{rng.uniform(-6, 0), rng.uniform(0, 3)};
    if (k == 1) {
      EXPECT_LE(sign_value(lo), sign_value(hi));
    } else {
      const double tl = tanh_quant_scalar(lo, k, m), th = tanh_quant_scalar(hi, k, m);
      EXPECT_LE(tl, th);
      // Closure holds whenever m bounds |tanh(x)|, as it does for tensor stats.
      if (std::fabs(std::tanh(lo)) <= m && std::fabs(std::tanh(hi)) <= m) {
        EXPECT_TRUE(tl >= -1 && th <= 1);
      }
      const double rl = relu_quant(Tensor<double>::scalar(lo), k)[0];
      const double rh = relu_quant(Tensor<double>::scalar(hi), k)[0];
      EXPECT_LE(rl, rh);
      EXPECT_TRUE(rl >= 0 && rh <= 1);
    }
    const double ql = log_quant_scalar(lo, k, ls), qh = log_quant_scalar(hi, k, ls);
    EXPECT_LE(ql, qh);
    for (double q : {ql, qh}) {
      if (q != 0) {
        const double e = std::log2(std::fabs(q));
        EXPECT_NEAR(std::exp2(e), std::fabs(q), 1e-12 * std::fabs(q));
      }
    }
  }
}

// Backward equals the mask definition exactly, not a finite difference.
TEST(QuantizerProperties, SteContract) {
  Rng rng(44);
  for (int rep = 0; rep < 200; ++rep) {
    const int k = 1 + static_cast<int>(rng.below(4));
    auto x = testing::random_tensor<double>(Shape{16}, rng, -2, 2);
    x[0] = 1.0;
    x[1] = -1.0;
    auto up = testing::random_tensor<double>(Shape{16}, rng, -3, 3);
    std::vector<QuantizerSpec> specs{QuantizerSpec::make(Family::TanhBased, k, Target::Weights),
                                     QuantizerSpec::make(Family::Logarithmic, k, Target::Activations)};
    if (k > 1) specs.push_back(QuantizerSpec::make(Family::ReLUBased, k, Target::Activations));
    for (const auto& spec : specs) {
      Tape<double> t;
      auto xv = t.leaf(x);
      t.backward(quantize(xv, spec), up);
      const auto& g = xv.grad();
      const double m = tanh_scale(x);
      for (std::size_t i = 0; i < x.size(); ++i) {
        double want = 0;
        switch (spec.family) {
          case Family::Sign:
          case Family::Logarithmic: want = std::fabs(x[i]) <= 1 ? up[i] : 0; break;
          case Family::ReLUBased: want = (x[i] >= 0 && x[i] <= 1) ? up[i] : 0; break;
          case Family::TanhBased: {
            const double th = std::tanh(x[i]);
            want = up[i] * (1 - th * th) / m;
            break;
          }
          default: break;
        }
        if (spec.family == Family::TanhBased) {
          EXPECT_NEAR(g[i], want, 1e-12 * std::max(1.0, std::fabs(want)));
        } else {
          EXPECT_EQ(g[i], want) << spec.to_string() << " x=" << x[i];
        }
      }
    }
  }
}

}  // namespace
}  // namespace spnet::quant
