// Copyright 2026 The SPNet Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "spnet/switchable.hpp"

namespace spnet {
namespace {

SwitchConfig sw(int bw, int ba, const std::string& width = "1") { return SwitchConfig{bw, ba, Width::parse(width)}; }

QuantScheme relu_scheme(bool clip = true) {
  QuantScheme s;
  s.weight_family = quant::Family::TanhBased;
  s.activation_family = quant::Family::ReLUBased;
  s.clip_full_precision = clip;
  return s;
}

QuantConvLayer<float> make_layer(std::size_t in, std::size_t out, std::size_t slots, Rng& rng,
                                 Ordering ord = Ordering::ConvBnRelu) {
  QuantConvLayer<float> l("layer", in, out, 3, 1, 1, slots, ord, true, true);
  l.weights.value = testing::random_tensor<float>(l.weights.value.shape(), rng, -0.5, 0.5);
  for (std::size_t s = 0; s < slots; ++s) {
    l.sbn.gamma[s].value = testing::random_tensor<float>(Shape{out}, rng, 0.5, 1.5);
    l.sbn.beta[s].value = testing::random_tensor<float>(Shape{out}, rng, -0.5, 0.5);
  }
  return l;
}

TEST(Width, ParseAndPrint) {
  EXPECT_EQ(Width::parse("0.25"), Width(1, 4));
  EXPECT_EQ(Width::parse("1/4"), Width(1, 4));
  EXPECT_EQ(Width::parse("1"), Width(1, 1));
  EXPECT_EQ(Width(1, 1).to_string(), "1.0");
  EXPECT_EQ(Width(1, 4).to_string(), "0.25");
  EXPECT_EQ(Width(1, 3).to_string(), "1/3");
  EXPECT_EQ(Width(1, 4).apply(64), 16u);
  EXPECT_EQ(Width(1, 3).apply(64), 22u);
  EXPECT_EQ(Width(1, 64).apply(3), 1u);
  EXPECT_THROW(Width::parse("1.5"), ValueError);
  EXPECT_THROW(Width::parse("0"), ValueError);
  EXPECT_THROW(Width::parse("abc"), ValueError);
}

TEST(SwitchRegistry, RejectsEmptyDuplicateAndUnregistered) {
  EXPECT_THROW(SwitchRegistry({}, false), ConfigError);
  EXPECT_THROW(SwitchRegistry({sw(1, 1), sw(1, 1)}, false), ConfigError);
  EXPECT_THROW(SwitchRegistry({sw(0, 1)}, false), ValueError);
  SwitchRegistry r({sw(1, 1), sw(32, 32), sw(1, 1, "0.5")}, false);
  EXPECT_EQ(r.bn_slots(), 3u);
  EXPECT_EQ(switch_select(r, sw(1, 1, "0.5")).bn_slot, 2u);
  try {
    switch_select(r, sw(2, 2));
    FAIL();
  } catch (const SwitchError& e) {
    EXPECT_NE(std::string(e.what()).find("(2,2,1.0)"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("(1,1,0.5)"), std::string::npos);
  }
  SwitchRegistry shared({sw(1, 1), sw(32, 32)}, true);
  EXPECT_EQ(shared.bn_slots(), 1u);
  EXPECT_EQ(switch_select(shared, sw(32, 32)).bn_slot, 0u);
}

// Full precision without clipping is exactly conv2d followed by plain BN.
TEST(QuantConv, FullPrecisionEqualsPlainConvBn) {
  Rng rng(1);
  auto layer = make_layer(3, 8, 1, rng);
  SwitchRegistry reg({sw(32, 32)}, false);
  auto x = testing::random_tensor<float>(Shape{2, 3, 5, 5}, rng, -2, 2);
  for (Mode mode : {Mode::Train, Mode::Eval}) {
    auto ref_state = layer.sbn;
    Tape<float> t1, t2;
    auto got = layer.forward(t1, t1.constant(x), switch_select(reg, sw(32, 32)), relu_scheme(false), mode);
    auto conv = ops::conv2d(t2.constant(x), t2.constant(layer.weights.value), 1, 1);
    Var<float> bn;
    if (mode == Mode::Train) {
      bn = ops::batch_norm_train(conv, t2.constant(ref_state.gamma[0].value), t2.constant(ref_state.beta[0].value),
                                 1e-5f);
    } else {
      bn = ops::batch_norm_eval(conv, t2.constant(ref_state.gamma[0].value), t2.constant(ref_state.beta[0].value),
                                std::span<const float>(ref_state.running_mean[0].data()),
                                std::span<const float>(ref_state.running_var[0].data()), 1e-5f);
    }
    EXPECT_EQ(got.out.value(), ops::relu(bn).value());
    EXPECT_EQ(got.conv.value(), conv.value());
  }
}

TEST(QuantConv, SlimmedWidthComputesCeilFilters) {
  Rng rng(2);
  QuantConvLayer<float> l("l", 16, 64, 3, 1, 1, 1, Ordering::ConvBnRelu, true, false);
  l.weights.value = testing::random_tensor<float>(l.weights.value.shape(), rng);
  SwitchRegistry reg({sw(2, 2, "0.25")}, false);
  Tape<float> t;
  auto x = testing::random_tensor<float>(Shape{1, 16, 3, 3}, rng);
  auto o = l.forward(t, t.constant(x), switch_select(reg, sw(2, 2, "0.25")), relu_scheme(), Mode::Train);
  EXPECT_EQ(o.out.shape(), (Shape{1, 16, 3, 3}));
}

TEST(QuantConv, UnusedFiltersDoNotAffectSlimmedOutput) {
  Rng rng(3);
  auto l = make_layer(8, 8, 1, rng);
  SwitchRegistry reg({sw(2, 2, "0.5")}, false);
  auto x = testing::random_tensor<float>(Shape{2, 4, 5, 5}, rng, 0, 1);
  auto run = [&] {
    Tape<float> t(false);
    auto state = l.sbn;
    std::swap(state, l.sbn);
    auto y = l.forward(t, t.constant(x), switch_select(reg, sw(2, 2, "0.5")), relu_scheme(), Mode::Train).out.value();
    std::swap(state, l.sbn);
    return y;
  };
  const auto before = run();
  auto& w = l.weights.value;
  // Filters 4..7 and input channels 4..7 of the active filters are sliced away.
  for (std::size_t k = 4; k < 8; ++k) {
    for (std::size_t j = 0; j < 8 * 9; ++j) w[k * 72 + j] += 3.0f;
  }
  for (std::size_t k = 0; k < 4; ++k) {
    for (std::size_t j = 4 * 9; j < 8 * 9; ++j) w[k * 72 + j] -= 2.0f;
  }
  EXPECT_EQ(run(), before);
}

TEST(QuantConv, RejectsChannelMismatchAndUnregisteredSwitch) {
  Rng rng(4);
  auto l = make_layer(8, 8, 1, rng);
  SwitchRegistry reg({sw(2, 2, "0.5")}, false);
  Tape<float> t;
  auto x = t.constant(testing::random_tensor<float>(Shape{1, 8, 3, 3}, rng));
  EXPECT_THROW(l.forward(t, x, switch_select(reg, sw(2, 2, "0.5")), relu_scheme(), Mode::Train), ShapeError);
  EXPECT_THROW(switch_select(reg, sw(2, 2)), SwitchError);
}

// Bit-exact equality with a standalone layer holding only the first K' filters
// and the matching BN slices.
TEST(QuantConv, SlimmingConsistency) {
  Rng rng(5);
  auto big = make_layer(8, 12, 1, rng);
  big.sbn.running_mean[0] = testing::random_tensor<float>(Shape{12}, rng);
  big.sbn.running_var[0] = testing::random_tensor<float>(Shape{12}, rng, 0.5, 2);
  const Width w(1, 3);
  const auto k = w.apply(12), i = w.apply(8);
  ASSERT_EQ(k, 4u);
  ASSERT_EQ(i, 3u);
  QuantConvLayer<float> small("small", i, k, 3, 1, 1, 1, Ordering::ConvBnRelu, true, true);
  for (std::size_t f = 0; f < k; ++f) {
    for (std::size_t c = 0; c < i; ++c) {
      for (std::size_t j = 0; j < 9; ++j) small.weights.value[(f * i + c) * 9 + j] = big.weights.value[(f * 8 + c) * 9 + j];
    }
    small.sbn.gamma[0].value[f] = big.sbn.gamma[0].value[f];
    small.sbn.beta[0].value[f] = big.sbn.beta[0].value[f];
    small.sbn.running_mean[0][f] = big.sbn.running_mean[0][f];
    small.sbn.running_var[0][f] = big.sbn.running_var[0][f];
  }
  SwitchRegistry rbig({SwitchConfig{2, 2, w}}, false), rsmall({sw(2, 2)}, false);
  auto x = testing::random_tensor<float>(Shape{2, 3, 5, 5}, rng, 0, 1);
  for (Mode mode : {Mode::Eval, Mode::Train}) {
    Tape<float> t1, t2;
    auto a = big.forward(t1, t1.constant(x), switch_select(rbig, SwitchConfig{2, 2, w}), relu_scheme(), mode);
    small.slim_input = false;
    auto b = small.forward(t2, t2.constant(x), switch_select(rsmall, sw(2, 2)), relu_scheme(), mode);
    EXPECT_EQ(a.out.value(), b.out.value());
  }
  for (std::size_t c = 0; c < k; ++c) {
    EXPECT_EQ(big.sbn.running_mean[0][c], small.sbn.running_mean[0][c]);
    EXPECT_EQ(big.sbn.running_var[0][c], small.sbn.running_var[0][c]);
  }
}

TEST(Sbn, TrainOutputMomentsMatchAffine) {
  Rng rng(6);
  SBNState<double> st(4, 1, "bn");
  st.gamma[0].value = Tensor<double>(Shape{4}, {0.5, 1.0, 2.0, 3.0});
  st.beta[0].value = Tensor<double>(Shape{4}, {-1.0, 0.0, 0.5, 2.0});
  Tape<double> t;
  auto x = testing::random_tensor<double>(Shape{8, 4, 3, 3}, rng, -10, 10);
  auto y = sbn_forward(t, st, t.constant(x), 0, Mode::Train).value();
  for (std::size_t c = 0; c < 4; ++c) {
    double m = 0, v = 0, xm = 0, xv = 0;
    const double n = 8 * 9;
    for (std::size_t b = 0; b < 8; ++b) {
      for (std::size_t j = 0; j < 9; ++j) {
        m += y[(b * 4 + c) * 9 + j] / n;
        xm += x[(b * 4 + c) * 9 + j] / n;
      }
    }
    for (std::size_t b = 0; b < 8; ++b) {
      for (std::size_t j = 0; j < 9; ++j) {
        v += std::pow(y[(b * 4 + c) * 9 + j] - m, 2) / n;
        xv += std::pow(x[(b * 4 + c) * 9 + j] - xm, 2) / n;
      }
    }
    const double g = st.gamma[0].value[c];
    EXPECT_NEAR(m, st.beta[0].value[c], 1e-5);
    EXPECT_NEAR(v, g * g * xv / (xv + 1e-5), 1e-5 * g * g);
    EXPECT_NEAR(st.running_mean[0][c], 0.1 * xm, 1e-12);
    EXPECT_NEAR(st.running_var[0][c], 0.9 + 0.1 * xv * n / (n - 1), 1e-12);
  }
}

TEST(Sbn, StatisticsArePrivatePerSwitch) {
  Rng rng(7);
  SBNState<float> st(3, 2, "bn");
  auto x0 = testing::random_tensor<float>(Shape{4, 3, 3, 3}, rng, 0, 1);
  auto x1 = testing::random_tensor<float>(Shape{4, 3, 3, 3}, rng, 5, 6);
  {
    Tape<float> t;
    sbn_forward(t, st, t.constant(x0), 0, Mode::Train);
  }
  const auto m0 = st.running_mean[0], v0 = st.running_var[0];
  {
    Tape<float> t;
    sbn_forward(t, st, t.constant(x1), 1, Mode::Train);
  }
  EXPECT_EQ(st.running_mean[0], m0);
  EXPECT_EQ(st.running_var[0], v0);
  EXPECT_NE(st.running_mean[1], m0);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_GT(st.running_mean[1][c], 5 * st.running_mean[0][c]);
  EXPECT_THROW(
      {
        Tape<float> t;
        sbn_forward(t, st, t.constant(x0), 2, Mode::Train);
      },
      SwitchError);
}

// Arbitrary interleavings: each slot's state equals a replay of only its own batches.
TEST(Sbn, IsolationUnderRandomInterleaving) {
  Rng rng(8);
  SBNState<float> st(2, 3, "bn");
  std::vector<SBNState<float>> replay(3, SBNState<float>(2, 1, "r"));
  for (int step = 0; step < 60; ++step) {
    const auto s = rng.below(3);
    auto x = testing::random_tensor<float>(Shape{3, 2, 2, 2}, rng, -1.0 + static_cast<double>(s), 2.0 * static_cast<double>(s) + 1);
    Tape<float> t1, t2;
    sbn_forward(t1, st, t1.constant(x), s, Mode::Train);
    sbn_forward(t2, replay[s], t2.constant(x), 0, Mode::Train);
  }
  for (std::size_t s = 0; s < 3; ++s) {
    EXPECT_EQ(st.running_mean[s], replay[s].running_mean[0]);
    EXPECT_EQ(st.running_var[s], replay[s].running_var[0]);
    for (auto v : st.running_var[s].data()) EXPECT_GE(v, 0.0f);
  }
}

TEST(Sbn, EvalAfterConvergenceMatchesTrain) {
  Rng rng(9);
  SBNState<float> st(4, 1, "bn");
  auto x = testing::random_tensor<float>(Shape{8, 4, 6, 6}, rng, -3, 5);
  Tensor<float> train_out;
  for (int i = 0; i < 300; ++i) {
    Tape<float> t(false);
    train_out = sbn_forward(t, st, t.constant(x), 0, Mode::Train).value();
  }
  Tape<float> t(false);
  auto eval_out = sbn_forward(t, st, t.constant(x), 0, Mode::Eval).value();
  double worst = 0;
  for (std::size_t i = 0; i < x.size(); ++i) worst = std::max(worst, std::fabs(double(eval_out[i]) - train_out[i]));
  EXPECT_LT(worst, 1e-2);
}

TEST(SwitchSelect, SharedMasterWeightsAccumulateOneGradient) {
  Rng rng(10);
  auto l = make_layer(4, 4, 2, rng);
  SwitchRegistry reg({sw(1, 2), sw(32, 32)}, false);
  auto x = testing::random_tensor<float>(Shape{2, 4, 3, 3}, rng, 0, 1);
  const float* storage = l.weights.value.ptr();
  std::vector<Tensor<float>> single;
  for (const auto& s : reg.switches()) {
    l.weights.zero_grad();
    Tape<float> t;
    t.backward(ops::sum(l.forward(t, t.constant(x), switch_select(reg, s), relu_scheme(), Mode::Train).out));
    single.push_back(l.weights.grad);
  }
  l.weights.zero_grad();
  for (const auto& s : reg.switches()) {
    Tape<float> t;
    t.backward(ops::sum(l.forward(t, t.constant(x), switch_select(reg, s), relu_scheme(), Mode::Train).out));
  }
  EXPECT_EQ(l.weights.value.ptr(), storage);
  for (std::size_t i = 0; i < single[0].size(); ++i) {
    EXPECT_NEAR(l.weights.grad[i], single[0][i] + single[1][i], 1e-5f * (1 + std::fabs(l.weights.grad[i])));
  }
}

// d/dW of sum(p * conv(Q_a(x), Q_w(W))) for one filter, written out as loops
// with the straight-through tanh derivative.
TEST(QuantConv, BackwardMatchesHandAssembledSteChain) {
  Rng rng(11);
  QuantConvLayer<double> l("one", 2, 1, 3, 1, 1, 1, Ordering::ConvBnRelu, true, true);
  l.weights.value = testing::random_tensor<double>(l.weights.value.shape(), rng, -1, 1);
  QuantScheme sch;
  sch.weight_family = quant::Family::TanhBased;
  sch.activation_family = quant::Family::ReLUBased;
  SwitchRegistry reg({SwitchConfig{2, 2, Width()}}, false);
  auto x = testing::random_tensor<double>(Shape{1, 2, 4, 4}, rng, -0.2, 1.2);
  auto p = testing::random_tensor<double>(Shape{1, 1, 4, 4}, rng, 0.5, 1.5);
  Tape<double> t;
  auto [xq, wq] = l.operands(t, t.constant(x), switch_select(reg, SwitchConfig{2, 2, Width()}), sch);
  t.backward(ops::conv2d(xq, wq, 1, 1), p);

  const auto& W = l.weights.value;
  double m = 0;
  for (auto v : W.data()) m = std::max(m, std::fabs(std::tanh(v)));
  auto aq = [&](std::size_t c, long y, long xx) {
    if (y < 0 || xx < 0 || y >= 4 || xx >= 4) return 0.0;
    const double v = std::min(1.0, std::max(0.0, x[(c * 4 + static_cast<std::size_t>(y)) * 4 + static_cast<std::size_t>(xx)]));
    return std::round(3 * v) / 3;
  };
  for (std::size_t c = 0; c < 2; ++c) {
    for (long ky = 0; ky < 3; ++ky) {
      for (long kx = 0; kx < 3; ++kx) {
        double dq = 0;
        for (long oy = 0; oy < 4; ++oy) {
          for (long ox = 0; ox < 4; ++ox) dq += p[static_cast<std::size_t>(oy * 4 + ox)] * aq(c, oy + ky - 1, ox + kx - 1);
        }
        const std::size_t j = (c * 3 + static_cast<std::size_t>(ky)) * 3 + static_cast<std::size_t>(kx);
        const double th = std::tanh(W[j]);
        EXPECT_NEAR(l.weights.grad[j], dq * (1 - th * th) / m, 1e-12);
      }
    }
  }
  EXPECT_NE(W[0], wq.value()[0]);
}

}  // namespace
}  // namespace spnet
