// Copyright 2026 The SPNet Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef SPNET_GRADCHECK_HPP_
#define SPNET_GRADCHECK_HPP_

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "spnet/tape.hpp"

namespace spnet {

/// An op under test: builds its output on `tape` from leaf inputs.
using CheckedOp = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

/// Returns true when a coordinate sits within `radius` of a discontinuity.
using KinkPredicate = std::function<bool(std::size_t input, std::size_t coord, double value, double radius)>;

/// Central-difference gradient check. The op output is reduced with a fixed
/// random projection so non-scalar outputs are covered. Returns
/// max |analytic - numeric| / max(1, |numeric|) over every input coordinate.
/// Inputs within 10*eps of a kink (per `near_kink`) are rejected.
inline double finite_diff_check(const CheckedOp& op, const std::vector<Tensor<double>>& inputs,
                                double eps = 1e-5, std::uint64_t seed = 0,
                                const KinkPredicate& near_kink = {}) {
  if (near_kink) {
    for (std::size_t a = 0; a < inputs.size(); ++a) {
      for (std::size_t i = 0; i < inputs[a].size(); ++i) {
        if (near_kink(a, i, inputs[a][i], 10 * eps)) {
          throw ValueError("finite_diff_check: input " + std::to_string(a) + "[" +
                           std::to_string(i) + "] lies within 10*eps of a discontinuity");
        }
      }
    }
  }

  Tensor<double> projection;
  auto evaluate = [&](const std::vector<Tensor<double>>& xs) {
    Tape<double> tape(false);
    std::vector<Var<double>> vars;
    for (const auto& x : xs) vars.push_back(tape.constant(x));
    const auto out = op(tape, vars);
    double s = 0;
    for (std::size_t i = 0; i < out.value().size(); ++i) s += projection[i] * out.value()[i];
    return s;
  };

  Tape<double> tape;
  std::vector<Var<double>> vars;
  for (const auto& x : inputs) vars.push_back(tape.leaf(x));
  const auto out = op(tape, vars);
  Rng rng(seed ^ 0x5eedULL);
  projection = Tensor<double>(out.value().shape());
  for (auto& p : projection.data()) p = rng.uniform(0.5, 1.5);
  tape.backward(out, projection);

  double worst = 0;
  auto xs = inputs;
  for (std::size_t a = 0; a < inputs.size(); ++a) {
    const auto& analytic = vars[a].grad();
    for (std::size_t i = 0; i < inputs[a].size(); ++i) {
      const double orig = xs[a][i];
      xs[a][i] = orig + eps;
      const double up = evaluate(xs);
      xs[a][i] = orig - eps;
      const double down = evaluate(xs);
      xs[a][i] = orig;
      const double numeric = (up - down) / (2 * eps);
      worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric)));
    }
  }
  return worst;
}

}  // namespace spnet

#endif  // SPNET_GRADCHECK_HPP_
