// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <vector>

#include "fixtures.hpp"
#include "hmt/error.hpp"
#include "hmt/optim.hpp"

namespace hmt::testing {

template <typename F>
ErrorKind kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorKind::kIo;
}

struct FdResult {
  std::size_t checked = 0;
  std::size_t failures = 0;
  double worst = 0.0;
};

// Autodiff gradient of sum(op(inputs) ⊙ w), with fixed random w so every
// output coordinate gets a distinct upstream gradient, against central
// differences (h = 1e-5) for every input that requires grad.
//
// The oracle differences the two output tensors elementwise before
// weighting, so outputs a coordinate does not touch cancel exactly instead
// of contributing summation roundoff. Tolerance: relative rel_tol, absolute
// abs_tol where |fd| < 1e-6.
inline FdResult check_op(const std::function<Tensor(const std::vector<Tensor>&)>& op, std::vector<Tensor> inputs,
                         Rng& rng, double rel_tol = 1e-6, double abs_tol = 1e-8) {
  constexpr double h = 1e-5;
  const Tensor probe = op(inputs);
  std::vector<double> w(probe.size());
  for (auto& x : w) x = rng.normal();
  Tensor loss = sum(mul(op(inputs), Tensor::from(probe.shape(), w)));
  loss.backward();

  FdResult result;
  for (auto& input : inputs) {
    if (!input.requires_grad()) continue;
    std::vector<double> analytic(input.size(), 0.0);
    if (input.has_grad()) analytic.assign(input.grad().begin(), input.grad().end());
    input.zero_grad();
    NoGradGuard no_grad;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      double& x = input.mutable_data()[i];
      const double saved = x;
      x = saved + h;
      const Tensor plus = op(inputs);
      x = saved - h;
      const Tensor minus = op(inputs);
      x = saved;
      long double delta = 0.0L;
      for (std::size_t o = 0; o < w.size(); ++o) {
        delta += static_cast<long double>(w[o]) * (plus.data()[o] - minus.data()[o]);
      }
      const double truth = static_cast<double>(delta / (2.0L * h));

      ++result.checked;
      const bool small = std::abs(truth) < 1e-6;
      const double err = small ? std::abs(analytic[i] - truth) : relative_error(analytic[i], truth);
      result.worst = std::max(result.worst, err);
      if (!(small ? err < abs_tol : err < rel_tol)) {
        ++result.failures;
        if (std::getenv("HMT_FD_VERBOSE")) {
          std::fprintf(stderr, "fd mismatch: analytic %.17g fd %.17g\n", analytic[i], truth);
        }
      }
    }
  }
  return result;
}

using LongRows = std::vector<std::vector<long double>>;
using RefOp = std::function<std::vector<long double>(const LongRows&)>;

// Same comparison, but the finite differences come from `ref`, an
// extended-precision reimplementation of op over the flattened inputs.
// Dense row ops (softmax, layer norm, losses) lose ~1e-11 to double roundoff
// under plain differencing, which is above the absolute budget at |g|~1e-6.
// ref must agree with op to 1e-12 at the base point; differences use
// Richardson extrapolation of central steps 1e-5 and 5e-6.
inline FdResult check_op_ref(const std::function<Tensor(const std::vector<Tensor>&)>& op, const RefOp& ref,
                             std::vector<Tensor> inputs, Rng& rng, double rel_tol = 1e-6, double abs_tol = 1e-8) {
  constexpr long double h = 1e-5L;
  const Tensor probe = op(inputs);
  std::vector<double> w(probe.size());
  for (auto& x : w) x = rng.normal();
  Tensor loss = sum(mul(op(inputs), Tensor::from(probe.shape(), w)));
  loss.backward();

  LongRows point;
  for (const auto& input : inputs) point.emplace_back(input.data().begin(), input.data().end());
  FdResult result;
  const std::vector<long double> base = ref(point);
  if (base.size() != probe.size()) {
    ++result.failures;
    return result;
  }
  for (std::size_t o = 0; o < base.size(); ++o) {
    if (!(std::abs(static_cast<double>(base[o]) - probe.data()[o]) < 1e-12)) ++result.failures;
  }
  auto weighted = [&](const LongRows& at) {
    const std::vector<long double> out = ref(at);
    long double acc = 0.0L;
    for (std::size_t o = 0; o < out.size(); ++o) acc += static_cast<long double>(w[o]) * out[o];
    return acc;
  };

  for (std::size_t k = 0; k < inputs.size(); ++k) {
    if (!inputs[k].requires_grad()) continue;
    std::vector<double> analytic(inputs[k].size(), 0.0);
    if (inputs[k].has_grad()) analytic.assign(inputs[k].grad().begin(), inputs[k].grad().end());
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      LongRows at = point;
      auto central = [&](long double step) {
        at[k][i] = point[k][i] + step;
        const long double plus = weighted(at);
        at[k][i] = point[k][i] - step;
        const long double minus = weighted(at);
        return (plus - minus) / (2.0L * step);
      };
      const double truth = static_cast<double>((4.0L * central(h / 2) - central(h)) / 3.0L);

      ++result.checked;
      const bool small = std::abs(truth) < 1e-6;
      const double err = small ? std::abs(analytic[i] - truth) : relative_error(analytic[i], truth);
      result.worst = std::max(result.worst, err);
      if (!(small ? err < abs_tol : err < rel_tol)) {
        ++result.failures;
        if (std::getenv("HMT_FD_VERBOSE")) {
          std::fprintf(stderr, "fd mismatch: analytic %.17g fd %.17g\n", analytic[i], truth);
        }
      }
    }
  }
  return result;
}

}  // namespace hmt::testing
