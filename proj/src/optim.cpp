// SPDX-License-Identifier: Apache-2.0
#include "hmt/optim.hpp"

#include <cmath>

#include "hmt/error.hpp"

namespace hmt {

void adam_step(const ParamList& params, AdamState& state, double lr) {
  for (const auto& [name, t] : params) {
    if (!t.has_grad()) raise(ErrorKind::kContract, "adam_step: parameter '" + name + "' has no gradient");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(AdamState::kBeta1, t);
  const double bc2 = 1.0 - std::pow(AdamState::kBeta2, t);
  for (const auto& [name, tensor] : params) {
    Tensor param = tensor;
    auto& m1 = state.first_moment[name];
    auto& m2 = state.second_moment[name];
    if (m1.size() != param.size()) m1.assign(param.size(), 0.0);
    if (m2.size() != param.size()) m2.assign(param.size(), 0.0);
    auto values = param.mutable_data();
    auto g = param.grad();
    for (std::size_t i = 0; i < values.size(); ++i) {
      m1[i] = AdamState::kBeta1 * m1[i] + (1.0 - AdamState::kBeta1) * g[i];
      m2[i] = AdamState::kBeta2 * m2[i] + (1.0 - AdamState::kBeta2) * g[i] * g[i];
      const double mhat = m1[i] / bc1;
      const double vhat = m2[i] / bc2;
      values[i] -= lr * mhat / (std::sqrt(vhat) + AdamState::kEps);
    }
    param.zero_grad();
  }
}

double grad_norm(const ParamList& params) {
  double s = 0.0;
  for (const auto& p : params)
    for (double g : p.tensor.grad()) s += g * g;
  return std::sqrt(s);
}

double clip_grad_norm(const ParamList& params, double max_norm) {
  const double norm = grad_norm(params);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (const auto& p : params) {
      Tensor t = p.tensor;
      if (!t.has_grad()) continue;
      for (double& g : t.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

void zero_grads(const ParamList& params) {
  for (const auto& p : params) {
    Tensor t = p.tensor;
    t.zero_grad();
  }
}

std::vector<double> finite_diff_coords(const std::function<double()>& f, Tensor param,
                                       const std::vector<std::size_t>& coords, double h) {
  if (!(h > 0.0)) raise(ErrorKind::kContract, "finite_diff: step must be positive");
  auto values = param.mutable_data();
  std::vector<double> out;
  out.reserve(coords.size());
  for (std::size_t i : coords) {
    if (i >= values.size()) raise(ErrorKind::kIndex, "finite_diff: coordinate " + std::to_string(i) + " out of range");
    const double saved = values[i];
    values[i] = saved + h;
    const double plus = f();
    values[i] = saved - h;
    const double minus = f();
    values[i] = saved;
    if (!std::isfinite(plus) || !std::isfinite(minus)) {
      raise(ErrorKind::kNumericDomain, "finite_diff: non-finite evaluation at coordinate " + std::to_string(i));
    }
    out.push_back((plus - minus) / (2.0 * h));
  }
  return out;
}

Tensor finite_diff_grad(const std::function<double()>& f, Tensor param, double h) {
  std::vector<std::size_t> coords(param.size());
  for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
  return Tensor::from(param.shape(), finite_diff_coords(f, param, coords, h));
}

double relative_error(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  return scale == 0.0 ? 0.0 : std::abs(a - b) / scale;
}

}  // namespace hmt
