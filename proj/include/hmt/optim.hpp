// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "hmt/tensor.hpp"

namespace hmt {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

using ParamList = std::vector<NamedTensor>;

/// Adam moments keyed by parameter name.
struct AdamState {
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  std::map<std::string, std::vector<double>> first_moment;
  std::map<std::string, std::vector<double>> second_moment;
  std::uint64_t step = 0;
};

/// One bias-corrected Adam update over `params`, then clears their grads.
/// A parameter without a gradient buffer is a contract error.
void adam_step(const ParamList& params, AdamState& state, double lr);

/// Global L2 norm over all parameter gradients (absent grads count as 0).
double grad_norm(const ParamList& params);

/// Rescales gradients so the global norm is at most max_norm. Returns the
/// norm before clipping. max_norm <= 0 disables clipping.
double clip_grad_norm(const ParamList& params, double max_norm);

void zero_grads(const ParamList& params);

/// Central differences (f(θ+h·e_i) − f(θ−h·e_i)) / 2h for every coordinate
/// of `param`. f must be deterministic; `param` is restored afterwards.
Tensor finite_diff_grad(const std::function<double()>& f, Tensor param, double h = 1e-5);

/// Same, restricted to the given flat coordinates.
std::vector<double> finite_diff_coords(const std::function<double()>& f, Tensor param,
                                       const std::vector<std::size_t>& coords, double h = 1e-5);

/// |a − b| / max(|a|, |b|), or 0 when both are 0.
double relative_error(double a, double b);

}  // namespace hmt
