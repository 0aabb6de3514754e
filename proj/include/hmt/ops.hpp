// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>

#include "hmt/tensor.hpp"

namespace hmt {

// Differentiable operations. Matrix ops take rank-2 tensors; elementwise ops
// accept any shape.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor div_scalar(const Tensor& a, double divisor);
/// a [m×n] + row [1×n], broadcast over rows.
Tensor add_row(const Tensor& a, const Tensor& row);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);

/// Row lookup: out[i] = table[ids[i]].
Tensor gather_rows(const Tensor& table, std::span<const std::int32_t> ids);

/// Row-wise softmax with per-row max subtraction.
Tensor softmax_rows(const Tensor& x);
Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       double eps = 1e-5);
/// Exact GELU, x·Φ(x).
Tensor gelu(const Tensor& x);

/// Multi-head causal self-attention over [T×d] projections; position t
/// attends to positions 0..t only. Heads split the columns evenly.
Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        std::size_t n_heads);

inline constexpr std::int32_t kIgnoreTarget = -1;

/// Sum over rows of -log softmax(logits)[t, targets[t]]; rows whose target
/// is kIgnoreTarget contribute nothing.
Tensor nll_sum(const Tensor& logits, std::span<const std::int32_t> targets);
/// Mean over positions of the same quantity; every target must be valid.
Tensor cross_entropy(const Tensor& logits, std::span<const std::int32_t> targets);

double l2_norm(std::span<const double> values);

}  // namespace hmt
