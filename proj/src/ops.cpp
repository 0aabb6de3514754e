// SPDX-License-Identifier: Apache-2.0
#include "hmt/ops.hpp"

#include <cmath>
#include <numbers>

#include "hmt/error.hpp"

namespace hmt {
namespace {

using detail::Node;

Tensor make_result(Shape shape, std::vector<double> value, std::initializer_list<Tensor> inputs,
                   std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  if (grad_mode_enabled()) {
    bool any = false;
    for (const Tensor& t : inputs) any = any || t.requires_grad();
    if (any) {
      node->requires_grad = true;
      node->leaf = false;
      for (const Tensor& t : inputs) node->inputs.push_back(t.node());
      node->backward_fn = std::move(backward_fn);
    }
  }
  return Tensor(std::move(node));
}

Tensor make_result_n(Shape shape, std::vector<double> value, std::span<const Tensor> inputs,
                     std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  if (grad_mode_enabled()) {
    bool any = false;
    for (const Tensor& t : inputs) any = any || t.requires_grad();
    if (any) {
      node->requires_grad = true;
      node->leaf = false;
      for (const Tensor& t : inputs) node->inputs.push_back(t.node());
      node->backward_fn = std::move(backward_fn);
    }
  }
  return Tensor(std::move(node));
}

// Gradient sink for input i, or nullptr when that input takes no gradient.
double* sink(Node& out, std::size_t i) {
  Node& in = *out.inputs[i];
  if (!in.requires_grad) return nullptr;
  return in.ensure_grad().data();
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    raise(ErrorKind::kDimension, std::string(op) + ": expected rank-2 tensor, got " + shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    raise(ErrorKind::kDimension,
          std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    raise(ErrorKind::kDimension,
          "matmul: inner dimensions differ, " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  std::vector<double> c(m * n, 0.0);
  const double* A = a.data().data();
  const double* B = b.data().data();
  // Column blocks held in registers; each entry still sums p = 0..k-1 in
  // order, so results match the naive loop bit for bit.
  constexpr std::size_t kBlock = 8;
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = A + i * k;
    double* crow = c.data() + i * n;
    std::size_t j0 = 0;
    for (; j0 + kBlock <= n; j0 += kBlock) {
      double acc[kBlock] = {};
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = arow[p];
        const double* brow = B + p * n + j0;
        for (std::size_t j = 0; j < kBlock; ++j) acc[j] += aip * brow[j];
      }
      for (std::size_t j = 0; j < kBlock; ++j) crow[j0 + j] = acc[j];
    }
    for (std::size_t j = j0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * B[p * n + j];
      crow[j] = acc;
    }
  }
  return make_result({m, n}, std::move(c), {a, b}, [a, b, m, k, n](Node& out) {
    const double* dC = out.grad.data();
    if (double* dA = sink(out, 0)) {
      const double* B = b.data().data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += dC[i * n + j] * B[p * n + j];
          dA[i * k + p] += acc;
        }
      }
    }
    if (double* dB = sink(out, 1)) {
      const double* A = a.data().data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = A[i * k + p];
          for (std::size_t j = 0; j < n; ++j) dB[p * n + j] += aip * dC[i * n + j];
        }
      }
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_rank2(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  const double* A = a.data().data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = A[i * n + j];
  return make_result({n, m}, std::move(out), {a}, [m, n](Node& o) {
    if (double* dA = sink(o, 0)) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) dA[i * n + j] += o.grad[j * m + i];
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& o) {
    for (std::size_t s = 0; s < 2; ++s) {
      if (double* d = sink(o, s))
        for (std::size_t i = 0; i < o.grad.size(); ++i) d[i] += o.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& o) {
    if (double* d = sink(o, 0))
      for (std::size_t i = 0; i < o.grad.size(); ++i) d[i] += o.grad[i];
    if (double* d = sink(o, 1))
      for (std::size_t i = 0; i < o.grad.size(); ++i) d[i] -= o.grad[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return make_result(a.shape(), std::move(out), {a, b}, [a, b](Node& o) {
    if (double* d = sink(o, 0))
      for (std::size_t i = 0; i < o.grad.size(); ++i) d[i] += o.grad[i] * b.data()[i];
    if (double* d = sink(o, 1))
      for (std::size_t i = 0; i < o.grad.size(); ++i) d[i] += o.grad[i] * a.data()[i];
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * factor;
  return make_result(a.shape(), std::move(out), {a}, [factor](Node& o) {
    if (double* d = sink(o, 0))
      for (std::size_t i = 0; i < o.grad.size(); ++i) d[i] += o.grad[i] * factor;
  });
}

Tensor div_scalar(const Tensor& a, double divisor) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] / divisor;
  return make_result(a.shape(), std::move(out), {a}, [divisor](Node& o) {
    if (double* d = sink(o, 0))
      for (std::size_t i = 0; i < o.grad.size(); ++i) d[i] += o.grad[i] / divisor;
  });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  require_rank2(a, "add_row");
  const std::size_t m = a.rows(), n = a.cols();
  if (row.size() != n) {
    raise(ErrorKind::kDimension,
          "add_row: row " + shape_string(row.shape()) + " does not match " + shape_string(a.shape()));
  }
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = a.data()[i * n + j] + row.data()[j];
  return make_result({m, n}, std::move(out), {a, row}, [m, n](Node& o) {
    if (double* d = sink(o, 0))
      for (std::size_t i = 0; i < o.grad.size(); ++i) d[i] += o.grad[i];
    if (double* d = sink(o, 1))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) d[j] += o.grad[i * n + j];
  });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return make_result({}, {s}, {a}, [](Node& o) {
    if (double* d = sink(o, 0)) {
      const std::size_t n = o.inputs[0]->value.size();
      for (std::size_t i = 0; i < n; ++i) d[i] += o.grad[0];
    }
  });
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) raise(ErrorKind::kContract, "mean of an empty tensor");
  return div_scalar(sum(a), static_cast<double>(a.size()));
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) raise(ErrorKind::kContract, "concat_rows: no inputs");
  const std::size_t n = parts.front().cols();
  std::size_t m = 0;
  for (const Tensor& p : parts) {
    if (p.cols() != n) {
      raise(ErrorKind::kDimension, "concat_rows: width mismatch " + shape_string(parts.front().shape()) +
                                       " vs " + shape_string(p.shape()));
    }
    m += p.rows();
  }
  std::vector<double> out;
  out.reserve(m * n);
  for (const Tensor& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return make_result_n({m, n}, std::move(out), parts, [](Node& o) {
    std::size_t offset = 0;
    for (std::size_t s = 0; s < o.inputs.size(); ++s) {
      const std::size_t len = o.inputs[s]->value.size();
      if (double* d = sink(o, s))
        for (std::size_t i = 0; i < len; ++i) d[i] += o.grad[offset + i];
      offset += len;
    }
  });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) raise(ErrorKind::kContract, "concat_cols: no inputs");
  const std::size_t m = parts.front().rows();
  std::size_t n = 0;
  std::vector<std::size_t> widths;
  for (const Tensor& p : parts) {
    if (p.rows() != m) {
      raise(ErrorKind::kDimension, "concat_cols: height mismatch " + shape_string(parts.front().shape()) +
                                       " vs " + shape_string(p.shape()));
    }
    widths.push_back(p.cols());
    n += p.cols();
  }
  std::vector<double> out(m * n);
  std::size_t c0 = 0;
  for (std::size_t s = 0; s < parts.size(); ++s) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < widths[s]; ++j) out[i * n + c0 + j] = parts[s].data()[i * widths[s] + j];
    c0 += widths[s];
  }
  return make_result_n({m, n}, std::move(out), parts, [m, n, widths](Node& o) {
    std::size_t c = 0;
    for (std::size_t s = 0; s < widths.size(); ++s) {
      if (double* d = sink(o, s))
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < widths[s]; ++j) d[i * widths[s] + j] += o.grad[i * n + c + j];
      c += widths[s];
    }
  });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  require_rank2(a, "slice_rows");
  const std::size_t n = a.cols();
  if (begin > end || end > a.rows()) {
    raise(ErrorKind::kIndex, "slice_rows: [" + std::to_string(begin) + ", " + std::to_string(end) +
                                 ") out of range for " + shape_string(a.shape()));
  }
  std::vector<double> out(a.data().begin() + begin * n, a.data().begin() + end * n);
  return make_result({end - begin, n}, std::move(out), {a}, [begin, n](Node& o) {
    if (double* d = sink(o, 0))
      for (std::size_t i = 0; i < o.grad.size(); ++i) d[begin * n + i] += o.grad[i];
  });
}

Tensor gather_rows(const Tensor& table, std::span<const std::int32_t> ids) {
  require_rank2(table, "gather_rows");
  const std::size_t v = table.rows(), n = table.cols();
  std::vector<double> out(ids.size() * n);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v) {
      raise(ErrorKind::kIndex, "gather_rows: id " + std::to_string(ids[i]) + " at position " + std::to_string(i) +
                                   " outside table of " + std::to_string(v) + " rows");
    }
    std::copy_n(table.data().begin() + ids[i] * n, n, out.begin() + i * n);
  }
  std::vector<std::int32_t> saved(ids.begin(), ids.end());
  return make_result({ids.size(), n}, std::move(out), {table}, [saved, n](Node& o) {
    if (double* d = sink(o, 0))
      for (std::size_t i = 0; i < saved.size(); ++i)
        for (std::size_t j = 0; j < n; ++j) d[saved[i] * n + j] += o.grad[i * n + j];
  });
}

Tensor softmax_rows(const Tensor& x) {
  require_rank2(x, "softmax_rows");
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* in = x.data().data() + i * n;
    double mx = -INFINITY;
    for (std::size_t j = 0; j < n; ++j) {
      if (!std::isfinite(in[j])) {
        raise(ErrorKind::kNumericDomain, "softmax_rows: non-finite input at (" + std::to_string(i) + ", " +
                                             std::to_string(j) + ")");
      }
      mx = std::max(mx, in[j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (out[i * n + j] = std::exp(in[j] - mx));
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= z;
  }
  auto probs = std::make_shared<std::vector<double>>(out);
  return make_result({m, n}, std::move(out), {x}, [probs, m, n](Node& o) {
    if (double* d = sink(o, 0)) {
      const std::vector<double>& p = *probs;
      for (std::size_t i = 0; i < m; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += o.grad[i * n + j] * p[i * n + j];
        for (std::size_t j = 0; j < n; ++j) d[i * n + j] += p[i * n + j] * (o.grad[i * n + j] - dot);
      }
    }
  });
}

Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_rank2(x, "layer_norm_rows");
  const std::size_t m = x.rows(), n = x.cols();
  if (gamma.size() != n || beta.size() != n) {
    raise(ErrorKind::kDimension, "layer_norm_rows: affine parameters " + shape_string(gamma.shape()) + "/" +
                                     shape_string(beta.shape()) + " do not match " + shape_string(x.shape()));
  }
  std::vector<double> out(m * n);
  auto xhat = std::make_shared<std::vector<double>>(m * n);
  auto inv_std = std::make_shared<std::vector<double>>(m);
  const double* g = gamma.data().data();
  const double* b = beta.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* in = x.data().data() + i * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += in[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = is;
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (in[j] - mu) * is;
      (*xhat)[i * n + j] = h;
      out[i * n + j] = h * g[j] + b[j];
    }
  }
  return make_result({m, n}, std::move(out), {x, gamma, beta}, [xhat, inv_std, gamma, m, n](Node& o) {
    const std::vector<double>& h = *xhat;
    if (double* dx = sink(o, 0)) {
      const double* g = gamma.data().data();
      std::vector<double> dh(n);
      for (std::size_t i = 0; i < m; ++i) {
        double mean_dh = 0.0, mean_dh_h = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          dh[j] = o.grad[i * n + j] * g[j];
          mean_dh += dh[j];
          mean_dh_h += dh[j] * h[i * n + j];
        }
        mean_dh /= static_cast<double>(n);
        mean_dh_h /= static_cast<double>(n);
        for (std::size_t j = 0; j < n; ++j)
          dx[i * n + j] += (*inv_std)[i] * (dh[j] - mean_dh - h[i * n + j] * mean_dh_h);
      }
    }
    if (double* dg = sink(o, 1))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) dg[j] += o.grad[i * n + j] * h[i * n + j];
    if (double* db = sink(o, 2))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) db[j] += o.grad[i * n + j];
  });
}

Tensor gelu(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x.data()[i];
    out[i] = 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
  }
  return make_result(x.shape(), std::move(out), {x}, [x](Node& o) {
    if (double* d = sink(o, 0)) {
      const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
      for (std::size_t i = 0; i < o.grad.size(); ++i) {
        const double v = x.data()[i];
        const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
        const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
        d[i] += o.grad[i] * (cdf + v * pdf);
      }
    }
  });
}

Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t n_heads) {
  require_same_shape(q, k, "causal_attention");
  require_same_shape(q, v, "causal_attention");
  require_rank2(q, "causal_attention");
  const std::size_t T = q.rows(), d = q.cols();
  if (n_heads == 0 || d % n_heads != 0) {
    raise(ErrorKind::kDimension,
          "causal_attention: width " + std::to_string(d) + " not divisible by " + std::to_string(n_heads) + " heads");
  }
  const std::size_t hd = d / n_heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(hd));
  // probs[h][t*T + u], zero above the diagonal.
  auto probs = std::make_shared<std::vector<double>>(n_heads * T * T, 0.0);
  std::vector<double> out(T * d, 0.0);
  const double* Q = q.data().data();
  const double* K = k.data().data();
  const double* V = v.data().data();
  for (std::size_t h = 0; h < n_heads; ++h) {
    const std::size_t c0 = h * hd;
    double* P = probs->data() + h * T * T;
    for (std::size_t t = 0; t < T; ++t) {
      double mx = -INFINITY;
      for (std::size_t u = 0; u <= t; ++u) {
        double s = 0.0;
        for (std::size_t c = 0; c < hd; ++c) s += Q[t * d + c0 + c] * K[u * d + c0 + c];
        s *= sc;
        P[t * T + u] = s;
        mx = std::max(mx, s);
      }
      double z = 0.0;
      for (std::size_t u = 0; u <= t; ++u) z += (P[t * T + u] = std::exp(P[t * T + u] - mx));
      for (std::size_t u = 0; u <= t; ++u) {
        P[t * T + u] /= z;
        const double p = P[t * T + u];
        for (std::size_t c = 0; c < hd; ++c) out[t * d + c0 + c] += p * V[u * d + c0 + c];
      }
    }
  }
  return make_result({T, d}, std::move(out), {q, k, v}, [q, k, v, probs, T, d, hd, n_heads, sc](Node& o) {
    double* dQ = sink(o, 0);
    double* dK = sink(o, 1);
    double* dV = sink(o, 2);
    const double* Q = q.data().data();
    const double* K = k.data().data();
    const double* V = v.data().data();
    const double* dO = o.grad.data();
    std::vector<double> dP(T);
    for (std::size_t h = 0; h < n_heads; ++h) {
      const std::size_t c0 = h * hd;
      const double* P = probs->data() + h * T * T;
      for (std::size_t t = 0; t < T; ++t) {
        double dot = 0.0;
        for (std::size_t u = 0; u <= t; ++u) {
          double acc = 0.0;
          for (std::size_t c = 0; c < hd; ++c) acc += dO[t * d + c0 + c] * V[u * d + c0 + c];
          dP[u] = acc;
          dot += acc * P[t * T + u];
          if (dV) {
            const double p = P[t * T + u];
            for (std::size_t c = 0; c < hd; ++c) dV[u * d + c0 + c] += p * dO[t * d + c0 + c];
          }
        }
        for (std::size_t u = 0; u <= t; ++u) {
          const double ds = P[t * T + u] * (dP[u] - dot) * sc;
          if (dQ)
            for (std::size_t c = 0; c < hd; ++c) dQ[t * d + c0 + c] += ds * K[u * d + c0 + c];
          if (dK)
            for (std::size_t c = 0; c < hd; ++c) dK[u * d + c0 + c] += ds * Q[t * d + c0 + c];
        }
      }
    }
  });
}

Tensor nll_sum(const Tensor& logits, std::span<const std::int32_t> targets) {
  require_rank2(logits, "nll_sum");
  const std::size_t m = logits.rows(), V = logits.cols();
  if (targets.size() != m) {
    raise(ErrorKind::kDimension, "nll_sum: " + std::to_string(targets.size()) + " targets for " +
                                     std::to_string(m) + " logit rows");
  }
  auto probs = std::make_shared<std::vector<double>>(m * V, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const std::int32_t t = targets[i];
    if (t == kIgnoreTarget) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= V) {
      raise(ErrorKind::kIndex, "cross entropy: target " + std::to_string(t) + " at position " + std::to_string(i) +
                                   " outside vocabulary of " + std::to_string(V));
    }
    const double* row = logits.data().data() + i * V;
    double mx = -INFINITY;
    for (std::size_t j = 0; j < V; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < V; ++j) z += ((*probs)[i * V + j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < V; ++j) (*probs)[i * V + j] /= z;
    total += (mx + std::log(z)) - row[t];
  }
  std::vector<std::int32_t> saved(targets.begin(), targets.end());
  return make_result({}, {total}, {logits}, [probs, saved, m, V](Node& o) {
    if (double* d = sink(o, 0)) {
      const double g = o.grad[0];
      for (std::size_t i = 0; i < m; ++i) {
        if (saved[i] == kIgnoreTarget) continue;
        for (std::size_t j = 0; j < V; ++j) d[i * V + j] += g * (*probs)[i * V + j];
        d[i * V + saved[i]] -= g;
      }
    }
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::int32_t> targets) {
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] < 0) {
      raise(ErrorKind::kIndex, "cross_entropy: target " + std::to_string(targets[i]) + " at position " +
                                   std::to_string(i) + " is negative");
    }
  }
  if (targets.empty()) raise(ErrorKind::kContract, "cross_entropy: no positions");
  return div_scalar(nll_sum(logits, targets), static_cast<double>(targets.size()));
}

double l2_norm(std::span<const double> values) {
  double s = 0.0;
  for (double v : values) s += v * v;
  return std::sqrt(s);
}

}  // namespace hmt
