// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dlva/numerics/tape.hpp"
#include "dlva/numerics/tensor.hpp"

namespace dlva {

// Test fixture hook: lets the gradcheck negative control break one backward
// rule on purpose. Never set outside tests and `gradcheck --corrupt-gradient`.
enum class GradientFault { none, gelu, matmul };
inline GradientFault& gradient_fault() {
  static GradientFault fault = GradientFault::none;
  return fault;
}

inline constexpr double kMaskedLogit = -1e30;
inline constexpr double kLayerNormEps = 1e-5;

namespace detail {

inline void check_finite(const Tensor& t, const char* op) {
  if (!t.all_finite()) fail(ErrorKind::numeric, std::string("non-finite value produced by ") + op);
}

inline TensorPtr result(Shape shape, std::vector<double> data, bool rg, const char* op) {
  auto out = make_tensor(std::move(shape), std::move(data), rg);
  check_finite(*out, op);
  if (rg) out->ensure_grad();
  return out;
}

inline void require_2d(const Tensor& t, const char* op) {
  if (t.rank() != 2) fail(ErrorKind::dimension, std::string(op) + " expects a matrix, got " + shape_str(t.shape));
}

// C[m×n] += A[m×k] · B[k×n]
inline void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m×n] += A[m×k] · B[n×k]ᵀ
inline void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      c[i * n + j] += s;
    }
  }
}

// C[k×n] += A[m×k]ᵀ · B[m×n]
inline void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace detail

namespace ops {

inline TensorPtr matmul(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
  detail::require_2d(*a, "matmul");
  detail::require_2d(*b, "matmul");
  const std::size_t m = a->shape[0], k = a->shape[1], n = b->shape[1];
  if (b->shape[0] != k)
    fail(ErrorKind::dimension, "matmul inner extents differ: " + shape_str(a->shape) + " x " + shape_str(b->shape));
  std::vector<double> out(m * n, 0.0);
  detail::gemm_nn(m, k, n, a->data.data(), b->data.data(), out.data());
  const bool rg = tape.wants_grad({a.get(), b.get()});
  auto y = detail::result({m, n}, std::move(out), rg, "matmul");
  if (rg) {
    tape.record([a, b, y, m, k, n] {
      const double fault = gradient_fault() == GradientFault::matmul ? 1.05 : 1.0;
      if (a->requires_grad) {
        a->ensure_grad();
        detail::gemm_nt(m, n, k, y->grad.data(), b->data.data(), a->grad.data());
        if (fault != 1.0)
          for (auto& g : a->grad) g *= fault;
      }
      if (b->requires_grad) {
        b->ensure_grad();
        detail::gemm_tn(m, k, n, a->data.data(), y->grad.data(), b->grad.data());
      }
    });
  }
  return y;
}

// a · bᵀ, used for attention scores.
inline TensorPtr matmul_nt(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
  detail::require_2d(*a, "matmul_nt");
  detail::require_2d(*b, "matmul_nt");
  const std::size_t m = a->shape[0], k = a->shape[1], n = b->shape[0];
  if (b->shape[1] != k)
    fail(ErrorKind::dimension, "matmul_nt inner extents differ: " + shape_str(a->shape) + " x " + shape_str(b->shape) + "^T");
  std::vector<double> out(m * n, 0.0);
  detail::gemm_nt(m, k, n, a->data.data(), b->data.data(), out.data());
  const bool rg = tape.wants_grad({a.get(), b.get()});
  auto y = detail::result({m, n}, std::move(out), rg, "matmul_nt");
  if (rg) {
    tape.record([a, b, y, m, k, n] {
      if (a->requires_grad) {
        a->ensure_grad();
        detail::gemm_nn(m, n, k, y->grad.data(), b->data.data(), a->grad.data());
      }
      if (b->requires_grad) {
        b->ensure_grad();
        detail::gemm_tn(m, n, k, y->grad.data(), a->data.data(), b->grad.data());
      }
    });
  }
  return y;
}

inline TensorPtr add(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
  if (a->shape != b->shape)
    fail(ErrorKind::dimension, "add shapes differ: " + shape_str(a->shape) + " vs " + shape_str(b->shape));
  std::vector<double> out(a->numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->data[i] + b->data[i];
  const bool rg = tape.wants_grad({a.get(), b.get()});
  auto y = detail::result(a->shape, std::move(out), rg, "add");
  if (rg) {
    tape.record([a, b, y] {
      for (const auto& t : {a, b}) {
        if (!t->requires_grad) continue;
        t->ensure_grad();
        for (std::size_t i = 0; i < y->grad.size(); ++i) t->grad[i] += y->grad[i];
      }
    });
  }
  return y;
}

// Adds a length-n vector to every row of an m×n matrix.
inline TensorPtr add_bias(Tape& tape, const TensorPtr& a, const TensorPtr& bias) {
  const std::size_t n = a->cols(), m = a->rows();
  if (bias->numel() != n)
    fail(ErrorKind::dimension, "bias " + shape_str(bias->shape) + " does not match rows of " + shape_str(a->shape));
  std::vector<double> out(a->numel());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = a->data[i * n + j] + bias->data[j];
  const bool rg = tape.wants_grad({a.get(), bias.get()});
  auto y = detail::result(a->shape, std::move(out), rg, "add_bias");
  if (rg) {
    tape.record([a, bias, y, m, n] {
      if (a->requires_grad) {
        a->ensure_grad();
        for (std::size_t i = 0; i < y->grad.size(); ++i) a->grad[i] += y->grad[i];
      }
      if (bias->requires_grad) {
        bias->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) bias->grad[j] += y->grad[i * n + j];
      }
    });
  }
  return y;
}

inline TensorPtr scale(Tape& tape, const TensorPtr& a, double s) {
  std::vector<double> out(a->numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->data[i] * s;
  const bool rg = tape.wants_grad({a.get()});
  auto y = detail::result(a->shape, std::move(out), rg, "scale");
  if (rg) {
    tape.record([a, y, s] {
      a->ensure_grad();
      for (std::size_t i = 0; i < y->grad.size(); ++i) a->grad[i] += s * y->grad[i];
    });
  }
  return y;
}

// tanh approximation of GELU.
inline TensorPtr gelu(Tape& tape, const TensorPtr& a) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double k = 0.044715;
  std::vector<double> out(a->numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = a->data[i];
    out[i] = 0.5 * x * (1.0 + std::tanh(c * (x + k * x * x * x)));
  }
  const bool rg = tape.wants_grad({a.get()});
  auto y = detail::result(a->shape, std::move(out), rg, "gelu");
  if (rg) {
    tape.record([a, y] {
      const double fault = gradient_fault() == GradientFault::gelu ? 1.05 : 1.0;
      a->ensure_grad();
      for (std::size_t i = 0; i < y->grad.size(); ++i) {
        const double x = a->data[i];
        const double t = std::tanh(c * (x + k * x * x * x));
        const double dt = (1.0 - t * t) * c * (1.0 + 3.0 * k * x * x);
        a->grad[i] += fault * y->grad[i] * (0.5 * (1.0 + t) + 0.5 * x * dt);
      }
    });
  }
  return y;
}

// Row-wise normalization over the last extent followed by gain/bias.
inline TensorPtr layernorm(Tape& tape, const TensorPtr& x, const TensorPtr& gain, const TensorPtr& bias,
                           double eps = kLayerNormEps) {
  const std::size_t d = x->cols(), m = x->rows();
  if (gain->numel() != d || bias->numel() != d)
    fail(ErrorKind::dimension, "layernorm affine of " + shape_str(gain->shape) + "/" + shape_str(bias->shape) +
                                   " does not match " + shape_str(x->shape));
  std::vector<double> out(x->numel()), xhat(x->numel()), rstd(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = x->data.data() + i * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(d);
    rstd[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[i * d + j] = (row[j] - mean) * rstd[i];
      out[i * d + j] = xhat[i * d + j] * gain->data[j] + bias->data[j];
    }
  }
  const bool rg = tape.wants_grad({x.get(), gain.get(), bias.get()});
  auto y = detail::result(x->shape, std::move(out), rg, "layernorm");
  if (rg) {
    tape.record([x, gain, bias, y, xhat = std::move(xhat), rstd = std::move(rstd), m, d] {
      if (gain->requires_grad) gain->ensure_grad();
      if (bias->requires_grad) bias->ensure_grad();
      if (x->requires_grad) x->ensure_grad();
      std::vector<double> dxhat(d);
      for (std::size_t i = 0; i < m; ++i) {
        const double* g = y->grad.data() + i * d;
        const double* xh = xhat.data() + i * d;
        double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          if (gain->requires_grad) gain->grad[j] += g[j] * xh[j];
          if (bias->requires_grad) bias->grad[j] += g[j];
          dxhat[j] = g[j] * gain->data[j];
          mean_dxhat += dxhat[j];
          mean_dxhat_xhat += dxhat[j] * xh[j];
        }
        if (!x->requires_grad) continue;
        mean_dxhat /= static_cast<double>(d);
        mean_dxhat_xhat /= static_cast<double>(d);
        for (std::size_t j = 0; j < d; ++j)
          x->grad[i * d + j] += rstd[i] * (dxhat[j] - mean_dxhat - xh[j] * mean_dxhat_xhat);
      }
    });
  }
  return y;
}

// Softmax over each row, with masked entries pushed to kMaskedLogit first.
// Masked outputs are exactly zero.
inline TensorPtr masked_softmax(Tape& tape, const TensorPtr& logits, const Mask& mask) {
  detail::require_2d(*logits, "masked_softmax");
  const std::size_t m = logits->shape[0], n = logits->shape[1];
  if (mask.rows != m || mask.cols != n)
    fail(ErrorKind::dimension, "mask [" + std::to_string(mask.rows) + "x" + std::to_string(mask.cols) +
                                   "] does not match logits " + shape_str(logits->shape));
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = logits->data.data() + i * n;
    double mx = kMaskedLogit;
    bool any = false;
    for (std::size_t j = 0; j < n; ++j)
      if (mask(i, j)) {
        mx = any ? std::max(mx, row[j]) : row[j];
        any = true;
      }
    if (!any) fail(ErrorKind::degenerate_row, "row " + std::to_string(i) + " of masked_softmax is fully masked");
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (!mask(i, j)) continue;
      out[i * n + j] = std::exp(row[j] - mx);
      z += out[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= z;
  }
  const bool rg = tape.wants_grad({logits.get()});
  auto y = detail::result({m, n}, std::move(out), rg, "masked_softmax");
  if (rg) {
    tape.record([logits, y, m, n] {
      logits->ensure_grad();
      for (std::size_t i = 0; i < m; ++i) {
        const double* p = y->data.data() + i * n;
        const double* g = y->grad.data() + i * n;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += p[j] * g[j];
        for (std::size_t j = 0; j < n; ++j) logits->grad[i * n + j] += p[j] * (g[j] - dot);
      }
    });
  }
  return y;
}

// Weighted mean of -log softmax(logits)[target] over rows; weights default to 1.
inline TensorPtr cross_entropy(Tape& tape, const TensorPtr& logits, std::span<const std::size_t> targets,
                               std::span<const double> weights = {}) {
  detail::require_2d(*logits, "cross_entropy");
  const std::size_t n = logits->shape[0], v = logits->shape[1];
  if (targets.size() != n)
    fail(ErrorKind::dimension, std::to_string(targets.size()) + " targets for " + std::to_string(n) + " rows");
  if (!weights.empty() && weights.size() != n)
    fail(ErrorKind::dimension, std::to_string(weights.size()) + " weights for " + std::to_string(n) + " rows");
  std::vector<double> w(n, 1.0);
  if (!weights.empty()) std::copy(weights.begin(), weights.end(), w.begin());
  double wsum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] >= v)
      fail(ErrorKind::index, "target " + std::to_string(targets[i]) + " out of range for " + std::to_string(v) + " classes");
    wsum += w[i];
  }
  if (!(wsum > 0.0)) fail(ErrorKind::usage, "cross_entropy needs at least one row with nonzero weight");

  std::vector<double> probs(n * v);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = logits->data.data() + i * v;
    const double mx = *std::max_element(row, row + v);
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) {
      probs[i * v + j] = std::exp(row[j] - mx);
      z += probs[i * v + j];
    }
    for (std::size_t j = 0; j < v; ++j) probs[i * v + j] /= z;
    const double lse = mx + std::log(z);
    loss += w[i] * (lse - row[targets[i]]);
  }
  loss /= wsum;
  const bool rg = tape.wants_grad({logits.get()});
  auto y = detail::result({1}, {loss}, rg, "cross_entropy");
  if (rg) {
    std::vector<std::size_t> tg(targets.begin(), targets.end());
    tape.record([logits, y, probs = std::move(probs), tg = std::move(tg), w = std::move(w), wsum, n, v] {
      logits->ensure_grad();
      const double g = y->grad[0];
      for (std::size_t i = 0; i < n; ++i) {
        if (w[i] == 0.0) continue;
        const double c = g * w[i] / wsum;
        for (std::size_t j = 0; j < v; ++j) logits->grad[i * v + j] += c * probs[i * v + j];
        logits->grad[i * v + tg[i]] -= c;
      }
    });
  }
  return y;
}

inline TensorPtr slice_cols(Tape& tape, const TensorPtr& a, std::size_t start, std::size_t count) {
  detail::require_2d(*a, "slice_cols");
  const std::size_t m = a->shape[0], n = a->shape[1];
  if (count == 0 || start + count > n)
    fail(ErrorKind::dimension, "column slice [" + std::to_string(start) + ", " + std::to_string(start + count) +
                                   ") outside " + shape_str(a->shape));
  std::vector<double> out(m * count);
  for (std::size_t i = 0; i < m; ++i)
    std::copy_n(a->data.begin() + static_cast<std::ptrdiff_t>(i * n + start), count,
                out.begin() + static_cast<std::ptrdiff_t>(i * count));
  const bool rg = tape.wants_grad({a.get()});
  auto y = detail::result({m, count}, std::move(out), rg, "slice_cols");
  if (rg) {
    tape.record([a, y, m, n, start, count] {
      a->ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < count; ++j) a->grad[i * n + start + j] += y->grad[i * count + j];
    });
  }
  return y;
}

inline TensorPtr concat_cols(Tape& tape, const std::vector<TensorPtr>& parts) {
  if (parts.empty()) fail(ErrorKind::dimension, "concat_cols of nothing");
  const std::size_t m = parts[0]->rows();
  std::size_t n = 0;
  bool rg = false;
  for (const auto& p : parts) {
    detail::require_2d(*p, "concat_cols");
    if (p->rows() != m) fail(ErrorKind::dimension, "concat_cols row mismatch at " + shape_str(p->shape));
    n += p->cols();
    rg = rg || tape.wants_grad({p.get()});
  }
  std::vector<double> out(m * n);
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t c = p->cols();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < c; ++j) out[i * n + off + j] = p->data[i * c + j];
    off += c;
  }
  auto y = detail::result({m, n}, std::move(out), rg, "concat_cols");
  if (rg) {
    tape.record([parts, y, m, n] {
      std::size_t off = 0;
      for (const auto& p : parts) {
        const std::size_t c = p->cols();
        if (p->requires_grad) {
          p->ensure_grad();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < c; ++j) p->grad[i * c + j] += y->grad[i * n + off + j];
        }
        off += c;
      }
    });
  }
  return y;
}

// out[i] = table[ids[i]]; embedding lookup and row selection.
inline TensorPtr gather_rows(Tape& tape, const TensorPtr& table, std::span<const std::size_t> ids) {
  detail::require_2d(*table, "gather_rows");
  const std::size_t rows = table->shape[0], d = table->shape[1];
  if (ids.empty()) fail(ErrorKind::dimension, "gather_rows with no indices");
  std::vector<double> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= rows)
      fail(ErrorKind::index, "row " + std::to_string(ids[i]) + " outside table " + shape_str(table->shape));
    std::copy_n(table->data.begin() + static_cast<std::ptrdiff_t>(ids[i] * d), d,
                out.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  const bool rg = tape.wants_grad({table.get()});
  auto y = detail::result({ids.size(), d}, std::move(out), rg, "gather_rows");
  if (rg) {
    std::vector<std::size_t> idx(ids.begin(), ids.end());
    tape.record([table, y, idx = std::move(idx), d] {
      table->ensure_grad();
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < d; ++j) table->grad[idx[i] * d + j] += y->grad[i * d + j];
    });
  }
  return y;
}

// Builds a total_rows×d matrix whose rows come from several sources:
// out[positions[s][i]] = sources[s][i]. Every output row must be covered once.
inline TensorPtr assemble_rows(Tape& tape, std::size_t total_rows,
                               const std::vector<std::pair<TensorPtr, std::vector<std::size_t>>>& sources) {
  if (sources.empty()) fail(ErrorKind::dimension, "assemble_rows of nothing");
  const std::size_t d = sources[0].first->cols();
  std::vector<double> out(total_rows * d, 0.0);
  std::vector<unsigned char> covered(total_rows, 0);
  bool rg = false;
  for (const auto& [src, pos] : sources) {
    if (src->cols() != d || src->rows() != pos.size())
      fail(ErrorKind::dimension, "assemble_rows source " + shape_str(src->shape) + " vs " + std::to_string(pos.size()) +
                                     " positions of width " + std::to_string(d));
    for (std::size_t i = 0; i < pos.size(); ++i) {
      if (pos[i] >= total_rows || covered[pos[i]])
        fail(ErrorKind::index, "assemble_rows position " + std::to_string(pos[i]) + " invalid or repeated");
      covered[pos[i]] = 1;
      std::copy_n(src->data.begin() + static_cast<std::ptrdiff_t>(i * d), d,
                  out.begin() + static_cast<std::ptrdiff_t>(pos[i] * d));
    }
    rg = rg || tape.wants_grad({src.get()});
  }
  for (std::size_t r = 0; r < total_rows; ++r)
    if (!covered[r]) fail(ErrorKind::dimension, "assemble_rows left row " + std::to_string(r) + " empty");
  auto y = detail::result({total_rows, d}, std::move(out), rg, "assemble_rows");
  if (rg) {
    tape.record([sources, y, d] {
      for (const auto& [src, pos] : sources) {
        if (!src->requires_grad) continue;
        src->ensure_grad();
        for (std::size_t i = 0; i < pos.size(); ++i)
          for (std::size_t j = 0; j < d; ++j) src->grad[i * d + j] += y->grad[pos[i] * d + j];
      }
    });
  }
  return y;
}

// Mean of the selected rows, as a 1×d matrix.
inline TensorPtr mean_rows(Tape& tape, const TensorPtr& a, std::span<const std::size_t> rows) {
  if (rows.empty()) fail(ErrorKind::usage, "mean_rows of an empty row set");
  const std::size_t d = a->cols();
  std::vector<double> out(d, 0.0);
  for (auto r : rows) {
    if (r >= a->rows()) fail(ErrorKind::index, "row " + std::to_string(r) + " outside " + shape_str(a->shape));
    for (std::size_t j = 0; j < d; ++j) out[j] += a->data[r * d + j];
  }
  const double inv = 1.0 / static_cast<double>(rows.size());
  for (auto& v : out) v *= inv;
  const bool rg = tape.wants_grad({a.get()});
  auto y = detail::result({1, d}, std::move(out), rg, "mean_rows");
  if (rg) {
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    tape.record([a, y, idx = std::move(idx), d, inv] {
      a->ensure_grad();
      for (auto r : idx)
        for (std::size_t j = 0; j < d; ++j) a->grad[r * d + j] += inv * y->grad[j];
    });
  }
  return y;
}

// Σ coeffs[i] · terms[i] over scalar tensors.
inline TensorPtr weighted_sum(Tape& tape, const std::vector<TensorPtr>& terms, const std::vector<double>& coeffs) {
  if (terms.size() != coeffs.size() || terms.empty())
    fail(ErrorKind::dimension, "weighted_sum needs one coefficient per term");
  double total = 0.0;
  bool rg = false;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (terms[i]->numel() != 1) fail(ErrorKind::dimension, "weighted_sum term is not a scalar");
    total += coeffs[i] * terms[i]->data[0];
    rg = rg || tape.wants_grad({terms[i].get()});
  }
  auto y = detail::result({1}, {total}, rg, "weighted_sum");
  if (rg) {
    tape.record([terms, coeffs, y] {
      for (std::size_t i = 0; i < terms.size(); ++i) {
        if (!terms[i]->requires_grad) continue;
        terms[i]->ensure_grad();
        terms[i]->grad[0] += coeffs[i] * y->grad[0];
      }
    });
  }
  return y;
}

}  // namespace ops
}  // namespace dlva
