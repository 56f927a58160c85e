#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "morpho/tensor.hpp"

namespace morpho {

namespace detail {

// C[m x n] += A[m x k] * B[k x n], row-major. The j-inner accumulate form
// vectorizes under -O3 without reassociation, so results stay bit-stable.
inline void gemm_acc(const double* a, int m, int k, const double* b, int n, double* c) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * k;
    double* crow = c + static_cast<std::size_t>(i) * n;
    for (int kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      if (av == 0.0) continue;
      const double* brow = b + static_cast<std::size_t>(kk) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

inline std::vector<double> transpose(const double* src, int rows, int cols) {
  std::vector<double> out(static_cast<std::size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      out[static_cast<std::size_t>(c) * rows + r] = src[static_cast<std::size_t>(r) * cols + c];
  return out;
}

inline void require_2d(const TensorPtr& t, const char* who) {
  if (t->ndim() != 2)
    throw std::invalid_argument(std::string(who) + ": expected 2-d tensor, got shape " + shape_str(t->shape));
}

inline void require_same_shape(const TensorPtr& a, const TensorPtr& b, const char* who) {
  if (a->shape != b->shape)
    throw std::invalid_argument(std::string(who) + ": shape mismatch " + shape_str(a->shape) + " vs " +
                                shape_str(b->shape));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// matrix product
// ---------------------------------------------------------------------------

inline TensorPtr matmul(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
  detail::require_2d(a, "matmul");
  detail::require_2d(b, "matmul");
  const int m = a->dim(0), k = a->dim(1), k2 = b->dim(0), n = b->dim(1);
  if (k != k2)
    throw std::invalid_argument("matmul: inner dimensions differ: " + shape_str(a->shape) + " vs " +
                                shape_str(b->shape));
  auto out = Tensor::make({m, n});
  out->needs_grad = a->needs_grad || b->needs_grad;
  detail::gemm_acc(a->values.data(), m, k, b->values.data(), n, out->values.data());
  tape.record(out, [a, b, out, m, k, n] {
    if (a->needs_grad) {
      a->ensure_grad();
      auto bt = detail::transpose(b->values.data(), k, n);  // n x k -> used as [m x n]*[n x k]
      detail::gemm_acc(out->grad.data(), m, n, bt.data(), k, a->grad.data());
    }
    if (b->needs_grad) {
      b->ensure_grad();
      auto at = detail::transpose(a->values.data(), m, k);  // k x m
      detail::gemm_acc(at.data(), k, m, out->grad.data(), n, b->grad.data());
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// pointwise ops (binary kinds accept equal shapes or a scalar right operand)
// ---------------------------------------------------------------------------

namespace detail {

template <typename Fwd, typename BwdA, typename BwdB>
TensorPtr binary_pointwise(Tape& tape, const TensorPtr& a, const TensorPtr& b, const char* who, Fwd fwd,
                           BwdA bwd_a, BwdB bwd_b) {
  const bool scalar_b = b->numel() == 1 && a->shape != b->shape;
  if (!scalar_b) require_same_shape(a, b, who);
  auto out = Tensor::make(a->shape);
  out->needs_grad = a->needs_grad || b->needs_grad;
  const std::size_t n = a->values.size();
  for (std::size_t i = 0; i < n; ++i) out->values[i] = fwd(a->values[i], scalar_b ? b->values[0] : b->values[i]);
  tape.record(out, [a, b, out, n, scalar_b, bwd_a, bwd_b] {
    for (std::size_t i = 0; i < n; ++i) {
      const double av = a->values[i];
      const double bv = scalar_b ? b->values[0] : b->values[i];
      const double g = out->grad[i];
      if (a->needs_grad) {
        a->ensure_grad();
        a->grad[i] += bwd_a(g, av, bv);
      }
      if (b->needs_grad) {
        b->ensure_grad();
        b->grad[scalar_b ? 0 : i] += bwd_b(g, av, bv);
      }
    }
  });
  return out;
}

}  // namespace detail

inline TensorPtr add(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
  return detail::binary_pointwise(
      tape, a, b, "add", [](double x, double y) { return x + y; },
      [](double g, double, double) { return g; }, [](double g, double, double) { return g; });
}

inline TensorPtr sub(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
  return detail::binary_pointwise(
      tape, a, b, "sub", [](double x, double y) { return x - y; },
      [](double g, double, double) { return g; }, [](double g, double, double) { return -g; });
}

inline TensorPtr mul(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
  return detail::binary_pointwise(
      tape, a, b, "mul", [](double x, double y) { return x * y; },
      [](double g, double, double y) { return g * y; }, [](double g, double x, double) { return g * x; });
}

inline TensorPtr divide(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
  return detail::binary_pointwise(
      tape, a, b, "divide", [](double x, double y) { return x / y; },
      [](double g, double, double y) { return g / y; },
      [](double g, double x, double y) { return -g * x / (y * y); });
}

inline TensorPtr relu(Tape& tape, const TensorPtr& a) {
  auto out = Tensor::make(a->shape);
  out->needs_grad = a->needs_grad;
  for (std::size_t i = 0; i < a->values.size(); ++i) out->values[i] = a->values[i] > 0.0 ? a->values[i] : 0.0;
  tape.record(out, [a, out] {
    if (!a->needs_grad) return;
    a->ensure_grad();
    for (std::size_t i = 0; i < a->values.size(); ++i)
      if (a->values[i] > 0.0) a->grad[i] += out->grad[i];
  });
  return out;
}

inline TensorPtr scale(Tape& tape, const TensorPtr& a, double c) {
  auto out = Tensor::make(a->shape);
  out->needs_grad = a->needs_grad;
  for (std::size_t i = 0; i < a->values.size(); ++i) out->values[i] = a->values[i] * c;
  tape.record(out, [a, out, c] {
    if (!a->needs_grad) return;
    a->ensure_grad();
    for (std::size_t i = 0; i < a->values.size(); ++i) a->grad[i] += out->grad[i] * c;
  });
  return out;
}

inline TensorPtr add_const(Tape& tape, const TensorPtr& a, double c) {
  auto out = Tensor::make(a->shape);
  out->needs_grad = a->needs_grad;
  for (std::size_t i = 0; i < a->values.size(); ++i) out->values[i] = a->values[i] + c;
  tape.record(out, [a, out] {
    if (!a->needs_grad) return;
    a->ensure_grad();
    for (std::size_t i = 0; i < a->values.size(); ++i) a->grad[i] += out->grad[i];
  });
  return out;
}

inline TensorPtr sqrt_elem(Tape& tape, const TensorPtr& a) {
  auto out = Tensor::make(a->shape);
  out->needs_grad = a->needs_grad;
  for (std::size_t i = 0; i < a->values.size(); ++i) {
    const double v = a->values[i];
    if (v < 0.0) throw std::domain_error("sqrt_elem: negative input " + std::to_string(v));
    out->values[i] = std::sqrt(v);
  }
  tape.record(out, [a, out] {
    if (!a->needs_grad) return;
    a->ensure_grad();
    for (std::size_t i = 0; i < a->values.size(); ++i) {
      const double denom = 2.0 * std::max(out->values[i], 1e-150);
      a->grad[i] += out->grad[i] / denom;
    }
  });
  return out;
}

// x[m x n] + v[n] broadcast over rows (bias add)
inline TensorPtr add_rowvec(Tape& tape, const TensorPtr& x, const TensorPtr& v) {
  detail::require_2d(x, "add_rowvec");
  const int m = x->dim(0), n = x->dim(1);
  if (v->numel() != n)
    throw std::invalid_argument("add_rowvec: vector length " + std::to_string(v->numel()) +
                                " does not match columns of " + shape_str(x->shape));
  auto out = Tensor::make(x->shape);
  out->needs_grad = x->needs_grad || v->needs_grad;
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < n; ++c) out->values[static_cast<std::size_t>(r) * n + c] = x->at(r, c) + v->values[c];
  tape.record(out, [x, v, out, m, n] {
    if (x->needs_grad) {
      x->ensure_grad();
      for (std::size_t i = 0; i < x->values.size(); ++i) x->grad[i] += out->grad[i];
    }
    if (v->needs_grad) {
      v->ensure_grad();
      for (int r = 0; r < m; ++r)
        for (int c = 0; c < n; ++c) v->grad[c] += out->grad[static_cast<std::size_t>(r) * n + c];
    }
  });
  return out;
}

// x[m x n] * v[n] broadcast over rows (per-feature scale)
inline TensorPtr mul_rowvec(Tape& tape, const TensorPtr& x, const TensorPtr& v) {
  detail::require_2d(x, "mul_rowvec");
  const int m = x->dim(0), n = x->dim(1);
  if (v->numel() != n)
    throw std::invalid_argument("mul_rowvec: vector length " + std::to_string(v->numel()) +
                                " does not match columns of " + shape_str(x->shape));
  auto out = Tensor::make(x->shape);
  out->needs_grad = x->needs_grad || v->needs_grad;
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < n; ++c) out->values[static_cast<std::size_t>(r) * n + c] = x->at(r, c) * v->values[c];
  tape.record(out, [x, v, out, m, n] {
    if (x->needs_grad) {
      x->ensure_grad();
      for (int r = 0; r < m; ++r)
        for (int c = 0; c < n; ++c)
          x->grad[static_cast<std::size_t>(r) * n + c] += out->grad[static_cast<std::size_t>(r) * n + c] * v->values[c];
    }
    if (v->needs_grad) {
      v->ensure_grad();
      for (int r = 0; r < m; ++r)
        for (int c = 0; c < n; ++c)
          v->grad[c] += out->grad[static_cast<std::size_t>(r) * n + c] * x->at(r, c);
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// concatenation along columns
// ---------------------------------------------------------------------------

inline TensorPtr concat_cols(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
  detail::require_2d(a, "concat_cols");
  detail::require_2d(b, "concat_cols");
  const int m = a->dim(0), p = a->dim(1), q = b->dim(1);
  if (b->dim(0) != m)
    throw std::invalid_argument("concat_cols: leading dimensions differ: " + shape_str(a->shape) + " vs " +
                                shape_str(b->shape));
  auto out = Tensor::make({m, p + q});
  out->needs_grad = a->needs_grad || b->needs_grad;
  for (int r = 0; r < m; ++r) {
    double* dst = out->values.data() + static_cast<std::size_t>(r) * (p + q);
    const double* pa = a->values.data() + static_cast<std::size_t>(r) * p;
    const double* pb = b->values.data() + static_cast<std::size_t>(r) * q;
    std::copy(pa, pa + p, dst);
    std::copy(pb, pb + q, dst + p);
  }
  tape.record(out, [a, b, out, m, p, q] {
    for (int r = 0; r < m; ++r) {
      const double* g = out->grad.data() + static_cast<std::size_t>(r) * (p + q);
      if (a->needs_grad) {
        a->ensure_grad();
        double* ga = a->grad.data() + static_cast<std::size_t>(r) * p;
        for (int c = 0; c < p; ++c) ga[c] += g[c];
      }
      if (b->needs_grad) {
        b->ensure_grad();
        double* gb = b->grad.data() + static_cast<std::size_t>(r) * q;
        for (int c = 0; c < q; ++c) gb[c] += g[p + c];
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// row gather / segment reductions
// ---------------------------------------------------------------------------

inline TensorPtr gather_rows(Tape& tape, const TensorPtr& x, std::vector<int> ids) {
  detail::require_2d(x, "gather_rows");
  const int n = x->dim(0), d = x->dim(1);
  for (int id : ids)
    if (id < 0 || id >= n)
      throw std::invalid_argument("gather_rows: row id " + std::to_string(id) + " outside [0," +
                                  std::to_string(n) + ")");
  const int m = static_cast<int>(ids.size());
  auto out = Tensor::make({m, d});
  out->needs_grad = x->needs_grad;
  for (int r = 0; r < m; ++r) {
    const double* src = x->values.data() + static_cast<std::size_t>(ids[static_cast<std::size_t>(r)]) * d;
    std::copy(src, src + d, out->values.data() + static_cast<std::size_t>(r) * d);
  }
  tape.record(out, [x, out, ids = std::move(ids), m, d] {
    if (!x->needs_grad) return;
    x->ensure_grad();
    for (int r = 0; r < m; ++r) {
      double* dst = x->grad.data() + static_cast<std::size_t>(ids[static_cast<std::size_t>(r)]) * d;
      const double* g = out->grad.data() + static_cast<std::size_t>(r) * d;
      for (int c = 0; c < d; ++c) dst[c] += g[c];
    }
  });
  return out;
}

namespace detail {

inline void check_segment_ids(const std::vector<int>& ids, int num_segments, int rows, const char* who) {
  if (rows != static_cast<int>(ids.size()))
    throw std::invalid_argument(std::string(who) + ": " + std::to_string(ids.size()) + " segment ids for " +
                                std::to_string(rows) + " rows");
  for (int id : ids)
    if (id < 0 || id >= num_segments)
      throw std::invalid_argument(std::string(who) + ": segment id " + std::to_string(id) + " outside [0," +
                                  std::to_string(num_segments) + ")");
}

}  // namespace detail

// Per-segment, per-column max. Gradient routes to the argmax row; ties go to
// the lowest row index. Empty segments are an error, never a silent -inf.
inline TensorPtr segment_max(Tape& tape, const TensorPtr& x, const std::vector<int>& segment_id,
                             int num_segments) {
  detail::require_2d(x, "segment_max");
  const int n = x->dim(0), d = x->dim(1);
  detail::check_segment_ids(segment_id, num_segments, n, "segment_max");
  auto out = Tensor::make({num_segments, d});
  out->needs_grad = x->needs_grad;
  std::vector<int> argmax(static_cast<std::size_t>(num_segments) * d, -1);
  for (int r = 0; r < n; ++r) {
    const int s = segment_id[static_cast<std::size_t>(r)];
    const double* row = x->values.data() + static_cast<std::size_t>(r) * d;
    double* orow = out->values.data() + static_cast<std::size_t>(s) * d;
    int* arow = argmax.data() + static_cast<std::size_t>(s) * d;
    for (int c = 0; c < d; ++c) {
      if (arow[c] < 0 || row[c] > orow[c]) {
        orow[c] = row[c];
        arow[c] = r;
      }
    }
  }
  for (int s = 0; s < num_segments; ++s)
    if (argmax[static_cast<std::size_t>(s) * d] < 0)
      throw std::invalid_argument("segment_max: segment " + std::to_string(s) + " is empty");
  tape.record(out, [x, out, argmax = std::move(argmax), num_segments, d] {
    if (!x->needs_grad) return;
    x->ensure_grad();
    for (int s = 0; s < num_segments; ++s)
      for (int c = 0; c < d; ++c) {
        const int r = argmax[static_cast<std::size_t>(s) * d + c];
        x->grad[static_cast<std::size_t>(r) * d + c] += out->grad[static_cast<std::size_t>(s) * d + c];
      }
  });
  return out;
}

inline TensorPtr segment_mean(Tape& tape, const TensorPtr& x, const std::vector<int>& segment_id,
                              int num_segments) {
  detail::require_2d(x, "segment_mean");
  const int n = x->dim(0), d = x->dim(1);
  detail::check_segment_ids(segment_id, num_segments, n, "segment_mean");
  std::vector<int> counts(static_cast<std::size_t>(num_segments), 0);
  for (int id : segment_id) ++counts[static_cast<std::size_t>(id)];
  for (int s = 0; s < num_segments; ++s)
    if (counts[static_cast<std::size_t>(s)] == 0)
      throw std::invalid_argument("segment_mean: segment " + std::to_string(s) + " is empty");
  auto out = Tensor::make({num_segments, d});
  out->needs_grad = x->needs_grad;
  for (int r = 0; r < n; ++r) {
    const int s = segment_id[static_cast<std::size_t>(r)];
    const double* row = x->values.data() + static_cast<std::size_t>(r) * d;
    double* orow = out->values.data() + static_cast<std::size_t>(s) * d;
    for (int c = 0; c < d; ++c) orow[c] += row[c];
  }
  for (int s = 0; s < num_segments; ++s) {
    const double inv = 1.0 / counts[static_cast<std::size_t>(s)];
    double* orow = out->values.data() + static_cast<std::size_t>(s) * d;
    for (int c = 0; c < d; ++c) orow[c] *= inv;
  }
  tape.record(out, [x, out, ids = segment_id, counts = std::move(counts), n, d] {
    if (!x->needs_grad) return;
    x->ensure_grad();
    for (int r = 0; r < n; ++r) {
      const int s = ids[static_cast<std::size_t>(r)];
      const double inv = 1.0 / counts[static_cast<std::size_t>(s)];
      const double* g = out->grad.data() + static_cast<std::size_t>(s) * d;
      double* dst = x->grad.data() + static_cast<std::size_t>(r) * d;
      for (int c = 0; c < d; ++c) dst[c] += g[c] * inv;
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

inline TensorPtr sum_all(Tape& tape, const TensorPtr& a) {
  auto out = Tensor::make({1});
  out->needs_grad = a->needs_grad;
  double s = 0.0;
  for (double v : a->values) s += v;
  out->values[0] = s;
  tape.record(out, [a, out] {
    if (!a->needs_grad) return;
    a->ensure_grad();
    const double g = out->grad[0];
    for (std::size_t i = 0; i < a->grad.size(); ++i) a->grad[i] += g;
  });
  return out;
}

inline TensorPtr mean_all(Tape& tape, const TensorPtr& a) {
  return scale(tape, sum_all(tape, a), 1.0 / static_cast<double>(a->numel()));
}

// ---------------------------------------------------------------------------
// convolution / pooling (valid padding)
// ---------------------------------------------------------------------------

inline TensorPtr conv2d(Tape& tape, const TensorPtr& input, const TensorPtr& kernel, int stride = 1) {
  if (input->ndim() != 4 || kernel->ndim() != 4)
    throw std::invalid_argument("conv2d: expected 4-d input and kernel, got " + shape_str(input->shape) +
                                " and " + shape_str(kernel->shape));
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  const int B = input->dim(0), C = input->dim(1), H = input->dim(2), W = input->dim(3);
  const int F = kernel->dim(0), KC = kernel->dim(1), kh = kernel->dim(2), kw = kernel->dim(3);
  if (KC != C)
    throw std::invalid_argument("conv2d: kernel channels " + std::to_string(KC) + " do not match input channels " +
                                std::to_string(C));
  if (kh > H || kw > W)
    throw std::invalid_argument("conv2d: kernel " + shape_str(kernel->shape) + " larger than input " +
                                shape_str(input->shape));
  const int OH = (H - kh) / stride + 1;
  const int OW = (W - kw) / stride + 1;
  const int patch = C * kh * kw;
  auto out = Tensor::make({B, F, OH, OW});
  out->needs_grad = input->needs_grad || kernel->needs_grad;

  // kernel as [F x patch], transposed once for the forward gemm
  auto kt = detail::transpose(kernel->values.data(), F, patch);  // patch x F

  // im2col per sample; kept for the backward weight gradient
  auto cols = std::make_shared<std::vector<std::vector<double>>>(static_cast<std::size_t>(B));
  std::vector<double> prod(static_cast<std::size_t>(OH) * OW * F);
  for (int b = 0; b < B; ++b) {
    auto& P = (*cols)[static_cast<std::size_t>(b)];
    P.assign(static_cast<std::size_t>(OH) * OW * patch, 0.0);
    const double* im = input->values.data() + static_cast<std::size_t>(b) * C * H * W;
    std::size_t p = 0;
    for (int oh = 0; oh < OH; ++oh)
      for (int ow = 0; ow < OW; ++ow) {
        double* dst = P.data() + p * patch;
        ++p;
        for (int c = 0; c < C; ++c) {
          const double* ch = im + static_cast<std::size_t>(c) * H * W;
          for (int i = 0; i < kh; ++i) {
            const double* src = ch + static_cast<std::size_t>(oh * stride + i) * W + ow * stride;
            std::copy(src, src + kw, dst);
            dst += kw;
          }
        }
      }
    std::fill(prod.begin(), prod.end(), 0.0);
    detail::gemm_acc(P.data(), OH * OW, patch, kt.data(), F, prod.data());
    double* ob = out->values.data() + static_cast<std::size_t>(b) * F * OH * OW;
    for (int q = 0; q < OH * OW; ++q)
      for (int f = 0; f < F; ++f) ob[static_cast<std::size_t>(f) * OH * OW + q] = prod[static_cast<std::size_t>(q) * F + f];
  }

  tape.record(out, [input, kernel, out, cols, B, C, H, W, F, kh, kw, OH, OW, patch, stride] {
    std::vector<double> G(static_cast<std::size_t>(OH) * OW * F);
    std::vector<double> dP;
    for (int b = 0; b < B; ++b) {
      const double* gb = out->grad.data() + static_cast<std::size_t>(b) * F * OH * OW;
      for (int q = 0; q < OH * OW; ++q)
        for (int f = 0; f < F; ++f) G[static_cast<std::size_t>(q) * F + f] = gb[static_cast<std::size_t>(f) * OH * OW + q];
      const auto& P = (*cols)[static_cast<std::size_t>(b)];
      if (kernel->needs_grad) {
        kernel->ensure_grad();
        auto gt = detail::transpose(G.data(), OH * OW, F);  // F x (OH*OW)
        detail::gemm_acc(gt.data(), F, OH * OW, P.data(), patch, kernel->grad.data());
      }
      if (input->needs_grad) {
        input->ensure_grad();
        dP.assign(static_cast<std::size_t>(OH) * OW * patch, 0.0);
        detail::gemm_acc(G.data(), OH * OW, F, kernel->values.data(), patch, dP.data());
        double* gim = input->grad.data() + static_cast<std::size_t>(b) * C * H * W;
        std::size_t p = 0;
        for (int oh = 0; oh < OH; ++oh)
          for (int ow = 0; ow < OW; ++ow) {
            const double* src = dP.data() + p * patch;
            ++p;
            for (int c = 0; c < C; ++c) {
              double* ch = gim + static_cast<std::size_t>(c) * H * W;
              for (int i = 0; i < kh; ++i) {
                double* dst = ch + static_cast<std::size_t>(oh * stride + i) * W + ow * stride;
                for (int j = 0; j < kw; ++j) dst[j] += src[j];
                src += kw;
              }
            }
          }
      }
    }
  });
  return out;
}

inline TensorPtr maxpool2d(Tape& tape, const TensorPtr& input, int window) {
  if (input->ndim() != 4)
    throw std::invalid_argument("maxpool2d: expected 4-d input, got " + shape_str(input->shape));
  if (window < 1) throw std::invalid_argument("maxpool2d: window must be >= 1");
  const int B = input->dim(0), C = input->dim(1), H = input->dim(2), W = input->dim(3);
  if (H % window != 0 || W % window != 0)
    throw std::invalid_argument("maxpool2d: input " + shape_str(input->shape) + " not divisible by window " +
                                std::to_string(window));
  const int OH = H / window, OW = W / window;
  auto out = Tensor::make({B, C, OH, OW});
  out->needs_grad = input->needs_grad;
  std::vector<int> argmax(out->values.size());
  std::size_t o = 0;
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const double* plane = input->values.data() + (static_cast<std::size_t>(b) * C + c) * H * W;
      for (int oh = 0; oh < OH; ++oh)
        for (int ow = 0; ow < OW; ++ow) {
          int best = oh * window * W + ow * window;
          double bv = plane[best];
          for (int i = 0; i < window; ++i)
            for (int j = 0; j < window; ++j) {
              const int idx = (oh * window + i) * W + ow * window + j;
              if (plane[idx] > bv) {
                bv = plane[idx];
                best = idx;
              }
            }
          out->values[o] = bv;
          argmax[o] = static_cast<int>((static_cast<std::size_t>(b) * C + c) * H * W) + best;
          ++o;
        }
    }
  tape.record(out, [input, out, argmax = std::move(argmax)] {
    if (!input->needs_grad) return;
    input->ensure_grad();
    for (std::size_t i = 0; i < out->grad.size(); ++i)
      input->grad[static_cast<std::size_t>(argmax[i])] += out->grad[i];
  });
  return out;
}

// [B x C x H x W] -> [B x C] spatial average (global average pool)
inline TensorPtr spatial_mean(Tape& tape, const TensorPtr& input) {
  if (input->ndim() != 4)
    throw std::invalid_argument("spatial_mean: expected 4-d input, got " + shape_str(input->shape));
  const int B = input->dim(0), C = input->dim(1), H = input->dim(2), W = input->dim(3);
  auto out = Tensor::make({B, C});
  out->needs_grad = input->needs_grad;
  const double inv = 1.0 / (static_cast<double>(H) * W);
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const double* plane = input->values.data() + (static_cast<std::size_t>(b) * C + c) * H * W;
      double s = 0.0;
      for (int i = 0; i < H * W; ++i) s += plane[i];
      out->values[static_cast<std::size_t>(b) * C + c] = s * inv;
    }
  tape.record(out, [input, out, B, C, H, W, inv] {
    if (!input->needs_grad) return;
    input->ensure_grad();
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c) {
        const double g = out->grad[static_cast<std::size_t>(b) * C + c] * inv;
        double* plane = input->grad.data() + (static_cast<std::size_t>(b) * C + c) * H * W;
        for (int i = 0; i < H * W; ++i) plane[i] += g;
      }
  });
  return out;
}

// ---------------------------------------------------------------------------
// losses / similarity
// ---------------------------------------------------------------------------

// Mean over the batch of -log softmax(logits)[label], log-sum-exp stabilized.
inline TensorPtr softmax_cross_entropy(Tape& tape, const TensorPtr& logits, const std::vector<int>& labels) {
  detail::require_2d(logits, "softmax_cross_entropy");
  const int B = logits->dim(0), C = logits->dim(1);
  if (static_cast<int>(labels.size()) != B)
    throw std::invalid_argument("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for batch " +
                                std::to_string(B));
  for (int y : labels)
    if (y < 0 || y >= C)
      throw std::invalid_argument("softmax_cross_entropy: label " + std::to_string(y) + " outside [0," +
                                  std::to_string(C) + ")");
  auto out = Tensor::make({1});
  out->needs_grad = logits->needs_grad;
  auto softmax = std::make_shared<std::vector<double>>(logits->values.size());
  double loss = 0.0;
  for (int r = 0; r < B; ++r) {
    const double* row = logits->values.data() + static_cast<std::size_t>(r) * C;
    double m = row[0];
    for (int c = 1; c < C; ++c) m = std::max(m, row[c]);
    double z = 0.0;
    for (int c = 0; c < C; ++c) z += std::exp(row[c] - m);
    const double lse = m + std::log(z);
    loss += lse - row[labels[static_cast<std::size_t>(r)]];
    double* srow = softmax->data() + static_cast<std::size_t>(r) * C;
    for (int c = 0; c < C; ++c) srow[c] = std::exp(row[c] - lse);
  }
  out->values[0] = loss / B;
  tape.record(out, [logits, out, softmax, labels, B, C] {
    if (!logits->needs_grad) return;
    logits->ensure_grad();
    const double g = out->grad[0] / B;
    for (int r = 0; r < B; ++r) {
      const double* srow = softmax->data() + static_cast<std::size_t>(r) * C;
      double* grow = logits->grad.data() + static_cast<std::size_t>(r) * C;
      for (int c = 0; c < C; ++c) grow[c] += g * srow[c];
      grow[labels[static_cast<std::size_t>(r)]] -= g;
    }
  });
  return out;
}

namespace detail {
inline constexpr double kCosEps = 1e-12;
}

// S[i][j] = a_i . b_j / ((|a_i| + eps)(|b_j| + eps)); eps guards zero rows.
inline TensorPtr cosine_similarity_matrix(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
  detail::require_2d(a, "cosine_similarity_matrix");
  detail::require_2d(b, "cosine_similarity_matrix");
  if (a->dim(1) != b->dim(1))
    throw std::invalid_argument("cosine_similarity_matrix: feature widths differ: " + shape_str(a->shape) +
                                " vs " + shape_str(b->shape));
  constexpr double kEps = detail::kCosEps;
  const int N = a->dim(0), M = b->dim(0), d = a->dim(1);
  auto out = Tensor::make({N, M});
  out->needs_grad = a->needs_grad || b->needs_grad;
  auto na = std::make_shared<std::vector<double>>(static_cast<std::size_t>(N));
  auto nb = std::make_shared<std::vector<double>>(static_cast<std::size_t>(M));
  for (int i = 0; i < N; ++i) {
    const double* row = a->values.data() + static_cast<std::size_t>(i) * d;
    double s = 0.0;
    for (int c = 0; c < d; ++c) s += row[c] * row[c];
    (*na)[static_cast<std::size_t>(i)] = std::sqrt(s);
  }
  for (int j = 0; j < M; ++j) {
    const double* row = b->values.data() + static_cast<std::size_t>(j) * d;
    double s = 0.0;
    for (int c = 0; c < d; ++c) s += row[c] * row[c];
    (*nb)[static_cast<std::size_t>(j)] = std::sqrt(s);
  }
  for (int i = 0; i < N; ++i) {
    const double* ra = a->values.data() + static_cast<std::size_t>(i) * d;
    for (int j = 0; j < M; ++j) {
      const double* rb = b->values.data() + static_cast<std::size_t>(j) * d;
      double dot = 0.0;
      for (int c = 0; c < d; ++c) dot += ra[c] * rb[c];
      out->at(i, j) = dot / (((*na)[static_cast<std::size_t>(i)] + kEps) * ((*nb)[static_cast<std::size_t>(j)] + kEps));
    }
  }
  tape.record(out, [a, b, out, na, nb, N, M, d] {
    // dS_ij/da_i = b_j / (na nb) - S_ij * a_i / (na |a_i|), na = |a_i| + eps
    constexpr double kEps = detail::kCosEps;
    for (int i = 0; i < N; ++i) {
      const double nai = (*na)[static_cast<std::size_t>(i)] + kEps;
      const double* ra = a->values.data() + static_cast<std::size_t>(i) * d;
      for (int j = 0; j < M; ++j) {
        const double g = out->grad[static_cast<std::size_t>(i) * M + j];
        if (g == 0.0) continue;
        const double nbj = (*nb)[static_cast<std::size_t>(j)] + kEps;
        const double* rb = b->values.data() + static_cast<std::size_t>(j) * d;
        const double s = out->values[static_cast<std::size_t>(i) * M + j];
        if (a->needs_grad) {
          a->ensure_grad();
          double* ga = a->grad.data() + static_cast<std::size_t>(i) * d;
          const double raw = (*na)[static_cast<std::size_t>(i)];
          const double coef = raw > 0.0 ? s / (nai * raw) : 0.0;
          for (int c = 0; c < d; ++c) ga[c] += g * (rb[c] / (nai * nbj) - coef * ra[c]);
        }
        if (b->needs_grad) {
          b->ensure_grad();
          double* gb = b->grad.data() + static_cast<std::size_t>(j) * d;
          const double raw = (*nb)[static_cast<std::size_t>(j)];
          const double coef = raw > 0.0 ? s / (nbj * raw) : 0.0;
          for (int c = 0; c < d; ++c) gb[c] += g * (ra[c] / (nai * nbj) - coef * rb[c]);
        }
      }
    }
  });
  return out;
}

}  // namespace morpho
