#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "xlac/numerics/matrix.hpp"

namespace xlac {

// Every output element is accumulated over k in increasing order starting
// from zero, and the bias is added last. That is the naive triple loop's
// order, so results agree with it bit for bit (given -ffp-contract=off).
inline void affine_forward_into(const Matrix& x, const Matrix& w, std::span<const double> b,
                                Matrix& out) {
  if (x.cols() != w.rows() || b.size() != w.cols()) {
    fail(ErrorKind::shape, "affine_forward: input " + x.shape_string() + " vs weight " +
                               w.shape_string() + " (bias " + std::to_string(b.size()) + ")");
  }
  const std::size_t n = x.rows(), in = x.cols(), o = w.cols();
  if (out.rows() != n || out.cols() != o) out = Matrix(n, o);
  const double* wp = w.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    double* r = out.row(i).data();
    const double* xr = x.row(i).data();
    std::fill(r, r + o, 0.0);
    for (std::size_t k = 0; k < in; ++k) {
      const double a = xr[k];
      const double* wk = wp + k * o;
      for (std::size_t j = 0; j < o; ++j) r[j] += a * wk[j];
    }
    for (std::size_t j = 0; j < o; ++j) r[j] += b[j];
  }
}

/// out[i,j] = sum_k x[i,k] * w[k,j] + b[j]
inline Matrix affine_forward(const Matrix& x, const Matrix& w, std::span<const double> b) {
  Matrix out;
  affine_forward_into(x, w, b, out);
  return out;
}

inline Matrix relu(const Matrix& x) {
  Matrix y = x;
  for (double& v : y.data()) v = v > 0.0 ? v : 0.0;
  return y;
}

inline void relu_inplace(Matrix& x) {
  for (double& v : x.data()) v = v > 0.0 ? v : 0.0;
}

/// Gradient through relu given the forward output: grad * [output > 0].
inline void relu_backward_inplace(const Matrix& output, Matrix& grad) {
  if (output.rows() != grad.rows() || output.cols() != grad.cols())
    fail(ErrorKind::shape, "relu_backward: " + output.shape_string() + " vs " + grad.shape_string());
  auto o = output.data();
  auto g = grad.data();
  for (std::size_t i = 0; i < g.size(); ++i)
    if (!(o[i] > 0.0)) g[i] = 0.0;
}

inline Matrix softmax(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto z = logits.row(i);
    auto out = p.row(i);
    const double m = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (std::size_t j = 0; j < z.size(); ++j) sum += std::exp(z[j] - m);
    const double lse = m + std::log(sum);
    for (std::size_t j = 0; j < z.size(); ++j) out[j] = std::exp(z[j] - lse);
  }
  return p;
}

struct SoftmaxXent {
  double loss = 0.0;  // mean negative log-likelihood over the batch
  Matrix dlogits;     // (softmax - onehot) / batch
};

inline SoftmaxXent softmax_xent(const Matrix& logits, std::span<const std::uint32_t> labels) {
  if (labels.size() != logits.rows())
    fail(ErrorKind::shape, "softmax_xent: " + std::to_string(labels.size()) + " labels for " +
                               logits.shape_string() + " logits");
  const std::size_t n = logits.rows(), c = logits.cols();
  for (std::size_t i = 0; i < n; ++i)
    if (labels[i] >= c)
      fail(ErrorKind::data, "softmax_xent: label " + std::to_string(labels[i]) +
                                " out of range for " + std::to_string(c) + " classes");
  SoftmaxXent r;
  r.dlogits = Matrix(n, c);
  if (n == 0) return r;
  const double inv_n = 1.0 / static_cast<double>(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    auto z = logits.row(i);
    auto d = r.dlogits.row(i);
    const double m = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) sum += std::exp(z[j] - m);
    const double lse = m + std::log(sum);
    total += lse - z[labels[i]];
    for (std::size_t j = 0; j < c; ++j) d[j] = std::exp(z[j] - lse) * inv_n;
    d[labels[i]] -= inv_n;
  }
  r.loss = total * inv_n;
  return r;
}

/// out += a^T * b  (a: n x p, b: n x q, out: p x q)
inline void accumulate_at_b(const Matrix& a, const Matrix& b, Matrix& out) {
  if (a.rows() != b.rows() || out.rows() != a.cols() || out.cols() != b.cols())
    fail(ErrorKind::shape, "accumulate_at_b: " + a.shape_string() + "^T * " + b.shape_string() +
                               " into " + out.shape_string());
  const std::size_t n = a.rows(), p = a.cols(), q = b.cols();
  double* op = out.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* ar = a.row(i).data();
    const double* br = b.row(i).data();
    for (std::size_t k = 0; k < p; ++k) {
      const double s = ar[k];
      if (s == 0.0) continue;
      double* orow = op + k * q;
      for (std::size_t j = 0; j < q; ++j) orow[j] += s * br[j];
    }
  }
}

/// a * b^T using a pre-transposed copy of b so the inner loop is contiguous.
inline Matrix matmul_bt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols())
    fail(ErrorKind::shape, "matmul_bt: " + a.shape_string() + " * (" + b.shape_string() + ")^T");
  const Matrix bt = b.transposed();  // a.cols x b.rows
  const std::size_t n = a.rows(), k_dim = a.cols(), o = b.rows();
  Matrix out(n, o);
  for (std::size_t i = 0; i < n; ++i) {
    double* r = out.row(i).data();
    const double* ar = a.row(i).data();
    for (std::size_t k = 0; k < k_dim; ++k) {
      const double s = ar[k];
      if (s == 0.0) continue;
      const double* bk = bt.row(k).data();
      for (std::size_t j = 0; j < o; ++j) r[j] += s * bk[j];
    }
  }
  return out;
}

inline void accumulate_column_sums(const Matrix& m, std::span<double> out) {
  if (out.size() != m.cols()) fail(ErrorKind::shape, "column_sums: width mismatch");
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) out[j] += r[j];
  }
}

}  // namespace xlac
