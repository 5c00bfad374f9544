#include "weylab/attention.hpp"

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <string>

#include "weylab/error.hpp"
#include "weylab/linalg.hpp"

namespace weylab {

namespace {

void require_jacobian_scale(const char* op, std::initializer_list<std::size_t> dims) {
  for (std::size_t d : dims) {
    if (d > kMaxJacobianDim) {
      throw SizeError(std::string(op) + ": dimension " + std::to_string(d) +
                      " exceeds the dense-Jacobian cap of " + std::to_string(kMaxJacobianDim));
    }
  }
}

void require_cols(const char* op, const Matrix& w, const Matrix& x) {
  if (w.cols() != x.rows()) {
    throw ShapeError(std::string(op) + ": weight " + w.shape_string() +
                     " does not act on input " + x.shape_string());
  }
}

}  // namespace

void AttentionParams::validate() const {
  if (wk.rows() != wq.rows() || wk.cols() != wq.cols()) {
    throw ShapeError("AttentionParams: wq " + wq.shape_string() + " and wk " + wk.shape_string() +
                     " differ");
  }
  if (wv.cols() != d()) {
    throw ShapeError("AttentionParams: wv " + wv.shape_string() + " must have d=" +
                     std::to_string(d()) + " columns");
  }
  if (wo.rows() != d() || wo.cols() != d_v()) {
    throw ShapeError("AttentionParams: wo " + wo.shape_string() + " must be " +
                     std::to_string(d()) + "x" + std::to_string(d_v()));
  }
  if (d_q() > d()) {
    throw ShapeError("AttentionParams: head dim d_q=" + std::to_string(d_q()) +
                     " exceeds model dim d=" + std::to_string(d()));
  }
}

AttentionForward attn_forward(const Matrix& x, const AttentionParams& params) {
  params.validate();
  require_cols("attn_forward", params.wq, x);
  AttentionForward f;
  const Matrix q = matmul(params.wq, x);
  const Matrix k = matmul(params.wk, x);
  f.p = matmul_tn(q, k);
  Matrix logits = f.p;
  logits *= 1.0 / std::sqrt(static_cast<double>(params.d_q()));
  f.a = softmax_columns(logits);
  f.y = matmul(matmul(params.wv, x), f.a);
  f.out = matmul(params.wo, f.y);
  return f;
}

Matrix jacobian_p_wrt_wqwk(const Matrix& x) {
  require_jacobian_scale("jacobian_p_wrt_wqwk", {x.rows(), x.cols()});
  const Matrix xt = x.transposed();
  return kron(xt, xt);
}

Matrix jacobian_p_wrt_x(const Matrix& x, const Matrix& wq, const Matrix& wk) {
  if (wq.rows() != wk.rows() || wq.cols() != wk.cols()) {
    throw ShapeError("jacobian_p_wrt_x: wq " + wq.shape_string() + " and wk " +
                     wk.shape_string() + " differ");
  }
  require_cols("jacobian_p_wrt_x", wq, x);
  const std::size_t d = x.rows(), n = x.cols();
  require_jacobian_scale("jacobian_p_wrt_x", {d, n, wq.rows()});
  const Matrix w = matmul_tn(wq, wk);                  // WqᵀWk, d × d
  const Matrix xt_wt = matmul_tn(x, w.transposed());   // XᵀWkᵀWq
  const Matrix xt_w = matmul_tn(x, w);                 // XᵀWqᵀWk
  const Matrix in = Matrix::identity(n);
  return matmul(kron(xt_wt, in), commutation_matrix(d, n)) + kron(in, xt_w);
}

Matrix jacobian_p_wrt_wq(const Matrix& x, const Matrix& wk) {
  require_cols("jacobian_p_wrt_wq", wk, x);
  require_jacobian_scale("jacobian_p_wrt_wq", {x.rows(), x.cols(), wk.rows()});
  return kron(matmul(wk, x).transposed(), x.transposed());
}

Matrix jacobian_p_wrt_wk(const Matrix& x, const Matrix& wq) {
  require_cols("jacobian_p_wrt_wk", wq, x);
  require_jacobian_scale("jacobian_p_wrt_wk", {x.rows(), x.cols(), wq.rows()});
  return kron(x.transposed(), matmul(wq, x).transposed());
}

Matrix softmax_jacobian_column(const Matrix& a_col) {
  if (a_col.cols() != 1) {
    throw ShapeError("softmax_jacobian_column: expected a column vector, got " +
                     a_col.shape_string());
  }
  const std::size_t n = a_col.rows();
  Matrix j(n, n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) j(r, c) = -a_col(r, 0) * a_col(c, 0);
  for (std::size_t r = 0; r < n; ++r) j(r, r) += a_col(r, 0);
  return j;
}

Matrix softmax_jacobian_blocks(const Matrix& a) {
  const std::size_t n = a.rows();
  if (a.cols() != n) throw ShapeError("softmax_jacobian_blocks: attention map must be square");
  require_jacobian_scale("softmax_jacobian_blocks", {n});
  Matrix j(n * n, n * n);
  for (std::size_t col = 0; col < n; ++col) {
    Matrix a_col(n, 1);
    for (std::size_t r = 0; r < n; ++r) a_col(r, 0) = a(r, col);
    const Matrix block = softmax_jacobian_column(a_col);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < n; ++c) j(col * n + r, col * n + c) = block(r, c);
  }
  return j;
}

Matrix jacobian_y_wrt_x_softmax_term(const Matrix& x, const AttentionParams& params) {
  params.validate();
  require_cols("jacobian_y_wrt_x", params.wq, x);
  const std::size_t n = x.cols();
  require_jacobian_scale("jacobian_y_wrt_x", {x.rows(), n, params.d_q(), params.d_v()});
  const AttentionForward f = attn_forward(x, params);
  Matrix j = softmax_jacobian_blocks(f.a);
  j *= 1.0 / std::sqrt(static_cast<double>(params.d_q()));
  const Matrix wvx = matmul(params.wv, x);
  return matmul(matmul(kron(Matrix::identity(n), wvx), j),
                jacobian_p_wrt_x(x, params.wq, params.wk));
}

Matrix jacobian_y_wrt_x(const Matrix& x, const AttentionParams& params) {
  Matrix second = jacobian_y_wrt_x_softmax_term(x, params);
  const AttentionForward f = attn_forward(x, params);
  return kron(f.a.transposed(), params.wv) + second;
}

}  // namespace weylab

namespace weylab {

Matrix softmax_columns_causal(const Matrix& p) {
  if (p.rows() != p.cols()) {
    throw ShapeError("softmax_columns_causal: expected square logits, got " + p.shape_string());
  }
  p.require_finite("softmax_columns_causal");
  Matrix a(p.rows(), p.cols(), 0.0);
  for (std::size_t c = 0; c < p.cols(); ++c) {
    double mx = p(0, c);
    for (std::size_t r = 1; r <= c; ++r) mx = std::max(mx, p(r, c));
    double sum = 0.0;
    for (std::size_t r = 0; r <= c; ++r) {
      a(r, c) = std::exp(p(r, c) - mx);
      sum += a(r, c);
    }
    for (std::size_t r = 0; r <= c; ++r) a(r, c) /= sum;
  }
  return a;
}

}  // namespace weylab
