#pragma once

#include <cstddef>

#include "weylab/matrix.hpp"

namespace weylab {

/// Dense Jacobians are only assembled when every dimension is at most this.
inline constexpr std::size_t kMaxJacobianDim = 8;

/// Single-head attention weights.
///   wq, wk: d_q × d     wv: d_v × d     wo: d × d_v
struct AttentionParams {
  Matrix wq;
  Matrix wk;
  Matrix wv;
  Matrix wo;

  std::size_t d() const { return wq.cols(); }
  std::size_t d_q() const { return wq.rows(); }
  std::size_t d_v() const { return wv.rows(); }
  /// Throws ShapeError unless the four shapes are mutually consistent and
  /// d_q ≤ d.
  void validate() const;
  /// d_q == d is accepted but sits outside the low-rank regime (d_q < d).
  bool full_head_dim() const { return d_q() == d(); }
};

struct AttentionForward {
  Matrix p;    ///< n × n, XᵀWqᵀWkX
  Matrix a;    ///< n × n, column-stochastic softmax(P/√d_q)
  Matrix y;    ///< d_v × n, Wv X A
  Matrix out;  ///< d × n, Wo Y
};

/// Column softmax restricted to rows i ≤ j in column j, so output column j
/// only draws on tokens 0..j. Masked entries are exactly zero.
Matrix softmax_columns_causal(const Matrix& p);

/// x is d × n (one token per column).
AttentionForward attn_forward(const Matrix& x, const AttentionParams& params);

// Jacobians use the column-stacking vec convention throughout.

/// ∂vec(P)/∂vec(WqᵀWk) = Xᵀ ⊗ Xᵀ, shape n² × d².
Matrix jacobian_p_wrt_wqwk(const Matrix& x);

/// ∂vec(P)/∂vec(X) = (XᵀWkᵀWq ⊗ Iₙ)K + (Iₙ ⊗ XᵀWqᵀWk), shape n² × dn,
/// K the (d, n) commutation matrix.
Matrix jacobian_p_wrt_x(const Matrix& x, const Matrix& wq, const Matrix& wk);

/// ∂vec(P)/∂vec(Wqᵀ) = (WkX)ᵀ ⊗ Xᵀ, shape n² × d·d_q. Note the derivative is
/// taken with respect to the *transposed* query weight (d × d_q layout).
Matrix jacobian_p_wrt_wq(const Matrix& x, const Matrix& wk);

/// ∂vec(P)/∂vec(Wk) = Xᵀ ⊗ (WqX)ᵀ, shape n² × d_q·d.
Matrix jacobian_p_wrt_wk(const Matrix& x, const Matrix& wq);

/// diag(a) − a aᵀ for one softmax column (unscaled by 1/√d_q).
Matrix softmax_jacobian_column(const Matrix& a_col);

/// blockdiag over columns of softmax_jacobian_column, shape n² × n².
Matrix softmax_jacobian_blocks(const Matrix& a);

/// Full ∂vec(Y)/∂vec(X) for Y = Wv X softmax(XᵀWqᵀWkX/√d_q):
///   (Aᵀ ⊗ Wv) + (Iₙ ⊗ WvX)(J/√d_q)[∂vec(P)/∂vec(X)], shape d_v·n × d·n.
Matrix jacobian_y_wrt_x(const Matrix& x, const AttentionParams& params);

/// The second term of jacobian_y_wrt_x alone, i.e. the part routed through
/// the softmax Jacobian. Vanishes as A approaches a permutation matrix.
Matrix jacobian_y_wrt_x_softmax_term(const Matrix& x, const AttentionParams& params);

}  // namespace weylab
