#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "weylab/matrix.hpp"

namespace weylab {

/// Largest number of entries any constructed output may hold.
inline constexpr std::size_t kMaxElements = std::size_t{1} << 25;
/// Per-dimension cap for the dense SVD.
inline constexpr std::size_t kMaxSvdDim = 4096;
/// Relative cutoff below which a singular value does not count toward rank.
inline constexpr double kRankThreshold = 1e-8;

Matrix matmul(const Matrix& a, const Matrix& b);
/// aᵀ·b without materializing the transpose.
Matrix matmul_tn(const Matrix& a, const Matrix& b);
/// a·bᵀ without materializing the transpose.
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Matrix hadamard(const Matrix& a, const Matrix& b);

double frobenius_norm(const Matrix& m);
double max_abs(const Matrix& m);
double trace(const Matrix& m);

struct SpectralEstimate {
  double sigma1 = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
  /// Relative change |σₖ − σₖ₋₁| / σₖ at the final iteration.
  double residual = 0.0;
};

/// Estimates σ₁(w) by iterating v ← normalize(wᵀw v) from a seeded unit start
/// vector. The returned estimate is ‖w v‖ for a unit v, so it never exceeds
/// σ₁ beyond rounding. A zero matrix yields σ₁ = 0, converged.
SpectralEstimate power_iteration(const Matrix& w, std::size_t max_iters, double tol,
                                 std::uint64_t seed = 0);

struct SvdResult {
  Matrix u;                             ///< rows × k, orthonormal columns
  std::vector<double> singular_values;  ///< k values, nonincreasing
  Matrix v;                             ///< cols × k, orthonormal columns

  Matrix reconstruct() const;
};

/// Thin SVD (k = min(rows, cols)) by one-sided Jacobi.
SvdResult svd(const Matrix& w);
std::vector<double> singular_values(const Matrix& w);

/// Thin SVD of a·b through the inner dimension: returns inner-dim triplets
/// (the remaining singular values of the product are exactly zero). Avoids the
/// full-size decomposition when a·b is large but of low rank, as WqᵀWk is.
SvdResult svd_product(const Matrix& a, const Matrix& b);

/// Exact σ₁ via SVD.
double spectral_norm(const Matrix& w);

/// Count of σᵢ > rel·σ₁.
std::size_t numerical_rank(std::span<const double> singular_values, double rel = kRankThreshold);
std::size_t numerical_rank(const Matrix& m, double rel = kRankThreshold);

Matrix kron(const Matrix& a, const Matrix& b);
/// Stacks the columns of m into one column.
Matrix vec(const Matrix& m);
/// Inverse of vec for a rows × cols target.
Matrix unvec(const Matrix& v, std::size_t rows, std::size_t cols);
/// Permutation K with vec(Xᵀ) = K·vec(X) for every rows × cols X.
Matrix commutation_matrix(std::size_t rows, std::size_t cols);

/// Column-wise softmax with max subtraction.
Matrix softmax_columns(const Matrix& p);

/// σ_{i+j−1}(w1+w2) ≤ σᵢ(w1) + σⱼ(w2) + 1e-9 for every admissible (i, j).
bool weyl_check(const Matrix& w1, const Matrix& w2);

}  // namespace weylab
