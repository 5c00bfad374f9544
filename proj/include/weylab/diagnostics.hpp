#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <optional>
#include <string>
#include <vector>

#include "weylab/block.hpp"
#include "weylab/matrix.hpp"

namespace weylab {

/// Entropy below this fraction of ln n counts as collapsed.
inline constexpr double kCollapseEntropyFraction = 0.1;
/// Effective rank is the smallest k whose top-k squared singular values
/// hold this share of the total.
inline constexpr double kEffectiveRankMass = 0.99;
/// Window used for CollapseVerdict::sec_at_small_s.
inline constexpr std::size_t kSmallS = 3;
/// SEC sample points recorded per block.
inline constexpr std::size_t kSecPoints[] = {1, 2, 4, 8};

/// Column sums must be within 1e-6 of one and entries nonnegative.
void require_column_stochastic(const Matrix& a, const char* context);

/// E(A) = −(1/n) Σⱼ Σᵢ Aᵢⱼ ln Aᵢⱼ, in nats, with 0·ln 0 = 0.
double attention_entropy(const Matrix& a);

/// Share of squared spectral energy of WqᵀWk held by its top s singular
/// values, normalized over the top d_q. Throws NumericError when the
/// product is zero.
double sec_index(const Matrix& wq, const Matrix& wk, std::size_t s);
/// sec_index for every s in [1, d_q], from a single decomposition.
std::vector<double> sec_profile(const Matrix& wq, const Matrix& wk);

std::size_t effective_rank(std::span<const double> singular_values,
                           double mass = kEffectiveRankMass);

enum class CollapseMode { normal, benign, malignant };
std::string to_string(CollapseMode mode);

struct CollapseVerdict {
  CollapseMode mode = CollapseMode::normal;
  double entropy = 0.0;
  std::size_t effective_rank = 0;
  double diag_mass = 0.0;       ///< mean of diag(A)
  double sec_at_small_s = 0.0;  ///< top-kSmallS squared singular share of A itself
};

/// max(2, ⌈n/20⌉).
std::size_t low_rank_threshold(std::size_t n);

/// Collapsed iff entropy < 0.1·ln n; a collapsed map is malignant when its
/// effective rank is at most low_rank_threshold(n), benign otherwise.
CollapseVerdict classify_collapse(const Matrix& a);

struct SimulatedModes {
  Matrix normal;     ///< from W = WqᵀWk
  Matrix malignant;  ///< top three singular values scaled by (3, 2, 1), rest zeroed
  Matrix benign;     ///< W resymmetrized as UΣUᵀ
  double sec_normal = 0.0;     ///< SEC(d_q, 3) of each constructed W
  double sec_malignant = 0.0;
  double sec_benign = 0.0;
};

/// Gaussian Wq, Wk (d_q × d) and X (d × n), then the three constructions;
/// maps are softmax over columns of XᵀWX/√d_q.
SimulatedModes simulate_attention_modes(std::size_t d, std::size_t d_q, std::size_t n,
                                        std::uint64_t seed);

struct SpectralBudget {
  std::size_t max_iters = 3;
  double tol = 1e-6;
};

/// One block's watched quantities.
struct BlockDiagnostics {
  std::size_t step = 0;
  std::size_t block_index = 0;
  double sigma_wq = 0, sigma_wk = 0, sigma_wv = 0, sigma_wo = 0, sigma_w1 = 0, sigma_w2 = 0;
  double sigma_wqk = 0;  ///< σ₁(WqᵀWk)
  double sigma_wov = 0;  ///< σ₁(WoWv)
  double sigma_w21 = 0;  ///< σ₁(W₂W₁)
  double gamma1_norm = 0, gamma2_norm = 0;
  std::optional<double> beta1_norm, beta2_norm;
  double x_norm = 0, grad_x_norm = 0;
  double attn_entropy = 0;
  /// s → SEC(d_q, s) for s in {1,2,4,8} ∩ [1, d_q]; empty when WqᵀWk = 0.
  std::map<std::size_t, double> sec;
};

/// Spectral norms by power iteration under `budget`, started from vectors
/// seeded by (seed, block_index, quantity); SEC by exact SVD.
BlockDiagnostics collect_block_diagnostics(const BlockParams& block, const Matrix& x,
                                           const Matrix& grad_x, const Matrix& a,
                                           std::size_t step, std::size_t block_index,
                                           SpectralBudget budget = {}, std::uint64_t seed = 0);

struct ExpectationReport {
  double trace = 0.0;
  double diag_mean = 0.0;   ///< mean of xᵀWx
  double diag_stderr = 0.0;
  double cross_mean = 0.0;  ///< mean of xᵀWx′, x and x′ independent
  double cross_stderr = 0.0;
  bool diag_pass = false;
  bool cross_pass = false;
  bool pass() const { return diag_pass && cross_pass; }
};

/// Monte-Carlo check of E[xᵀWx] = tr(W) and E[xᵀWx′] = 0 for standard
/// Gaussian x, x′; each passes when within 4 standard errors.
ExpectationReport expectation_checks(const Matrix& w, std::size_t samples, std::uint64_t seed);

}  // namespace weylab
