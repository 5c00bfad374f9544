#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>

#include "weylab/matrix.hpp"

namespace weylab {

/// How σ̂₁ and δ̂₁ are measured inside the truncation rule.
enum class SpectralMode { power, exact };

struct OptimizerConfig {
  double base_lr = 1e-3;  ///< peak of the cosine schedule
  double min_lr = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double epsilon = 1e-8;  ///< added to V̂ under the square root
  double weight_decay = 0.0;
  /// Per-step bound on relative spectral growth; infinity disables truncation.
  double tau = 0.004;
  /// Optional override for vector (norm) parameters; NaN means "use tau".
  double tau_vector = std::numeric_limits<double>::quiet_NaN();
  std::size_t power_iters = 3;
  double power_tol = 1e-6;
  SpectralMode spectral_mode = SpectralMode::power;

  /// Throws ConfigError naming the first invalid field.
  void validate() const;
  double tau_for(bool is_vector) const;
};

/// Matrices are the weights; vectors are norm gains/biases (d × 1), whose σ₁
/// is taken as max|entry| of the induced diagonal matrix.
enum class ParamKind { matrix, vector };

struct ParamState {
  Matrix m;  ///< first moment
  Matrix v;  ///< second moment
  std::size_t step = 0;
  double last_effective_lr = 0.0;
  std::size_t truncation_count = 0;
  std::size_t degenerate_count = 0;
};

ParamState make_state(const Matrix& param);

struct StepResult {
  double scheduled_lr = 0.0;
  double effective_lr = 0.0;
  double sigma_hat = 0.0;  ///< σ₁(W_{t−1}); 0 when not measured
  double delta_hat = 0.0;  ///< σ₁(M̂ ⊘ √(V̂+ε)); 0 when not measured
  bool truncated = false;
  bool degenerate = false;  ///< σ̂₁ = 0 < δ̂₁, truncation skipped
};

/// α, or τσ̂/δ̂ when α·δ̂/σ̂ exceeds τ. Degenerate σ̂ = 0 returns α.
double truncated_lr(double scheduled_lr, double sigma_hat, double delta_hat, double tau);

/// One AdamW² update in place. `stream_seed` identifies the parameter; power
/// iteration start vectors are drawn from (stream_seed, step).
StepResult adamw2_step(Matrix& param, const Matrix& grad, ParamState& state,
                       const OptimizerConfig& cfg, double scheduled_lr,
                       ParamKind kind = ParamKind::matrix, std::uint64_t stream_seed = 0);

/// Plain AdamW with the same ε placement; the τ = ∞ reference.
void adamw_step(Matrix& param, const Matrix& grad, ParamState& state, const OptimizerConfig& cfg,
                double lr);

/// lr_min + ½(lr_max − lr_min)(1 + cos(π·step/total)). total = 0 yields lr_max.
double cosine_schedule(std::size_t step, std::size_t total_steps, double lr_max, double lr_min);

}  // namespace weylab
