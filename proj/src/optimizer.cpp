#include "weylab/optimizer.hpp"

#include <cmath>
#include <numbers>

#include "weylab/error.hpp"
#include "weylab/linalg.hpp"
#include "weylab/random.hpp"

namespace weylab {

void OptimizerConfig::validate() const {
  auto require = [](bool ok, const char* key, const char* what) {
    if (!ok) throw ConfigError(key, what);
  };
  require(std::isfinite(base_lr) && base_lr > 0.0, "optimizer.base_lr", "must be positive");
  require(std::isfinite(min_lr) && min_lr >= 0.0 && min_lr <= base_lr, "optimizer.min_lr",
          "must lie in [0, base_lr]");
  require(beta1 >= 0.0 && beta1 < 1.0, "optimizer.beta1", "must lie in [0, 1)");
  require(beta2 >= 0.0 && beta2 < 1.0, "optimizer.beta2", "must lie in [0, 1)");
  require(std::isfinite(epsilon) && epsilon > 0.0, "optimizer.epsilon", "must be positive");
  require(std::isfinite(weight_decay) && weight_decay >= 0.0, "optimizer.weight_decay",
          "must be nonnegative");
  require(tau > 0.0, "optimizer.tau", "must be positive or inf");
  require(std::isnan(tau_vector) || tau_vector > 0.0, "optimizer.tau_vector",
          "must be positive or inf");
  require(power_iters >= 1, "optimizer.power_iters", "must be at least 1");
  require(std::isfinite(power_tol) && power_tol > 0.0, "optimizer.power_tol", "must be positive");
}

double OptimizerConfig::tau_for(bool is_vector) const {
  return is_vector && !std::isnan(tau_vector) ? tau_vector : tau;
}

ParamState make_state(const Matrix& param) {
  ParamState s;
  s.m = Matrix(param.rows(), param.cols(), 0.0);
  s.v = Matrix(param.rows(), param.cols(), 0.0);
  return s;
}

double truncated_lr(double scheduled_lr, double sigma_hat, double delta_hat, double tau) {
  if (std::isinf(tau) || delta_hat <= 0.0 || sigma_hat <= 0.0) return scheduled_lr;
  if (scheduled_lr * delta_hat > tau * sigma_hat) return tau * sigma_hat / delta_hat;
  return scheduled_lr;
}

namespace {

void check_step_inputs(const Matrix& param, const Matrix& grad, const ParamState& state) {
  if (param.rows() != grad.rows() || param.cols() != grad.cols()) {
    throw ShapeError("optimizer: param " + param.shape_string() + " vs grad " +
                     grad.shape_string());
  }
  if (state.m.rows() != param.rows() || state.m.cols() != param.cols() ||
      state.v.rows() != param.rows() || state.v.cols() != param.cols()) {
    throw ShapeError("optimizer: state does not match param " + param.shape_string());
  }
  grad.require_finite("optimizer gradient");
}

double measure(const Matrix& w, ParamKind kind, const OptimizerConfig& cfg, std::uint64_t seed) {
  if (kind == ParamKind::vector) return max_abs(w);
  if (cfg.spectral_mode == SpectralMode::exact) return spectral_norm(w);
  return power_iteration(w, cfg.power_iters, cfg.power_tol, seed).sigma1;
}

}  // namespace

StepResult adamw2_step(Matrix& param, const Matrix& grad, ParamState& state,
                       const OptimizerConfig& cfg, double scheduled_lr, ParamKind kind,
                       std::uint64_t stream_seed) {
  check_step_inputs(param, grad, state);
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);

  Matrix direction(param.rows(), param.cols());
  auto m = state.m.data();
  auto v = state.v.data();
  auto g = grad.data();
  auto dir = direction.data();
  for (std::size_t i = 0; i < g.size(); ++i) {
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
    dir[i] = (m[i] / bc1) / std::sqrt(v[i] / bc2 + cfg.epsilon);
  }

  StepResult r;
  r.scheduled_lr = scheduled_lr;
  r.effective_lr = scheduled_lr;
  const double tau = cfg.tau_for(kind == ParamKind::vector);
  if (!std::isinf(tau)) {
    r.sigma_hat = measure(param, kind, cfg, derive_seed(stream_seed, {state.step, 0}));
    r.delta_hat = measure(direction, kind, cfg, derive_seed(stream_seed, {state.step, 1}));
    if (r.sigma_hat == 0.0 && r.delta_hat > 0.0) {
      r.degenerate = true;
      state.degenerate_count += 1;
    } else {
      r.effective_lr = truncated_lr(scheduled_lr, r.sigma_hat, r.delta_hat, tau);
      r.truncated = r.effective_lr < scheduled_lr;
      if (r.truncated) state.truncation_count += 1;
    }
  }

  // The reassigned α drives both the step and the decay.
  const double lr = r.effective_lr;
  auto w = param.data();
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = w[i] - lr * dir[i] - lr * cfg.weight_decay * w[i];
  param.require_finite("adamw2_step result");
  state.last_effective_lr = lr;
  return r;
}

void adamw_step(Matrix& param, const Matrix& grad, ParamState& state, const OptimizerConfig& cfg,
                double lr) {
  check_step_inputs(param, grad, state);
  state.step += 1;
  const double t = static_cast<double>(state.step);
  for (std::size_t r = 0; r < param.rows(); ++r) {
    for (std::size_t c = 0; c < param.cols(); ++c) {
      const double gi = grad(r, c);
      double& mi = state.m(r, c);
      double& vi = state.v(r, c);
      mi = cfg.beta1 * mi + (1.0 - cfg.beta1) * gi;
      vi = cfg.beta2 * vi + (1.0 - cfg.beta2) * gi * gi;
      const double m_hat = mi / (1.0 - std::pow(cfg.beta1, t));
      const double v_hat = vi / (1.0 - std::pow(cfg.beta2, t));
      const double w = param(r, c);
      param(r, c) = w - lr * (m_hat / std::sqrt(v_hat + cfg.epsilon)) - lr * cfg.weight_decay * w;
    }
  }
  param.require_finite("adamw_step result");
  state.last_effective_lr = lr;
}

double cosine_schedule(std::size_t step, std::size_t total_steps, double lr_max, double lr_min) {
  if (total_steps == 0 || step == 0) return lr_max;
  if (step >= total_steps) return lr_min;
  const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * frac));
}

}  // namespace weylab
