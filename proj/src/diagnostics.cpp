#include "weylab/diagnostics.hpp"

#include <algorithm>
#include <cmath>

#include "weylab/error.hpp"
#include "weylab/linalg.hpp"
#include "weylab/random.hpp"

namespace weylab {

void require_column_stochastic(const Matrix& a, const char* context) {
  if (a.rows() != a.cols()) {
    throw ShapeError(std::string(context) + ": attention map must be square, got " +
                     a.shape_string());
  }
  a.require_finite(context);
  for (std::size_t c = 0; c < a.cols(); ++c) {
    double sum = 0.0;
    for (std::size_t r = 0; r < a.rows(); ++r) {
      if (a(r, c) < 0.0) {
        throw NumericError(std::string(context) + ": negative entry in column " +
                           std::to_string(c));
      }
      sum += a(r, c);
    }
    if (std::abs(sum - 1.0) > 1e-6) {
      throw NumericError(std::string(context) + ": column " + std::to_string(c) + " sums to " +
                         std::to_string(sum));
    }
  }
}

double attention_entropy(const Matrix& a) {
  require_column_stochastic(a, "attention_entropy");
  double h = 0.0;
  for (double p : a.data())
    if (p > 0.0) h -= p * std::log(p);
  return std::max(0.0, h / static_cast<double>(a.cols()));
}

std::vector<double> sec_profile(const Matrix& wq, const Matrix& wk) {
  if (wq.rows() != wk.rows() || wq.cols() != wk.cols()) {
    throw ShapeError("sec_index: wq " + wq.shape_string() + " and wk " + wk.shape_string() +
                     " differ");
  }
  const std::size_t dq = wq.rows();
  const auto sv = svd_product(wq.transposed(), wk).singular_values;
  const std::size_t keep = std::min(dq, sv.size());
  double total = 0.0;
  for (std::size_t i = 0; i < keep; ++i) total += sv[i] * sv[i];
  if (total == 0.0) throw NumericError("sec_index: WqᵀWk is zero, ratio undefined");
  std::vector<double> profile(dq, 1.0);
  double acc = 0.0;
  for (std::size_t i = 0; i < keep; ++i) {
    acc += sv[i] * sv[i];
    profile[i] = std::min(1.0, acc / total);
  }
  profile[dq - 1] = 1.0;
  return profile;
}

double sec_index(const Matrix& wq, const Matrix& wk, std::size_t s) {
  if (s < 1 || s > wq.rows()) {
    throw Error("sec_index: s=" + std::to_string(s) + " outside [1, d_q=" +
                std::to_string(wq.rows()) + "]");
  }
  return sec_profile(wq, wk)[s - 1];
}

std::size_t effective_rank(std::span<const double> sv, double mass) {
  double total = 0.0;
  for (double s : sv) total += s * s;
  if (total == 0.0) return 0;
  std::vector<double> sorted(sv.begin(), sv.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  double acc = 0.0;
  for (std::size_t k = 0; k < sorted.size(); ++k) {
    acc += sorted[k] * sorted[k];
    if (acc >= mass * total * (1.0 - 1e-12)) return k + 1;
  }
  return sorted.size();
}

std::string to_string(CollapseMode mode) {
  switch (mode) {
    case CollapseMode::normal: return "normal";
    case CollapseMode::benign: return "benign";
    case CollapseMode::malignant: return "malignant";
  }
  return "unknown";
}

std::size_t low_rank_threshold(std::size_t n) { return std::max<std::size_t>(2, (n + 19) / 20); }

CollapseVerdict classify_collapse(const Matrix& a) {
  CollapseVerdict v;
  v.entropy = attention_entropy(a);
  const std::size_t n = a.rows();
  const auto sv = singular_values(a);
  v.effective_rank = effective_rank(sv);
  double diag = 0.0;
  for (std::size_t i = 0; i < n; ++i) diag += a(i, i);
  v.diag_mass = diag / static_cast<double>(n);
  double total = 0.0, head = 0.0;
  for (std::size_t i = 0; i < sv.size(); ++i) {
    total += sv[i] * sv[i];
    if (i < kSmallS) head += sv[i] * sv[i];
  }
  v.sec_at_small_s = total > 0.0 ? head / total : 0.0;

  const bool collapsed = v.entropy < kCollapseEntropyFraction * std::log(static_cast<double>(n));
  if (!collapsed) {
    v.mode = CollapseMode::normal;
  } else if (v.effective_rank <= low_rank_threshold(n)) {
    v.mode = CollapseMode::malignant;
  } else {
    v.mode = CollapseMode::benign;
  }
  return v;
}

namespace {

double top_share(const std::vector<double>& sv, std::size_t s) {
  double total = 0.0, head = 0.0;
  for (std::size_t i = 0; i < sv.size(); ++i) {
    total += sv[i] * sv[i];
    if (i < s) head += sv[i] * sv[i];
  }
  return total > 0.0 ? head / total : 0.0;
}

// softmax over columns of (Xᵀ L) diag(s) (Rᵀ X) / √d_q
Matrix factored_map(const Matrix& x, const Matrix& left, const std::vector<double>& s,
                    const Matrix& right, double scale) {
  Matrix lx = matmul_tn(x, left);  // n × k
  const Matrix rx = matmul_tn(right, x);  // k × n
  for (std::size_t i = 0; i < lx.rows(); ++i)
    for (std::size_t k = 0; k < lx.cols(); ++k) lx(i, k) *= s[k] * scale;
  return softmax_columns(matmul(lx, rx));
}

Matrix leading_columns(const Matrix& m, std::size_t k) {
  Matrix out(m.rows(), k);
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < k; ++c) out(r, c) = m(r, c);
  return out;
}

}  // namespace

SimulatedModes simulate_attention_modes(std::size_t d, std::size_t d_q, std::size_t n,
                                        std::uint64_t seed) {
  if (d == 0 || d_q == 0 || n == 0) throw ShapeError("simulate_attention_modes: zero dimension");
  if (d_q > d) {
    throw ShapeError("simulate_attention_modes: d_q=" + std::to_string(d_q) + " exceeds d=" +
                     std::to_string(d));
  }
  Rng rng(seed);
  const Matrix wq = rng.gaussian(d_q, d);
  const Matrix wk = rng.gaussian(d_q, d);
  const Matrix x = rng.gaussian(d, n);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d_q));

  SimulatedModes out;
  {
    Matrix p = matmul_tn(matmul(wq, x), matmul(wk, x));
    p *= scale;
    out.normal = softmax_columns(p);
  }

  // W = WqᵀWk = U diag(s) Vᵀ with rank ≤ d_q.
  const SvdResult w = svd_product(wq.transposed(), wk);
  out.sec_normal = top_share(w.singular_values, kSmallS);

  const std::size_t keep = std::min<std::size_t>(3, w.singular_values.size());
  std::vector<double> boosted(w.singular_values.begin(), w.singular_values.begin() + keep);
  constexpr double kBoost[] = {3.0, 2.0, 1.0};
  for (std::size_t i = 0; i < keep; ++i) boosted[i] *= kBoost[i];
  out.malignant = factored_map(x, leading_columns(w.u, keep), boosted,
                               leading_columns(w.v, keep), scale);
  out.sec_malignant = top_share(boosted, kSmallS);

  out.benign = factored_map(x, w.u, w.singular_values, w.u, scale);
  out.sec_benign = out.sec_normal;
  return out;
}

BlockDiagnostics collect_block_diagnostics(const BlockParams& block, const Matrix& x,
                                           const Matrix& grad_x, const Matrix& a,
                                           std::size_t step, std::size_t block_index,
                                           SpectralBudget budget, std::uint64_t seed) {
  BlockDiagnostics out;
  out.step = step;
  out.block_index = block_index;
  std::uint64_t quantity = 0;
  auto sigma = [&](const Matrix& m) {
    return power_iteration(m, budget.max_iters, budget.tol,
                           derive_seed(seed, {block_index, quantity++}))
        .sigma1;
  };
  out.sigma_wq = sigma(block.wq);
  out.sigma_wk = sigma(block.wk);
  out.sigma_wv = sigma(block.wv);
  out.sigma_wo = sigma(block.wo);
  out.sigma_w1 = sigma(block.w1);
  out.sigma_w2 = sigma(block.w2);
  out.sigma_wqk = sigma(matmul_tn(block.wq, block.wk));
  out.sigma_wov = sigma(matmul(block.wo, block.wv));
  out.sigma_w21 = sigma(matmul(block.w2, block.w1));
  out.gamma1_norm = frobenius_norm(block.gamma1);
  out.gamma2_norm = frobenius_norm(block.gamma2);
  if (block.beta1) out.beta1_norm = frobenius_norm(*block.beta1);
  if (block.beta2) out.beta2_norm = frobenius_norm(*block.beta2);
  out.x_norm = frobenius_norm(x);
  out.grad_x_norm = frobenius_norm(grad_x);
  out.attn_entropy = attention_entropy(a);

  try {
    const auto profile = sec_profile(block.wq, block.wk);
    for (std::size_t s : kSecPoints)
      if (s <= profile.size()) out.sec[s] = profile[s - 1];
  } catch (const NumericError&) {
    // Zero WqᵀWk: SEC undefined, leave the map empty.
  }
  return out;
}

ExpectationReport expectation_checks(const Matrix& w, std::size_t samples, std::uint64_t seed) {
  if (w.rows() != w.cols()) {
    throw ShapeError("expectation_checks: W must be square, got " + w.shape_string());
  }
  if (samples < 1000) throw Error("expectation_checks: need at least 1000 samples");
  w.require_finite("expectation_checks");
  const double tol = 1e-12 * std::max(1.0, max_abs(w));
  for (std::size_t i = 0; i < w.rows(); ++i)
    for (std::size_t j = i + 1; j < w.cols(); ++j)
      if (std::abs(w(i, j) - w(j, i)) > tol) {
        throw Error("expectation_checks: W is not symmetric");
      }

  const std::size_t d = w.rows();
  Rng rng(seed);
  ExpectationReport r;
  r.trace = trace(w);
  double sum_q = 0, sum_q2 = 0, sum_c = 0, sum_c2 = 0;
  std::vector<double> x(d), xp(d), wxp(d), wx(d);
  for (std::size_t s = 0; s < samples; ++s) {
    for (auto& v : x) v = rng.normal();
    for (auto& v : xp) v = rng.normal();
    double q = 0.0, c = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      double row_x = 0.0, row_xp = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        row_x += w(i, j) * x[j];
        row_xp += w(i, j) * xp[j];
      }
      q += x[i] * row_x;
      c += x[i] * row_xp;
    }
    sum_q += q;
    sum_q2 += q * q;
    sum_c += c;
    sum_c2 += c * c;
  }
  const double n = static_cast<double>(samples);
  auto stderr_of = [n](double sum, double sum2) {
    const double mean = sum / n;
    const double var = std::max(0.0, (sum2 - n * mean * mean) / (n - 1.0));
    return std::sqrt(var / n);
  };
  r.diag_mean = sum_q / n;
  r.cross_mean = sum_c / n;
  r.diag_stderr = stderr_of(sum_q, sum_q2);
  r.cross_stderr = stderr_of(sum_c, sum_c2);
  r.diag_pass = std::abs(r.diag_mean - r.trace) <= 4.0 * r.diag_stderr;
  r.cross_pass = std::abs(r.cross_mean) <= 4.0 * r.cross_stderr;
  return r;
}

}  // namespace weylab
