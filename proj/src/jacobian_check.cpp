#include "weylab/jacobian_check.hpp"

#include <algorithm>
#include <cmath>

#include "weylab/attention.hpp"
#include "weylab/error.hpp"
#include "weylab/linalg.hpp"
#include "weylab/random.hpp"

namespace weylab::oracle {

Matrix finite_difference_jacobian(const MatrixFn& f, const Matrix& x, double step) {
  const Matrix f0 = f(x);
  Matrix jac(f0.size(), x.size());
  Matrix probe = x;
  // Walk vec(X) order: column-major over x.
  for (std::size_t c = 0; c < x.cols(); ++c) {
    for (std::size_t r = 0; r < x.rows(); ++r) {
      const std::size_t k = c * x.rows() + r;
      const double orig = probe(r, c);
      probe(r, c) = orig + step;
      const Matrix plus = vec(f(probe));
      probe(r, c) = orig - step;
      const Matrix minus = vec(f(probe));
      probe(r, c) = orig;
      for (std::size_t i = 0; i < jac.rows(); ++i)
        jac(i, k) = (plus(i, 0) - minus(i, 0)) / (2.0 * step);
    }
  }
  return jac;
}

double relative_error(const Matrix& analytic, const Matrix& numeric, double floor) {
  if (analytic.rows() != numeric.rows() || analytic.cols() != numeric.cols()) {
    throw ShapeError("relative_error: " + analytic.shape_string() + " vs " +
                     numeric.shape_string());
  }
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double a = analytic.data()[i], f = numeric.data()[i];
    if (std::max(std::abs(a), std::abs(f)) <= floor) continue;
    num = std::max(num, std::abs(a - f));
    den = std::max(den, std::abs(f));
  }
  if (num == 0.0) return 0.0;
  return den > 0.0 ? num / den : num / floor;
}

Fault parse_fault(const std::string& name) {
  if (name.empty() || name == "none") return Fault::none;
  if (name == "symmetric-commutation") return Fault::symmetric_commutation_term;
  if (name == "drop-softmax-term") return Fault::drop_softmax_term;
  throw Error("unknown fault '" + name + "'");
}

bool BatteryReport::all_pass() const {
  return std::all_of(identities.begin(), identities.end(),
                     [](const IdentityResult& r) { return r.pass; });
}

namespace {

Matrix p_of(const Matrix& x, const Matrix& w) { return matmul(matmul_tn(x, w), x); }

Matrix column_softmax_fd(const Matrix& p) { return softmax_columns(p); }

}  // namespace

BatteryReport run_jacobian_battery(std::uint64_t seed, std::size_t trials, Fault fault,
                                   double tolerance) {
  BatteryReport report;
  report.trials = trials;
  report.tolerance = tolerance;
  report.identities = {{"dP/dvec(WqT Wk)"}, {"dP/dX"},         {"dP/dvec(WqT)"},
                       {"dP/dvec(Wk)"},     {"softmax column"}, {"dY/dX"}};
  auto record = [&](std::size_t idx, const Matrix& analytic, const Matrix& numeric) {
    IdentityResult& r = report.identities[idx];
    const double err = relative_error(analytic, numeric);
    r.max_error = std::max(r.max_error, err);
    r.checks += 1;
    if (!(err < tolerance)) r.pass = false;
  };

  for (std::size_t t = 0; t < trials; ++t) {
    Rng rng(derive_seed(seed, {t}));
    const std::size_t d = 2 + rng.below(kMaxJacobianDim - 1);
    const std::size_t n = 2 + rng.below(kMaxJacobianDim - 1);
    const std::size_t dq = 1 + rng.below(d);
    const std::size_t dv = 1 + rng.below(kMaxJacobianDim);
    const double ws = 1.0 / std::sqrt(static_cast<double>(d));
    const Matrix x = rng.gaussian(d, n);
    AttentionParams params{rng.gaussian(dq, d, ws), rng.gaussian(dq, d, ws),
                           rng.gaussian(dv, d, ws), rng.gaussian(d, dv, ws)};
    const Matrix w = matmul_tn(params.wq, params.wk);

    record(0, jacobian_p_wrt_wqwk(x),
           finite_difference_jacobian([&](const Matrix& wp) { return p_of(x, wp); }, w));

    Matrix dpdx = jacobian_p_wrt_x(x, params.wq, params.wk);
    if (fault == Fault::symmetric_commutation_term) {
      const Matrix in = Matrix::identity(n);
      const Matrix xtw = matmul_tn(x, w);
      dpdx = matmul(kron(xtw, in), commutation_matrix(d, n)) + kron(in, xtw);
    }
    record(1, dpdx,
           finite_difference_jacobian([&](const Matrix& xp) { return p_of(xp, w); }, x));

    record(2, jacobian_p_wrt_wq(x, params.wk),
           finite_difference_jacobian(
               [&](const Matrix& wqt) { return matmul(matmul(x.transposed(), wqt),
                                                      matmul(params.wk, x)); },
               params.wq.transposed()));

    record(3, jacobian_p_wrt_wk(x, params.wq),
           finite_difference_jacobian(
               [&](const Matrix& wk) { return matmul(matmul_tn(matmul(params.wq, x), wk), x); },
               params.wk));

    Matrix p_col = rng.gaussian(n, 1);
    const Matrix a_col = softmax_columns(p_col);
    record(4, softmax_jacobian_column(a_col), finite_difference_jacobian(column_softmax_fd, p_col));

    Matrix dydx = fault == Fault::drop_softmax_term
                      ? kron(attn_forward(x, params).a.transposed(), params.wv)
                      : jacobian_y_wrt_x(x, params);
    const double inv_sqrt_dq = 1.0 / std::sqrt(static_cast<double>(dq));
    record(5, dydx, finite_difference_jacobian(
                        [&](const Matrix& xp) {
                          Matrix logits = p_of(xp, w);
                          logits *= inv_sqrt_dq;
                          return matmul(matmul(params.wv, xp), softmax_columns(logits));
                        },
                        x));
  }
  return report;
}

}  // namespace weylab::oracle
