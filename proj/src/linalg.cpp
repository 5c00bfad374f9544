#include "weylab/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "weylab/error.hpp"
#include "weylab/random.hpp"

namespace weylab {

namespace {

std::size_t checked_product(std::size_t a, std::size_t b, const char* op) {
  if (a != 0 && b > kMaxElements / a) {
    throw SizeError(std::string(op) + ": output of " + std::to_string(a) + "x" +
                    std::to_string(b) + " entries exceeds the size guard");
  }
  return a * b;
}

void guard_output(std::size_t rows, std::size_t cols, const char* op) {
  if (checked_product(rows, cols, op) > kMaxElements) {
    throw SizeError(std::string(op) + ": output " + std::to_string(rows) + "x" +
                    std::to_string(cols) + " exceeds the size guard");
  }
}

double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

// Column-major working copy used by the Jacobi sweeps.
struct Columns {
  std::size_t rows, cols;
  std::vector<double> data;
  double* col(std::size_t j) { return data.data() + j * rows; }
  const double* col(std::size_t j) const { return data.data() + j * rows; }
};

Columns to_columns(const Matrix& m) {
  Columns c{m.rows(), m.cols(), std::vector<double>(m.size())};
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t j = 0; j < m.cols(); ++j) c.data[j * m.rows() + r] = m(r, j);
  return c;
}

// Fills columns of `q` flagged invalid with unit vectors orthogonal to all
// valid ones (classical Gram-Schmidt, applied twice).
void complete_orthonormal(Columns& q, std::vector<bool>& valid) {
  std::size_t candidate = 0;
  for (std::size_t j = 0; j < q.cols; ++j) {
    if (valid[j]) continue;
    while (candidate < q.rows) {
      std::vector<double> e(q.rows, 0.0);
      e[candidate++] = 1.0;
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t k = 0; k < q.cols; ++k) {
          if (!valid[k]) continue;
          const double proj = dot(q.col(k), e.data(), q.rows);
          for (std::size_t r = 0; r < q.rows; ++r) e[r] -= proj * q.col(k)[r];
        }
      }
      const double norm = std::sqrt(dot(e.data(), e.data(), q.rows));
      if (norm > 0.5) {
        for (std::size_t r = 0; r < q.rows; ++r) q.col(j)[r] = e[r] / norm;
        valid[j] = true;
        break;
      }
    }
    if (!valid[j]) throw NumericError("svd: failed to complete orthonormal basis");
  }
}

// One-sided Jacobi for rows >= cols.
SvdResult jacobi_svd_tall(const Matrix& w) {
  const std::size_t m = w.rows();
  const std::size_t n = w.cols();
  Columns a = to_columns(w);
  Columns v{n, n, std::vector<double>(n * n, 0.0)};
  for (std::size_t i = 0; i < n; ++i) v.col(i)[i] = 1.0;

  constexpr double kTol = 1e-15;
  constexpr int kMaxSweeps = 80;
  // Columns below rounding level of ‖A‖_F cannot move any singular value by
  // more than that; rotating them only burns sweeps.
  const double negligible = 1e-34 * dot(a.data.data(), a.data.data(), a.data.size());
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double* ap = a.col(p);
        double* aq = a.col(q);
        const double alpha = dot(ap, ap, m);
        const double beta = dot(aq, aq, m);
        const double gamma = dot(ap, aq, m);
        if (alpha <= negligible || beta <= negligible) continue;
        if (std::abs(gamma) <= kTol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t r = 0; r < m; ++r) {
          const double x = ap[r], y = aq[r];
          ap[r] = c * x - s * y;
          aq[r] = s * x + c * y;
        }
        double* vp = v.col(p);
        double* vq = v.col(q);
        for (std::size_t r = 0; r < n; ++r) {
          const double x = vp[r], y = vq[r];
          vp[r] = c * x - s * y;
          vq[r] = s * x + c * y;
        }
      }
    }
    if (!rotated) break;
  }

  std::vector<double> sigma(n);
  for (std::size_t j = 0; j < n; ++j) sigma[j] = std::sqrt(dot(a.col(j), a.col(j), m));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

  const double smax = n ? sigma[order[0]] : 0.0;
  const double cutoff = smax * static_cast<double>(m) * std::numeric_limits<double>::epsilon();
  Columns u{m, n, std::vector<double>(m * n, 0.0)};
  std::vector<bool> valid(n, false);
  SvdResult out{Matrix(m, n), std::vector<double>(n), Matrix(n, n)};
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t j = order[k];
    out.singular_values[k] = sigma[j];
    if (sigma[j] > cutoff && sigma[j] > 0.0) {
      for (std::size_t r = 0; r < m; ++r) u.col(k)[r] = a.col(j)[r] / sigma[j];
      valid[k] = true;
    }
    for (std::size_t r = 0; r < n; ++r) out.v(r, k) = v.col(j)[r];
  }
  complete_orthonormal(u, valid);
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t r = 0; r < m; ++r) out.u(r, k) = u.col(k)[r];
  return out;
}

}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ, " + a.shape_string() + " * " +
                     b.shape_string());
  }
  guard_output(a.rows(), b.cols(), "matmul");
  Matrix c(a.rows(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* ci = c.row(i).data();
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const double* bk = b.row(k).data();
      for (std::size_t j = 0; j < n; ++j) ci[j] += aik * bk[j];
    }
  }
  return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul_tn: row counts differ, " + a.shape_string() + "^T * " +
                     b.shape_string());
  }
  guard_output(a.cols(), b.cols(), "matmul_tn");
  Matrix c(a.cols(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const double* ak = a.row(k).data();
    const double* bk = b.row(k).data();
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = ak[i];
      if (aki == 0.0) continue;
      double* ci = c.row(i).data();
      for (std::size_t j = 0; j < n; ++j) ci[j] += aki * bk[j];
    }
  }
  return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: column counts differ, " + a.shape_string() + " * " +
                     b.shape_string() + "^T");
  }
  guard_output(a.rows(), b.rows(), "matmul_nt");
  Matrix c(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j)
      c(i, j) = dot(a.row(i).data(), b.row(j).data(), a.cols());
  return c;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError("hadamard: shape mismatch " + a.shape_string() + " vs " + b.shape_string());
  }
  Matrix c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] *= b.data()[i];
  return c;
}

double frobenius_norm(const Matrix& m) {
  // Scaled accumulation keeps large entries from overflowing the sum of squares.
  const double scale = max_abs(m);
  if (scale == 0.0) return 0.0;
  double s = 0.0;
  for (double x : m.data()) s += (x / scale) * (x / scale);
  return scale * std::sqrt(s);
}

double max_abs(const Matrix& m) {
  double best = 0.0;
  for (double x : m.data()) best = std::max(best, std::abs(x));
  return best;
}

double trace(const Matrix& m) {
  if (m.rows() != m.cols()) throw ShapeError("trace: matrix is not square, " + m.shape_string());
  double t = 0.0;
  for (std::size_t i = 0; i < m.rows(); ++i) t += m(i, i);
  return t;
}

SpectralEstimate power_iteration(const Matrix& w, std::size_t max_iters, double tol,
                                 std::uint64_t seed) {
  if (max_iters == 0) throw Error("power_iteration: max_iters must be at least 1");
  w.require_finite("power_iteration");
  if (max_abs(w) == 0.0) return {0.0, 0, true, 0.0};

  Rng rng(seed);
  Matrix v = rng.unit_vector(w.cols());
  Matrix wv = matmul(w, v);
  double sigma = frobenius_norm(wv);
  if (sigma == 0.0) {
    // Start vector landed in the null space; restart from the heaviest column.
    std::size_t best = 0;
    double best_norm = -1.0;
    for (std::size_t c = 0; c < w.cols(); ++c) {
      double s = 0.0;
      for (std::size_t r = 0; r < w.rows(); ++r) s += w(r, c) * w(r, c);
      if (s > best_norm) best_norm = s, best = c;
    }
    v = Matrix(w.cols(), 1);
    v(best, 0) = 1.0;
    wv = matmul(w, v);
    sigma = frobenius_norm(wv);
  }

  SpectralEstimate est{sigma, 0, false, 0.0};
  for (std::size_t it = 1; it <= max_iters; ++it) {
    Matrix g = matmul_tn(w, wv);
    const double gnorm = frobenius_norm(g);
    if (gnorm == 0.0) break;
    g *= 1.0 / gnorm;
    v = std::move(g);
    wv = matmul(w, v);
    const double next = frobenius_norm(wv);
    est.residual = next > 0.0 ? std::abs(next - est.sigma1) / next : 0.0;
    est.sigma1 = next;
    est.iterations = it;
    if (est.residual <= tol) {
      est.converged = true;
      break;
    }
  }
  return est;
}

Matrix SvdResult::reconstruct() const {
  Matrix us = u;
  for (std::size_t r = 0; r < us.rows(); ++r)
    for (std::size_t k = 0; k < us.cols(); ++k) us(r, k) *= singular_values[k];
  return matmul_nt(us, v);
}

SvdResult svd(const Matrix& w) {
  if (w.rows() > kMaxSvdDim || w.cols() > kMaxSvdDim) {
    throw SizeError("svd: " + w.shape_string() + " exceeds the " + std::to_string(kMaxSvdDim) +
                    " per-dimension cap");
  }
  w.require_finite("svd");
  if (w.rows() >= w.cols()) return jacobi_svd_tall(w);
  SvdResult t = jacobi_svd_tall(w.transposed());
  return {std::move(t.v), std::move(t.singular_values), std::move(t.u)};
}

std::vector<double> singular_values(const Matrix& w) { return svd(w).singular_values; }

SvdResult svd_product(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("svd_product: inner dimensions differ, " + a.shape_string() + " * " +
                     b.shape_string());
  }
  const std::size_t k = a.cols();
  if (k >= std::min(a.rows(), b.cols()) || a.rows() < k) return svd(matmul(a, b));
  // a = Ua Sa Vaᵀ, then a·b = Ua (Sa Vaᵀ b) and the inner factor is only k rows.
  SvdResult fa = svd(a);
  Matrix inner = matmul_tn(fa.v, b);
  for (std::size_t i = 0; i < inner.rows(); ++i)
    for (std::size_t j = 0; j < inner.cols(); ++j) inner(i, j) *= fa.singular_values[i];
  SvdResult fi = svd(inner);
  return {matmul(fa.u, fi.u), std::move(fi.singular_values), std::move(fi.v)};
}

double spectral_norm(const Matrix& w) { return singular_values(w).front(); }

std::size_t numerical_rank(std::span<const double> sv, double rel) {
  if (sv.empty()) return 0;
  const double top = *std::max_element(sv.begin(), sv.end());
  if (top == 0.0) return 0;
  return static_cast<std::size_t>(
      std::count_if(sv.begin(), sv.end(), [&](double s) { return s > rel * top; }));
}

std::size_t numerical_rank(const Matrix& m, double rel) {
  const auto sv = singular_values(m);
  return numerical_rank(sv, rel);
}

Matrix kron(const Matrix& a, const Matrix& b) {
  const std::size_t rows = checked_product(a.rows(), b.rows(), "kron");
  const std::size_t cols = checked_product(a.cols(), b.cols(), "kron");
  guard_output(rows, cols, "kron");
  Matrix k(rows, cols);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) {
      const double aij = a(i, j);
      for (std::size_t p = 0; p < b.rows(); ++p) {
        double* dst = k.row(i * b.rows() + p).data() + j * b.cols();
        const double* src = b.row(p).data();
        for (std::size_t q = 0; q < b.cols(); ++q) dst[q] = aij * src[q];
      }
    }
  return k;
}

Matrix vec(const Matrix& m) {
  Matrix v(m.size(), 1);
  for (std::size_t c = 0; c < m.cols(); ++c)
    for (std::size_t r = 0; r < m.rows(); ++r) v(c * m.rows() + r, 0) = m(r, c);
  return v;
}

Matrix unvec(const Matrix& v, std::size_t rows, std::size_t cols) {
  if (v.cols() != 1 || v.rows() != rows * cols) {
    throw ShapeError("unvec: " + v.shape_string() + " cannot fill " + std::to_string(rows) +
                     "x" + std::to_string(cols));
  }
  Matrix m(rows, cols);
  for (std::size_t c = 0; c < cols; ++c)
    for (std::size_t r = 0; r < rows; ++r) m(r, c) = v(c * rows + r, 0);
  return m;
}

Matrix commutation_matrix(std::size_t rows, std::size_t cols) {
  if (rows == 0 || cols == 0) throw ShapeError("commutation_matrix: dimensions must be positive");
  const std::size_t n = checked_product(rows, cols, "commutation_matrix");
  guard_output(n, n, "commutation_matrix");
  Matrix k(n, n);
  // vec(X)[c*rows + r] = X(r,c) lands at vec(Xᵀ)[r*cols + c].
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) k(r * cols + c, c * rows + r) = 1.0;
  return k;
}

Matrix softmax_columns(const Matrix& p) {
  p.require_finite("softmax_columns");
  Matrix a(p.rows(), p.cols());
  for (std::size_t c = 0; c < p.cols(); ++c) {
    double mx = p(0, c);
    for (std::size_t r = 1; r < p.rows(); ++r) mx = std::max(mx, p(r, c));
    double sum = 0.0;
    for (std::size_t r = 0; r < p.rows(); ++r) {
      a(r, c) = std::exp(p(r, c) - mx);
      sum += a(r, c);
    }
    for (std::size_t r = 0; r < p.rows(); ++r) a(r, c) /= sum;
  }
  return a;
}

bool weyl_check(const Matrix& w1, const Matrix& w2) {
  if (w1.rows() != w2.rows() || w1.cols() != w2.cols()) {
    throw ShapeError("weyl_check: shape mismatch " + w1.shape_string() + " vs " +
                     w2.shape_string());
  }
  const auto s1 = singular_values(w1);
  const auto s2 = singular_values(w2);
  const auto s12 = singular_values(w1 + w2);
  const std::size_t n = s12.size();
  for (std::size_t i = 1; i <= n; ++i)
    for (std::size_t j = 1; i + j - 1 <= n; ++j)
      if (s12[i + j - 2] > s1[i - 1] + s2[j - 1] + 1e-9) return false;
  return true;
}

}  // namespace weylab
