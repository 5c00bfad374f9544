#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "weylab/error.hpp"
#include "weylab/linalg.hpp"
#include "weylab/random.hpp"

using namespace weylab;

namespace {

Matrix naive_matmul(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

double max_diff(const Matrix& a, const Matrix& b) { return max_abs(a - b); }

Matrix orthonormal_columns(const SvdResult& r, bool left) {
  const Matrix& q = left ? r.u : r.v;
  return matmul_tn(q, q);
}

}  // namespace

TEST_CASE("matmul") {
  const Matrix m{{1, 2, 3}, {4, 5, 6}};
  CHECK(matmul(Matrix::identity(2), m) == m);
  CHECK(matmul(Matrix{{1, 2}, {3, 4}}, Matrix{{1}, {1}}) == Matrix{{3}, {7}});
  Rng rng(1);
  const Matrix a = rng.gaussian(7, 5), b = rng.gaussian(5, 3);
  CHECK(max_diff(matmul(a, b), naive_matmul(a, b)) < 1e-12);
  CHECK(max_diff(matmul_tn(a, a), naive_matmul(a.transposed(), a)) < 1e-12);
  CHECK(max_diff(matmul_nt(a, a), naive_matmul(a, a.transposed())) < 1e-12);
  try {
    matmul(a, a);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("7x5") != std::string::npos);
  }
}

TEST_CASE("power iteration") {
  const double d[] = {3.0, 1.0};
  CHECK(power_iteration(Matrix::diagonal(d), 200, 1e-12).sigma1 == doctest::Approx(3.0).epsilon(1e-10));

  Matrix u(4, 1), v(3, 1);
  u(0, 0) = 2.0;  // ‖u‖ = 2
  v(0, 0) = 3.0;
  v(1, 0) = 4.0;  // ‖v‖ = 5
  CHECK(power_iteration(matmul_nt(u, v), 200, 1e-12).sigma1 == doctest::Approx(10.0).epsilon(1e-10));

  Rng rng(2);
  for (int t = 0; t < 50; ++t) {
    const Matrix w = rng.gaussian(8, 6);
    const double exact = spectral_norm(w);
    const auto est = power_iteration(w, 200, 1e-12, static_cast<std::uint64_t>(t));
    CHECK(std::abs(est.sigma1 - exact) / exact < 1e-8);
    CHECK(est.sigma1 <= exact * (1 + 1e-12));
  }

  const auto zero = power_iteration(Matrix(3, 3, 0.0), 3, 1e-6);
  CHECK(zero.sigma1 == 0.0);
  CHECK(zero.converged);
  CHECK_THROWS(power_iteration(Matrix(2, 2, 1.0), 0, 1e-6));
}

TEST_CASE("power iteration converges with a spectral gap and lower-bounds sigma1") {
  Rng rng(3);
  int gapped = 0;
  for (int t = 0; t < 200 && gapped < 50; ++t) {
    const Matrix w = rng.gaussian(6, 5);
    const auto sv = singular_values(w);
    const auto est = power_iteration(w, 3, 1e-6, static_cast<std::uint64_t>(t));
    CHECK(est.sigma1 >= 0.0);
    CHECK(est.sigma1 <= sv[0] + 1e-8 * sv[0]);
    if (est.converged) CHECK(est.residual <= 1e-6);
    if (sv[0] / sv[1] < 1.1) continue;
    ++gapped;
    const auto full = power_iteration(w, 200, 1e-14, static_cast<std::uint64_t>(t));
    CHECK(std::abs(full.sigma1 - sv[0]) <= 1e-8 * sv[0]);
  }
  CHECK(gapped == 50);
}

TEST_CASE("svd") {
  const double d[] = {2.0, 5.0};
  const auto r = svd(Matrix::diagonal(d));
  CHECK(r.singular_values[0] == doctest::Approx(5.0));
  CHECK(r.singular_values[1] == doctest::Approx(2.0));

  const double c = std::cos(0.7), s = std::sin(0.7);
  for (double sv : singular_values(Matrix{{c, -s}, {s, c}})) CHECK(std::abs(sv - 1.0) < 1e-10);

  Rng rng(4);
  const Matrix w = rng.gaussian(6, 4);
  const auto f = svd(w);
  CHECK(frobenius_norm(f.reconstruct() - w) / frobenius_norm(w) < 1e-10);
  CHECK(max_diff(orthonormal_columns(f, true), Matrix::identity(4)) < 1e-10);
  CHECK(max_diff(orthonormal_columns(f, false), Matrix::identity(4)) < 1e-10);
  CHECK(std::is_sorted(f.singular_values.rbegin(), f.singular_values.rend()));

  // Two-column case: σ² are the roots of the characteristic polynomial of WᵀW.
  const Matrix w2 = rng.gaussian(6, 2);
  const Matrix g = matmul_tn(w2, w2);
  const double tr = g(0, 0) + g(1, 1), det = g(0, 0) * g(1, 1) - g(0, 1) * g(1, 0);
  const double disc = std::sqrt(tr * tr / 4 - det);
  const auto sv = singular_values(w2);
  CHECK(sv[0] == doctest::Approx(std::sqrt(tr / 2 + disc)).epsilon(1e-12));
  CHECK(sv[1] == doctest::Approx(std::sqrt(tr / 2 - disc)).epsilon(1e-12));

  // Wide and rank-deficient inputs still get orthonormal factors.
  const Matrix wide = rng.gaussian(3, 7);
  const auto fw = svd(wide);
  CHECK(frobenius_norm(fw.reconstruct() - wide) / frobenius_norm(wide) < 1e-10);
  const Matrix low = matmul(rng.gaussian(6, 2), rng.gaussian(2, 5));
  const auto fl = svd(low);
  CHECK(max_diff(orthonormal_columns(fl, true), Matrix::identity(5)) < 1e-10);
  CHECK(frobenius_norm(fl.reconstruct() - low) / frobenius_norm(low) < 1e-10);

  CHECK_THROWS_AS(svd(Matrix(4097, 1, 0.0)), SizeError);
}

TEST_CASE("svd_product matches the explicit product") {
  Rng rng(5);
  const Matrix a = rng.gaussian(12, 3), b = rng.gaussian(3, 10);
  const auto direct = singular_values(matmul(a, b));
  const auto f = svd_product(a, b);
  REQUIRE(f.singular_values.size() == 3);
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(f.singular_values[i] == doctest::Approx(direct[i]).epsilon(1e-10));
  CHECK(frobenius_norm(f.reconstruct() - matmul(a, b)) / frobenius_norm(matmul(a, b)) < 1e-10);
}

TEST_CASE("kron") {
  const Matrix a{{1, 2}, {3, 4}};
  const Matrix b{{1, 2, 3}, {3, 4, 5}};
  const Matrix expected{{1, 2, 3, 2, 4, 6},
                        {3, 4, 5, 6, 8, 10},
                        {3, 6, 9, 4, 8, 12},
                        {9, 12, 15, 12, 16, 20}};
  CHECK(kron(a, b) == expected);
  CHECK(kron(Matrix::identity(2), Matrix::identity(3)) == Matrix::identity(6));

  Rng rng(6);
  const Matrix x = matmul(rng.gaussian(5, 2), rng.gaussian(2, 5));
  CHECK(numerical_rank(x) == 2);
  CHECK(numerical_rank(kron(x, x)) == 4);
  CHECK(kron(a, b).transposed() == kron(a.transposed(), b.transposed()));

  CHECK_THROWS_AS(kron(Matrix(100, 100), Matrix(100, 100)), SizeError);
}

TEST_CASE("vec and unvec") {
  const Matrix m{{1, 2, 3}, {4, 5, 6}};  // [[a,b,c],[d,e,f]]
  CHECK(vec(m) == Matrix{{1}, {4}, {2}, {5}, {3}, {6}});
  const Matrix col{{7}, {8}};
  CHECK(vec(col) == col);
  CHECK(unvec(vec(m), 2, 3) == m);

  Rng rng(7);
  const Matrix a = rng.gaussian(3, 4), b = rng.gaussian(4, 2), c = rng.gaussian(2, 5);
  const Matrix lhs = vec(matmul(matmul(a, b), c));
  const Matrix rhs = matmul(kron(c.transposed(), a), vec(b));
  CHECK(max_diff(lhs, rhs) < 1e-12 * std::max(1.0, max_abs(lhs)));
}

TEST_CASE("commutation matrix") {
  CHECK(commutation_matrix(1, 1) == Matrix{{1}});
  CHECK(commutation_matrix(2, 2) == Matrix{{1, 0, 0, 0}, {0, 0, 1, 0}, {0, 1, 0, 0}, {0, 0, 0, 1}});
  Rng rng(8);
  const Matrix x = rng.gaussian(3, 5);
  CHECK(matmul(commutation_matrix(3, 5), vec(x)) == vec(x.transposed()));
  CHECK_THROWS_AS(commutation_matrix(100, 100), SizeError);
}

TEST_CASE("softmax_columns") {
  const Matrix u = softmax_columns(Matrix(4, 1, 0.0));
  for (double v : u.data()) CHECK(v == 0.25);
  const Matrix big = softmax_columns(Matrix{{1000}, {0}});
  CHECK(big(0, 0) == doctest::Approx(1.0));
  CHECK(big(1, 0) < 1e-300);
  CHECK(big.all_finite());

  Rng rng(9);
  const Matrix p = rng.gaussian(5, 5, 3.0);
  const Matrix a = softmax_columns(p);
  for (std::size_t c = 0; c < 5; ++c) {
    double mx = p(0, c);
    for (std::size_t r = 1; r < 5; ++r) mx = std::max(mx, p(r, c));
    double sum = 0.0;
    for (std::size_t r = 0; r < 5; ++r) sum += std::exp(p(r, c) - mx);
    double total = 0.0;
    for (std::size_t r = 0; r < 5; ++r) {
      CHECK(std::abs(a(r, c) - std::exp(p(r, c) - mx) / sum) < 1e-12);
      CHECK(a(r, c) > 0.0);
      total += a(r, c);
    }
    CHECK(std::abs(total - 1.0) < 1e-12);
  }

  // Row permutation commutes with the column softmax.
  const std::size_t perm[] = {3, 0, 4, 1, 2};
  Matrix pp(5, 5);
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 5; ++c) pp(r, c) = p(perm[r], c);
  const Matrix ap = softmax_columns(pp);
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 5; ++c) CHECK(std::abs(ap(r, c) - a(perm[r], c)) < 1e-15);
}

TEST_CASE("weyl_check") {
  CHECK(weyl_check(Matrix{{1, 0}, {0, 0}}, Matrix{{0, 0}, {0, 1}}));
  Rng rng(10);
  const Matrix w = rng.gaussian(4, 4);
  CHECK(weyl_check(w, -1.0 * w));
  for (int t = 0; t < 200; ++t) CHECK(weyl_check(rng.gaussian(6, 6), rng.gaussian(6, 6)));
  CHECK_THROWS_AS(weyl_check(Matrix(2, 2), Matrix(2, 3)), ShapeError);
}
