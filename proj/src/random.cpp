#include "weylab/random.hpp"

#include <cmath>
#include <numbers>

namespace weylab {

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double t = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(t);
  has_spare_ = true;
  return r * std::cos(t);
}

Matrix Rng::gaussian(std::size_t rows, std::size_t cols, double stddev) {
  Matrix m(rows, cols);
  for (double& x : m.data()) x = stddev * normal();
  return m;
}

Matrix Rng::unit_vector(std::size_t n) {
  Matrix v(n, 1);
  double norm2 = 0.0;
  while (norm2 == 0.0) {
    norm2 = 0.0;
    for (double& x : v.data()) {
      x = normal();
      norm2 += x * x;
    }
  }
  v *= 1.0 / std::sqrt(norm2);
  return v;
}

}  // namespace weylab
