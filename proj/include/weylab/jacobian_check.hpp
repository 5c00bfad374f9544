#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "weylab/matrix.hpp"

// Finite-difference oracles. Nothing here calls into the analytic Jacobian
// code; the battery only compares against it.
namespace weylab::oracle {

using MatrixFn = std::function<Matrix(const Matrix&)>;

/// Central-difference ∂vec(f(X))/∂vec(X), one column per entry of vec(X).
Matrix finite_difference_jacobian(const MatrixFn& f, const Matrix& x, double step = 1e-5);

/// max|a − f| / max|f|, taken over entries where either side exceeds `floor`.
/// Returns 0 when no entry does.
double relative_error(const Matrix& analytic, const Matrix& numeric, double floor = 1e-8);

/// Negative controls: corrupt one analytic formula before comparing.
enum class Fault {
  none,
  /// Replace XᵀWkᵀWq with XᵀWqᵀWk in the commutation term of ∂P/∂X.
  symmetric_commutation_term,
  /// Drop the softmax-routed term of ∂Y/∂X.
  drop_softmax_term,
};

Fault parse_fault(const std::string& name);

struct IdentityResult {
  std::string name;
  double max_error = 0.0;
  std::size_t checks = 0;
  bool pass = true;
};

struct BatteryReport {
  std::vector<IdentityResult> identities;
  std::size_t trials = 0;
  double tolerance = 0.0;
  bool all_pass() const;
};

/// Random instances with every dimension in [1, 8]; inputs and weights are
/// unit-scaled so the logits stay O(1).
BatteryReport run_jacobian_battery(std::uint64_t seed, std::size_t trials, Fault fault = Fault::none,
                                   double tolerance = 1e-5);

}  // namespace weylab::oracle
