#pragma once

#include <optional>

#include "weylab/attention.hpp"
#include "weylab/matrix.hpp"

namespace weylab {

/// Weights of one pre-norm transformer block. Norm parameters are d × 1
/// columns; the betas are absent for RMSNorm.
struct BlockParams {
  Matrix wq, wk, wv, wo;  // attention
  Matrix w1, w2;          // FFN: w1 is 4d × d, w2 is d × 4d
  Matrix gamma1, gamma2;
  std::optional<Matrix> beta1, beta2;

  AttentionParams attention() const { return {wq, wk, wv, wo}; }
};

}  // namespace weylab
