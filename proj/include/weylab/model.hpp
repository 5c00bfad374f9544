#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "weylab/block.hpp"
#include "weylab/matrix.hpp"
#include "weylab/optimizer.hpp"

namespace weylab {

enum class NormKind { layernorm, rmsnorm };
std::string to_string(NormKind kind);
NormKind parse_norm_kind(const std::string& name);

inline constexpr double kNormEpsilon = 1e-5;
inline constexpr std::size_t kMaxModelDim = 128;
inline constexpr std::size_t kMaxBlocks = 6;

struct ModelConfig {
  std::size_t d = 16;
  std::size_t d_q = 8;
  std::size_t d_v = 8;
  std::size_t n_blocks = 2;
  std::size_t vocab = 8;
  std::size_t seq_len = 8;
  NormKind norm_kind = NormKind::layernorm;
  bool causal = false;

  void validate() const;
};

/// Pre-norm transformer: token + position embeddings, n_blocks of
///   x ← x + Attn(Norm₁(x)),  x ← x + W₂ ReLU(W₁ Norm₂(x)),
/// a final norm and a linear readout to vocabulary logits.
struct Model {
  ModelConfig cfg;
  Matrix token_embedding;     ///< d × vocab
  Matrix position_embedding;  ///< d × seq_len
  std::vector<BlockParams> blocks;
  Matrix final_gamma;
  std::optional<Matrix> final_beta;
  Matrix head;  ///< vocab × d
};

/// Named view of one trainable tensor.
struct ParamRef {
  std::string name;
  Matrix* value;
  ParamKind kind;
};
struct ConstParamRef {
  std::string name;
  const Matrix* value;
  ParamKind kind;
};

/// Stable order: embeddings, blocks (wq wk wv wo w1 w2 gamma1 beta1 gamma2
/// beta2), final norm, head. Names look like "block0.wq".
std::vector<ParamRef> parameters(Model& model);
std::vector<ConstParamRef> parameters(const Model& model);

/// Truncated Xavier: uniform on ±√(6/(fan_in+fan_out)), clipped to ±2 std of
/// that distribution. Norm gains 1, biases 0.
Model build_model(const ModelConfig& cfg, std::uint64_t seed);
/// Same shapes, every entry zero.
Model zeros_like(const Model& model);

/// batch[b][t] is a token id.
using Batch = std::vector<std::vector<std::size_t>>;

/// Shift-by-k copy: target at position t is the input token at t − k, for
/// t ≥ k. Tokens are uniform over the vocabulary.
Batch make_batch(const ModelConfig& cfg, std::size_t batch_size, std::uint64_t seed);
std::size_t copy_target(const std::vector<std::size_t>& seq, std::size_t t, std::size_t shift_k);

/// Per-block activations for one sequence, kept when tracing.
struct BlockTrace {
  Matrix x;       ///< block input, d × n
  Matrix grad_x;  ///< ∂loss/∂x
  Matrix a;       ///< attention map, n × n
};

struct ForwardBackward {
  double loss = 0.0;  ///< mean cross-entropy over batch × positions t ≥ k, nats
  bool finite = true;
  Model grads;        ///< valid only when finite
  std::vector<BlockTrace> trace;  ///< sequence 0 of the batch, if requested
};

struct LossOptions {
  std::size_t shift_k = 1;
  bool trace = false;
  std::set<std::string> frozen;  ///< parameter names whose gradients are forced to zero
};

/// Loss and exact reverse-mode gradients for every parameter. A non-finite
/// loss sets finite = false and leaves grads zero.
ForwardBackward forward_backward(const Model& model, const Batch& batch, const LossOptions& opts);

/// Forward only.
double evaluate_loss(const Model& model, const Batch& batch, std::size_t shift_k);

}  // namespace weylab
