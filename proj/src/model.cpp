#include "weylab/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "weylab/attention.hpp"
#include "weylab/error.hpp"
#include "weylab/linalg.hpp"
#include "weylab/random.hpp"

namespace weylab {

std::string to_string(NormKind kind) {
  return kind == NormKind::layernorm ? "layernorm" : "rmsnorm";
}

NormKind parse_norm_kind(const std::string& name) {
  if (name == "layernorm") return NormKind::layernorm;
  if (name == "rmsnorm") return NormKind::rmsnorm;
  throw ConfigError("model.norm_kind", "expected layernorm or rmsnorm, got '" + name + "'");
}

void ModelConfig::validate() const {
  auto require = [](bool ok, const char* key, const std::string& what) {
    if (!ok) throw ConfigError(key, what);
  };
  require(d >= 1 && d <= kMaxModelDim, "model.d", "must lie in [1, 128]");
  require(d_q >= 1 && d_q <= d, "model.d_q", "must lie in [1, d]");
  require(d_v >= 1 && d_v <= kMaxModelDim, "model.d_v", "must lie in [1, 128]");
  require(n_blocks >= 1 && n_blocks <= kMaxBlocks, "model.n_blocks", "must lie in [1, 6]");
  require(vocab >= 2, "model.vocab", "must be at least 2");
  require(seq_len >= 2 && seq_len <= 512, "model.seq_len", "must lie in [2, 512]");
}

namespace {

template <class M, class Ref>
std::vector<Ref> collect(M& m) {
  std::vector<Ref> out;
  auto add = [&](std::string name, auto& value, ParamKind kind) {
    out.push_back(Ref{std::move(name), &value, kind});
  };
  add("embed.token", m.token_embedding, ParamKind::matrix);
  add("embed.position", m.position_embedding, ParamKind::matrix);
  for (std::size_t b = 0; b < m.blocks.size(); ++b) {
    auto& blk = m.blocks[b];
    const std::string p = "block" + std::to_string(b) + ".";
    add(p + "wq", blk.wq, ParamKind::matrix);
    add(p + "wk", blk.wk, ParamKind::matrix);
    add(p + "wv", blk.wv, ParamKind::matrix);
    add(p + "wo", blk.wo, ParamKind::matrix);
    add(p + "w1", blk.w1, ParamKind::matrix);
    add(p + "w2", blk.w2, ParamKind::matrix);
    add(p + "gamma1", blk.gamma1, ParamKind::vector);
    if (blk.beta1) add(p + "beta1", *blk.beta1, ParamKind::vector);
    add(p + "gamma2", blk.gamma2, ParamKind::vector);
    if (blk.beta2) add(p + "beta2", *blk.beta2, ParamKind::vector);
  }
  add("final.gamma", m.final_gamma, ParamKind::vector);
  if (m.final_beta) add("final.beta", *m.final_beta, ParamKind::vector);
  add("head", m.head, ParamKind::matrix);
  return out;
}

Matrix xavier(Rng& rng, std::size_t rows, std::size_t cols) {
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  // std of U(−b, b) is b/√3; the ±2 std clip is inactive for this law but
  // kept so the initializer stays correct if the base law changes.
  const double clip = 2.0 * bound / std::sqrt(3.0);
  Matrix m(rows, cols);
  for (double& v : m.data()) v = std::clamp(rng.uniform(-bound, bound), -clip, clip);
  return m;
}

}  // namespace

std::vector<ParamRef> parameters(Model& model) { return collect<Model, ParamRef>(model); }
std::vector<ConstParamRef> parameters(const Model& model) {
  return collect<const Model, ConstParamRef>(model);
}

Model build_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Model m;
  m.cfg = cfg;
  const std::size_t d = cfg.d, h = 4 * cfg.d;
  std::uint64_t stream = 0;
  auto next = [&](std::size_t rows, std::size_t cols) {
    Rng rng(derive_seed(seed, {stream++}));
    return xavier(rng, rows, cols);
  };
  const bool ln = cfg.norm_kind == NormKind::layernorm;
  m.token_embedding = next(d, cfg.vocab);
  m.position_embedding = next(d, cfg.seq_len);
  for (std::size_t b = 0; b < cfg.n_blocks; ++b) {
    BlockParams blk;
    blk.wq = next(cfg.d_q, d);
    blk.wk = next(cfg.d_q, d);
    blk.wv = next(cfg.d_v, d);
    blk.wo = next(d, cfg.d_v);
    blk.w1 = next(h, d);
    blk.w2 = next(d, h);
    blk.gamma1 = Matrix(d, 1, 1.0);
    blk.gamma2 = Matrix(d, 1, 1.0);
    if (ln) {
      blk.beta1 = Matrix(d, 1, 0.0);
      blk.beta2 = Matrix(d, 1, 0.0);
    }
    m.blocks.push_back(std::move(blk));
  }
  m.final_gamma = Matrix(d, 1, 1.0);
  if (ln) m.final_beta = Matrix(d, 1, 0.0);
  m.head = next(cfg.vocab, d);
  return m;
}

Model zeros_like(const Model& model) {
  Model z = model;
  for (auto& p : parameters(z)) *p.value = Matrix(p.value->rows(), p.value->cols(), 0.0);
  return z;
}

Batch make_batch(const ModelConfig& cfg, std::size_t batch_size, std::uint64_t seed) {
  Rng rng(seed);
  Batch batch(batch_size, std::vector<std::size_t>(cfg.seq_len));
  for (auto& seq : batch)
    for (auto& tok : seq) tok = static_cast<std::size_t>(rng.below(cfg.vocab));
  return batch;
}

std::size_t copy_target(const std::vector<std::size_t>& seq, std::size_t t, std::size_t shift_k) {
  return seq[t - shift_k];
}

namespace {

struct NormCache {
  Matrix z;                    // normalized input, d × n
  std::vector<double> inv_rms;  // 1/σ per column
};

Matrix norm_forward(const Matrix& x, const Matrix& gamma, const std::optional<Matrix>& beta,
                    NormKind kind, NormCache& cache) {
  const std::size_t d = x.rows(), n = x.cols();
  cache.z = Matrix(d, n);
  cache.inv_rms.assign(n, 0.0);
  Matrix out(d, n);
  for (std::size_t c = 0; c < n; ++c) {
    double mean = 0.0;
    if (kind == NormKind::layernorm) {
      for (std::size_t r = 0; r < d; ++r) mean += x(r, c);
      mean /= static_cast<double>(d);
    }
    double var = 0.0;
    for (std::size_t r = 0; r < d; ++r) var += (x(r, c) - mean) * (x(r, c) - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + kNormEpsilon);
    cache.inv_rms[c] = inv;
    for (std::size_t r = 0; r < d; ++r) {
      const double z = (x(r, c) - mean) * inv;
      cache.z(r, c) = z;
      out(r, c) = gamma(r, 0) * z + (beta ? (*beta)(r, 0) : 0.0);
    }
  }
  return out;
}

// Accumulates into dgamma/dbeta and returns ∂loss/∂x.
Matrix norm_backward(const Matrix& dout, const Matrix& gamma, NormKind kind,
                     const NormCache& cache, Matrix& dgamma, Matrix* dbeta) {
  const std::size_t d = dout.rows(), n = dout.cols();
  const double inv_d = 1.0 / static_cast<double>(d);
  Matrix dx(d, n);
  std::vector<double> dz(d);
  for (std::size_t c = 0; c < n; ++c) {
    double mean_dz = 0.0, mean_dz_z = 0.0;
    for (std::size_t r = 0; r < d; ++r) {
      dgamma(r, 0) += dout(r, c) * cache.z(r, c);
      if (dbeta) (*dbeta)(r, 0) += dout(r, c);
      dz[r] = dout(r, c) * gamma(r, 0);
      mean_dz += dz[r];
      mean_dz_z += dz[r] * cache.z(r, c);
    }
    mean_dz *= inv_d;
    mean_dz_z *= inv_d;
    if (kind == NormKind::rmsnorm) mean_dz = 0.0;
    for (std::size_t r = 0; r < d; ++r)
      dx(r, c) = cache.inv_rms[c] * (dz[r] - mean_dz - cache.z(r, c) * mean_dz_z);
  }
  return dx;
}

struct BlockCache {
  Matrix x;  // block input
  NormCache n1, n2;
  Matrix h1, q, k, a, vh, y;  // vh = Wv·h1
  Matrix x_mid, h2, z, r;     // z = W1 h2, r = relu(z)
};

struct SequenceCache {
  std::vector<BlockCache> blocks;
  NormCache final_norm;
  Matrix hf;
  Matrix logits;
};

Matrix embed(const Model& m, const std::vector<std::size_t>& seq) {
  const std::size_t d = m.cfg.d, n = m.cfg.seq_len;
  if (seq.size() != n) {
    throw ShapeError("sequence length " + std::to_string(seq.size()) + " != seq_len " +
                     std::to_string(n));
  }
  Matrix x(d, n);
  for (std::size_t t = 0; t < n; ++t) {
    if (seq[t] >= m.cfg.vocab) {
      throw Error("token id " + std::to_string(seq[t]) + " outside vocab " +
                  std::to_string(m.cfg.vocab));
    }
    for (std::size_t r = 0; r < d; ++r)
      x(r, t) = m.token_embedding(r, seq[t]) + m.position_embedding(r, t);
  }
  return x;
}

void forward_sequence(const Model& m, const std::vector<std::size_t>& seq, SequenceCache& cache) {
  const auto kind = m.cfg.norm_kind;
  const double scale = 1.0 / std::sqrt(static_cast<double>(m.cfg.d_q));
  Matrix x = embed(m, seq);
  cache.blocks.resize(m.blocks.size());
  for (std::size_t b = 0; b < m.blocks.size(); ++b) {
    const BlockParams& p = m.blocks[b];
    BlockCache& c = cache.blocks[b];
    c.x = x;
    c.h1 = norm_forward(x, p.gamma1, p.beta1, kind, c.n1);
    c.q = matmul(p.wq, c.h1);
    c.k = matmul(p.wk, c.h1);
    Matrix logits = matmul_tn(c.q, c.k);
    logits *= scale;
    c.a = m.cfg.causal ? softmax_columns_causal(logits) : softmax_columns(logits);
    c.vh = matmul(p.wv, c.h1);
    c.y = matmul(c.vh, c.a);
    c.x_mid = x + matmul(p.wo, c.y);
    c.h2 = norm_forward(c.x_mid, p.gamma2, p.beta2, kind, c.n2);
    c.z = matmul(p.w1, c.h2);
    c.r = c.z;
    for (double& v : c.r.data()) v = std::max(v, 0.0);
    x = c.x_mid + matmul(p.w2, c.r);
  }
  cache.hf = norm_forward(x, m.final_gamma, m.final_beta, kind, cache.final_norm);
  cache.logits = matmul(m.head, cache.hf);
}

// Returns summed cross-entropy; fills dlogits (scaled by `weight`) if given.
double cross_entropy(const Matrix& logits, const std::vector<std::size_t>& seq,
                     std::size_t shift_k, double weight, Matrix* dlogits) {
  const std::size_t v = logits.rows(), n = logits.cols();
  double total = 0.0;
  if (dlogits) *dlogits = Matrix(v, n, 0.0);
  for (std::size_t t = shift_k; t < n; ++t) {
    double mx = logits(0, t);
    for (std::size_t i = 1; i < v; ++i) mx = std::max(mx, logits(i, t));
    double sum = 0.0;
    for (std::size_t i = 0; i < v; ++i) sum += std::exp(logits(i, t) - mx);
    const double lse = mx + std::log(sum);
    const std::size_t target = copy_target(seq, t, shift_k);
    total += lse - logits(target, t);
    if (dlogits) {
      for (std::size_t i = 0; i < v; ++i)
        (*dlogits)(i, t) = weight * std::exp(logits(i, t) - lse);
      (*dlogits)(target, t) -= weight;
    }
  }
  return total;
}

void backward_sequence(const Model& m, const std::vector<std::size_t>& seq,
                       const SequenceCache& cache, const Matrix& dlogits, Model& g,
                       std::vector<BlockTrace>* trace) {
  const auto kind = m.cfg.norm_kind;
  const double scale = 1.0 / std::sqrt(static_cast<double>(m.cfg.d_q));
  g.head += matmul_nt(dlogits, cache.hf);
  Matrix dx = norm_backward(matmul_tn(m.head, dlogits), m.final_gamma, kind, cache.final_norm,
                            g.final_gamma, g.final_beta ? &*g.final_beta : nullptr);
  if (trace) trace->resize(m.blocks.size());

  for (std::size_t b = m.blocks.size(); b-- > 0;) {
    const BlockParams& p = m.blocks[b];
    const BlockCache& c = cache.blocks[b];
    BlockParams& gp = g.blocks[b];

    // FFN branch: x = x_mid + W2 relu(W1 h2)
    gp.w2 += matmul_nt(dx, c.r);
    Matrix dz = matmul_tn(p.w2, dx);
    for (std::size_t i = 0; i < dz.size(); ++i)
      if (c.z.data()[i] <= 0.0) dz.data()[i] = 0.0;
    gp.w1 += matmul_nt(dz, c.h2);
    Matrix dx_mid = dx + norm_backward(matmul_tn(p.w1, dz), p.gamma2, kind, c.n2, gp.gamma2,
                                       gp.beta2 ? &*gp.beta2 : nullptr);

    // Attention branch: x_mid = x + Wo (Wv h1) A
    gp.wo += matmul_nt(dx_mid, c.y);
    const Matrix dy = matmul_tn(p.wo, dx_mid);
    gp.wv += matmul_nt(dy, matmul(c.h1, c.a));
    Matrix dh1 = matmul_tn(p.wv, matmul_nt(dy, c.a));
    const Matrix da = matmul_tn(c.vh, dy);
    Matrix dlogit(da.rows(), da.cols());
    for (std::size_t col = 0; col < da.cols(); ++col) {
      double dot = 0.0;
      for (std::size_t i = 0; i < da.rows(); ++i) dot += c.a(i, col) * da(i, col);
      for (std::size_t i = 0; i < da.rows(); ++i)
        dlogit(i, col) = scale * c.a(i, col) * (da(i, col) - dot);
    }
    // logits = Qᵀ K
    const Matrix dq = matmul_nt(c.k, dlogit);
    const Matrix dk = matmul(c.q, dlogit);
    gp.wq += matmul_nt(dq, c.h1);
    gp.wk += matmul_nt(dk, c.h1);
    dh1 += matmul_tn(p.wq, dq);
    dh1 += matmul_tn(p.wk, dk);
    dx = dx_mid + norm_backward(dh1, p.gamma1, kind, c.n1, gp.gamma1,
                                gp.beta1 ? &*gp.beta1 : nullptr);
    if (trace) (*trace)[b] = BlockTrace{c.x, dx, c.a};
  }

  for (std::size_t t = 0; t < seq.size(); ++t)
    for (std::size_t r = 0; r < m.cfg.d; ++r) {
      g.token_embedding(r, seq[t]) += dx(r, t);
      g.position_embedding(r, t) += dx(r, t);
    }
}

std::size_t target_count(const Model& model, const Batch& batch, std::size_t shift_k) {
  if (batch.empty()) throw Error("empty batch");
  if (shift_k >= model.cfg.seq_len) {
    throw ConfigError("train.shift_k", "must be below seq_len");
  }
  return batch.size() * (model.cfg.seq_len - shift_k);
}

}  // namespace

ForwardBackward forward_backward(const Model& model, const Batch& batch, const LossOptions& opts) {
  const std::size_t count = target_count(model, batch, opts.shift_k);
  const double weight = 1.0 / static_cast<double>(count);
  ForwardBackward out;
  out.grads = zeros_like(model);
  double total = 0.0;
  try {
    for (std::size_t s = 0; s < batch.size(); ++s) {
      SequenceCache cache;
      forward_sequence(model, batch[s], cache);
      Matrix dlogits;
      total += cross_entropy(cache.logits, batch[s], opts.shift_k, weight, &dlogits);
      backward_sequence(model, batch[s], cache, dlogits, out.grads,
                        opts.trace && s == 0 ? &out.trace : nullptr);
    }
  } catch (const NumericError&) {
    total = std::numeric_limits<double>::quiet_NaN();
  }
  out.loss = total * weight;
  out.finite = std::isfinite(out.loss);
  if (out.finite) {
    for (const auto& p : parameters(std::as_const(out.grads)))
      if (!p.value->all_finite()) out.finite = false;
  }
  if (!out.finite) {
    out.grads = zeros_like(model);
    out.trace.clear();
    return out;
  }
  for (auto& p : parameters(out.grads))
    if (opts.frozen.contains(p.name)) *p.value = Matrix(p.value->rows(), p.value->cols(), 0.0);
  return out;
}

double evaluate_loss(const Model& model, const Batch& batch, std::size_t shift_k) {
  const std::size_t count = target_count(model, batch, shift_k);
  double total = 0.0;
  try {
    for (const auto& seq : batch) {
      SequenceCache cache;
      forward_sequence(model, seq, cache);
      total += cross_entropy(cache.logits, seq, shift_k, 0.0, nullptr);
    }
  } catch (const NumericError&) {
    return std::numeric_limits<double>::quiet_NaN();
  }
  return total / static_cast<double>(count);
}

}  // namespace weylab
