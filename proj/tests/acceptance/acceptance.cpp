// Acceptance suite: one PASS/FAIL line per criterion. Exit status is nonzero
// if any criterion fails. `acceptance 4 8` runs a subset.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "weylab/attention.hpp"
#include "weylab/cli.hpp"
#include "weylab/config.hpp"
#include "weylab/diagnostics.hpp"
#include "weylab/jacobian_check.hpp"
#include "weylab/linalg.hpp"
#include "weylab/model.hpp"
#include "weylab/optimizer.hpp"
#include "weylab/random.hpp"
#include "weylab/trainer.hpp"

#include <unistd.h>

using namespace weylab;
namespace fs = std::filesystem;

namespace {

#ifndef WEYLAB_SOURCE_DIR
#define WEYLAB_SOURCE_DIR "."
#endif

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---------------------------------------------------------------------------
// Independent numerics. Cyclic Jacobi on a dense symmetric matrix; used for
// singular values (√eig(MᵀM)) so the checks don't lean on the library's SVD.

std::vector<double> symmetric_eigenvalues(std::vector<double> a, std::size_t n) {
  auto at = [&](std::size_t i, std::size_t j) -> double& { return a[i * n + j]; };
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) (i == j ? scale : off) += at(i, j) * at(i, j);
    if (off <= 1e-30 * std::max(scale, 1e-300)) break;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = at(p, q);
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (at(q, q) - at(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = at(k, p), akq = at(k, q);
          at(k, p) = c * akp - s * akq;
          at(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = at(p, k), aqk = at(q, k);
          at(p, k) = c * apk - s * aqk;
          at(q, k) = s * apk + c * aqk;
        }
      }
    }
  }
  std::vector<double> eig(n);
  for (std::size_t i = 0; i < n; ++i) eig[i] = at(i, i);
  std::sort(eig.begin(), eig.end(), std::greater<>());
  return eig;
}

std::vector<double> oracle_singular_values(const Matrix& m) {
  // Gram on the short side.
  const bool tall = m.rows() >= m.cols();
  const std::size_t k = tall ? m.cols() : m.rows();
  const std::size_t len = tall ? m.rows() : m.cols();
  std::vector<double> g(k * k, 0.0);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = i; j < k; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < len; ++t)
        s += tall ? m(t, i) * m(t, j) : m(i, t) * m(j, t);
      g[i * k + j] = g[j * k + i] = s;
    }
  auto eig = symmetric_eigenvalues(std::move(g), k);
  for (auto& e : eig) e = std::sqrt(std::max(0.0, e));
  return eig;
}

double oracle_sigma1(const Matrix& m) { return oracle_singular_values(m).front(); }

double max_entry_diff(const Matrix& a, const Matrix& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a.data()[i] - b.data()[i]));
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

struct Scratch {
  fs::path root;
  Scratch() {
    root = fs::temp_directory_path() / ("weylab_acceptance_" + std::to_string(::getpid()));
    fs::remove_all(root);
    fs::create_directories(root);
  }
  ~Scratch() {
    std::error_code ec;
    fs::remove_all(root, ec);
  }
};

RunConfig reference_config() {
  return load_config(std::string(WEYLAB_SOURCE_DIR) + "/configs/reference.json");
}

// ---------------------------------------------------------------------------

Outcome jacobians() {
  const auto report = oracle::run_jacobian_battery(0, 20);
  double worst = 0.0;
  std::string failed;
  for (const auto& r : report.identities) {
    worst = std::max(worst, r.max_error);
    if (!r.pass) failed += " " + r.name;
  }
  return {report.all_pass(), "20 trials x " + std::to_string(report.identities.size()) +
                                 " identities, max rel err " + fmt("%.2e", worst) +
                                 (failed.empty() ? "" : ", failing:" + failed)};
}

Outcome weyl() {
  Rng rng(derive_seed(2, {hash_name("weyl")}));
  std::size_t violations = 0, disagreements = 0;
  double margin = std::numeric_limits<double>::infinity();
  for (int t = 0; t < 1000; ++t) {
    // Mix scales so some pairs are nearly cancelling.
    const Matrix a = rng.gaussian(6, 6, 1.0);
    const Matrix b = rng.gaussian(6, 6, t % 3 == 0 ? 1e-3 : 1.0);
    const auto sa = oracle_singular_values(a), sb = oracle_singular_values(b);
    const auto sab = oracle_singular_values(a + b);
    bool ok = true;
    for (std::size_t i = 1; i <= 6; ++i)
      for (std::size_t j = 1; i + j - 1 <= 6; ++j) {
        const double slack = sa[i - 1] + sb[j - 1] - sab[i + j - 2];
        margin = std::min(margin, slack);
        if (slack < -1e-9) ok = false;
      }
    violations += !ok;
    if (weyl_check(a, b) != ok) ++disagreements;
  }
  return {violations == 0 && disagreements == 0,
          "1000 pairs, " + std::to_string(violations) + " violations, min slack " +
              fmt("%.2e", margin) + ", library weyl_check disagreements " +
              std::to_string(disagreements)};
}

Outcome kronecker() {
  Rng rng(derive_seed(3, {hash_name("kron")}));
  double e_vec = 0, e_t = 0, e_k = 0;
  std::size_t rank_fail = 0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t m = 1 + rng.below(5), n = 1 + rng.below(5), p = 1 + rng.below(5),
                      q = 1 + rng.below(5);
    const Matrix a = rng.gaussian(m, n), b = rng.gaussian(n, p), c = rng.gaussian(p, q);
    const Matrix lhs = vec(matmul(matmul(a, b), c));
    const Matrix rhs = matmul(kron(c.transposed(), a), vec(b));
    e_vec = std::max(e_vec, max_entry_diff(lhs, rhs) / std::max(1.0, max_abs(lhs)));

    const Matrix d = rng.gaussian(p, q);
    e_t = std::max(e_t, max_entry_diff(kron(a, d).transposed(), kron(a.transposed(), d.transposed())));

    const Matrix x = rng.gaussian(m, n);
    e_k = std::max(e_k, max_entry_diff(matmul(commutation_matrix(m, n), vec(x)), vec(x.transposed())));

    // Rank-deficient X = L R with known inner dimension r. Gram-based values
    // are too coarse near zero for a rank cut, so use the direct SVD here.
    const std::size_t rows = 2 + rng.below(4), cols = 2 + rng.below(4);
    const std::size_t r = 1 + rng.below(std::min(rows, cols));
    const Matrix xr = matmul(rng.gaussian(rows, r), rng.gaussian(r, cols));
    const std::size_t rx = numerical_rank(xr);
    const std::size_t rxx = numerical_rank(kron(xr, xr));
    if (rx != r || rxx != rx * rx) ++rank_fail;
  }
  const bool pass = e_vec <= 1e-12 && e_t <= 1e-12 && e_k <= 1e-12 && rank_fail == 0;
  return {pass, "100 each: vec(ABC) " + fmt("%.1e", e_vec) + ", transpose " + fmt("%.1e", e_t) +
                    ", commutation " + fmt("%.1e", e_k) + ", rank mismatches " +
                    std::to_string(rank_fail)};
}

// Largest σ₁(after)/((1+τ)σ₁(before)) over all weight matrices and steps,
// and the largest absolute excess over the exact bound.
struct GrowthStats {
  double worst_ratio = 0.0;
  double worst_excess = -std::numeric_limits<double>::infinity();
  std::size_t checks = 0;
  std::size_t truncations = 0;
};

GrowthStats steady_run(SpectralMode mode) {
  RunConfig cfg = reference_config();
  cfg.train.optimizer.spectral_mode = mode;
  cfg.train.optimizer.weight_decay = 0.0;
  const double tau = cfg.train.optimizer.tau;
  GrowthStats g;
  TrainOptions opts;
  opts.on_step = [&](std::size_t, const Model& before, const Model& after,
                     const std::vector<StepResult>& results) {
    const auto pb = parameters(before);
    const auto pa = parameters(after);
    for (std::size_t i = 0; i < pb.size(); ++i) {
      g.truncations += results[i].truncated;
      if (pb[i].kind != ParamKind::matrix) continue;
      const double s0 = oracle_sigma1(*pb[i].value), s1 = oracle_sigma1(*pa[i].value);
      g.worst_ratio = std::max(g.worst_ratio, s1 / ((1.0 + tau) * s0));
      g.worst_excess = std::max(g.worst_excess, s1 - (1.0 + tau) * s0);
      ++g.checks;
    }
  };
  const auto summary = train(cfg, opts);
  if (summary.diverged) g.checks = 0;
  return g;
}

// Power-mode slack factor on (1+τ). Frozen from the calibration run.
constexpr double kPowerSlack = 1.05;

Outcome steady_rule() {
  const GrowthStats exact = steady_run(SpectralMode::exact);
  const GrowthStats power = steady_run(SpectralMode::power);
  const bool exact_ok = exact.checks > 0 && exact.worst_excess <= 1e-9;
  const bool power_ok = power.checks > 0 && power.worst_ratio <= kPowerSlack;
  return {exact_ok && power_ok,
          "exact: " + std::to_string(exact.checks) + " checks, " +
              std::to_string(exact.truncations) + " truncations, max excess " +
              fmt("%.2e", exact.worst_excess) + "; power(3 iters): max ratio " +
              fmt("%.4f", power.worst_ratio) + " vs slack " + fmt("%.2f", kPowerSlack)};
}

// Textbook AdamW, per entry: ε inside the root, decoupled decay.
struct ReferenceAdamW {
  std::vector<double> m, v;
  std::size_t t = 0;
  void step(Matrix& w, const Matrix& g, const OptimizerConfig& c, double lr) {
    if (m.empty()) m.assign(w.size(), 0.0), v.assign(w.size(), 0.0);
    ++t;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g.data()[i];
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
      const double wi = w.data()[i];
      w.data()[i] = wi - lr * ((m[i] / bc1) / std::sqrt(v[i] / bc2 + c.epsilon)) -
                    lr * c.weight_decay * wi;
    }
  }
};

Outcome equivalence() {
  RunConfig cfg = reference_config();
  cfg.train.optimizer.tau = std::numeric_limits<double>::infinity();
  cfg.train.optimizer.weight_decay = 0.01;
  const auto& oc = cfg.train.optimizer;
  const std::size_t steps = 100;

  Model a = build_model(cfg.model, cfg.train.seed), b = a;
  auto pa = parameters(a);
  auto pb = parameters(b);
  std::vector<ParamState> states;
  for (auto& p : pa) states.push_back(make_state(*p.value));
  std::vector<ReferenceAdamW> ref(pb.size());

  LossOptions loss;
  loss.shift_k = cfg.train.shift_k;
  double worst = 0.0;
  for (std::size_t step = 1; step <= steps; ++step) {
    const Batch batch = train_batch(cfg, step);
    const double lr = cosine_schedule(step - 1, steps, oc.base_lr, oc.min_lr);
    // Each side takes gradients of its own weights; any drift compounds.
    const auto ga = forward_backward(a, batch, loss);
    const auto gb = forward_backward(b, batch, loss);
    const auto gpa = parameters(ga.grads);
    const auto gpb = parameters(gb.grads);
    for (std::size_t i = 0; i < pa.size(); ++i) {
      adamw2_step(*pa[i].value, *gpa[i].value, states[i], oc, lr, pa[i].kind);
      ref[i].step(*pb[i].value, *gpb[i].value, oc, lr);
      worst = std::max(worst, max_entry_diff(*pa[i].value, *pb[i].value));
    }
  }
  return {worst <= 1e-14, std::to_string(steps) + " steps, " + std::to_string(pa.size()) +
                              " tensors, max entry diff " + fmt("%.2e", worst)};
}

double oracle_entropy(const Matrix& a) {
  double h = 0.0;
  for (std::size_t c = 0; c < a.cols(); ++c)
    for (std::size_t r = 0; r < a.rows(); ++r)
      if (a(r, c) > 0) h -= a(r, c) * std::log(a(r, c));
  return h / static_cast<double>(a.cols());
}

std::size_t oracle_effective_rank(const Matrix& a) {
  const auto s = oracle_singular_values(a);
  double total = 0.0;
  for (double v : s) total += v * v;
  double acc = 0.0;
  for (std::size_t k = 0; k < s.size(); ++k) {
    acc += s[k] * s[k];
    if (acc >= 0.99 * total * (1.0 - 1e-12)) return k + 1;
  }
  return s.size();
}

Outcome mode_simulator() {
  const std::size_t n = 197;
  const double ln_n = std::log(static_cast<double>(n));
  std::size_t entropy_ok = 0, rank_ok = 0, malignant_ok = 0, benign_ok = 0;
  std::size_t rank_lo = n, rank_hi = 0;
  double ent_hi = 0.0, diag_lo = 1.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto modes = simulate_attention_modes(768, 64, n, seed);
    const double h = oracle_entropy(modes.malignant);
    const std::size_t r = oracle_effective_rank(modes.malignant);
    double diag = 0.0;
    for (std::size_t i = 0; i < n; ++i) diag += modes.benign(i, i);
    diag /= static_cast<double>(n);
    entropy_ok += h < 0.05 * ln_n;
    rank_ok += r <= 10;
    malignant_ok += h < 0.05 * ln_n && r <= 10;
    benign_ok += diag > 0.9;
    rank_lo = std::min(rank_lo, r);
    rank_hi = std::max(rank_hi, r);
    ent_hi = std::max(ent_hi, h / ln_n);
    diag_lo = std::min(diag_lo, diag);
  }
  return {malignant_ok >= 18 && benign_ok >= 18,
          "malignant: entropy<0.05 ln n in " + std::to_string(entropy_ok) +
              "/20 (max " + fmt("%.4f", ent_hi) + " ln n), eff. rank<=10 in " +
              std::to_string(rank_ok) + "/20 (range " + std::to_string(rank_lo) + "-" +
              std::to_string(rank_hi) + "), both in " + std::to_string(malignant_ok) +
              "/20; benign diag_mass>0.9 in " + std::to_string(benign_ok) + "/20 (min " +
              fmt("%.4f", diag_lo) + ")"};
}

Outcome expectations() {
  std::size_t passes = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(derive_seed(7, {seed}));
    const Matrix g = rng.gaussian(8, 8);
    Matrix w = g + g.transposed();
    w *= 0.5;
    passes += expectation_checks(w, 10000, derive_seed(7, {seed, 1})).pass();
  }
  return {passes >= 95, std::to_string(passes) + "/100 seeds within 4 stderr"};
}

Outcome stability() {
  const fs::path golden_path = fs::path(WEYLAB_SOURCE_DIR) / "tests/golden/reference_summary.json";
  std::ifstream gin(golden_path);
  if (!gin) return {false, "missing " + golden_path.string()};
  const auto golden = nlohmann::json::parse(gin);

  bool ok = true;
  std::ostringstream detail;
  std::string baseline;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    RunConfig cfg = reference_config();
    cfg.train.seed = seed;
    const auto s = train(cfg);
    const bool good = !s.diverged && s.steps_completed == cfg.train.total_steps &&
                      s.final_eval_loss < s.initial_eval_loss && s.total_truncations >= 10;
    ok = ok && good;
    detail << "seed " << seed << (good ? " ok" : " BAD") << " (" << fmt("%.3g", s.initial_eval_loss)
           << "->" << fmt("%.3g", s.final_eval_loss) << ", " << s.total_truncations << " trunc); ";

    if (seed == 0) {
      auto close = [](double a, double b) {
        return std::abs(a - b) <= 1e-9 * std::max(std::abs(a), std::abs(b));
      };
      const bool frozen =
          s.steps_completed == golden["steps_completed"].get<std::size_t>() &&
          s.diverged == golden["diverged"].get<bool>() &&
          s.total_truncations == golden["total_truncations"].get<std::size_t>() &&
          s.degenerate_events == golden["degenerate_events"].get<std::size_t>() &&
          close(s.first_train_loss, golden["first_train_loss"].get<double>()) &&
          close(s.last_train_loss, golden["last_train_loss"].get<double>()) &&
          close(s.initial_eval_loss, golden["initial_eval_loss"].get<double>()) &&
          close(s.final_eval_loss, golden["final_eval_loss"].get<double>());
      if (!frozen) detail << "seed 0 drifted from frozen reference; ";
      ok = ok && frozen;
    }

    cfg.train.optimizer.tau = std::numeric_limits<double>::infinity();
    const auto b = train(cfg);
    baseline += " " + std::to_string(seed) + ":" +
                (b.diverged ? "diverged@" + std::to_string(b.steps_completed)
                            : fmt("%.3g", b.final_eval_loss));
  }
  detail << "AdamW baseline final eval loss:" << baseline;
  return {ok, detail.str()};
}

// Runs a command twice into fresh directories; stdout and every file written
// (bar the wallclock sidecar) must match byte for byte.
bool same_twice(const fs::path& root, const std::string& tag,
                const std::function<std::vector<std::string>(const fs::path&)>& make_args,
                std::string& why) {
  std::string outputs[2];
  std::vector<std::pair<std::string, std::string>> files[2];
  for (int k = 0; k < 2; ++k) {
    const fs::path dir = root / (tag + "_" + std::to_string(k));
    std::ostringstream out, err;
    if (run_cli(make_args(dir), out, err) != kExitOk) {
      why = tag + " failed: " + err.str();
      return false;
    }
    outputs[k] = out.str();
    if (fs::exists(dir))
      for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file() && e.path().filename() != "timing.tsv")
          files[k].emplace_back(fs::relative(e.path(), dir).string(), slurp(e.path()));
    std::sort(files[k].begin(), files[k].end());
  }
  // Paths may appear in stdout; compare with the directory suffix normalized.
  auto strip = [&](std::string s, int k) {
    const std::string d = (root / (tag + "_" + std::to_string(k))).string();
    for (std::size_t p; (p = s.find(d)) != std::string::npos;) s.replace(p, d.size(), "<dir>");
    return s;
  };
  if (strip(outputs[0], 0) != strip(outputs[1], 1)) {
    why = tag + ": stdout differs";
    return false;
  }
  if (files[0] != files[1]) {
    why = tag + ": output files differ";
    return false;
  }
  return true;
}

Outcome determinism() {
  Scratch scratch;
  const fs::path root = scratch.root;
  RunConfig cfg = reference_config();
  cfg.train.total_steps = 300;
  cfg.train.log_every = 50;
  {
    std::ofstream(root / "cfg.json") << config_to_text(cfg);
  }
  const std::string config = (root / "cfg.json").string();
  std::vector<std::string> ok_cmds, failures;
  auto check = [&](const std::string& tag, auto make_args) {
    std::string why;
    if (same_twice(root, tag, make_args, why)) ok_cmds.push_back(tag);
    else failures.push_back(why);
  };
  check("train", [&](const fs::path& d) {
    return std::vector<std::string>{"train", "--config", config, "--out", d.string()};
  });
  check("simulate-modes", [&](const fs::path& d) {
    return std::vector<std::string>{"simulate-modes", "--dims", "64,16,40", "--seed", "4", "--out",
                                    d.string()};
  });
  check("verify-jacobians", [&](const fs::path&) {
    return std::vector<std::string>{"verify-jacobians", "--seed", "0", "--trials", "5"};
  });
  const std::string ckpt = (root / "train_0" / "checkpoint").string();
  check("diagnose", [&](const fs::path& d) {
    return std::vector<std::string>{"diagnose", ckpt, "--out", d.string()};
  });
  const std::string log = (root / "train_0" / "metrics.jsonl").string();
  check("replay", [&](const fs::path& d) {
    return std::vector<std::string>{"replay", log, "--out", d.string()};
  });
  check("selftest", [&](const fs::path&) { return std::vector<std::string>{"selftest"}; });

  std::string detail = std::to_string(ok_cmds.size()) + "/6 commands identical across reruns";
  for (const auto& f : failures) detail += "; " + f;
  return {failures.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, Outcome (*)()>> criteria = {
      {"jacobian battery", jacobians},        {"weyl inequality", weyl},
      {"kronecker/vec identities", kronecker}, {"steady-rule enforcement", steady_rule},
      {"tau=inf equals adamw", equivalence},   {"mode simulator", mode_simulator},
      {"gaussian expectations", expectations}, {"warmup-free stability", stability},
      {"determinism", determinism},
  };
  // Wallclock limits in seconds; 0 = none.
  const double limits[] = {30, 10, 0, 300, 0, 120, 0, 0, 0};

  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (limits[i] > 0 && secs > limits[i]) {
      o.pass = false;
      o.detail += "; over time limit " + fmt("%.0f s", limits[i]);
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << criteria[i].first
              << ", " << fmt("%.1f s", secs) << "): " << o.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
