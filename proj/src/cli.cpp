#include "weylab/cli.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "weylab/config.hpp"
#include "weylab/diagnostics.hpp"
#include "weylab/error.hpp"
#include "weylab/jacobian_check.hpp"
#include "weylab/linalg.hpp"
#include "weylab/optimizer.hpp"
#include "weylab/random.hpp"
#include "weylab/replay.hpp"
#include "weylab/trainer.hpp"

namespace fs = std::filesystem;

namespace weylab {

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

struct Dims {
  std::size_t d = 768, d_q = 64, n = 197;
};

Dims parse_dims(const std::string& text) {
  Dims dims;
  std::size_t* slots[] = {&dims.d, &dims.d_q, &dims.n};
  std::stringstream ss(text);
  std::string part;
  std::size_t i = 0;
  while (std::getline(ss, part, ',')) {
    if (i == 3) throw ConfigError("--dims", "expected d,d_q,n");
    try {
      std::size_t used = 0;
      const long long v = std::stoll(part, &used);
      if (used != part.size() || v < 1) throw std::invalid_argument(part);
      *slots[i++] = static_cast<std::size_t>(v);
    } catch (const std::logic_error&) {
      throw ConfigError("--dims", "'" + part + "' is not a positive integer");
    }
  }
  if (i != 3) throw ConfigError("--dims", "expected d,d_q,n");
  if (dims.d_q > dims.d) throw ConfigError("--dims", "d_q must not exceed d");
  return dims;
}

int cmd_train(const std::string& config_path, const std::string& out_dir,
              std::optional<std::uint64_t> seed, std::ostream& out) {
  RunConfig cfg = load_config(config_path);
  if (seed) cfg.train.seed = *seed;
  TrainOptions opts;
  opts.out_dir = out_dir;
  const RunSummary s = train(cfg, opts);
  out << "steps_completed " << s.steps_completed << '\n'
      << "diverged " << (s.diverged ? "true" : "false") << '\n'
      << "initial_eval_loss " << num(s.initial_eval_loss) << '\n'
      << "final_eval_loss " << num(s.final_eval_loss) << '\n'
      << "total_truncations " << s.total_truncations << '\n'
      << "records " << s.records << '\n';
  return kExitOk;
}

int cmd_simulate_modes(std::uint64_t seed, const Dims& dims, const std::string& out_dir,
                       std::ostream& out) {
  const SimulatedModes modes = simulate_attention_modes(dims.d, dims.d_q, dims.n, seed);
  const fs::path dir(out_dir);
  fs::create_directories(dir);
  struct Entry {
    const char* name;
    const Matrix& map;
    double sec;
  };
  const Entry entries[] = {{"normal", modes.normal, modes.sec_normal},
                           {"malignant", modes.malignant, modes.sec_malignant},
                           {"benign", modes.benign, modes.sec_benign}};
  std::ofstream tsv(dir / "verdicts.tsv");
  const std::string header = "construction\tverdict\tentropy\teffective_rank\tdiag_mass\tsec_w_3";
  tsv << header << '\n';
  out << header << '\n';
  for (const auto& e : entries) {
    save_matrix((dir / (std::string(e.name) + ".txt")).string(), e.map);
    const CollapseVerdict v = classify_collapse(e.map);
    std::ostringstream row;
    row << e.name << '\t' << to_string(v.mode) << '\t' << num(v.entropy) << '\t'
        << v.effective_rank << '\t' << num(v.diag_mass) << '\t' << num(e.sec);
    tsv << row.str() << '\n';
    out << row.str() << '\n';
  }
  if (!tsv) throw Error("write failed in " + dir.string());
  return kExitOk;
}

int cmd_verify_jacobians(std::uint64_t seed, std::size_t trials, const std::string& fault,
                         std::ostream& out, std::ostream& err) {
  const auto f = oracle::parse_fault(fault);
  if (trials == 0) err << "warning: --trials 0 checks nothing\n";
  const auto report = oracle::run_jacobian_battery(seed, trials, f);
  out << std::left << std::setw(20) << "identity" << std::setw(8) << "checks" << std::setw(14)
      << "max_rel_err" << "result\n";
  for (const auto& r : report.identities) {
    out << std::left << std::setw(20) << r.name << std::setw(8) << r.checks << std::setw(14)
        << num(r.max_error) << (r.pass ? "PASS" : "FAIL") << '\n';
  }
  if (!report.all_pass()) {
    err << "jacobian check failed (tolerance " << num(report.tolerance) << ")\n";
    return kExitFailed;
  }
  return kExitOk;
}

int cmd_diagnose(const std::string& dir, const std::string& out_dir, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(dir);
  // SEC is undefined on a zero query-key product; surface that as an error.
  for (const auto& blk : ck.model.blocks) sec_index(blk.wq, blk.wk, 1);
  const auto diags = diagnose_model(ck.model, ck.config, ck.step);
  std::ostringstream table;
  table << "block";
  for (const auto& k : block_metric_keys()) table << '\t' << k;
  table << '\n';
  for (const auto& d : diags) {
    const double values[] = {d.sigma_wq,    d.sigma_wk,    d.sigma_wv,  d.sigma_wo,
                             d.sigma_w1,    d.sigma_w2,    d.sigma_wqk, d.sigma_wov,
                             d.sigma_w21,   d.gamma1_norm, 0,           d.gamma2_norm,
                             0,             d.x_norm,      d.grad_x_norm, d.attn_entropy};
    table << d.block_index;
    for (std::size_t i = 0; i < std::size(values); ++i) {
      if (i == 10) table << '\t' << (d.beta1_norm ? num(*d.beta1_norm) : "NA");
      else if (i == 12) table << '\t' << (d.beta2_norm ? num(*d.beta2_norm) : "NA");
      else table << '\t' << num(values[i]);
    }
    for (std::size_t s : kSecPoints) {
      auto it = d.sec.find(s);
      table << '\t' << (it == d.sec.end() ? "NA" : num(it->second));
    }
    table << '\n';
  }
  out << table.str();
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    std::ofstream f(fs::path(out_dir) / "diagnostics.tsv");
    f << table.str();
    if (!f) throw Error("write failed in " + out_dir);
  }
  return kExitOk;
}

int cmd_replay(const std::string& log, const std::string& out_dir, std::ostream& out) {
  const ReplayReport r = replay_diagnostics(log, out_dir);
  out << "rows " << r.rows << '\n'
      << "blocks " << r.trajectories.size() << '\n'
      << "total_truncations " << r.total_truncations << '\n'
      << "diverged " << (r.diverged ? "true" : "false") << '\n';
  for (std::size_t b = 0; b < r.extremes.size(); ++b) {
    auto it = r.extremes[b].find("sigma_wqk");
    if (it != r.extremes[b].end()) {
      out << "block " << b << " max sigma_wqk " << num(it->second.max) << " at step "
          << it->second.argmax_step << '\n';
    }
  }
  return kExitOk;
}

int cmd_selftest(std::ostream& out) {
  bool ok = true;
  auto line = [&](const char* name, bool pass) {
    out << (pass ? "PASS " : "FAIL ") << name << '\n';
    ok = ok && pass;
  };
  line("jacobians", oracle::run_jacobian_battery(0, 3).all_pass());

  Rng rng(1);
  const Matrix a = rng.gaussian(3, 4), b = rng.gaussian(4, 2), c = rng.gaussian(2, 5);
  const Matrix lhs = vec(matmul(matmul(a, b), c));
  const Matrix rhs = matmul(kron(c.transposed(), a), vec(b));
  line("vec(ABC) identity", max_abs(lhs - rhs) <= 1e-12 * std::max(1.0, max_abs(lhs)));
  const Matrix x = rng.gaussian(3, 5);
  line("commutation matrix", matmul(commutation_matrix(3, 5), vec(x)) == vec(x.transposed()));

  bool weyl = true;
  for (int i = 0; i < 20; ++i) weyl = weyl && weyl_check(rng.gaussian(6, 6), rng.gaussian(6, 6));
  line("weyl inequality", weyl);

  OptimizerConfig cfg;
  cfg.tau = std::numeric_limits<double>::infinity();
  cfg.weight_decay = 0.01;
  Matrix w1 = rng.gaussian(4, 3), w2 = w1;
  ParamState s1 = make_state(w1), s2 = make_state(w2);
  for (int t = 0; t < 10; ++t) {
    const Matrix g = rng.gaussian(4, 3);
    adamw2_step(w1, g, s1, cfg, 1e-2);
    adamw_step(w2, g, s2, cfg, 1e-2);
  }
  line("adamw2 with tau=inf equals adamw", w1 == w2);
  return ok ? kExitOk : kExitFailed;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Spectral diagnostics and steady-update training for toy transformers", "weylab"};
  app.require_subcommand(1);

  std::string config_path, out_dir, dims_text = "768,64,197", fault = "none", log_path,
                                    checkpoint_dir;
  std::uint64_t seed = 0;
  std::size_t trials = 20;

  auto* train_cmd = app.add_subcommand("train", "Train the toy transformer from a config file");
  train_cmd->add_option("--config", config_path, "Config file (JSON)")->required();
  train_cmd->add_option("--out", out_dir, "Output directory")->required();
  auto* train_seed = train_cmd->add_option("--seed", seed, "Override train.seed");

  auto* sim_cmd = app.add_subcommand("simulate-modes", "Normal / malignant / benign attention maps");
  sim_cmd->add_option("--seed", seed, "Seed");
  sim_cmd->add_option("--dims", dims_text, "d,d_q,n")->capture_default_str();
  sim_cmd->add_option("--out", out_dir, "Output directory")->required();

  auto* jac_cmd = app.add_subcommand("verify-jacobians", "Analytic vs finite-difference Jacobians");
  jac_cmd->add_option("--seed", seed, "Seed");
  jac_cmd->add_option("--trials", trials, "Random instances")->capture_default_str();
  jac_cmd->add_option("--inject-fault", fault,
                      "Corrupt a formula (none, symmetric-commutation, drop-softmax-term)");

  auto* diag_cmd = app.add_subcommand("diagnose", "Block diagnostics of a checkpoint");
  diag_cmd->add_option("checkpoint", checkpoint_dir, "Checkpoint directory")->required();
  diag_cmd->add_option("--out", out_dir, "Also write diagnostics.tsv here");

  auto* replay_cmd = app.add_subcommand("replay", "Turn a metrics log into tables");
  replay_cmd->add_option("log", log_path, "metrics.jsonl")->required();
  replay_cmd->add_option("--out", out_dir, "Output directory for tables");

  auto* self_cmd = app.add_subcommand("selftest", "Quick internal consistency checks");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  try {
    if (*train_cmd) {
      return cmd_train(config_path, out_dir,
                       *train_seed ? std::optional<std::uint64_t>(seed) : std::nullopt, out);
    }
    if (*sim_cmd) return cmd_simulate_modes(seed, parse_dims(dims_text), out_dir, out);
    if (*jac_cmd) return cmd_verify_jacobians(seed, trials, fault, out, err);
    if (*diag_cmd) return cmd_diagnose(checkpoint_dir, out_dir, out);
    if (*replay_cmd) return cmd_replay(log_path, out_dir, out);
    if (*self_cmd) return cmd_selftest(out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailed;
  }
  return kExitUsage;
}

}  // namespace weylab
