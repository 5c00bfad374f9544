#include "weylab/trainer.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "json_io.hpp"
#include "weylab/error.hpp"
#include "weylab/random.hpp"

namespace fs = std::filesystem;

namespace weylab {

namespace {

using detail::Json;

constexpr std::uint64_t kProbeStream = hash_name("probe");
constexpr std::uint64_t kEvalStream = hash_name("eval");
constexpr std::uint64_t kBatchStream = hash_name("batch");
constexpr std::uint64_t kDiagStream = hash_name("diagnostics");

class LineSink {
 public:
  explicit LineSink(const fs::path& path) : path_(path), out_(path, std::ios::trunc) {
    if (!out_) throw Error("cannot open " + path.string() + " for writing");
  }
  void write(const std::string& line) {
    out_ << line << '\n';
    out_.flush();
    if (!out_) throw Error("write failed on " + path_.string());
  }

 private:
  fs::path path_;
  std::ofstream out_;
};

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  out << text;
  if (!out) throw Error("write failed on " + path.string());
}

Json blocks_json(const std::vector<BlockDiagnostics>& blocks) {
  Json arr = Json::array();
  for (const auto& b : blocks) arr.push_back(detail::diagnostics_to_json(b));
  return arr;
}

}  // namespace

Batch probe_batch(const RunConfig& cfg) {
  return make_batch(cfg.model, 1, derive_seed(cfg.train.seed, {kProbeStream}));
}

Batch eval_batch(const RunConfig& cfg) {
  return make_batch(cfg.model, kEvalBatch, derive_seed(cfg.train.seed, {kEvalStream}));
}

Batch train_batch(const RunConfig& cfg, std::size_t step) {
  return make_batch(cfg.model, cfg.train.batch_size,
                    derive_seed(cfg.train.seed, {kBatchStream, step}));
}

std::vector<BlockDiagnostics> diagnose_model(const Model& model, const RunConfig& cfg,
                                             std::size_t step, std::vector<Matrix>* attention) {
  LossOptions opts;
  opts.shift_k = cfg.train.shift_k;
  opts.trace = true;
  const ForwardBackward fb = forward_backward(model, probe_batch(cfg), opts);
  if (!fb.finite) throw NumericError("diagnostics: probe loss is not finite");
  const SpectralBudget budget{cfg.train.optimizer.power_iters, cfg.train.optimizer.power_tol};
  const std::uint64_t seed = derive_seed(cfg.train.seed, {kDiagStream, step});
  std::vector<BlockDiagnostics> out;
  if (attention) attention->clear();
  for (std::size_t b = 0; b < model.blocks.size(); ++b) {
    const BlockTrace& t = fb.trace[b];
    out.push_back(collect_block_diagnostics(model.blocks[b], t.x, t.grad_x, t.a, step, b, budget,
                                            seed));
    if (attention) attention->push_back(t.a);
  }
  return out;
}

std::string record_to_line(const MetricsRecord& r) {
  Json j;
  j["step"] = r.step;
  j["loss"] = std::isfinite(r.loss) ? Json(r.loss) : Json(nullptr);
  j["diverged"] = r.diverged;
  j["blocks"] = blocks_json(r.blocks);
  Json events = Json::array();
  for (const auto& e : r.truncations) {
    events.push_back({{"param", e.param},
                      {"scheduled_lr", e.scheduled_lr},
                      {"effective_lr", e.effective_lr},
                      {"sigma_hat", e.sigma_hat},
                      {"delta_hat", e.delta_hat}});
  }
  j["truncations"] = std::move(events);
  return j.dump();
}

std::string summary_to_text(const RunSummary& s) {
  auto num = [](double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); };
  Json j;
  j["steps_completed"] = s.steps_completed;
  j["diverged"] = s.diverged;
  j["first_train_loss"] = num(s.first_train_loss);
  j["last_train_loss"] = num(s.last_train_loss);
  j["initial_eval_loss"] = num(s.initial_eval_loss);
  j["final_eval_loss"] = num(s.final_eval_loss);
  j["total_truncations"] = s.total_truncations;
  j["degenerate_events"] = s.degenerate_events;
  j["truncations_by_param"] = Json::object();
  for (const auto& [name, count] : s.truncations_by_param) j["truncations_by_param"][name] = count;
  j["records"] = s.records;
  j["init"] = {{"step", 0}, {"blocks", blocks_json(s.init_blocks)}};
  return j.dump(2) + "\n";
}

RunSummary train(const RunConfig& cfg, const TrainOptions& opts) {
  cfg.model.validate();
  cfg.train.validate(cfg.model);
  const TrainConfig& tc = cfg.train;
  const OptimizerConfig& oc = tc.optimizer;
  using Clock = std::chrono::steady_clock;
  const auto t0 = Clock::now();

  const bool persist = !opts.out_dir.empty();
  const fs::path out(opts.out_dir);
  std::unique_ptr<LineSink> metrics, timing;
  if (persist) {
    fs::create_directories(out / "attn");
    write_file(out / "config.json", config_to_text(cfg));
    metrics = std::make_unique<LineSink>(out / "metrics.jsonl");
    timing = std::make_unique<LineSink>(out / "timing.tsv");
    timing->write("step\twallclock_ms");
  }
  auto snapshot = [&](std::size_t step, const std::vector<Matrix>& maps) {
    if (!persist) return;
    for (std::size_t b = 0; b < maps.size(); ++b) {
      save_matrix((out / "attn" / ("step_" + std::to_string(step) + "_block_" +
                                   std::to_string(b) + ".txt"))
                      .string(),
                  maps[b]);
    }
  };

  Model model = build_model(cfg.model, tc.seed);
  const Batch eval = eval_batch(cfg);
  RunSummary summary;
  summary.initial_eval_loss = evaluate_loss(model, eval, tc.shift_k);
  {
    std::vector<Matrix> maps;
    summary.init_blocks = diagnose_model(model, cfg, 0, &maps);
    snapshot(0, maps);
  }

  std::vector<ParamState> states;
  std::vector<std::uint64_t> streams;
  for (const auto& p : parameters(std::as_const(model))) {
    states.push_back(make_state(*p.value));
    streams.push_back(derive_seed(tc.seed, {hash_name(p.name)}));
  }

  LossOptions loss_opts;
  loss_opts.shift_k = tc.shift_k;
  std::vector<TruncationEvent> pending;
  std::size_t over_count = 0;
  std::vector<StepResult> results;

  auto emit = [&](std::size_t step, double loss, bool diverged) {
    MetricsRecord rec;
    rec.step = step;
    rec.loss = loss;
    rec.diverged = diverged;
    std::vector<Matrix> maps;
    try {
      rec.blocks = diagnose_model(model, cfg, step, &maps);
    } catch (const NumericError&) {
      // A diverged model may not survive the probe; log the record without blocks.
    }
    snapshot(step, maps);
    rec.truncations = std::move(pending);
    pending.clear();
    rec.wallclock_ms =
        std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
    if (persist) {
      metrics->write(record_to_line(rec));
      std::ostringstream row;
      row << step << '\t' << rec.wallclock_ms;
      timing->write(row.str());
    }
    if (opts.records) opts.records->push_back(rec);
    summary.records += 1;
  };

  for (std::size_t step = 1; step <= tc.total_steps; ++step) {
    const ForwardBackward fb = forward_backward(model, train_batch(cfg, step), loss_opts);
    if (step == 1) summary.first_train_loss = fb.loss;
    summary.last_train_loss = fb.loss;
    if (!fb.finite) {
      summary.diverged = true;
      summary.steps_completed = step;
      emit(step, fb.loss, true);
      break;
    }

    const double lr = cosine_schedule(step - 1, tc.total_steps, oc.base_lr, oc.min_lr);
    Model before;
    if (opts.on_step) before = model;
    auto params = parameters(model);
    const auto grads = parameters(std::as_const(fb.grads));
    results.clear();
    bool blew_up = false;
    for (std::size_t i = 0; i < params.size(); ++i) {
      StepResult r;
      try {
        r = adamw2_step(*params[i].value, *grads[i].value, states[i], oc, lr, params[i].kind,
                        streams[i]);
      } catch (const NumericError&) {
        blew_up = true;
        break;
      }
      if (r.truncated) {
        pending.push_back({step, params[i].name, r.scheduled_lr, r.effective_lr, r.sigma_hat,
                           r.delta_hat});
        summary.total_truncations += 1;
        summary.truncations_by_param[params[i].name] += 1;
      }
      if (r.degenerate) summary.degenerate_events += 1;
      results.push_back(r);
    }
    summary.steps_completed = step;
    if (blew_up) {
      summary.diverged = true;
      emit(step, fb.loss, true);
      break;
    }
    if (opts.on_step) opts.on_step(step, before, model, results);

    over_count = fb.loss > kDivergenceFactor * summary.first_train_loss ? over_count + 1 : 0;
    if (over_count >= kDivergencePatience) {
      summary.diverged = true;
      emit(step, fb.loss, true);
      break;
    }
    if (step % tc.log_every == 0 || step == tc.total_steps) emit(step, fb.loss, false);
  }

  if (tc.total_steps == 0) {
    summary.first_train_loss = summary.last_train_loss =
        evaluate_loss(model, train_batch(cfg, 1), tc.shift_k);
  }
  summary.final_eval_loss = evaluate_loss(model, eval, tc.shift_k);
  if (persist) {
    save_checkpoint((out / "checkpoint").string(), model, cfg, summary.steps_completed);
    write_file(out / "summary.json", summary_to_text(summary));
  }
  if (opts.final_model) *opts.final_model = std::move(model);
  return summary;
}

void save_checkpoint(const std::string& dir, const Model& model, const RunConfig& cfg,
                     std::size_t step) {
  const fs::path root(dir);
  fs::create_directories(root);
  Json manifest;
  manifest["format"] = "weylab-checkpoint-1";
  manifest["step"] = step;
  manifest["config"] = detail::config_to_json(cfg);
  manifest["params"] = Json::array();
  for (const auto& p : parameters(model)) {
    const std::string file = p.name + ".txt";
    save_matrix((root / file).string(), *p.value);
    manifest["params"].push_back({{"name", p.name}, {"file", file}});
  }
  write_file(root / "manifest.json", manifest.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::string& dir) {
  const fs::path root(dir);
  const fs::path manifest_path = root / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw FormatError(manifest_path.string(), 0, "cannot open checkpoint manifest");
  Json manifest;
  try {
    manifest = Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(manifest_path.string(), 0, e.what());
  }
  Checkpoint ck;
  try {
    ck.step = manifest.at("step").get<std::size_t>();
    ck.config = detail::config_from_json(manifest.at("config"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(manifest_path.string(), 0, e.what());
  } catch (const ConfigError& e) {
    throw FormatError(manifest_path.string(), 0, e.what());
  }
  ck.model = build_model(ck.config.model, ck.config.train.seed);
  std::map<std::string, std::string> files;
  try {
    for (const auto& entry : manifest.at("params"))
      files[entry.at("name").get<std::string>()] = entry.at("file").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(manifest_path.string(), 0, e.what());
  }
  for (auto& p : parameters(ck.model)) {
    auto it = files.find(p.name);
    if (it == files.end()) {
      throw FormatError(manifest_path.string(), 0, "missing parameter " + p.name);
    }
    const std::string path = (root / it->second).string();
    Matrix m = load_matrix(path);
    if (m.rows() != p.value->rows() || m.cols() != p.value->cols()) {
      throw FormatError(path, 0, "expected shape " + p.value->shape_string() + ", got " +
                                     m.shape_string());
    }
    *p.value = std::move(m);
  }
  return ck;
}

}  // namespace weylab
