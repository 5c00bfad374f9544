#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "weylab/config.hpp"
#include "weylab/diagnostics.hpp"
#include "weylab/model.hpp"
#include "weylab/optimizer.hpp"

namespace weylab {

/// Loss over this many consecutive steps above 10× the first loss counts
/// as divergence.
inline constexpr std::size_t kDivergencePatience = 50;
inline constexpr double kDivergenceFactor = 10.0;
/// Held-out sequences used for the initial/final loss comparison.
inline constexpr std::size_t kEvalBatch = 64;

struct TruncationEvent {
  std::size_t step = 0;
  std::string param;
  double scheduled_lr = 0, effective_lr = 0, sigma_hat = 0, delta_hat = 0;
};

struct MetricsRecord {
  std::size_t step = 0;
  double loss = 0.0;  ///< training-batch loss at this step; NaN when diverged on it
  bool diverged = false;
  std::vector<BlockDiagnostics> blocks;
  /// Every truncation since the previous record.
  std::vector<TruncationEvent> truncations;
  double wallclock_ms = 0.0;
};

struct RunSummary {
  std::size_t steps_completed = 0;
  bool diverged = false;
  double first_train_loss = 0.0;
  double last_train_loss = 0.0;
  double initial_eval_loss = 0.0;
  double final_eval_loss = 0.0;
  std::size_t total_truncations = 0;
  std::size_t degenerate_events = 0;
  std::map<std::string, std::size_t> truncations_by_param;
  std::size_t records = 0;
  std::vector<BlockDiagnostics> init_blocks;
};

/// Called after every optimizer step with the parameters before and after.
/// `results` follows parameters() order.
using StepHook = std::function<void(std::size_t step, const Model& before, const Model& after,
                                    const std::vector<StepResult>& results)>;

struct TrainOptions {
  std::string out_dir;  ///< empty: keep everything in memory
  StepHook on_step;
  std::vector<MetricsRecord>* records = nullptr;  ///< optional in-memory copy of the log
  Model* final_model = nullptr;
};

/// Fixed probe sequence on which logged diagnostics are measured.
Batch probe_batch(const RunConfig& cfg);
Batch eval_batch(const RunConfig& cfg);
Batch train_batch(const RunConfig& cfg, std::size_t step);

/// Diagnostics of every block on the probe sequence. Power-iteration seeds
/// depend only on (train seed, step, block), so a checkpoint reproduces them.
std::vector<BlockDiagnostics> diagnose_model(const Model& model, const RunConfig& cfg,
                                             std::size_t step,
                                             std::vector<Matrix>* attention = nullptr);

/// Runs the configured training. With an out_dir, writes metrics.jsonl,
/// timing.tsv, summary.json, config.json, attn/ snapshots and checkpoint/.
RunSummary train(const RunConfig& cfg, const TrainOptions& opts = {});

std::string summary_to_text(const RunSummary& summary);
std::string record_to_line(const MetricsRecord& record);

struct Checkpoint {
  RunConfig config;
  std::size_t step = 0;
  Model model;
};

/// Directory holding manifest.json and one matrix file per parameter.
void save_checkpoint(const std::string& dir, const Model& model, const RunConfig& cfg,
                     std::size_t step);
Checkpoint load_checkpoint(const std::string& dir);

}  // namespace weylab
