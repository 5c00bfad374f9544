#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "weylab/diagnostics.hpp"

namespace weylab {

/// Per-block keys of a metrics record, in log order.
const std::vector<std::string>& block_metric_keys();

struct QuantityExtreme {
  double max = 0.0;
  std::size_t argmax_step = 0;
};

struct VerdictRow {
  std::size_t step = 0;
  std::size_t block = 0;
  CollapseVerdict verdict;
};

struct ReplayReport {
  std::size_t rows = 0;  ///< records, plus the init row when available
  bool has_init_row = false;
  bool diverged = false;
  std::size_t total_truncations = 0;
  std::map<std::string, std::size_t> truncations_by_param;
  /// block → key → (step, value or missing)
  std::vector<std::map<std::string, std::vector<std::pair<std::size_t, std::optional<double>>>>>
      trajectories;
  std::vector<std::map<std::string, QuantityExtreme>> extremes;  ///< per block
  std::vector<VerdictRow> verdicts;
};

/// Reads a metrics log plus, when present beside it, summary.json (the
/// step-0 row) and attn/ snapshots (collapse verdicts). A malformed line
/// raises FormatError carrying its line number. With a non-empty out_dir,
/// writes block_<b>.tsv, verdicts.tsv and report.json there.
ReplayReport replay_diagnostics(const std::string& log_path, const std::string& out_dir = "");

}  // namespace weylab
