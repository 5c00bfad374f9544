#include "weylab/replay.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "json_io.hpp"
#include "weylab/error.hpp"
#include "weylab/matrix.hpp"

namespace fs = std::filesystem;

namespace weylab {

const std::vector<std::string>& block_metric_keys() {
  static const std::vector<std::string> keys = {
      "sigma_wq",    "sigma_wk",    "sigma_wv",    "sigma_wo",    "sigma_w1",
      "sigma_w2",    "sigma_wqk",   "sigma_wov",   "sigma_w21",   "gamma1_norm",
      "beta1_norm",  "gamma2_norm", "beta2_norm",  "x_norm",      "grad_x_norm",
      "entropy",     "sec_1",       "sec_2",       "sec_4",       "sec_8"};
  return keys;
}

namespace {

using detail::Json;

const std::vector<std::string> kEventKeys = {"param", "scheduled_lr", "effective_lr", "sigma_hat",
                                             "delta_hat"};

struct Row {
  std::size_t step = 0;
  std::vector<std::map<std::string, std::optional<double>>> blocks;
};

class LineParser {
 public:
  LineParser(std::string source, std::size_t line) : source_(std::move(source)), line_(line) {}

  [[noreturn]] void fail(const std::string& what) const { throw FormatError(source_, line_, what); }

  const Json& field(const Json& obj, const std::string& key) const {
    if (!obj.contains(key)) fail("missing field '" + key + "'");
    return obj.at(key);
  }

  void exact_keys(const Json& obj, const std::vector<std::string>& keys,
                  const std::string& what) const {
    if (!obj.is_object()) fail(what + " must be an object");
    for (const auto& k : keys) field(obj, k);
    if (obj.size() != keys.size()) fail(what + " has unexpected fields");
  }

  std::optional<double> nullable_number(const Json& v, const std::string& key) const {
    if (v.is_null()) return std::nullopt;
    if (!v.is_number()) fail("field '" + key + "' must be a number or null");
    return v.get<double>();
  }

  std::vector<std::map<std::string, std::optional<double>>> blocks(const Json& arr) const {
    if (!arr.is_array()) fail("'blocks' must be an array");
    std::vector<std::map<std::string, std::optional<double>>> out;
    for (const auto& b : arr) {
      exact_keys(b, block_metric_keys(), "block entry");
      auto& m = out.emplace_back();
      for (const auto& k : block_metric_keys()) m[k] = nullable_number(b.at(k), k);
    }
    return out;
  }

 private:
  std::string source_;
  std::size_t line_;
};

std::string fmt(const std::optional<double>& v) {
  if (!v) return "NA";
  std::ostringstream ss;
  ss.precision(17);
  ss << *v;
  return ss.str();
}

std::size_t snapshot_block_count(const fs::path& attn, std::size_t step) {
  std::size_t b = 0;
  while (fs::exists(attn / ("step_" + std::to_string(step) + "_block_" + std::to_string(b) + ".txt")))
    ++b;
  return b;
}

}  // namespace

ReplayReport replay_diagnostics(const std::string& log_path, const std::string& out_dir) {
  std::ifstream in(log_path);
  if (!in) throw FormatError(log_path, 0, "cannot open metrics log");
  const fs::path run_dir = fs::path(log_path).parent_path();

  ReplayReport report;
  std::vector<Row> rows;

  const fs::path summary_path = run_dir / "summary.json";
  if (fs::exists(summary_path)) {
    std::ifstream s(summary_path);
    Json j;
    try {
      j = Json::parse(s);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(summary_path.string(), 0, e.what());
    }
    if (j.contains("init")) {
      LineParser p(summary_path.string(), 0);
      rows.push_back(Row{0, p.blocks(p.field(j.at("init"), "blocks"))});
      report.has_init_row = true;
    }
  }

  std::string line;
  std::size_t lineno = 0;
  std::size_t last_step = 0;
  bool any = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    LineParser p(log_path, lineno);
    Json j;
    try {
      j = Json::parse(line);
    } catch (const nlohmann::json::exception&) {
      p.fail("not a JSON object");
    }
    p.exact_keys(j, {"step", "loss", "diverged", "blocks", "truncations"}, "record");
    const Json& step = j.at("step");
    if (!step.is_number_unsigned()) p.fail("'step' must be a nonnegative integer");
    const std::size_t s = step.get<std::size_t>();
    if (any && s <= last_step) p.fail("steps must increase");
    any = true;
    last_step = s;
    p.nullable_number(j.at("loss"), "loss");
    if (!j.at("diverged").is_boolean()) p.fail("'diverged' must be a boolean");
    report.diverged = report.diverged || j.at("diverged").get<bool>();
    rows.push_back(Row{s, p.blocks(j.at("blocks"))});
    const Json& events = j.at("truncations");
    if (!events.is_array()) p.fail("'truncations' must be an array");
    for (const auto& e : events) {
      p.exact_keys(e, kEventKeys, "truncation event");
      if (!e.at("param").is_string()) p.fail("'param' must be a string");
      for (std::size_t k = 1; k < kEventKeys.size(); ++k)
        if (!e.at(kEventKeys[k]).is_number()) p.fail("'" + kEventKeys[k] + "' must be a number");
      report.total_truncations += 1;
      report.truncations_by_param[e.at("param").get<std::string>()] += 1;
    }
  }

  report.rows = rows.size();
  for (const Row& row : rows) {
    if (report.trajectories.size() < row.blocks.size()) {
      report.trajectories.resize(row.blocks.size());
      report.extremes.resize(row.blocks.size());
    }
    for (std::size_t b = 0; b < row.blocks.size(); ++b) {
      for (const auto& [key, value] : row.blocks[b]) {
        report.trajectories[b][key].push_back({row.step, value});
        if (!value) continue;
        auto [it, fresh] = report.extremes[b].try_emplace(key, QuantityExtreme{*value, row.step});
        if (!fresh && *value > it->second.max) it->second = {*value, row.step};
      }
    }
  }

  const fs::path attn = run_dir / "attn";
  if (fs::is_directory(attn)) {
    for (const Row& row : rows) {
      const std::size_t nb = snapshot_block_count(attn, row.step);
      for (std::size_t b = 0; b < nb; ++b) {
        const Matrix a = load_matrix(
            (attn / ("step_" + std::to_string(row.step) + "_block_" + std::to_string(b) + ".txt"))
                .string());
        report.verdicts.push_back({row.step, b, classify_collapse(a)});
      }
    }
  }

  if (out_dir.empty()) return report;
  const fs::path out(out_dir);
  fs::create_directories(out);
  for (std::size_t b = 0; b < report.trajectories.size(); ++b) {
    std::ofstream t(out / ("block_" + std::to_string(b) + ".tsv"));
    t << "step";
    for (const auto& k : block_metric_keys()) t << '\t' << k;
    t << '\n';
    const auto& traj = report.trajectories[b];
    const std::size_t n = traj.at(block_metric_keys().front()).size();
    for (std::size_t i = 0; i < n; ++i) {
      t << traj.at(block_metric_keys().front())[i].first;
      for (const auto& k : block_metric_keys()) t << '\t' << fmt(traj.at(k)[i].second);
      t << '\n';
    }
    if (!t) throw Error("write failed in " + out.string());
  }
  {
    std::ofstream v(out / "verdicts.tsv");
    v << "step\tblock\tmode\tentropy\teffective_rank\tdiag_mass\n";
    for (const auto& r : report.verdicts) {
      v << r.step << '\t' << r.block << '\t' << to_string(r.verdict.mode) << '\t'
        << fmt(r.verdict.entropy) << '\t' << r.verdict.effective_rank << '\t'
        << fmt(r.verdict.diag_mass) << '\n';
    }
    if (!v) throw Error("write failed in " + out.string());
  }
  Json j;
  j["rows"] = report.rows;
  j["has_init_row"] = report.has_init_row;
  j["diverged"] = report.diverged;
  j["total_truncations"] = report.total_truncations;
  j["truncations_by_param"] = Json::object();
  for (const auto& [k, c] : report.truncations_by_param) j["truncations_by_param"][k] = c;
  j["blocks"] = Json::array();
  for (const auto& ext : report.extremes) {
    Json b = Json::object();
    for (const auto& k : block_metric_keys()) {
      auto it = ext.find(k);
      if (it == ext.end()) continue;
      b[k] = {{"max", it->second.max}, {"argmax_step", it->second.argmax_step}};
    }
    j["blocks"].push_back(std::move(b));
  }
  std::ofstream r(out / "report.json");
  r << j.dump(2) << '\n';
  if (!r) throw Error("write failed in " + out.string());
  return report;
}

}  // namespace weylab
