#include "weylab/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json_io.hpp"
#include "weylab/error.hpp"

namespace weylab {

void TrainConfig::validate(const ModelConfig& model) const {
  optimizer.validate();
  if (batch_size < 1) throw ConfigError("train.batch_size", "must be at least 1");
  if (log_every < 1) throw ConfigError("train.log_every", "must be at least 1");
  if (task != "copy_shift_k") throw ConfigError("train.task", "only copy_shift_k is supported");
  if (shift_k >= model.seq_len) throw ConfigError("train.shift_k", "must be below model.seq_len");
}

namespace detail {

Json config_to_json(const RunConfig& cfg) {
  const ModelConfig& m = cfg.model;
  const TrainConfig& t = cfg.train;
  const OptimizerConfig& o = t.optimizer;
  Json j;
  j["model"] = {{"d", m.d},
                {"d_q", m.d_q},
                {"d_v", m.d_v},
                {"n_blocks", m.n_blocks},
                {"vocab", m.vocab},
                {"seq_len", m.seq_len},
                {"norm_kind", to_string(m.norm_kind)},
                {"causal", m.causal}};
  j["train"] = {{"total_steps", t.total_steps}, {"batch_size", t.batch_size},
                {"log_every", t.log_every},     {"seed", t.seed},
                {"task", t.task},               {"shift_k", t.shift_k}};
  j["optimizer"] = {{"base_lr", o.base_lr},
                    {"min_lr", o.min_lr},
                    {"beta1", o.beta1},
                    {"beta2", o.beta2},
                    {"epsilon", o.epsilon},
                    {"weight_decay", o.weight_decay},
                    {"tau", number_or_inf(o.tau)},
                    {"tau_vector", std::isnan(o.tau_vector) ? Json(nullptr)
                                                            : number_or_inf(o.tau_vector)},
                    {"power_iters", o.power_iters},
                    {"power_tol", o.power_tol},
                    {"spectral_mode", o.spectral_mode == SpectralMode::exact ? "exact" : "power"}};
  return j;
}

namespace {

class Section {
 public:
  Section(const Json& root, const std::string& name) : name_(name) {
    if (!root.contains(name)) return;
    node_ = &root.at(name);
    if (!node_->is_object()) throw ConfigError(name, "must be an object");
  }

  template <class F>
  void read(const std::string& key, F&& assign) {
    seen_.insert(key);
    if (!node_ || !node_->contains(key)) return;
    try {
      assign(node_->at(key));
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError(name_ + "." + key, e.what());
    }
  }

  void count(const std::string& key, std::size_t& out) {
    read(key, [&](const Json& v) {
      if (!v.is_number_integer() || v.get<long long>() < 0) {
        throw ConfigError(name_ + "." + key, "expected a nonnegative integer");
      }
      out = v.get<std::size_t>();
    });
  }
  void real(const std::string& key, double& out) {
    read(key, [&](const Json& v) { out = as_real(key, v); });
  }
  double as_real(const std::string& key, const Json& v) const {
    if (v.is_number()) return v.get<double>();
    if (v.is_string() && v.get<std::string>() == "inf") return std::numeric_limits<double>::infinity();
    throw ConfigError(name_ + "." + key, "expected a number");
  }
  void text(const std::string& key, std::string& out) {
    read(key, [&](const Json& v) {
      if (!v.is_string()) throw ConfigError(name_ + "." + key, "expected a string");
      out = v.get<std::string>();
    });
  }

  void finish() const {
    if (!node_) return;
    for (const auto& [key, _] : node_->items())
      if (!seen_.contains(key)) throw ConfigError(name_ + "." + key, "unknown key");
  }

 private:
  std::string name_;
  const Json* node_ = nullptr;
  std::set<std::string> seen_;
};

}  // namespace

RunConfig config_from_json(const Json& j) {
  if (!j.is_object()) throw ConfigError("<root>", "config must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (key != "model" && key != "train" && key != "optimizer") throw ConfigError(key, "unknown key");

  RunConfig cfg;
  ModelConfig& m = cfg.model;
  Section model(j, "model");
  model.count("d", m.d);
  model.count("d_q", m.d_q);
  model.count("d_v", m.d_v);
  model.count("n_blocks", m.n_blocks);
  model.count("vocab", m.vocab);
  model.count("seq_len", m.seq_len);
  model.read("norm_kind", [&](const Json& v) {
    if (!v.is_string()) throw ConfigError("model.norm_kind", "expected a string");
    m.norm_kind = parse_norm_kind(v.get<std::string>());
  });
  model.read("causal", [&](const Json& v) {
    if (!v.is_boolean()) throw ConfigError("model.causal", "expected true or false");
    m.causal = v.get<bool>();
  });
  model.finish();

  TrainConfig& t = cfg.train;
  Section train(j, "train");
  train.count("total_steps", t.total_steps);
  train.count("batch_size", t.batch_size);
  train.count("log_every", t.log_every);
  train.read("seed", [&](const Json& v) {
    if (!v.is_number_integer() || v.get<long long>() < 0) {
      throw ConfigError("train.seed", "expected a nonnegative integer");
    }
    t.seed = v.get<std::uint64_t>();
  });
  train.text("task", t.task);
  train.count("shift_k", t.shift_k);
  train.finish();

  OptimizerConfig& o = t.optimizer;
  Section opt(j, "optimizer");
  opt.real("base_lr", o.base_lr);
  opt.real("min_lr", o.min_lr);
  opt.real("beta1", o.beta1);
  opt.real("beta2", o.beta2);
  opt.real("epsilon", o.epsilon);
  opt.real("weight_decay", o.weight_decay);
  opt.real("tau", o.tau);
  opt.read("tau_vector", [&](const Json& v) {
    o.tau_vector = v.is_null() ? std::numeric_limits<double>::quiet_NaN()
                               : opt.as_real("tau_vector", v);
  });
  opt.count("power_iters", o.power_iters);
  opt.real("power_tol", o.power_tol);
  opt.read("spectral_mode", [&](const Json& v) {
    const std::string s = v.is_string() ? v.get<std::string>() : "";
    if (s == "power") o.spectral_mode = SpectralMode::power;
    else if (s == "exact") o.spectral_mode = SpectralMode::exact;
    else throw ConfigError("optimizer.spectral_mode", "expected power or exact");
  });
  opt.finish();

  m.validate();
  t.validate(m);
  return cfg;
}

Json diagnostics_to_json(const BlockDiagnostics& d) {
  Json j;
  j["sigma_wq"] = d.sigma_wq;
  j["sigma_wk"] = d.sigma_wk;
  j["sigma_wv"] = d.sigma_wv;
  j["sigma_wo"] = d.sigma_wo;
  j["sigma_w1"] = d.sigma_w1;
  j["sigma_w2"] = d.sigma_w2;
  j["sigma_wqk"] = d.sigma_wqk;
  j["sigma_wov"] = d.sigma_wov;
  j["sigma_w21"] = d.sigma_w21;
  j["gamma1_norm"] = d.gamma1_norm;
  j["beta1_norm"] = optional_number(d.beta1_norm);
  j["gamma2_norm"] = d.gamma2_norm;
  j["beta2_norm"] = optional_number(d.beta2_norm);
  j["x_norm"] = d.x_norm;
  j["grad_x_norm"] = d.grad_x_norm;
  j["entropy"] = d.attn_entropy;
  for (std::size_t s : kSecPoints) {
    auto it = d.sec.find(s);
    j["sec_" + std::to_string(s)] = it == d.sec.end() ? Json(nullptr) : Json(it->second);
  }
  return j;
}

}  // namespace detail

RunConfig parse_config(const std::string& text, const std::string& source) {
  detail::Json j;
  try {
    j = detail::Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(source, std::string("invalid JSON: ") + e.what());
  }
  return detail::config_from_json(j);
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path, "cannot open config file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path);
}

std::string config_to_text(const RunConfig& cfg) { return detail::config_to_json(cfg).dump(2) + "\n"; }

}  // namespace weylab
