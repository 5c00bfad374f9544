#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "weylab/model.hpp"
#include "weylab/optimizer.hpp"

namespace weylab {

struct TrainConfig {
  OptimizerConfig optimizer;
  std::size_t total_steps = 2000;
  std::size_t batch_size = 8;
  std::size_t log_every = 100;
  std::uint64_t seed = 0;
  std::string task = "copy_shift_k";
  std::size_t shift_k = 1;

  void validate(const ModelConfig& model) const;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
};

/// JSON object with optional sections "model", "train", "optimizer"; missing
/// keys keep their defaults, unknown keys raise ConfigError. tau accepts a
/// number or the string "inf".
RunConfig parse_config(const std::string& text, const std::string& source = "<config>");
RunConfig load_config(const std::string& path);
/// Canonical form: every field, fixed key order. Round-trips through
/// parse_config.
std::string config_to_text(const RunConfig& cfg);

}  // namespace weylab
