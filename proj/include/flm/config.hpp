#pragma once
// Experiment configuration: JSON documents mirroring TrainConfig. Unknown
// keys are rejected; defaults are filled and echoed back for provenance.

#include <cstdint>
#include <string>

#include <json.hpp>

#include "flm/model.hpp"
#include "flm/objectives.hpp"

namespace flm {

struct ProbeCfg {
  int steps = 2500;
  int batch = 32;
  double lr = 5e-3;
  int train_n = 768;
  int eval_n = 384;
};

struct TrainConfig {
  Objective objective = Objective::flm;
  CorruptionCfg corruption;
  int steps = 600;
  int batch_size = 8;
  double peak_lr = 4e-4;
  double warmup_frac = 0.05;
  uint64_t seed = 1;
  uint64_t data_seed = 1234;
  int eval_interval = 25;
  int n_train = 2048;
  int n_val = 96;
  double threshold = 0.85;
  ModelConfig model;
  ProbeCfg probe;
  int decode_n = 64;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
// Throws std::invalid_argument naming the first schema violation.
TrainConfig train_config_from_json(const nlohmann::json& j);
TrainConfig load_train_config(const std::string& path);
void write_json(const std::string& path, const nlohmann::json& j);

}  // namespace flm
