#pragma once
// Checkpoint format: a JSON manifest (parameter names, shapes, byte offsets,
// embedded config) plus one flat binary file of little-endian 32-bit floats
// in manifest order. Writes are atomic (temp file then rename).

#include <string>

#include <json.hpp>

#include "flm/optim.hpp"

namespace flm {

// Writes <dir>/<base>.json and <dir>/<base>.bin.
void save_checkpoint(const std::string& dir, const std::string& base,
                     const ParamStore<float>& params, const nlohmann::json& config);

struct LoadedCheckpoint {
  nlohmann::json config;
  std::vector<std::string> names;
  std::vector<std::vector<int>> shapes;
  std::vector<std::vector<float>> values;
};

// manifest_path points at the .json file.
LoadedCheckpoint load_checkpoint(const std::string& manifest_path);

// Copies loaded values into a matching store; throws on any name/shape drift.
void apply_checkpoint(const LoadedCheckpoint& ck, ParamStore<float>& params);

}  // namespace flm
