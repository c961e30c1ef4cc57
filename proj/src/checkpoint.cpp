#include "flm/checkpoint.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

namespace flm {

using nlohmann::json;
namespace fs = std::filesystem;

void save_checkpoint(const std::string& dir, const std::string& base,
                     const ParamStore<float>& params, const json& config) {
  fs::create_directories(dir);
  const fs::path bin_path = fs::path(dir) / (base + ".bin");
  const fs::path json_path = fs::path(dir) / (base + ".json");
  const fs::path bin_tmp = fs::path(dir) / (base + ".bin.tmp");
  const fs::path json_tmp = fs::path(dir) / (base + ".json.tmp");

  json manifest;
  manifest["format"] = "flmlab-checkpoint-v1";
  manifest["dtype"] = "f32le";
  manifest["data_file"] = base + ".bin";
  manifest["config"] = config;

  {
    std::ofstream bin(bin_tmp, std::ios::binary);
    if (!bin) throw std::runtime_error("cannot write " + bin_tmp.string());
    size_t offset = 0;
    json plist = json::array();
    for (const auto& [name, t] : params.items) {
      json p;
      p["name"] = name;
      p["shape"] = t.shape();
      p["offset"] = offset;  // bytes
      p["count"] = t.numel();
      plist.push_back(p);
      bin.write(reinterpret_cast<const char*>(t.v().data()),
                static_cast<std::streamsize>(t.numel() * sizeof(float)));
      offset += t.numel() * sizeof(float);
    }
    manifest["params"] = plist;
    if (!bin.good()) throw std::runtime_error("short write to " + bin_tmp.string());
  }
  {
    std::ofstream mj(json_tmp);
    if (!mj) throw std::runtime_error("cannot write " + json_tmp.string());
    mj << manifest.dump(2) << '\n';
  }
  fs::rename(bin_tmp, bin_path);
  fs::rename(json_tmp, json_path);
}

LoadedCheckpoint load_checkpoint(const std::string& manifest_path) {
  std::ifstream mj(manifest_path);
  if (!mj) throw std::runtime_error("cannot open checkpoint manifest: " + manifest_path);
  json manifest;
  mj >> manifest;
  if (manifest.value("format", "") != "flmlab-checkpoint-v1")
    throw std::runtime_error("unrecognized checkpoint format");

  LoadedCheckpoint ck;
  ck.config = manifest.at("config");
  const fs::path bin_path =
      fs::path(manifest_path).parent_path() / manifest.at("data_file").get<std::string>();
  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw std::runtime_error("cannot open checkpoint data: " + bin_path.string());
  for (const auto& p : manifest.at("params")) {
    ck.names.push_back(p.at("name").get<std::string>());
    ck.shapes.push_back(p.at("shape").get<std::vector<int>>());
    const size_t count = p.at("count").get<size_t>();
    std::vector<float> vals(count);
    bin.seekg(static_cast<std::streamoff>(p.at("offset").get<size_t>()));
    bin.read(reinterpret_cast<char*>(vals.data()),
             static_cast<std::streamsize>(count * sizeof(float)));
    if (!bin.good()) throw std::runtime_error("checkpoint data truncated");
    ck.values.push_back(std::move(vals));
  }
  return ck;
}

void apply_checkpoint(const LoadedCheckpoint& ck, ParamStore<float>& params) {
  if (ck.names.size() != params.items.size())
    throw std::runtime_error("checkpoint parameter count mismatch");
  for (size_t i = 0; i < ck.names.size(); ++i) {
    Tensor<float>& t = params.at(ck.names[i]);
    if (t.shape() != ck.shapes[i])
      throw std::runtime_error("checkpoint shape mismatch for " + ck.names[i]);
    t.v() = ck.values[i];
  }
}

}  // namespace flm
