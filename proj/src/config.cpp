#include "flm/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

namespace flm {

using nlohmann::json;

void TrainConfig::validate() const {
  if (steps < 1) throw std::invalid_argument("config: steps must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
  if (!(warmup_frac > 0.0 && warmup_frac < 1.0))
    throw std::invalid_argument("config: warmup_frac must be in (0,1)");
  if (n_train < 1 || n_val < 1) throw std::invalid_argument("config: dataset sizes must be >= 1");
  if (eval_interval < 1) throw std::invalid_argument("config: eval_interval must be >= 1");
  if (!(corruption.r_mask > 0.0 && corruption.r_mask < 1.0))
    throw std::invalid_argument("config: r_mask must be in (0,1)");
  if (!(corruption.r_pred_target > 0.0 && corruption.r_pred_target <= 1.0))
    throw std::invalid_argument("config: r_pred_target must be in (0,1]");
  if (corruption.r_corr < 0.0 || corruption.r_corr > 1.0)
    throw std::invalid_argument("config: r_corr must be in [0,1] (0 = minimal 1/L)");
  if (corruption.pre_corrupt_r < 0.0 || corruption.pre_corrupt_r >= 1.0)
    throw std::invalid_argument("config: pre_corrupt_r must be in [0,1)");
  if (!(threshold > 0.0 && threshold < 1.0))
    throw std::invalid_argument("config: threshold must be in (0,1)");
}

json to_json(const TrainConfig& c) {
  json j;
  j["objective"] = objective_name(c.objective);
  j["r_corr"] = c.corruption.r_corr;
  j["r_mask"] = c.corruption.r_mask;
  j["r_pred_target"] = c.corruption.r_pred_target;
  j["corruption_mode"] = c.corruption.span_mode ? "span" : "random_pre_encoding";
  j["pre_corrupt_r"] = c.corruption.pre_corrupt_r;
  j["inter_l2r"] = c.corruption.inter_l2r;
  j["inter_r2l"] = c.corruption.inter_r2l;
  j["steps"] = c.steps;
  j["batch_size"] = c.batch_size;
  j["peak_lr"] = c.peak_lr;
  j["warmup_frac"] = c.warmup_frac;
  j["seed"] = c.seed;
  j["data_seed"] = c.data_seed;
  j["eval_interval"] = c.eval_interval;
  j["n_train"] = c.n_train;
  j["n_val"] = c.n_val;
  j["threshold"] = c.threshold;
  j["decode_n"] = c.decode_n;
  j["model"] = {{"d_model", c.model.d_model},
                {"n_heads", c.model.n_heads},
                {"n_bottom", c.model.n_bottom},
                {"n_top", c.model.n_top},
                {"recon_bottom", c.model.recon_bottom},
                {"recon_top", c.model.recon_top},
                {"l_max", c.model.l_max},
                {"k_vision", c.model.k_vision},
                {"share_encoder", c.model.share_encoder},
                {"recon_vision_keys", c.model.recon_vision_keys}};
  j["probe"] = {{"steps", c.probe.steps},
                {"batch", c.probe.batch},
                {"lr", c.probe.lr},
                {"train_n", c.probe.train_n},
                {"eval_n", c.probe.eval_n}};
  return j;
}

namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed, const char* where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key()))
      throw std::invalid_argument(std::string("config: unknown key '") + it.key() + "' in " +
                                  where);
}

template <typename T>
void get_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

TrainConfig train_config_from_json(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("config: document must be a JSON object");
  static const std::set<std::string> top = {
      "objective",  "r_corr",     "r_mask",        "r_pred_target", "corruption_mode",
      "pre_corrupt_r", "inter_l2r", "inter_r2l",   "steps",         "batch_size",
      "peak_lr",    "warmup_frac", "seed",         "data_seed",     "eval_interval",
      "n_train",    "n_val",      "threshold",     "model",         "probe",
      "decode_n"};
  reject_unknown(j, top, "top level");
  TrainConfig c;
  if (j.contains("objective")) c.objective = objective_from_name(j.at("objective").get<std::string>());
  get_if(j, "r_corr", c.corruption.r_corr);
  get_if(j, "r_mask", c.corruption.r_mask);
  get_if(j, "r_pred_target", c.corruption.r_pred_target);
  if (j.contains("corruption_mode")) {
    const std::string m = j.at("corruption_mode").get<std::string>();
    if (m == "span") c.corruption.span_mode = true;
    else if (m == "random_pre_encoding") c.corruption.span_mode = false;
    else throw std::invalid_argument("config: corruption_mode must be span|random_pre_encoding");
  }
  get_if(j, "pre_corrupt_r", c.corruption.pre_corrupt_r);
  get_if(j, "inter_l2r", c.corruption.inter_l2r);
  get_if(j, "inter_r2l", c.corruption.inter_r2l);
  get_if(j, "steps", c.steps);
  get_if(j, "batch_size", c.batch_size);
  get_if(j, "peak_lr", c.peak_lr);
  get_if(j, "warmup_frac", c.warmup_frac);
  get_if(j, "seed", c.seed);
  get_if(j, "data_seed", c.data_seed);
  get_if(j, "eval_interval", c.eval_interval);
  get_if(j, "n_train", c.n_train);
  get_if(j, "n_val", c.n_val);
  get_if(j, "threshold", c.threshold);
  get_if(j, "decode_n", c.decode_n);
  if (j.contains("model")) {
    const json& m = j.at("model");
    static const std::set<std::string> keys = {"d_model",     "n_heads",     "n_bottom",
                                               "n_top",       "recon_bottom", "recon_top",
                                               "l_max",       "k_vision",    "share_encoder",
                                               "recon_vision_keys"};
    reject_unknown(m, keys, "model");
    get_if(m, "d_model", c.model.d_model);
    get_if(m, "n_heads", c.model.n_heads);
    get_if(m, "n_bottom", c.model.n_bottom);
    get_if(m, "n_top", c.model.n_top);
    get_if(m, "recon_bottom", c.model.recon_bottom);
    get_if(m, "recon_top", c.model.recon_top);
    get_if(m, "l_max", c.model.l_max);
    get_if(m, "k_vision", c.model.k_vision);
    get_if(m, "share_encoder", c.model.share_encoder);
    get_if(m, "recon_vision_keys", c.model.recon_vision_keys);
  }
  if (j.contains("probe")) {
    const json& p = j.at("probe");
    static const std::set<std::string> keys = {"steps", "batch", "lr", "train_n", "eval_n"};
    reject_unknown(p, keys, "probe");
    get_if(p, "steps", c.probe.steps);
    get_if(p, "batch", c.probe.batch);
    get_if(p, "lr", c.probe.lr);
    get_if(p, "train_n", c.probe.train_n);
    get_if(p, "eval_n", c.probe.eval_n);
  }
  c.validate();
  return c;
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  json j;
  in >> j;
  return train_config_from_json(j);
}

void write_json(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out << j.dump(2) << '\n';
}

}  // namespace flm
