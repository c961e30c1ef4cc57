#pragma once
// Deterministic training loop with AdamW, linear warmup/decay schedule,
// periodic validation by reconstruction accuracy, checkpointing, and the
// steps-to-threshold convergence measurement.

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "flm/checkpoint.hpp"
#include "flm/config.hpp"
#include "flm/data.hpp"
#include "flm/metrics.hpp"
#include "flm/model.hpp"
#include "flm/objectives.hpp"

namespace flm {

// Linear warmup to peak over warmup_frac*steps, then linear decay to zero at
// cfg.steps; zero beyond. Steps are 1-based in the loop, lr_at(0) == 0.
double lr_at(long step, const TrainConfig& cfg);

struct TrainResult {
  RunMetrics metrics;
  std::shared_ptr<Model<float>> model;
  std::shared_ptr<Dataset> data;
  double wall_clock_s = 0.0;
  double final_val_acc = 0.0;
};

struct TrainAbort : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// out_dir, when set, receives the final checkpoint (checkpoint.json/.bin), a
// diagnostic checkpoint on a non-finite loss, and nothing else.
TrainResult train(const TrainConfig& cfg, const std::string& out_dir = "");

// First eval step with recon_acc >= threshold; -1 when never reached.
long steps_to_threshold(const RunMetrics& metrics, double threshold);

// Frozen validation problems, generated from the dataset seed so every run of
// an objective family evaluates the same prediction tasks.
std::vector<SampleProblem> frozen_eval_problems(Objective obj, const TokenBatch& val_batch,
                                                const TrainConfig& cfg);

struct EvalOutcome {
  double recon_acc = 0.0;
  LossBreakdown losses;
  double r_pred = 0.0, r_corr = 0.0;
};

EvalOutcome evaluate(const Model<float>& model, const TokenBatch& val_batch, Objective obj,
                     const std::vector<SampleProblem>& problems, const CorruptionCfg& corr);

struct ProbeResult {
  std::array<double, 4> field_acc = {0, 0, 0, 0};
  double mean_acc = 0.0;  // fraction in [0,1]
};

// Frozen-backbone CLS probe: re-initializes the CLS query embedding and the
// four attribute heads, trains them on frozen features, evaluates on val.
ProbeResult probe_train_eval(Model<float>& model, const Dataset& data, Objective obj,
                             const ProbeCfg& cfg, uint64_t seed);

// Fraction of attribute values verbalized in greedy decodes of val samples.
double decode_mention_rate(const Model<float>& model, const Dataset& data, int n, int max_len);

struct CompareEntry {
  std::string name;
  TrainConfig cfg;
};

struct CompareRunRow {
  std::string name;
  std::string objective;
  uint64_t seed = 0;
  long steps_to_threshold = -1;  // -1 = not reached
  double final_val_acc = 0.0;
  double probe_acc = 0.0;
  double decode_rate = 0.0;
  double wall_clock_s = 0.0;
};

struct CompareReport {
  std::vector<CompareRunRow> runs;
  std::string runs_csv;
  std::string summary_csv;  // per-config medians, ranked by steps-to-threshold
  bool all_ok = true;
};

// Runs each config over `seeds` seed offsets (worker-parallel across runs;
// each run stays single-threaded and deterministic). Writes per-run metrics
// CSVs, runs.csv, summary.csv and an accuracy-vs-step SVG under out_dir.
CompareReport compare(const std::vector<CompareEntry>& configs, double threshold, int seeds,
                      const std::string& out_dir, int workers = 0);

int env_thread_cap();
double median(std::vector<double> v);

}  // namespace flm
