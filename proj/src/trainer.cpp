#include "flm/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <thread>

#include "flm/svg.hpp"

namespace flm {

namespace {
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

constexpr uint64_t kTrainStream = 0x747261696e000000ull;
constexpr uint64_t kEvalStream = 0x6576616c00000000ull;
constexpr uint64_t kProbeStream = 0x70726f6265000000ull;
}  // namespace

double lr_at(long step, const TrainConfig& cfg) {
  if (step <= 0) return 0.0;
  if (step > cfg.steps) return 0.0;
  const double warm = cfg.warmup_frac * cfg.steps;
  if (static_cast<double>(step) <= warm) return cfg.peak_lr * (static_cast<double>(step) / warm);
  return cfg.peak_lr * (static_cast<double>(cfg.steps - step) / (cfg.steps - warm));
}

long steps_to_threshold(const RunMetrics& metrics, double threshold) {
  for (const auto& r : metrics.rows)
    if (r.split == "val" && r.recon_acc >= threshold) return r.step;
  return -1;
}

std::vector<SampleProblem> frozen_eval_problems(Objective obj, const TokenBatch& val_batch,
                                                const TrainConfig& cfg) {
  CorruptionCfg c = cfg.corruption;
  c.r_pred_target = 1.0;  // evaluation always scores the full prediction set
  std::mt19937_64 rng(cfg.data_seed ^ kEvalStream);
  return sample_problems(obj, val_batch, c, rng);
}

EvalOutcome evaluate(const Model<float>& model, const TokenBatch& val_batch, Objective obj,
                     const std::vector<SampleProblem>& problems, const CorruptionCfg& corr) {
  NoGradGuard ng;
  CorruptionCfg c = corr;
  c.r_pred_target = 1.0;
  StepResult<float> r = objective_forward(model, val_batch, obj, problems, c);
  EvalOutcome out;
  out.recon_acc = r.recon_acc;
  out.losses = r.breakdown;
  out.r_pred = r.r_pred;
  out.r_corr = r.r_corr;
  return out;
}

TrainResult train(const TrainConfig& cfg_in, const std::string& out_dir) {
  TrainConfig cfg = cfg_in;
  cfg.validate();
  const auto t0 = Clock::now();

  TrainResult res;
  res.data = std::make_shared<Dataset>(gen_dataset(cfg.data_seed, cfg.n_train, cfg.n_val));
  cfg.model.vocab = res.data->vocab.size();
  res.model = std::make_shared<Model<float>>(cfg.model, cfg.seed);
  Model<float>& model = *res.model;

  // Probe-only parameters stay out of pretraining (they would otherwise be
  // decayed by AdamW without ever receiving gradients).
  std::vector<Tensor<float>> trainable;
  for (auto& [name, t] : model.params().items)
    if (name.rfind("probe.", 0) != 0 && name != "cls_emb") trainable.push_back(t);
  AdamWConfig ocfg;
  AdamW<float> opt(trainable, ocfg);

  std::mt19937_64 rng(cfg.seed ^ kTrainStream);

  std::vector<int> val_idx(res.data->val.size());
  for (size_t i = 0; i < val_idx.size(); ++i) val_idx[i] = static_cast<int>(i);
  const TokenBatch val_batch = make_batch(res.data->val, val_idx);
  const auto eval_problems = frozen_eval_problems(cfg.objective, val_batch, cfg);

  const std::string obj_name = objective_name(cfg.objective);
  auto run_eval = [&](long step) {
    EvalOutcome ev = evaluate(model, val_batch, cfg.objective, eval_problems, cfg.corruption);
    MetricsRow row;
    row.step = step;
    row.split = "val";
    row.objective = obj_name;
    row.loss_total = ev.losses.loss_total;
    row.loss_R = ev.losses.loss_R;
    row.loss_l2r = ev.losses.loss_l2r;
    row.loss_r2l = ev.losses.loss_r2l;
    row.recon_acc = ev.recon_acc;
    row.r_pred = ev.r_pred;
    row.r_corr = ev.r_corr;
    row.lr = lr_at(step, cfg);
    row.wall_clock_s = seconds_since(t0);
    res.metrics.rows.push_back(row);
    res.final_val_acc = ev.recon_acc;
  };

  long step = 0;
  while (step < cfg.steps) {
    auto batches = epoch_batches(static_cast<int>(res.data->train.size()), cfg.batch_size, rng);
    for (const auto& idx : batches) {
      if (step >= cfg.steps) break;
      ++step;
      const TokenBatch tb = make_batch(res.data->train, idx);
      const auto problems = sample_problems(cfg.objective, tb, cfg.corruption, rng);
      StepResult<float> sr = objective_forward(model, tb, cfg.objective, problems, cfg.corruption);
      if (!std::isfinite(sr.breakdown.loss_total)) {
        if (!out_dir.empty())
          save_checkpoint(out_dir, "checkpoint_diagnostic", model.params(), to_json(cfg));
        throw TrainAbort("non-finite loss at step " + std::to_string(step) +
                         (out_dir.empty() ? "" : "; diagnostic checkpoint written"));
      }
      model.params().zero_grads();
      sr.loss.backward();
      const double lr = lr_at(step, cfg);
      opt.step(lr);

      MetricsRow row;
      row.step = step;
      row.split = "train";
      row.objective = obj_name;
      row.loss_total = sr.breakdown.loss_total;
      row.loss_R = sr.breakdown.loss_R;
      row.loss_l2r = sr.breakdown.loss_l2r;
      row.loss_r2l = sr.breakdown.loss_r2l;
      row.recon_acc = sr.recon_acc;
      row.r_pred = sr.r_pred;
      row.r_corr = sr.r_corr;
      row.lr = lr;
      row.wall_clock_s = seconds_since(t0);
      res.metrics.rows.push_back(row);

      if (step % cfg.eval_interval == 0 || step == cfg.steps) run_eval(step);
    }
  }

  res.wall_clock_s = seconds_since(t0);
  if (!out_dir.empty()) save_checkpoint(out_dir, "checkpoint", model.params(), to_json(cfg));
  return res;
}

ProbeResult probe_train_eval(Model<float>& model, const Dataset& data, Objective obj,
                             const ProbeCfg& pcfg, uint64_t seed) {
  std::mt19937_64 rng(seed ^ kProbeStream);

  // Fresh probe parameters; everything else frozen.
  auto& params = model.params();
  std::vector<Tensor<float>> probe_params;
  std::vector<std::pair<std::string, bool>> saved_flags;
  for (auto& [name, t] : params.items) {
    saved_flags.emplace_back(name, t.requires_grad());
    const bool is_probe = name.rfind("probe.", 0) == 0 || name == "cls_emb";
    t.set_requires_grad(is_probe);
    if (is_probe) {
      probe_params.push_back(t);
      if (name.ends_with(".b"))
        fill_const(t, 0.0f);
      else
        fill_normal(t, rng, 0.02);
    }
  }

  const int n_train = std::min<int>(pcfg.train_n, static_cast<int>(data.train.size()));
  const int n_eval = std::min<int>(pcfg.eval_n, static_cast<int>(data.val.size()));

  // Freeze and preproject each sample's key set once; probe steps then only
  // run the query path of the reconstructor trunk.
  auto freeze_keys = [&](const Sample& s) {
    NoGradGuard ng;
    std::vector<Tensor<float>> keys;
    if (obj == Objective::flm) {
      LayerFeatures<float> f = model.encode_text_dual(s.caption, s.attrs);
      keys = model.dual_keys(f);
    } else {
      AttnRegime regime = obj == Objective::mlm ? AttnRegime::full : AttnRegime::causal;
      auto layers = model.encode_text_single(s.caption, s.attrs, regime);
      for (int r = 1; r <= model.config().recon_layers(); ++r)
        keys.push_back(layers[model.config().aligned_encoder_layer(r) - 1]);
    }
    return model.preproject_keys(keys);
  };

  std::vector<Model<float>::PreprojKeys> train_keys, eval_keys;
  train_keys.reserve(n_train);
  for (int i = 0; i < n_train; ++i) train_keys.push_back(freeze_keys(data.train[i]));
  eval_keys.reserve(n_eval);
  for (int i = 0; i < n_eval; ++i) eval_keys.push_back(freeze_keys(data.val[i]));

  AdamWConfig ocfg;
  AdamW<float> opt(probe_params, ocfg);
  std::uniform_int_distribution<int> pick(0, n_train - 1);
  for (int stepi = 0; stepi < pcfg.steps; ++stepi) {
    Tensor<float> loss;
    for (int b = 0; b < pcfg.batch; ++b) {
      const int i = pick(rng);
      auto heads = model.probe_heads_preproj(train_keys[i]);
      for (int f = 0; f < 4; ++f) {
        Tensor<float> ce = cross_entropy(heads[f], data.train[i].attrs.field(f));
        loss = loss.defined() ? add(loss, ce) : ce;
      }
    }
    loss = scale(loss, 1.0f / (pcfg.batch * 4));
    params.zero_grads();
    loss.backward();
    opt.step(pcfg.lr);
  }

  ProbeResult res;
  {
    NoGradGuard ng;
    std::array<int, 4> hits = {0, 0, 0, 0};
    for (int i = 0; i < n_eval; ++i) {
      auto heads = model.probe_heads_preproj(eval_keys[i]);
      for (int f = 0; f < 4; ++f) {
        const auto& v = heads[f].v();
        int best = 0;
        for (size_t j = 1; j < v.size(); ++j)
          if (v[j] > v[best]) best = static_cast<int>(j);
        if (best == data.val[i].attrs.field(f)) ++hits[f];
      }
    }
    double sum = 0;
    for (int f = 0; f < 4; ++f) {
      res.field_acc[f] = static_cast<double>(hits[f]) / n_eval;
      sum += res.field_acc[f];
    }
    res.mean_acc = sum / 4.0;
  }

  for (auto& [name, flag] : saved_flags) params.at(name).set_requires_grad(flag);
  return res;
}

double decode_mention_rate(const Model<float>& model, const Dataset& data, int n, int max_len) {
  const int count = std::min<int>(n, static_cast<int>(data.val.size()));
  double total = 0.0;
  for (int i = 0; i < count; ++i) {
    const Sample& s = data.val[i];
    const std::vector<int> decoded = model.greedy_decode(s.attrs, max_len);
    int mentioned = 0;
    for (int f = 0; f < 4; ++f) {
      const int want = data.vocab.attr_word_id(f, s.attrs.field(f));
      if (std::find(decoded.begin(), decoded.end(), want) != decoded.end()) ++mentioned;
    }
    total += mentioned / 4.0;
  }
  return count > 0 ? total / count : 0.0;
}

int env_thread_cap() {
  if (const char* env = std::getenv("FLMLAB_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

CompareReport compare(const std::vector<CompareEntry>& configs, double threshold, int seeds,
                      const std::string& out_dir, int workers) {
  namespace fs = std::filesystem;
  if (!out_dir.empty()) fs::create_directories(out_dir);
  if (workers <= 0) workers = env_thread_cap();

  struct Job {
    std::string name;
    TrainConfig cfg;
    int seed_index = 0;
  };
  std::vector<Job> jobs;
  for (const auto& entry : configs)
    for (int k = 0; k < seeds; ++k) {
      Job j{entry.name, entry.cfg, k};
      j.cfg.seed = entry.cfg.seed + static_cast<uint64_t>(k);
      j.cfg.threshold = threshold;
      jobs.push_back(std::move(j));
    }

  std::vector<CompareRunRow> rows(jobs.size());
  std::vector<SeriesData> series(jobs.size());
  std::vector<std::string> errors(jobs.size());

  std::atomic<size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      const Job& job = jobs[i];
      CompareRunRow row;
      row.name = job.name;
      row.objective = objective_name(job.cfg.objective);
      row.seed = job.cfg.seed;
      try {
        const std::string run_dir =
            out_dir.empty() ? "" : out_dir + "/run_" + job.name + "_s" + std::to_string(job.seed_index);
        TrainResult tr = train(job.cfg, run_dir);
        if (!run_dir.empty()) {
          std::ofstream csv(run_dir + "/metrics.csv");
          csv << tr.metrics.to_csv();
        }
        row.steps_to_threshold = steps_to_threshold(tr.metrics, threshold);
        row.final_val_acc = tr.final_val_acc;
        row.probe_acc =
            probe_train_eval(*tr.model, *tr.data, job.cfg.objective, job.cfg.probe, job.cfg.seed)
                .mean_acc;
        row.decode_rate =
            decode_mention_rate(*tr.model, *tr.data, job.cfg.decode_n, job.cfg.model.l_max);
        row.wall_clock_s = tr.wall_clock_s;
        SeriesData sd;
        sd.name = job.name + "_s" + std::to_string(job.seed_index);
        for (const auto& r : tr.metrics.rows)
          if (r.split == "val") sd.points.emplace_back(static_cast<double>(r.step), r.recon_acc);
        series[i] = std::move(sd);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
      rows[i] = std::move(row);
    }
  };

  std::vector<std::thread> pool;
  const int n_workers = std::min<int>(workers, static_cast<int>(jobs.size()));
  for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  CompareReport report;
  report.runs = rows;
  for (const auto& e : errors)
    if (!e.empty()) report.all_ok = false;

  std::string runs_csv =
      "name,objective,seed,steps_to_threshold,final_val_acc,probe_acc,decode_mention_rate,"
      "wall_clock_s\n";
  for (const auto& r : rows) {
    runs_csv += r.name + "," + r.objective + "," + std::to_string(r.seed) + "," +
                (r.steps_to_threshold < 0 ? std::string("not_reached")
                                          : std::to_string(r.steps_to_threshold)) +
                "," + format_double(r.final_val_acc) + "," + format_double(r.probe_acc) + "," +
                format_double(r.decode_rate) + "," + format_double(r.wall_clock_s) + "\n";
  }
  report.runs_csv = runs_csv;

  struct Agg {
    std::string name, objective;
    std::vector<double> stt, acc, probe, dec, wall;
  };
  std::vector<Agg> aggs;
  for (const auto& entry : configs) {
    Agg a;
    a.name = entry.name;
    a.objective = objective_name(entry.cfg.objective);
    for (const auto& r : rows)
      if (r.name == entry.name) {
        a.stt.push_back(r.steps_to_threshold < 0 ? 1e18 : static_cast<double>(r.steps_to_threshold));
        a.acc.push_back(r.final_val_acc);
        a.probe.push_back(r.probe_acc);
        a.dec.push_back(r.decode_rate);
        a.wall.push_back(r.wall_clock_s);
      }
    aggs.push_back(std::move(a));
  }
  std::stable_sort(aggs.begin(), aggs.end(), [](const Agg& a, const Agg& b) {
    return median(a.stt) < median(b.stt);
  });
  std::string summary =
      "rank,name,objective,median_steps_to_threshold,median_final_val_acc,median_probe_acc,"
      "median_decode_mention_rate,total_wall_clock_s\n";
  int rank = 1;
  for (const auto& a : aggs) {
    const double stt = median(a.stt);
    double wall_total = 0;
    for (double w : a.wall) wall_total += w;
    summary += std::to_string(rank++) + "," + a.name + "," + a.objective + "," +
               (stt >= 1e17 ? std::string("not_reached") : format_double(stt)) + "," +
               format_double(median(a.acc)) + "," + format_double(median(a.probe)) + "," +
               format_double(median(a.dec)) + "," + format_double(wall_total) + "\n";
  }
  report.summary_csv = summary;

  if (!out_dir.empty()) {
    std::ofstream(out_dir + "/runs.csv") << runs_csv;
    std::ofstream(out_dir + "/summary.csv") << summary;
    write_line_chart(out_dir + "/recon_acc.svg", series, "validation reconstruction accuracy",
                     "step", "recon_acc");
  }
  return report;
}

}  // namespace flm
