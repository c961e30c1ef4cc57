#pragma once
// The four pretraining losses under the unified corruption-prediction view.
// All losses are token-mean so schedules transfer across objectives.

#include <random>
#include <string>
#include <vector>

#include "flm/data.hpp"
#include "flm/maskgen.hpp"
#include "flm/model.hpp"

namespace flm {

enum class Objective { flm, mlm, ar, prefixlm };

inline const char* objective_name(Objective o) {
  switch (o) {
    case Objective::flm: return "flm";
    case Objective::mlm: return "mlm";
    case Objective::ar: return "ar";
    case Objective::prefixlm: return "prefixlm";
  }
  return "?";
}

inline Objective objective_from_name(const std::string& s) {
  if (s == "flm") return Objective::flm;
  if (s == "mlm") return Objective::mlm;
  if (s == "ar") return Objective::ar;
  if (s == "prefixlm") return Objective::prefixlm;
  throw std::invalid_argument("unknown objective: " + s);
}

struct CorruptionCfg {
  double r_corr = 0.0;        // FLM span rate; 0 means the minimal 1/L
  double r_mask = 0.4;        // MLM mask rate
  double r_pred_target = 1.0; // subsampled prediction rate for the loss
  bool span_mode = true;      // false: random pre-encoding corruption for FLM
  double pre_corrupt_r = 0.15;
  bool inter_l2r = true;      // FLM intermediate losses
  bool inter_r2l = true;
};

// One sample's corruption-prediction task. `input` is what the encoder sees
// (MASK-corrupted for MLM / pre-encoding mode); targets are always the
// original caption. `loss_positions` are 1-based caption positions.
struct SampleProblem {
  SpanSet spans;                 // FLM only
  std::vector<int> input;        // empty = uncorrupted caption
  std::vector<int> loss_positions;
  int L_p = 0;                   // PrefixLM only
};

struct LossBreakdown {
  double loss_R = 0.0;
  double loss_l2r = 0.0;
  double loss_r2l = 0.0;
  double loss_inter = 0.0;
  double loss_total = 0.0;
  int pred_count = 0;
};

template <typename S>
struct StepResult {
  Tensor<S> loss;  // scalar graph root
  LossBreakdown breakdown;
  double recon_acc = 0.0;
  double r_pred = 0.0;  // measured over the batch
  double r_corr = 0.0;
};

inline double effective_r_corr(double cfg_r_corr, int L) {
  const double lo = 1.0 / L;
  if (cfg_r_corr <= 0.0) return lo;
  return std::clamp(cfg_r_corr, lo, 1.0);
}

inline SampleProblem sample_problem(Objective obj, const std::vector<int>& caption,
                                    const CorruptionCfg& cfg, std::mt19937_64& rng) {
  const int L = static_cast<int>(caption.size());
  SampleProblem p;
  std::vector<int> all(L);
  for (int i = 1; i <= L; ++i) all[i - 1] = i;
  switch (obj) {
    case Objective::flm: {
      if (cfg.span_mode) {
        p.spans = sample_flm_spans(L, effective_r_corr(cfg.r_corr, L), rng);
      } else {
        p.spans = sample_flm_spans(L, 1.0 / L, rng);
        p.input = apply_pre_encoding_corruption(caption, cfg.pre_corrupt_r, kMask, rng).first;
      }
      p.loss_positions = subsample_predictions(all, cfg.r_pred_target, rng);
      break;
    }
    case Objective::mlm: {
      const std::vector<int> masked = sample_mlm_mask(L, cfg.r_mask, rng);
      p.input = caption;
      for (int i : masked) p.input[i - 1] = kMask;
      p.loss_positions = subsample_predictions(masked, cfg.r_pred_target, rng);
      break;
    }
    case Objective::ar: {
      p.loss_positions = all;
      break;
    }
    case Objective::prefixlm: {
      std::uniform_real_distribution<double> u(0.0, 1.0);
      p.L_p = prefix_length_from_ratio(L, u(rng));
      for (int i = p.L_p; i <= L; ++i) p.loss_positions.push_back(i);
      break;
    }
  }
  return p;
}

inline std::vector<SampleProblem> sample_problems(Objective obj, const TokenBatch& batch,
                                                  const CorruptionCfg& cfg, std::mt19937_64& rng) {
  std::vector<SampleProblem> out;
  out.reserve(batch.batch);
  for (int b = 0; b < batch.batch; ++b)
    out.push_back(sample_problem(obj, batch.caption_of(b), cfg, rng));
  return out;
}

// The dependency matrix a problem realizes; used by the consistency checks.
inline DependencyMatrix problem_matrix(Objective obj, const SampleProblem& p,
                                       const std::vector<int>& caption) {
  const int L = static_cast<int>(caption.size());
  switch (obj) {
    case Objective::flm: return spans_to_matrix(p.spans);
    case Objective::mlm: {
      std::vector<int> masked;
      for (int i = 1; i <= L; ++i)
        if (p.input[i - 1] != caption[i - 1]) masked.push_back(i);
      return mlm_matrix_from_mask(L, masked);
    }
    case Objective::ar: return build_ar_matrix(L);
    case Objective::prefixlm: return build_prefix_matrix(L, p.L_p);
  }
  throw std::logic_error("unreachable");
}

namespace detail {

template <typename S>
void accumulate(Tensor<S>& acc, const Tensor<S>& term) {
  acc = acc.defined() ? add(acc, term) : term;
}

template <typename S>
double argmax_accuracy(const Tensor<S>& logits, const std::vector<int>& targets, int* hits,
                       int* total) {
  const int v = logits.cols();
  for (int r = 0; r < logits.rows(); ++r) {
    const S* row = logits.v().data() + static_cast<size_t>(r) * v;
    int best = 0;
    for (int j = 1; j < v; ++j)
      if (row[j] > row[best]) best = j;
    if (best == targets[r]) ++*hits;
    ++*total;
  }
  return 0.0;
}

}  // namespace detail

template <typename S>
StepResult<S> objective_forward(const Model<S>& model, const TokenBatch& batch, Objective obj,
                                const std::vector<SampleProblem>& problems,
                                const CorruptionCfg& cfg) {
  StepResult<S> res;
  Tensor<S> sum_R, sum_l2r, sum_r2l;
  int count_R = 0, count_inter = 0;
  int hits = 0, total = 0;
  double rp_acc = 0.0, rc_acc = 0.0;

  for (int b = 0; b < batch.batch; ++b) {
    const std::vector<int> caption = batch.caption_of(b);
    const int L = static_cast<int>(caption.size());
    const SampleProblem& p = problems[b];
    const std::vector<int>& input = p.input.empty() ? caption : p.input;
    if (p.loss_positions.empty()) throw std::invalid_argument("objective: empty prediction set");

    if (obj == Objective::flm) {
      LayerFeatures<S> f = model.encode_text_dual(input, batch.attrs[b]);
      Tensor<S> logits = model.reconstruct(f, p.spans, p.loss_positions);
      std::vector<int> targets(p.loss_positions.size());
      std::vector<int> rows(p.loss_positions.size());
      for (size_t r = 0; r < p.loss_positions.size(); ++r) {
        targets[r] = caption[p.loss_positions[r] - 1];
        rows[r] = static_cast<int>(r);
      }
      detail::accumulate(sum_R, cross_entropy_rows(logits, targets, rows));
      count_R += static_cast<int>(rows.size());
      detail::argmax_accuracy(logits, targets, &hits, &total);
      if (cfg.inter_l2r || cfg.inter_r2l) {
        auto [l2r, r2l] = model.lm_heads(f);
        std::vector<int> rows_all(L);
        for (int i = 0; i < L; ++i) rows_all[i] = i;
        if (cfg.inter_l2r) detail::accumulate(sum_l2r, cross_entropy_rows(l2r, caption, rows_all));
        if (cfg.inter_r2l) detail::accumulate(sum_r2l, cross_entropy_rows(r2l, caption, rows_all));
        count_inter += L;
      }
      const RateReport rr = rates(spans_to_matrix(p.spans));
      rp_acc += static_cast<double>(p.loss_positions.size()) / L;
      rc_acc += rr.mean_r_corr;
    } else {
      AttnRegime regime = obj == Objective::mlm   ? AttnRegime::full
                          : obj == Objective::ar ? AttnRegime::causal
                                                 : AttnRegime::prefix;
      auto layers = model.encode_text_single(input, batch.attrs[b], regime, p.L_p);
      Tensor<S> h = model.final_norm(layers.back());
      // Feature row for target i: position i for MLM (input there is MASK),
      // position i-1 for the causal objectives.
      std::vector<int> feat_rows(p.loss_positions.size());
      std::vector<int> targets(p.loss_positions.size());
      std::vector<int> rows(p.loss_positions.size());
      for (size_t r = 0; r < p.loss_positions.size(); ++r) {
        const int i = p.loss_positions[r];
        feat_rows[r] = obj == Objective::mlm ? i : i - 1;
        targets[r] = caption[i - 1];
        rows[r] = static_cast<int>(r);
      }
      Tensor<S> logits = model.prediction_head(gather_rows(h, feat_rows));
      detail::accumulate(sum_R, cross_entropy_rows(logits, targets, rows));
      count_R += static_cast<int>(rows.size());
      detail::argmax_accuracy(logits, targets, &hits, &total);
      const RateReport rr = rates(problem_matrix(obj, p, caption));
      rp_acc += static_cast<double>(p.loss_positions.size()) / L;
      rc_acc += rr.mean_r_corr;
    }
  }

  Tensor<S> loss = scale(sum_R, S(1) / S(count_R));
  res.breakdown.loss_R = static_cast<double>(loss.item());
  if (sum_l2r.defined()) {
    Tensor<S> m = scale(sum_l2r, S(1) / S(count_inter));
    res.breakdown.loss_l2r = static_cast<double>(m.item());
    loss = add(loss, m);
  }
  if (sum_r2l.defined()) {
    Tensor<S> m = scale(sum_r2l, S(1) / S(count_inter));
    res.breakdown.loss_r2l = static_cast<double>(m.item());
    loss = add(loss, m);
  }
  res.breakdown.loss_inter = res.breakdown.loss_l2r + res.breakdown.loss_r2l;
  res.breakdown.loss_total = static_cast<double>(loss.item());
  res.breakdown.pred_count = count_R;
  res.loss = loss;
  res.recon_acc = total > 0 ? static_cast<double>(hits) / total : 0.0;
  res.r_pred = rp_acc / batch.batch;
  res.r_corr = rc_acc / batch.batch;
  return res;
}

}  // namespace flm
