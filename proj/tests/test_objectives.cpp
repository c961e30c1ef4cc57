#include <doctest.h>

#include <cmath>
#include <random>

#include "flm/data.hpp"
#include "flm/objectives.hpp"
#include "flm/optim.hpp"

using namespace flm;

namespace {

ModelConfig tiny_cfg(const Dataset& ds) {
  ModelConfig mc;
  mc.d_model = 16;
  mc.n_heads = 2;
  mc.n_bottom = 1;
  mc.n_top = 1;
  mc.recon_bottom = 1;
  mc.recon_top = 1;
  mc.vocab = ds.vocab.size();
  return mc;
}

TokenBatch first_batch(const Dataset& ds, int n) {
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;
  return make_batch(ds.train, idx);
}

}  // namespace

TEST_CASE("token-mean reconstruction loss closed forms") {
  // Uniform logits over a 4-token vocabulary cost ln 4 per predicted token.
  auto logits = Tensor<double>::from({3, 4}, std::vector<double>(12, 0.25));
  auto loss = scale(cross_entropy_rows(logits, {1, 2, 3}, {0, 1, 2}), 1.0 / 3);
  CHECK(loss.item() == doctest::Approx(std::log(4.0)));

  // A single-token set equals that token's cross-entropy.
  auto one = cross_entropy_rows(logits, {1, 2, 3}, {1});
  auto direct = cross_entropy(Tensor<double>::from({1, 4}, {0.25, 0.25, 0.25, 0.25}), 2);
  CHECK(one.item() == doctest::Approx(direct.item()));

  // Peaked correct logits cost ~0.
  auto peaked = Tensor<double>::from({1, 3}, {30.0, 0.0, 0.0});
  CHECK(cross_entropy_rows(peaked, {0}, {0}).item() == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("subsampled prediction loss is unbiased for the full-set mean") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> d(0.0, 2.0);
  std::vector<double> per_token(8);
  for (auto& c : per_token) c = std::abs(d(rng)) + 0.1;
  double full_mean = 0.0;
  for (double c : per_token) full_mean += c;
  full_mean /= 8;

  std::vector<int> set = {1, 2, 3, 4, 5, 6, 7, 8};
  double mc = 0.0;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    const auto sub = subsample_predictions(set, 0.5, rng);
    double m = 0.0;
    for (int s : sub) m += per_token[s - 1];
    mc += m / static_cast<double>(sub.size());
  }
  mc /= draws;
  CHECK(std::abs(mc - full_mean) / full_mean < 0.02);
}

TEST_CASE("loss breakdown additivity is exact at 64-bit") {
  Dataset ds = gen_dataset(9, 16, 4);
  ModelConfig mc = tiny_cfg(ds);
  Model<double> model(mc, 3);
  std::vector<int> idx = {0, 1, 2};
  TokenBatch tb = make_batch(ds.train, idx);
  CorruptionCfg cfg;
  std::mt19937_64 rng(8);
  auto problems = sample_problems(Objective::flm, tb, cfg, rng);
  StepResult<double> r = objective_forward(model, tb, Objective::flm, problems, cfg);
  CHECK(r.breakdown.loss_total == r.breakdown.loss_R + r.breakdown.loss_l2r + r.breakdown.loss_r2l);
  CHECK(r.breakdown.loss_inter == r.breakdown.loss_l2r + r.breakdown.loss_r2l);
  CHECK(r.breakdown.loss_R >= 0.0);
  CHECK(r.breakdown.loss_l2r >= 0.0);
  CHECK(r.breakdown.loss_r2l >= 0.0);
  CHECK(r.r_pred == 1.0);

  // Toggling a direction off removes exactly that component.
  CorruptionCfg no_r2l = cfg;
  no_r2l.inter_r2l = false;
  StepResult<double> r2 = objective_forward(model, tb, Objective::flm, problems, no_r2l);
  CHECK(r2.breakdown.loss_r2l == 0.0);
  CHECK(r2.breakdown.loss_total == r2.breakdown.loss_R + r2.breakdown.loss_l2r);
  CHECK(r2.breakdown.loss_R == doctest::Approx(r.breakdown.loss_R));
}

TEST_CASE("direction-symmetric weights and palindromes equalize the two heads") {
  Dataset ds = gen_dataset(9, 4, 2);
  ModelConfig mc = tiny_cfg(ds);
  Model<double> model(mc, 5);

  // Surgery for exact mirror symmetry: BOS and EOS share an embedding and the
  // positional table is palindromic over the L=5 stream (positions 0..6).
  auto& tok = model.params().at("tok_emb");
  const int d = mc.d_model;
  for (int c = 0; c < d; ++c) tok.v()[kEos * d + c] = tok.v()[kBos * d + c];
  auto& pos = model.params().at("pos_emb");
  for (int p = 0; p < 3; ++p)
    for (int c = 0; c < d; ++c) pos.v()[(6 - p) * d + c] = pos.v()[p * d + c];

  TokenBatch tb;
  tb.batch = 1;
  tb.width = 7;
  tb.tokens = {kBos, 10, 11, 12, 11, 10, kEos};
  tb.lengths = {5};
  tb.attrs = {Attributes{0, 0, 1, 0}};

  CorruptionCfg cfg;
  std::mt19937_64 rng(3);
  auto problems = sample_problems(Objective::flm, tb, cfg, rng);
  StepResult<double> r = objective_forward(model, tb, Objective::flm, problems, cfg);
  CHECK(r.breakdown.loss_l2r == doctest::Approx(r.breakdown.loss_r2l).epsilon(1e-9));
}

TEST_CASE("mlm loss mechanics") {
  Dataset ds = gen_dataset(9, 16, 4);
  Model<float> model(tiny_cfg(ds), 6);
  TokenBatch tb = first_batch(ds, 2);
  CorruptionCfg cfg;
  std::mt19937_64 rng(12);
  auto problems = sample_problems(Objective::mlm, tb, cfg, rng);
  for (int b = 0; b < tb.batch; ++b) {
    REQUIRE_FALSE(problems[b].loss_positions.empty());
    for (int i : problems[b].loss_positions) CHECK(problems[b].input[i - 1] == kMask);
  }
  StepResult<float> r = objective_forward(model, tb, Objective::mlm, problems, cfg);
  CHECK(r.breakdown.loss_total == r.breakdown.loss_R);
  CHECK(r.breakdown.loss_l2r == 0.0);
  CHECK(std::isfinite(r.breakdown.loss_total));

  // An empty prediction set is rejected outright.
  auto bad = problems;
  bad[0].loss_positions.clear();
  CHECK_THROWS(objective_forward(model, tb, Objective::mlm, bad, cfg));
}

TEST_CASE("ar on a single-token sequence predicts from BOS alone") {
  Dataset ds = gen_dataset(9, 16, 4);
  Model<float> model(tiny_cfg(ds), 6);
  TokenBatch tb;
  tb.batch = 1;
  tb.width = 3;
  tb.tokens = {kBos, 10, kEos};
  tb.lengths = {1};
  tb.attrs = {Attributes{0, 0, 1, 0}};
  CorruptionCfg cfg;
  std::mt19937_64 rng(1);
  auto problems = sample_problems(Objective::ar, tb, cfg, rng);
  StepResult<float> r = objective_forward(model, tb, Objective::ar, problems, cfg);
  CHECK(r.breakdown.pred_count == 1);
  CHECK(r.r_pred == 1.0);
  CHECK(r.r_corr == 1.0);
}

TEST_CASE("prefixlm with a minimal prefix reproduces the AR loss bitwise") {
  Dataset ds = gen_dataset(9, 16, 4);
  Model<float> model(tiny_cfg(ds), 7);
  TokenBatch tb = first_batch(ds, 3);
  CorruptionCfg cfg;
  std::mt19937_64 rng(2);
  auto ar_problems = sample_problems(Objective::ar, tb, cfg, rng);
  auto pf_problems = ar_problems;
  for (auto& p : pf_problems) p.L_p = 1;
  StepResult<float> a = objective_forward(model, tb, Objective::ar, ar_problems, cfg);
  StepResult<float> b = objective_forward(model, tb, Objective::prefixlm, pf_problems, cfg);
  CHECK(a.breakdown.loss_R == b.breakdown.loss_R);
}

TEST_CASE("prefix prediction-set size matches the dependency matrix") {
  std::mt19937_64 rng(5);
  Dataset ds = gen_dataset(9, 32, 4);
  TokenBatch tb = first_batch(ds, 8);
  CorruptionCfg cfg;
  auto problems = sample_problems(Objective::prefixlm, tb, cfg, rng);
  for (int b = 0; b < tb.batch; ++b) {
    const auto cap = tb.caption_of(b);
    const auto predicted = build_prefix_matrix(static_cast<int>(cap.size()), problems[b].L_p)
                               .predicted_set();
    CHECK(problems[b].loss_positions == predicted);
  }
}

TEST_CASE("unified-objective consistency: loss sets equal matrix prediction sets") {
  std::mt19937_64 rng(13);
  Dataset ds = gen_dataset(21, 32, 4);
  TokenBatch tb = first_batch(ds, 6);
  CorruptionCfg cfg;  // r_pred_target = 1: the loss covers the whole predicted set
  for (Objective obj : {Objective::flm, Objective::mlm, Objective::ar, Objective::prefixlm}) {
    auto problems = sample_problems(obj, tb, cfg, rng);
    for (int b = 0; b < tb.batch; ++b) {
      const auto cap = tb.caption_of(b);
      DependencyMatrix m = problem_matrix(obj, problems[b], cap);
      CHECK(validate_matrix(m).empty());
      std::vector<int> loss_set = problems[b].loss_positions;
      std::sort(loss_set.begin(), loss_set.end());
      CHECK(loss_set == m.predicted_set());
    }
  }
}

TEST_CASE("random pre-encoding corruption keeps minimal spans and full prediction") {
  std::mt19937_64 rng(17);
  Dataset ds = gen_dataset(21, 16, 4);
  TokenBatch tb = first_batch(ds, 4);
  CorruptionCfg cfg;
  cfg.span_mode = false;
  cfg.pre_corrupt_r = 0.3;
  auto problems = sample_problems(Objective::flm, tb, cfg, rng);
  bool any_masked = false;
  for (int b = 0; b < tb.batch; ++b) {
    const auto cap = tb.caption_of(b);
    const int L = static_cast<int>(cap.size());
    CHECK(static_cast<int>(problems[b].loss_positions.size()) == L);
    for (int i = 1; i <= L; ++i) CHECK(problems[b].spans.span(i) == std::pair<int, int>{i, i});
    for (int i = 0; i < L; ++i)
      if (problems[b].input[i] == kMask) any_masked = true;
  }
  CHECK(any_masked);

  Model<float> model(tiny_cfg(ds), 10);
  StepResult<float> r = objective_forward(model, tb, Objective::flm, problems, cfg);
  CHECK(std::isfinite(r.breakdown.loss_total));
}

TEST_CASE("padding changes no loss") {
  Dataset ds = gen_dataset(9, 16, 4);
  Model<float> model(tiny_cfg(ds), 6);
  TokenBatch tb = first_batch(ds, 3);
  CorruptionCfg cfg;
  std::mt19937_64 rng(3);
  auto problems = sample_problems(Objective::flm, tb, cfg, rng);
  StepResult<float> base = objective_forward(model, tb, Objective::flm, problems, cfg);

  TokenBatch padded = tb;
  padded.width = tb.width + 3;
  padded.tokens.assign(static_cast<size_t>(tb.batch) * padded.width, kPad);
  for (int b = 0; b < tb.batch; ++b)
    for (int c = 0; c < tb.width; ++c)
      padded.tokens[static_cast<size_t>(b) * padded.width + c] =
          tb.tokens[static_cast<size_t>(b) * tb.width + c];
  StepResult<float> pad = objective_forward(model, padded, Objective::flm, problems, cfg);
  CHECK(std::abs(pad.breakdown.loss_total - base.breakdown.loss_total) <= 1e-6);
}

TEST_CASE("shared-weight gradient equals the sum of the directional gradients") {
  Dataset ds = gen_dataset(9, 8, 2);
  Model<double> model(tiny_cfg(ds), 19);
  TokenBatch tb = first_batch(ds, 2);
  CorruptionCfg both, only_l, only_r;
  only_l.inter_r2l = false;
  only_r.inter_l2r = false;
  std::mt19937_64 rng(4);
  auto problems = sample_problems(Objective::flm, tb, both, rng);

  auto grad_of = [&](const CorruptionCfg& cfg, const char* name) {
    model.params().zero_grads();
    StepResult<double> r = objective_forward(model, tb, Objective::flm, problems, cfg);
    // Isolate the intermediate losses: subtract the shared reconstruction term.
    r.loss.backward();
    return model.params().at(name).g();
  };

  const char* probe_name = "enc.layer.0.shared.attn.wq";
  auto g_both = grad_of(both, probe_name);
  auto g_l = grad_of(only_l, probe_name);
  auto g_r = grad_of(only_r, probe_name);
  // loss(both) = loss_R + l2r + r2l; loss(only_l) = loss_R + l2r, etc., so
  // g_both + g_R = g_l + g_r where g_R is the reconstruction-only gradient.
  CorruptionCfg none;
  none.inter_l2r = false;
  none.inter_r2l = false;
  auto g_R = grad_of(none, probe_name);
  for (size_t i = 0; i < g_both.size(); ++i)
    CHECK(g_both[i] + g_R[i] == doctest::Approx(g_l[i] + g_r[i]).epsilon(1e-9));
}

TEST_CASE("a tiny model overfits a fixed batch") {
  Dataset ds = gen_dataset(9, 8, 2);
  Model<float> model(tiny_cfg(ds), 23);
  std::vector<Tensor<float>> tr;
  for (auto& [n, t] : model.params().items)
    if (n.rfind("probe.", 0) != 0 && n != "cls_emb") tr.push_back(t);
  AdamW<float> opt(tr, AdamWConfig{});
  TokenBatch tb = first_batch(ds, 8);
  CorruptionCfg cfg;
  std::mt19937_64 rng(6);
  double first = 0, last = 0;
  for (int step = 0; step < 120; ++step) {
    auto problems = sample_problems(Objective::flm, tb, cfg, rng);
    StepResult<float> r = objective_forward(model, tb, Objective::flm, problems, cfg);
    if (step == 0) first = r.breakdown.loss_total;
    last = r.breakdown.loss_total;
    model.params().zero_grads();
    r.loss.backward();
    opt.step(2e-3);
  }
  CHECK(last < first / 3);
}
