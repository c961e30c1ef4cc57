#include <doctest.h>

#include <algorithm>
#include <array>
#include <cmath>

#include "flm/maskgen.hpp"

using namespace flm;

TEST_CASE("ar matrix basics") {
  DependencyMatrix m = build_ar_matrix(3);
  CHECK(m.grid() == "000\n100\n110\n");

  DependencyMatrix one = build_ar_matrix(1);
  CHECK_FALSE(one.at(1, 1));
  RateReport r1 = rates(one);
  CHECK(r1.r_pred == 1.0);
  CHECK(r1.mean_r_corr == 1.0);

  RateReport r8 = rates(build_ar_matrix(8));
  CHECK(r8.r_pred == 1.0);
  CHECK(r8.mean_r_corr == doctest::Approx(0.5625));  // (L+1)/(2L)

  CHECK_THROWS(build_ar_matrix(0));
}

TEST_CASE("prefix matrix closed form and degenerate prefix") {
  DependencyMatrix m = build_prefix_matrix(4, 2);
  CHECK(m.grid() == "1000\n1000\n1100\n1110\n");
  CHECK(m.predicted_set() == std::vector<int>{2, 3, 4});

  DependencyMatrix ar_like = build_prefix_matrix(5, 1);
  DependencyMatrix ar = build_ar_matrix(5);
  CHECK(ar_like.bits == ar.bits);

  CHECK_THROWS(build_prefix_matrix(4, 0));
  CHECK_THROWS(build_prefix_matrix(4, 4));
}

TEST_CASE("prefix matrix equals exhaustive formula oracle for all L <= 8") {
  for (int L = 2; L <= 8; ++L)
    for (int lp = 1; lp <= L - 1; ++lp) {
      DependencyMatrix m = build_prefix_matrix(L, lp);
      for (int i = 1; i <= L; ++i)
        for (int j = 1; j <= L; ++j) REQUIRE(m.at(i, j) == (j < std::max(i, lp)));
    }
}

TEST_CASE("prefix r_span sampling: Monte Carlo matches the integrated closed form") {
  // Independent oracle: integrate r_pred = (L - L_p + 1)/L over the r_span
  // distribution on a fine grid, with the same round-and-clamp rule.
  const int L = 20;
  double expected = 0.0;
  const int grid = 2000000;
  for (int g = 0; g < grid; ++g) {
    const double u = (g + 0.5) / grid;
    const int lp = prefix_length_from_ratio(L, u);
    expected += static_cast<double>(L - lp + 1) / L;
  }
  expected /= grid;
  CHECK(expected == doctest::Approx(0.55).epsilon(1e-3));  // the +1/L shift off 0.50 is real

  std::mt19937_64 rng(123);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  double mean = 0.0;
  const int draws = 10000;
  for (int d = 0; d < draws; ++d) {
    const int lp = prefix_length_from_ratio(L, uni(rng));
    mean += rates(build_prefix_matrix(L, lp)).r_pred;
  }
  mean /= draws;
  CHECK(std::abs(mean - expected) < 0.02);
}

TEST_CASE("mlm matrices") {
  DependencyMatrix forced = mlm_matrix_from_mask(4, {2});
  CHECK(forced.grid() == "1011\n1011\n1011\n1011\n");
  CHECK(forced.predicted_set() == std::vector<int>{2});
  RateReport rr = rates(forced);
  CHECK(rr.r_pred == doctest::Approx(0.25));
  CHECK(rr.mean_r_corr == doctest::Approx(0.25));

  DependencyMatrix nearly = mlm_matrix_from_mask(4, {1, 2, 4});
  for (int i = 1; i <= 4; ++i) {
    int ones = 0;
    for (int j = 1; j <= 4; ++j) ones += nearly.at(i, j);
    CHECK(ones == 1);
  }

  std::mt19937_64 rng(7);
  double mean_pred = 0.0;
  const int draws = 10000;
  for (int d = 0; d < draws; ++d) {
    DependencyMatrix m = build_mlm_matrix(50, 0.4, rng);
    const RateReport r = rates(m);
    mean_pred += r.r_pred;
    REQUIRE(r.mean_r_corr == doctest::Approx(r.r_pred));  // the two rates are tied for MLM
  }
  CHECK(mean_pred / draws == doctest::Approx(0.4).epsilon(0.025));

  // The sampler never returns an empty or full mask.
  std::mt19937_64 rng2(9);
  for (int d = 0; d < 2000; ++d) {
    const auto mask = sample_mlm_mask(3, 0.5, rng2);
    CHECK(mask.size() >= 1);
    CHECK(mask.size() < 3);
  }
}

TEST_CASE("flm span sampling boundary cases") {
  std::mt19937_64 rng(1);
  SpanSet minimal = sample_flm_spans(6, 1.0 / 6, rng);
  for (int i = 1; i <= 6; ++i) CHECK(minimal.span(i) == std::pair<int, int>{i, i});

  SpanSet full = sample_flm_spans(6, 1.0, rng);
  for (int i = 1; i <= 6; ++i) CHECK(full.span(i) == std::pair<int, int>{1, 6});

  CHECK_THROWS(sample_flm_spans(10, 0.05, rng));  // below 1/L: minimal-corruption rule

  // Mean span length tracks the Binomial mean L*r_corr.
  double mean_len = 0.0;
  const int draws = 10000;
  for (int d = 0; d < draws; ++d) {
    SpanSet s = sample_flm_spans(50, 0.3, rng);
    for (int i = 1; i <= 50; ++i) {
      const auto [a, b] = s.span(i);
      mean_len += b - a + 1;
    }
  }
  mean_len /= draws * 50.0;
  CHECK(mean_len == doctest::Approx(15.0).epsilon(0.02));
}

TEST_CASE("sampler reproducibility") {
  std::mt19937_64 a(42), b(42);
  SpanSet s1 = sample_flm_spans(12, 0.4, a);
  SpanSet s2 = sample_flm_spans(12, 0.4, b);
  CHECK(s1.spans == s2.spans);
  DependencyMatrix m1 = build_mlm_matrix(12, 0.3, a);
  DependencyMatrix m2 = build_mlm_matrix(12, 0.3, b);
  CHECK(m1.bits == m2.bits);
}

TEST_CASE("spans_to_matrix") {
  SpanSet s;
  s.L = 5;
  s.spans = {{1, 1}, {2, 2}, {2, 4}, {4, 4}, {5, 5}};
  DependencyMatrix m = spans_to_matrix(s);
  CHECK(m.at(3, 1));
  CHECK_FALSE(m.at(3, 2));
  CHECK_FALSE(m.at(3, 3));
  CHECK_FALSE(m.at(3, 4));
  CHECK(m.at(3, 5));
  CHECK(rates(m).r_pred == 1.0);

  // All minimal spans: all-ones minus identity.
  SpanSet mini;
  mini.L = 4;
  mini.spans = {{1, 1}, {2, 2}, {3, 3}, {4, 4}};
  DependencyMatrix mm = spans_to_matrix(mini);
  for (int i = 1; i <= 4; ++i)
    for (int j = 1; j <= 4; ++j) CHECK(mm.at(i, j) == (i != j));
}

TEST_CASE("suffix spans reproduce the AR matrix bit-for-bit for all L <= 16") {
  for (int L = 1; L <= 16; ++L) {
    SpanSet s;
    s.L = L;
    for (int i = 1; i <= L; ++i) s.spans.push_back({i, L});
    DependencyMatrix m = spans_to_matrix(s);
    DependencyMatrix ar = build_ar_matrix(L);
    REQUIRE(m.bits == ar.bits);
  }
}

TEST_CASE("rate decoupling: r_pred pinned at 1 while r_corr moves freely") {
  const int L = 50;
  std::mt19937_64 rng(77);
  for (double rc : {1.0 / L, 0.3, 0.5}) {
    double mean_corr = 0.0;
    const int draws = 1000;
    for (int d = 0; d < draws; ++d) {
      const RateReport r = rates(spans_to_matrix(sample_flm_spans(L, rc, rng)));
      REQUIRE(r.r_pred == 1.0);
      mean_corr += r.mean_r_corr;
    }
    CHECK(std::abs(mean_corr / draws - rc) < 0.05);
  }
}

TEST_CASE("subsample_predictions") {
  std::mt19937_64 rng(5);
  const std::vector<int> set = {1, 2, 3, 4, 5, 6, 7, 8};
  CHECK(subsample_predictions(set, 1.0, rng) == set);
  CHECK(subsample_predictions({4}, 0.1, rng) == std::vector<int>{4});  // clamps to one

  // Element marginals stay uniform: chi-square sanity over 10k half-draws.
  std::array<int, 8> counts{};
  const int draws = 10000;
  for (int d = 0; d < draws; ++d) {
    const auto sub = subsample_predictions(set, 0.5, rng);
    REQUIRE(sub.size() == 4);
    for (int x : sub) ++counts[x - 1];
  }
  double chi2 = 0.0;
  for (int c : counts) chi2 += (c - 5000.0) * (c - 5000.0) / 5000.0;
  CHECK(chi2 < 30.0);

  CHECK_THROWS(subsample_predictions({}, 0.5, rng));
}

TEST_CASE("visible_context splits by side of the span") {
  auto [l, r] = visible_context(3, {2, 4}, 5);
  CHECK(l == std::vector<int>{1});
  CHECK(r == std::vector<int>{5});

  auto [l2, r2] = visible_context(3, {1, 5}, 5);
  CHECK(l2.empty());
  CHECK(r2.empty());

  auto [l3, r3] = visible_context(3, {3, 3}, 5);
  CHECK(l3 == std::vector<int>{1, 2});
  CHECK(r3 == std::vector<int>{4, 5});
}

TEST_CASE("validate_matrix accepts builder output and flags corruption") {
  std::mt19937_64 rng(3);
  CHECK(validate_matrix(build_ar_matrix(7)).empty());
  CHECK(validate_matrix(build_prefix_matrix(7, 3)).empty());
  CHECK(validate_matrix(build_mlm_matrix(7, 0.4, rng)).empty());
  CHECK(validate_matrix(spans_to_matrix(sample_flm_spans(7, 0.5, rng))).empty());

  SpanSet wide;
  wide.L = 6;
  for (int i = 1; i <= 6; ++i) wide.spans.push_back({std::max(1, i - 1), std::min(6, i + 1)});

  DependencyMatrix diag = spans_to_matrix(wide);
  diag.set(3, 3, true);
  auto v1 = validate_matrix(diag);
  REQUIRE_FALSE(v1.empty());
  CHECK(v1.front() == "flm-diagonal-zero");

  DependencyMatrix gap = spans_to_matrix(wide);
  gap.set(4, 1, false);  // zeros now {1, 3, 4, 5}: a hole at 2
  auto v2 = validate_matrix(gap);
  REQUIRE_FALSE(v2.empty());
  CHECK(v2.front() == "flm-span-contiguity");

  DependencyMatrix bad_ar = build_ar_matrix(4);
  bad_ar.set(1, 1, true);
  auto v3 = validate_matrix(bad_ar);
  REQUIRE_FALSE(v3.empty());
  CHECK(v3.front() == "ar-lower-triangular");

  DependencyMatrix uneven = mlm_matrix_from_mask(4, {2});
  uneven.set(3, 2, true);
  auto v4 = validate_matrix(uneven);
  REQUIRE_FALSE(v4.empty());
  CHECK(v4.front() == "mlm-rows-identical");
}

TEST_CASE("pre-encoding corruption") {
  std::mt19937_64 rng(11);
  std::vector<int> toks(50, 9);
  auto [same, none] = apply_pre_encoding_corruption(toks, 0.0, 1, rng);
  CHECK(same == toks);
  CHECK(none.empty());

  double mean_corrupted = 0.0;
  const int draws = 10000;
  for (int d = 0; d < draws; ++d) {
    auto [_, pos] = apply_pre_encoding_corruption(toks, 0.15, 1, rng);
    mean_corrupted += static_cast<double>(pos.size());
  }
  CHECK(mean_corrupted / draws == doctest::Approx(7.5).epsilon(0.025));

  auto [nearly_all, pos] = apply_pre_encoding_corruption(toks, 0.999, 1, rng);
  CHECK(pos.size() >= 45);
  for (int p : pos) CHECK(nearly_all[p] == 1);
}
