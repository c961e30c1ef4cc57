#include <doctest.h>

#include <array>
#include <set>

#include "flm/data.hpp"

using namespace flm;

TEST_CASE("vocabulary is deterministic with reserved ids 0..4") {
  Vocab a = build_vocab();
  Vocab b = build_vocab();
  CHECK(a.words == b.words);
  CHECK(a.words[kPad] == "<pad>");
  CHECK(a.words[kMask] == "<mask>");
  CHECK(a.words[kBos] == "<bos>");
  CHECK(a.words[kEos] == "<eos>");
  CHECK(a.words[kCls] == "<cls>");
  // ~60 word-level tokens: terminals plus the 5 reserved ids.
  CHECK(a.size() >= 55);
  CHECK(a.size() <= 70);
  // Attribute words are plain vocabulary entries, distinct per value.
  std::set<int> seen;
  for (int f = 0; f < 4; ++f)
    for (int v = 0; v < kAttrCardinalities[f]; ++v) {
      const int id = a.attr_word_id(f, v);
      CHECK(id >= kNumReserved);
      CHECK(seen.insert(id).second);
    }
}

TEST_CASE("dataset generation is deterministic and split-disjoint") {
  Dataset d1 = gen_dataset(7, 500, 100);
  Dataset d2 = gen_dataset(7, 500, 100);
  REQUIRE(d1.train.size() == 500);
  REQUIRE(d1.val.size() == 100);
  for (size_t i = 0; i < d1.train.size(); ++i) {
    CHECK(d1.train[i].id == d2.train[i].id);
    CHECK(d1.train[i].caption == d2.train[i].caption);
  }
  std::set<int64_t> val_ids;
  for (const auto& s : d1.val) val_ids.insert(s.id);
  for (const auto& s : d1.train) CHECK(val_ids.count(s.id) == 0);

  Dataset d3 = gen_dataset(8, 500, 100);
  bool differs = false;
  for (size_t i = 0; i < d1.train.size() && !differs; ++i)
    differs = d1.train[i].id != d3.train[i].id;
  CHECK(differs);
}

TEST_CASE("caption lengths bounded and attributes verbalized") {
  Dataset ds = gen_dataset(3, 2000, 50);
  for (const auto& s : ds.train) {
    REQUIRE(s.caption.size() <= kMaxCaptionLen);
    REQUIRE(s.caption.size() >= 1);
    for (int t : s.caption) CHECK(t >= kNumReserved);  // no reserved id leaks into text
    for (int f = 0; f < 4; ++f) {
      const int want = ds.vocab.attr_word_id(f, s.attrs.field(f));
      CHECK(std::find(s.caption.begin(), s.caption.end(), want) != s.caption.end());
    }
  }
}

TEST_CASE("attribute marginals are near uniform") {
  Dataset ds = gen_dataset(11, 10000, 10);
  std::array<std::array<int, 8>, 4> counts{};
  for (const auto& s : ds.train)
    for (int f = 0; f < 4; ++f) ++counts[f][s.attrs.field(f)];
  for (int f = 0; f < 4; ++f) {
    const double expect = 10000.0 / kAttrCardinalities[f];
    for (int v = 0; v < kAttrCardinalities[f]; ++v)
      CHECK(std::abs(counts[f][v] - expect) / 10000.0 < 0.03);
  }
}

TEST_CASE("a hand-built linear probe on bag-of-tokens recovers every attribute") {
  // The captions verbalize each attribute with a dedicated token, so the
  // indicator-weight linear classifier must already be near-perfect.
  Dataset ds = gen_dataset(5, 1000, 10);
  int hits = 0, total = 0;
  for (const auto& s : ds.train) {
    std::vector<int> bag(ds.vocab.size(), 0);
    for (int t : s.caption) ++bag[t];
    for (int f = 0; f < 4; ++f) {
      int best = 0;
      double best_score = -1;
      for (int v = 0; v < kAttrCardinalities[f]; ++v) {
        const double score = bag[ds.vocab.attr_word_id(f, v)];
        if (score > best_score) {
          best_score = score;
          best = v;
        }
      }
      if (best == s.attrs.field(f)) ++hits;
      ++total;
    }
  }
  CHECK(static_cast<double>(hits) / total > 0.95);
}

TEST_CASE("batching preserves tokens and respects shapes") {
  Dataset ds = gen_dataset(2, 64, 8);
  std::mt19937_64 rng(1);
  auto batches = epoch_batches(64, 8, rng);
  CHECK(batches.size() == 8);
  size_t token_total = 0;
  for (const auto& idx : batches) {
    TokenBatch tb = make_batch(ds.train, idx);
    CHECK(tb.batch == 8);
    for (int b = 0; b < tb.batch; ++b) {
      const auto cap = tb.caption_of(b);
      token_total += cap.size();
      CHECK(cap == ds.train[idx[b]].caption);
      CHECK(tb.tokens[static_cast<size_t>(b) * tb.width] == kBos);
      CHECK(tb.tokens[static_cast<size_t>(b) * tb.width + 1 + tb.lengths[b]] == kEos);
    }
  }
  size_t want = 0;
  for (const auto& s : ds.train) want += s.caption.size();
  CHECK(token_total == want);  // an epoch partitions the dataset

  TokenBatch single = make_batch(ds.train, {3});
  CHECK(single.batch == 1);
  CHECK(single.width == static_cast<int>(ds.train[3].caption.size()) + 2);

  std::mt19937_64 r1(9), r2(9);
  CHECK(epoch_batches(64, 8, r1) == epoch_batches(64, 8, r2));
  CHECK_THROWS(epoch_batches(64, 0, rng));
}
