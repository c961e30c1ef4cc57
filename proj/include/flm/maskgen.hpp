#pragma once
// Dependency matrices and corruption-span sampling for the four language
// modeling objectives. Positions are 1-based in every contract here and
// 0-based in storage.

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace flm {

enum class MaskKind { mlm, ar, prefixlm, flm };

const char* mask_kind_name(MaskKind k);

// L x L visibility matrix: at(i, j) == true means x_j is visible when
// predicting x_i. at(i, i) == false marks row i as a prediction target.
struct DependencyMatrix {
  int L = 0;
  MaskKind kind = MaskKind::mlm;
  std::vector<uint8_t> bits;  // row-major L*L

  DependencyMatrix() = default;
  DependencyMatrix(int L_, MaskKind kind_)
      : L(L_), kind(kind_), bits(static_cast<size_t>(L_) * L_, 0) {}

  bool at(int i, int j) const {  // 1-based
    return bits[static_cast<size_t>(i - 1) * L + (j - 1)] != 0;
  }
  void set(int i, int j, bool v) {
    bits[static_cast<size_t>(i - 1) * L + (j - 1)] = v ? 1 : 0;
  }
  bool predicted(int i) const { return !at(i, i); }
  std::vector<int> predicted_set() const;  // 1-based positions with m_ii = 0
  std::string grid() const;                // 0/1 rows, one line per row
};

// One contiguous corruption span per position, bounds 1-based inclusive,
// span i always contains i.
struct SpanSet {
  int L = 0;
  std::vector<std::pair<int, int>> spans;  // spans[i-1] = (s_i, e_i)

  std::pair<int, int> span(int i) const { return spans[i - 1]; }
};

struct RateReport {
  double r_pred = 0.0;       // fraction of rows predicted
  double mean_r_corr = 0.0;  // mean corrupted fraction over predicted rows
};

DependencyMatrix build_ar_matrix(int L);

// Either give L_p in [1, L-1] directly, or a span ratio to derive it from:
// L_p = round((1 - r_span) * L) clamped to [1, L-1].
DependencyMatrix build_prefix_matrix(int L, int L_p);
int prefix_length_from_ratio(int L, double r_span);

// One Bernoulli(r_mask) draw per column; all rows identical; re-draws until
// at least one column is masked and at least one is visible.
DependencyMatrix build_mlm_matrix(int L, double r_mask, std::mt19937_64& rng);
DependencyMatrix mlm_matrix_from_mask(int L, const std::vector<int>& masked);  // 1-based
std::vector<int> sample_mlm_mask(int L, double r_mask, std::mt19937_64& rng);

// Per-position span lengths ~ Binomial(L, r_corr) clamped to [1, L]; start
// uniform over feasible placements containing i. r_corr == 1/L yields the
// deterministic minimal spans (i, i).
SpanSet sample_flm_spans(int L, double r_corr, std::mt19937_64& rng);

DependencyMatrix spans_to_matrix(const SpanSet& spans);

RateReport rates(const DependencyMatrix& m);

// Uniform subset of size round(target * |set|), at least 1.
std::vector<int> subsample_predictions(const std::vector<int>& predicted, double r_pred_target,
                                       std::mt19937_64& rng);

// Visible real-token positions for target i, split by side of the span:
// l2r = {1 .. s_i-1}, r2l = {e_i+1 .. L}.
std::pair<std::vector<int>, std::vector<int>> visible_context(int i, std::pair<int, int> span_i,
                                                              int L);

// Empty list means the matrix satisfies its per-kind invariants.
std::vector<std::string> validate_matrix(const DependencyMatrix& m);

// Replace each token independently with mask_id at probability r; returns the
// corrupted sequence and the 0-based corrupted positions.
std::pair<std::vector<int>, std::vector<int>> apply_pre_encoding_corruption(
    const std::vector<int>& tokens, double r, int mask_id, std::mt19937_64& rng);

}  // namespace flm
