#include "flm/maskgen.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace flm {

const char* mask_kind_name(MaskKind k) {
  switch (k) {
    case MaskKind::mlm: return "mlm";
    case MaskKind::ar: return "ar";
    case MaskKind::prefixlm: return "prefixlm";
    case MaskKind::flm: return "flm";
  }
  return "?";
}

std::vector<int> DependencyMatrix::predicted_set() const {
  std::vector<int> out;
  for (int i = 1; i <= L; ++i)
    if (predicted(i)) out.push_back(i);
  return out;
}

std::string DependencyMatrix::grid() const {
  std::string s;
  s.reserve(static_cast<size_t>(L) * (L + 1));
  for (int i = 1; i <= L; ++i) {
    for (int j = 1; j <= L; ++j) s.push_back(at(i, j) ? '1' : '0');
    s.push_back('\n');
  }
  return s;
}

DependencyMatrix build_ar_matrix(int L) {
  if (L < 1) throw std::invalid_argument("build_ar_matrix: L must be >= 1");
  DependencyMatrix m(L, MaskKind::ar);
  for (int i = 1; i <= L; ++i)
    for (int j = 1; j < i; ++j) m.set(i, j, true);
  return m;
}

int prefix_length_from_ratio(int L, double r_span) {
  const int lp = static_cast<int>(std::lround((1.0 - r_span) * L));
  return std::clamp(lp, 1, L - 1);
}

DependencyMatrix build_prefix_matrix(int L, int L_p) {
  if (L < 2) throw std::invalid_argument("build_prefix_matrix: L must be >= 2");
  if (L_p < 1 || L_p > L - 1) throw std::invalid_argument("build_prefix_matrix: L_p out of [1, L-1]");
  DependencyMatrix m(L, MaskKind::prefixlm);
  for (int i = 1; i <= L; ++i)
    for (int j = 1; j <= L; ++j)
      if (j < std::max(i, L_p)) m.set(i, j, true);
  return m;
}

std::vector<int> sample_mlm_mask(int L, double r_mask, std::mt19937_64& rng) {
  if (!(r_mask > 0.0 && r_mask < 1.0))
    throw std::invalid_argument("sample_mlm_mask: r_mask must be in (0,1)");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<int> masked;
  for (;;) {
    masked.clear();
    for (int j = 1; j <= L; ++j)
      if (u(rng) < r_mask) masked.push_back(j);
    // Re-draw on an empty prediction set; also on an all-masked draw, which
    // would leave predicted rows with zero visible context.
    if (!masked.empty() && static_cast<int>(masked.size()) < L) return masked;
    if (L == 1) return {1};  // degenerate: the single token must be masked
  }
}

DependencyMatrix mlm_matrix_from_mask(int L, const std::vector<int>& masked) {
  DependencyMatrix m(L, MaskKind::mlm);
  std::vector<uint8_t> is_masked(L + 1, 0);
  for (int j : masked) {
    if (j < 1 || j > L) throw std::out_of_range("mlm mask position out of range");
    is_masked[j] = 1;
  }
  for (int i = 1; i <= L; ++i)
    for (int j = 1; j <= L; ++j)
      if (!is_masked[j]) m.set(i, j, true);
  return m;
}

DependencyMatrix build_mlm_matrix(int L, double r_mask, std::mt19937_64& rng) {
  return mlm_matrix_from_mask(L, sample_mlm_mask(L, r_mask, rng));
}

SpanSet sample_flm_spans(int L, double r_corr, std::mt19937_64& rng) {
  if (L < 1) throw std::invalid_argument("sample_flm_spans: L must be >= 1");
  const double min_rate = 1.0 / L;
  if (r_corr < min_rate - 1e-12 || r_corr > 1.0)
    throw std::invalid_argument("sample_flm_spans: r_corr must be in [1/L, 1]");
  SpanSet out;
  out.L = L;
  out.spans.resize(L);
  const bool minimal = r_corr <= min_rate + 1e-12;
  std::binomial_distribution<int> len_dist(L, r_corr);
  for (int i = 1; i <= L; ++i) {
    int len = minimal ? 1 : std::clamp(len_dist(rng), 1, L);
    const int lo = std::max(1, i - len + 1);
    const int hi = std::min(i, L - len + 1);
    int s = lo;
    if (hi > lo) {
      std::uniform_int_distribution<int> start_dist(lo, hi);
      s = start_dist(rng);
    }
    out.spans[i - 1] = {s, s + len - 1};
  }
  return out;
}

DependencyMatrix spans_to_matrix(const SpanSet& spans) {
  const int L = spans.L;
  DependencyMatrix m(L, MaskKind::flm);
  for (int i = 1; i <= L; ++i) {
    const auto [s, e] = spans.span(i);
    if (!(1 <= s && s <= i && i <= e && e <= L))
      throw std::invalid_argument("spans_to_matrix: invalid span");
    for (int j = 1; j <= L; ++j)
      if (j < s || j > e) m.set(i, j, true);
  }
  return m;
}

RateReport rates(const DependencyMatrix& m) {
  RateReport r;
  int predicted = 0;
  double corr_sum = 0.0;
  for (int i = 1; i <= m.L; ++i) {
    if (!m.predicted(i)) continue;
    ++predicted;
    int zeros = 0;
    for (int j = 1; j <= m.L; ++j)
      if (!m.at(i, j)) ++zeros;
    corr_sum += static_cast<double>(zeros) / m.L;
  }
  r.r_pred = static_cast<double>(predicted) / m.L;
  r.mean_r_corr = predicted > 0 ? corr_sum / predicted : 0.0;
  return r;
}

std::vector<int> subsample_predictions(const std::vector<int>& predicted, double r_pred_target,
                                       std::mt19937_64& rng) {
  if (predicted.empty()) throw std::invalid_argument("subsample_predictions: empty input set");
  if (!(r_pred_target > 0.0 && r_pred_target <= 1.0))
    throw std::invalid_argument("subsample_predictions: target must be in (0,1]");
  if (r_pred_target == 1.0) return predicted;
  const size_t want =
      std::max<size_t>(1, static_cast<size_t>(std::lround(r_pred_target * predicted.size())));
  if (want >= predicted.size()) return predicted;
  std::vector<int> out;
  out.reserve(want);
  std::sample(predicted.begin(), predicted.end(), std::back_inserter(out), want, rng);
  return out;
}

std::pair<std::vector<int>, std::vector<int>> visible_context(int i, std::pair<int, int> span_i,
                                                              int L) {
  const auto [s, e] = span_i;
  if (!(1 <= s && s <= i && i <= e && e <= L))
    throw std::invalid_argument("visible_context: span must contain i and lie in [1, L]");
  std::vector<int> l2r, r2l;
  for (int j = 1; j < s; ++j) l2r.push_back(j);
  for (int j = e + 1; j <= L; ++j) r2l.push_back(j);
  return {l2r, r2l};
}

std::vector<std::string> validate_matrix(const DependencyMatrix& m) {
  std::vector<std::string> bad;
  const int L = m.L;
  switch (m.kind) {
    case MaskKind::ar:
      for (int i = 1; i <= L; ++i)
        for (int j = 1; j <= L; ++j)
          if (m.at(i, j) != (j < i)) {
            bad.push_back("ar-lower-triangular");
            i = L + 1;
            break;
          }
      break;
    case MaskKind::mlm: {
      for (int i = 2; i <= L; ++i)
        for (int j = 1; j <= L; ++j)
          if (m.at(i, j) != m.at(1, j)) {
            bad.push_back("mlm-rows-identical");
            i = L + 1;
            break;
          }
      break;
    }
    case MaskKind::prefixlm: {
      // Recover L_p from row 1 (it sees exactly {1 .. L_p-1}), then check the
      // closed form everywhere.
      int lp = 1;
      while (lp <= L && m.at(1, lp)) ++lp;
      bool ok = true;
      for (int i = 1; i <= L && ok; ++i)
        for (int j = 1; j <= L && ok; ++j)
          if (m.at(i, j) != (j < std::max(i, lp))) ok = false;
      if (!ok) bad.push_back("prefixlm-formula");
      break;
    }
    case MaskKind::flm: {
      for (int i = 1; i <= L; ++i) {
        if (m.at(i, i)) {
          bad.push_back("flm-diagonal-zero");
          break;
        }
        int first = 0, last = 0;
        for (int j = 1; j <= L; ++j)
          if (!m.at(i, j)) {
            if (first == 0) first = j;
            last = j;
          }
        bool contiguous = true;
        for (int j = first; j <= last; ++j)
          if (m.at(i, j)) contiguous = false;
        if (!contiguous || i < first || i > last) {
          bad.push_back("flm-span-contiguity");
          break;
        }
      }
      break;
    }
  }
  // Zero-context predicted rows are forced by the formulas for AR/PrefixLM
  // (row 1) and allowed for FLM's full spans; MLM must never produce one.
  if (m.kind == MaskKind::mlm && L > 1) {
    for (int i = 1; i <= L; ++i) {
      if (!m.predicted(i)) continue;
      bool any = false;
      for (int j = 1; j <= L; ++j)
        if (m.at(i, j)) { any = true; break; }
      if (!any) {
        bad.push_back("zero-context-row");
        break;
      }
    }
  }
  return bad;
}

std::pair<std::vector<int>, std::vector<int>> apply_pre_encoding_corruption(
    const std::vector<int>& tokens, double r, int mask_id, std::mt19937_64& rng) {
  if (r < 0.0 || r >= 1.0)
    throw std::invalid_argument("apply_pre_encoding_corruption: r must be in [0,1)");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<int> out = tokens;
  std::vector<int> corrupted;
  for (size_t p = 0; p < out.size(); ++p) {
    if (r > 0.0 && u(rng) < r) {
      out[p] = mask_id;
      corrupted.push_back(static_cast<int>(p));
    }
  }
  return {out, corrupted};
}

}  // namespace flm
