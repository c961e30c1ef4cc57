#pragma once
// Encode-corrupt-predict network: dual-causal shared text encoder with
// top-layer vision fusion, a cross-attention-only reconstructor driven by
// positional queries, unidirectional LM heads, and attribute probe heads.
//
// Stream layout: position 0 = BOS, 1..L = caption tokens, L+1 = EOS, so a
// caption position and its stream position coincide.

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "flm/data.hpp"
#include "flm/maskgen.hpp"
#include "flm/optim.hpp"
#include "flm/tensor.hpp"

namespace flm {

enum class AttnRegime { full, causal, reverse_causal, prefix };

struct ModelConfig {
  int d_model = 64;
  int n_heads = 4;
  int n_bottom = 2;  // text-only encoder layers
  int n_top = 2;     // encoder layers with vision cross-attention
  int recon_bottom = 2;
  int recon_top = 2;
  int vocab = 0;
  int l_max = kMaxCaptionLen;
  int k_vision = 4;
  bool share_encoder = true;
  bool recon_vision_keys = false;  // off by default: fusion happens in the encoder

  int n_layers() const { return n_bottom + n_top; }
  int recon_layers() const { return recon_bottom + recon_top; }

  void validate() const {
    if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0)
      throw std::invalid_argument("model config: d_model must divide by n_heads");
    if (n_bottom < 0 || n_top < 1) throw std::invalid_argument("model config: need fusion layers");
    if (recon_layers() < 1 || recon_layers() > n_layers())
      throw std::invalid_argument("model config: reconstructor depth must be in [1, n_layers]");
    if (vocab <= kNumReserved) throw std::invalid_argument("model config: vocab not set");
    if (k_vision != 4) throw std::invalid_argument("model config: one vision token per attribute field");
  }

  // Encoder layer read by reconstructor layer r (both 1-based). A shallow
  // reconstructor reads the top-most encoder layers in order.
  int aligned_encoder_layer(int r) const { return n_layers() - recon_layers() + r; }
};

template <typename S>
struct AttnParams {
  Tensor<S> wq, bq, wk, bk, wv, bv, wo, bo;
};

template <typename S>
struct EncLayerParams {
  Tensor<S> ln1g, ln1b;
  AttnParams<S> attn;
  bool fused = false;  // top layers cross-attend to vision
  Tensor<S> lnxg, lnxb;
  AttnParams<S> xattn;
  Tensor<S> ln2g, ln2b;
  Tensor<S> w1, b1, w2, b2;
};

template <typename S>
struct ReconLayerParams {
  Tensor<S> lnqg, lnqb;
  AttnParams<S> xattn;
  Tensor<S> ln2g, ln2b;
  Tensor<S> w1, b1, w2, b2;
};

// Per-layer dual-stream features plus the vision tokens for one sample.
template <typename S>
struct LayerFeatures {
  std::vector<Tensor<S>> l2r;  // index n-1 = output of encoder layer n, (L+2) x d
  std::vector<Tensor<S>> r2l;
  Tensor<S> vision;  // K x d
  int L = 0;
};

template <typename S>
class Model {
 public:
  Model(ModelConfig cfg, uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    const int d = cfg_.d_model;
    const int h = 4 * d;
    auto mat = [&](const std::string& name, int r, int c) -> Tensor<S>& {
      auto& t = params_.add(name, Tensor<S>::zeros({r, c}));
      fill_normal(t, rng, 0.02);
      return t;
    };
    auto bias = [&](const std::string& name, int n) -> Tensor<S>& {
      return params_.add(name, Tensor<S>::zeros({1, n}));
    };
    auto ln = [&](const std::string& name, int n) {
      auto& g = params_.add(name + ".g", Tensor<S>::zeros({1, n}));
      fill_const(g, S(1));
      params_.add(name + ".b", Tensor<S>::zeros({1, n}));
      return std::pair<Tensor<S>&, Tensor<S>&>(g, params_.at(name + ".b"));
    };
    auto attn = [&](const std::string& p) {
      AttnParams<S> a;
      a.wq = mat(p + ".wq", d, d); a.bq = bias(p + ".bq", d);
      a.wk = mat(p + ".wk", d, d); a.bk = bias(p + ".bk", d);
      a.wv = mat(p + ".wv", d, d); a.bv = bias(p + ".bv", d);
      a.wo = mat(p + ".wo", d, d); a.bo = bias(p + ".bo", d);
      return a;
    };

    tok_emb_ = mat("tok_emb", cfg_.vocab, d);
    pos_emb_ = mat("pos_emb", cfg_.l_max + 2, d);

    vis_tables_.push_back(mat("vis.color", kNumColors, d));
    vis_tables_.push_back(mat("vis.shape", kNumShapes, d));
    vis_tables_.push_back(mat("vis.count", kNumCounts, d));
    vis_tables_.push_back(mat("vis.bg", kNumBackgrounds, d));
    vis_w_ = mat("vis.proj.w", d, d);
    vis_b_ = bias("vis.proj.b", d);
    std::tie(vis_lng_, vis_lnb_) = ln("vis.ln", d);

    const int n_stacks = cfg_.share_encoder ? 1 : 2;
    for (int s = 0; s < n_stacks; ++s) {
      const std::string pass = cfg_.share_encoder ? "shared" : (s == 0 ? "l2r" : "r2l");
      std::vector<EncLayerParams<S>> stack;
      for (int n = 0; n < cfg_.n_layers(); ++n) {
        const std::string p = "enc.layer." + std::to_string(n) + "." + pass;
        EncLayerParams<S> lp;
        std::tie(lp.ln1g, lp.ln1b) = ln(p + ".ln1", d);
        lp.attn = attn(p + ".attn");
        lp.fused = n >= cfg_.n_bottom;
        if (lp.fused) {
          std::tie(lp.lnxg, lp.lnxb) = ln(p + ".lnx", d);
          lp.xattn = attn(p + ".xattn");
        }
        std::tie(lp.ln2g, lp.ln2b) = ln(p + ".ln2", d);
        lp.w1 = mat(p + ".ffn.w1", d, h); lp.b1 = bias(p + ".ffn.b1", h);
        lp.w2 = mat(p + ".ffn.w2", h, d); lp.b2 = bias(p + ".ffn.b2", d);
        stack.push_back(lp);
      }
      stacks_.push_back(std::move(stack));
    }
    std::tie(enc_lnfg_, enc_lnfb_) = ln("enc.ln_f", d);

    for (int r = 0; r < cfg_.recon_layers(); ++r) {
      const std::string p = "recon.layer." + std::to_string(r);
      ReconLayerParams<S> lp;
      std::tie(lp.lnqg, lp.lnqb) = ln(p + ".lnq", d);
      lp.xattn = attn(p + ".xattn");
      std::tie(lp.ln2g, lp.ln2b) = ln(p + ".ln2", d);
      lp.w1 = mat(p + ".ffn.w1", d, h); lp.b1 = bias(p + ".ffn.b1", h);
      lp.w2 = mat(p + ".ffn.w2", h, d); lp.b2 = bias(p + ".ffn.b2", d);
      recon_.push_back(lp);
    }
    std::tie(recon_lnfg_, recon_lnfb_) = ln("recon.ln_f", d);
    head_w1_ = mat("head.w1", d, d);
    head_b1_ = bias("head.b1", d);
    head_w2_ = mat("head.w2", d, cfg_.vocab);
    head_b2_ = bias("head.b2", cfg_.vocab);
    lm_w_ = mat("lm_head.w", d, cfg_.vocab);
    lm_b_ = bias("lm_head.b", cfg_.vocab);

    cls_emb_ = mat("cls_emb", 1, d);
    probe_mlp_w_ = mat("probe.mlp.w", d, d);
    probe_mlp_b_ = bias("probe.mlp.b", d);
    static const char* field_names[4] = {"color", "shape", "count", "bg"};
    for (int f = 0; f < 4; ++f) {
      probe_w_[f] = mat(std::string("probe.") + field_names[f] + ".w", d, kAttrCardinalities[f]);
      probe_b_[f] = bias(std::string("probe.") + field_names[f] + ".b", kAttrCardinalities[f]);
    }
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore<S>& params() { return params_; }
  const ParamStore<S>& params() const { return params_; }

  // ---- vision ----

  Tensor<S> encode_vision(const Attributes& a) const {
    Tensor<S> v = gather_rows(vis_tables_[0], {a.color});
    v = concat_rows(v, gather_rows(vis_tables_[1], {a.shape}));
    v = concat_rows(v, gather_rows(vis_tables_[2], {a.count - 1}));
    v = concat_rows(v, gather_rows(vis_tables_[3], {a.background}));
    return layer_norm(linear(v, vis_w_, vis_b_), vis_lng_, vis_lnb_);
  }

  // ---- encoder ----

  static AttentionMask stream_mask(int T, AttnRegime regime, int L_p = 0) {
    AttentionMask m(T, T);
    for (int p = 0; p < T; ++p)
      for (int q = 0; q < T; ++q) {
        bool ok = false;
        switch (regime) {
          case AttnRegime::full: ok = true; break;
          case AttnRegime::causal: ok = q <= p; break;
          case AttnRegime::reverse_causal: ok = q >= p; break;
          case AttnRegime::prefix: ok = (q <= p) || (p < L_p && q < L_p); break;
        }
        m.set(p, q, ok);
      }
    return m;
  }

  // One pass over one stack; returns every layer's output.
  std::vector<Tensor<S>> encode_stream(const std::vector<int>& ids, const Tensor<S>& vision,
                                       const AttentionMask& mask, int stack_index) const {
    const auto& stack = stacks_[cfg_.share_encoder ? 0 : stack_index];
    const int T = static_cast<int>(ids.size());
    std::vector<int> pos(T);
    for (int p = 0; p < T; ++p) pos[p] = p;
    Tensor<S> x = add(gather_rows(tok_emb_, ids), gather_rows(pos_emb_, pos));
    AttentionMask vis_mask = AttentionMask::full(T, cfg_.k_vision);
    std::vector<Tensor<S>> outs;
    outs.reserve(stack.size());
    for (const auto& lp : stack) {
      Tensor<S> xn = layer_norm(x, lp.ln1g, lp.ln1b);
      Tensor<S> att = masked_softmax_attention(linear(xn, lp.attn.wq, lp.attn.bq),
                                               linear(xn, lp.attn.wk, lp.attn.bk),
                                               linear(xn, lp.attn.wv, lp.attn.bv), mask,
                                               cfg_.n_heads);
      x = add(x, linear(att, lp.attn.wo, lp.attn.bo));
      if (lp.fused) {
        Tensor<S> qn = layer_norm(x, lp.lnxg, lp.lnxb);
        Tensor<S> fus = masked_softmax_attention(linear(qn, lp.xattn.wq, lp.xattn.bq),
                                                 linear(vision, lp.xattn.wk, lp.xattn.bk),
                                                 linear(vision, lp.xattn.wv, lp.xattn.bv),
                                                 vis_mask, cfg_.n_heads);
        x = add(x, linear(fus, lp.xattn.wo, lp.xattn.bo));
      }
      Tensor<S> fn = layer_norm(x, lp.ln2g, lp.ln2b);
      x = add(x, linear(gelu(linear(fn, lp.w1, lp.b1)), lp.w2, lp.b2));
      outs.push_back(x);
    }
    return outs;
  }

  // Two complementary views of the same sequence under causal and
  // reverse-causal masks; parameters are shared unless configured otherwise.
  LayerFeatures<S> encode_text_dual(const std::vector<int>& caption, const Attributes& a) const {
    check_len(caption);
    LayerFeatures<S> f;
    f.L = static_cast<int>(caption.size());
    f.vision = encode_vision(a);
    const std::vector<int> ids = with_specials(caption);
    const int T = static_cast<int>(ids.size());
    f.l2r = encode_stream(ids, f.vision, stream_mask(T, AttnRegime::causal), 0);
    f.r2l = encode_stream(ids, f.vision, stream_mask(T, AttnRegime::reverse_causal), 1);
    return f;
  }

  // Single-stream baseline encoding; caller pre-corrupts MLM inputs.
  std::vector<Tensor<S>> encode_text_single(const std::vector<int>& tokens, const Attributes& a,
                                            AttnRegime regime, int L_p = 0) const {
    check_len(tokens);
    Tensor<S> vision = encode_vision(a);
    const std::vector<int> ids = with_specials(tokens);
    const int T = static_cast<int>(ids.size());
    return encode_stream(ids, vision, stream_mask(T, regime, L_p), 0);
  }

  Tensor<S> final_norm(const Tensor<S>& x) const { return layer_norm(x, enc_lnfg_, enc_lnfb_); }

  // ---- reconstructor ----

  // Key columns: [l2r stream 0..L+1 | r2l stream 0..L+1 | vision (optional)].
  // Allowed keys for target i with span (s, e): l2r positions <= s-1 (BOS is
  // position 0) and r2l positions >= e+1 (EOS is position L+1). BOS/EOS are
  // never corrupted and anchor otherwise empty sides.
  AttentionMask recon_mask(const SpanSet& spans, const std::vector<int>& targets,
                           bool with_cls = false) const {
    const int L = spans.L;
    const int w = 2 * (L + 2) + (cfg_.recon_vision_keys ? cfg_.k_vision : 0);
    AttentionMask m(static_cast<int>(targets.size()) + (with_cls ? 1 : 0), w);
    for (size_t r = 0; r < targets.size(); ++r) {
      const auto [s, e] = spans.span(targets[r]);
      for (int p = 0; p <= s - 1; ++p) m.set(static_cast<int>(r), p, true);
      for (int p = e + 1; p <= L + 1; ++p) m.set(static_cast<int>(r), (L + 2) + p, true);
      if (cfg_.recon_vision_keys)
        for (int k = 0; k < cfg_.k_vision; ++k) m.set(static_cast<int>(r), 2 * (L + 2) + k, true);
    }
    if (with_cls)
      for (int c = 0; c < w; ++c) m.set(static_cast<int>(targets.size()), c, true);
    return m;
  }

  // Shared trunk: queries cross-attend per layer to that layer's keys.
  Tensor<S> run_recon_trunk(Tensor<S> q, const std::vector<Tensor<S>>& keys_per_layer,
                            const AttentionMask& mask) const {
    for (size_t r = 0; r < recon_.size(); ++r) {
      const auto& lp = recon_[r];
      const Tensor<S>& keys = keys_per_layer[r];
      Tensor<S> qn = layer_norm(q, lp.lnqg, lp.lnqb);
      Tensor<S> att = masked_softmax_attention(linear(qn, lp.xattn.wq, lp.xattn.bq),
                                               linear(keys, lp.xattn.wk, lp.xattn.bk),
                                               linear(keys, lp.xattn.wv, lp.xattn.bv), mask,
                                               cfg_.n_heads);
      q = add(q, linear(att, lp.xattn.wo, lp.xattn.bo));
      Tensor<S> fn = layer_norm(q, lp.ln2g, lp.ln2b);
      q = add(q, linear(gelu(linear(fn, lp.w1, lp.b1)), lp.w2, lp.b2));
    }
    return layer_norm(q, recon_lnfg_, recon_lnfb_);
  }

  std::vector<Tensor<S>> dual_keys(const LayerFeatures<S>& f) const {
    std::vector<Tensor<S>> keys;
    for (int r = 1; r <= cfg_.recon_layers(); ++r) {
      const int n = cfg_.aligned_encoder_layer(r);
      Tensor<S> k = concat_rows(f.l2r[n - 1], f.r2l[n - 1]);
      if (cfg_.recon_vision_keys) k = concat_rows(k, f.vision);
      keys.push_back(k);
    }
    return keys;
  }

  // Logits for the listed targets (1-based caption positions), default all.
  Tensor<S> reconstruct(const LayerFeatures<S>& f, const SpanSet& spans,
                        std::vector<int> targets = {}) const {
    if (spans.L != f.L) throw std::invalid_argument("reconstruct: span count != sequence length");
    if (targets.empty()) {
      targets.resize(f.L);
      for (int i = 1; i <= f.L; ++i) targets[i - 1] = i;
    }
    Tensor<S> q0 = gather_rows(pos_emb_, targets);  // query i starts as positional embedding i
    Tensor<S> h = run_recon_trunk(q0, dual_keys(f), recon_mask(spans, targets));
    return prediction_head(h);
  }

  Tensor<S> prediction_head(const Tensor<S>& h) const {
    return linear(gelu(linear(h, head_w1_, head_b1_)), head_w2_, head_b2_);
  }

  // ---- unidirectional LM heads ----

  // Row r of each output predicts caption token r+1: l2r from stream position
  // r (BOS anchors the first), r2l from stream position r+2 (EOS the last).
  std::pair<Tensor<S>, Tensor<S>> lm_heads(const LayerFeatures<S>& f) const {
    Tensor<S> hl = final_norm(f.l2r.back());
    Tensor<S> hr = final_norm(f.r2l.back());
    Tensor<S> l2r = linear(slice_rows(hl, 0, f.L), lm_w_, lm_b_);
    Tensor<S> r2l = linear(slice_rows(hr, 2, f.L), lm_w_, lm_b_);
    return {l2r, r2l};
  }

  Tensor<S> lm_logits_l2r(const Tensor<S>& final_layer, int rows) const {
    return linear(slice_rows(final_norm(final_layer), 0, rows), lm_w_, lm_b_);
  }

  // ---- probe ----

  // Per-layer key/value projections for a frozen key set; lets probe training
  // skip the constant projection work on every step.
  struct PreprojKeys {
    std::vector<Tensor<S>> k, v;
    int n_keys = 0;
  };

  PreprojKeys preproject_keys(const std::vector<Tensor<S>>& keys_per_layer) const {
    PreprojKeys out;
    out.n_keys = keys_per_layer.front().rows();
    for (size_t r = 0; r < recon_.size(); ++r) {
      const auto& lp = recon_[r];
      out.k.push_back(linear(keys_per_layer[r], lp.xattn.wk, lp.xattn.bk).detach());
      out.v.push_back(linear(keys_per_layer[r], lp.xattn.wv, lp.xattn.bv).detach());
    }
    return out;
  }

  Tensor<S> run_recon_trunk_preproj(Tensor<S> q, const PreprojKeys& keys,
                                    const AttentionMask& mask) const {
    for (size_t r = 0; r < recon_.size(); ++r) {
      const auto& lp = recon_[r];
      Tensor<S> qn = layer_norm(q, lp.lnqg, lp.lnqb);
      Tensor<S> att = masked_softmax_attention(linear(qn, lp.xattn.wq, lp.xattn.bq), keys.k[r],
                                               keys.v[r], mask, cfg_.n_heads);
      q = add(q, linear(att, lp.xattn.wo, lp.xattn.bo));
      Tensor<S> fn = layer_norm(q, lp.ln2g, lp.ln2b);
      q = add(q, linear(gelu(linear(fn, lp.w1, lp.b1)), lp.w2, lp.b2));
    }
    return layer_norm(q, recon_lnfg_, recon_lnfb_);
  }

  // CLS readout head: hidden layer then one classifier per attribute field.
  std::array<Tensor<S>, 4> probe_heads_from_hidden(const Tensor<S>& h) const {
    Tensor<S> z = gelu(linear(h, probe_mlp_w_, probe_mlp_b_));
    std::array<Tensor<S>, 4> out;
    for (int f = 0; f < 4; ++f) out[f] = linear(z, probe_w_[f], probe_b_[f]);
    return out;
  }

  // CLS reconstruction query with a fully visible key set; returns one logits
  // row per attribute field. Keys follow the reconstructor's layer alignment.
  std::array<Tensor<S>, 4> probe_heads_from_keys(const std::vector<Tensor<S>>& keys_per_layer,
                                                 int n_keys) const {
    AttentionMask m = AttentionMask::full(1, n_keys);
    return probe_heads_from_hidden(run_recon_trunk(cls_emb_, keys_per_layer, m));
  }

  std::array<Tensor<S>, 4> probe_heads_preproj(const PreprojKeys& keys) const {
    AttentionMask m = AttentionMask::full(1, keys.n_keys);
    return probe_heads_from_hidden(run_recon_trunk_preproj(cls_emb_, keys, m));
  }

  std::array<Tensor<S>, 4> probe_forward(const LayerFeatures<S>& f) const {
    auto keys = dual_keys(f);
    return probe_heads_from_keys(keys, keys.front().rows());
  }

  std::array<Tensor<S>, 4> probe_forward_single(const std::vector<Tensor<S>>& layers) const {
    std::vector<Tensor<S>> keys;
    for (int r = 1; r <= cfg_.recon_layers(); ++r)
      keys.push_back(layers[cfg_.aligned_encoder_layer(r) - 1]);
    return probe_heads_from_keys(keys, keys.front().rows());
  }

  // ---- decoding ----

  // Greedy autoregressive decode on the l2r stream; no beam search.
  std::vector<int> greedy_decode(const Attributes& a, int max_len) const {
    NoGradGuard ng;
    std::vector<int> out;
    Tensor<S> vision = encode_vision(a);
    for (int t = 0; t < max_len; ++t) {
      std::vector<int> ids;
      ids.push_back(kBos);
      for (int w : out) ids.push_back(w);
      const int T = static_cast<int>(ids.size());
      auto layers = encode_stream(ids, vision, stream_mask(T, AttnRegime::causal), 0);
      Tensor<S> h = final_norm(layers.back());
      Tensor<S> logits = linear(slice_rows(h, T - 1, 1), lm_w_, lm_b_);
      int best = 0;
      for (int j = 1; j < cfg_.vocab; ++j)
        if (logits.v()[j] > logits.v()[best]) best = j;
      if (best == kEos) break;
      out.push_back(best);
    }
    return out;
  }

  size_t encoder_param_count() const {
    size_t n = 0;
    for (const auto& [name, t] : params_.items)
      if (name.rfind("enc.layer.", 0) == 0) n += t.numel();
    return n;
  }

 private:
  std::vector<int> with_specials(const std::vector<int>& caption) const {
    std::vector<int> ids;
    ids.reserve(caption.size() + 2);
    ids.push_back(kBos);
    ids.insert(ids.end(), caption.begin(), caption.end());
    ids.push_back(kEos);
    return ids;
  }

  void check_len(const std::vector<int>& caption) const {
    if (caption.empty() || static_cast<int>(caption.size()) > cfg_.l_max)
      throw std::invalid_argument("sequence length outside [1, l_max]");
  }

  ModelConfig cfg_;
  ParamStore<S> params_;
  Tensor<S> tok_emb_, pos_emb_;
  std::vector<Tensor<S>> vis_tables_;
  Tensor<S> vis_w_, vis_b_, vis_lng_, vis_lnb_;
  std::vector<std::vector<EncLayerParams<S>>> stacks_;
  Tensor<S> enc_lnfg_, enc_lnfb_;
  std::vector<ReconLayerParams<S>> recon_;
  Tensor<S> recon_lnfg_, recon_lnfb_;
  Tensor<S> head_w1_, head_b1_, head_w2_, head_b2_;
  Tensor<S> lm_w_, lm_b_;
  Tensor<S> cls_emb_;
  Tensor<S> probe_mlp_w_, probe_mlp_b_;
  std::array<Tensor<S>, 4> probe_w_, probe_b_;
};

}  // namespace flm
