#pragma once
// Minimal reverse-mode autodiff over dense row-major matrices. Exactly the
// ops the model needs, no broadcasting beyond row-vector bias adds.
//
// Scalar type S is float for training and double for gradient checks.

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace flm {

// Global grad-recording switch (thread-local). Off for pure evaluation.
inline bool& grad_mode() {
  static thread_local bool on = true;
  return on;
}

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = prev; }
};

// Q x K boolean visibility matrix, true = attend allowed.
struct AttentionMask {
  int q = 0, k = 0;
  std::vector<uint8_t> bits;  // row-major q*k

  AttentionMask() = default;
  AttentionMask(int q_, int k_, bool fill = false)
      : q(q_), k(k_), bits(static_cast<size_t>(q_) * k_, fill ? 1 : 0) {}

  static AttentionMask full(int q_, int k_) { return AttentionMask(q_, k_, true); }

  bool at(int i, int j) const { return bits[static_cast<size_t>(i) * k + j] != 0; }
  void set(int i, int j, bool v) { bits[static_cast<size_t>(i) * k + j] = v ? 1 : 0; }
};

template <typename S>
class Tensor;

template <typename S>
struct TensorNode {
  std::vector<int> shape;
  std::vector<S> val;
  std::vector<S> grad;  // sized lazily on first backward touch
  bool requires_grad = false;
  std::vector<Tensor<S>> parents;
  std::function<void(TensorNode<S>&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != val.size()) grad.assign(val.size(), S(0));
  }
};

template <typename S>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
    Tensor t;
    t.n_ = std::make_shared<TensorNode<S>>();
    t.n_->shape = std::move(shape);
    t.n_->val.assign(t.count(t.n_->shape), S(0));
    t.n_->requires_grad = requires_grad;
    return t;
  }

  static Tensor from(std::vector<int> shape, std::vector<S> data, bool requires_grad = false) {
    Tensor t;
    t.n_ = std::make_shared<TensorNode<S>>();
    if (data.size() != t.count(shape)) throw std::invalid_argument("tensor: data/shape mismatch");
    t.n_->shape = std::move(shape);
    t.n_->val = std::move(data);
    t.n_->requires_grad = requires_grad;
    return t;
  }

  static Tensor scalar(S v) { return from({1}, {v}); }

  bool defined() const { return static_cast<bool>(n_); }
  const std::vector<int>& shape() const { return n_->shape; }
  int rows() const { return n_->shape.at(0); }
  int cols() const { return n_->shape.size() > 1 ? n_->shape[1] : 1; }
  size_t numel() const { return n_->val.size(); }

  // Tensor is a shared handle; value/grad access is mutable through a const
  // handle, like any reference type.
  std::vector<S>& v() const { return n_->val; }
  std::vector<S>& g() const { n_->ensure_grad(); return n_->grad; }
  bool has_grad() const { return !n_->grad.empty(); }

  S item() const {
    if (n_->val.size() != 1) throw std::logic_error("item(): tensor is not scalar");
    return n_->val[0];
  }

  bool requires_grad() const { return n_->requires_grad; }
  void set_requires_grad(bool b) { n_->requires_grad = b; }

  TensorNode<S>* node() const { return n_.get(); }

  void zero_grad() {
    if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), S(0));
  }

  // Value-only copy, cut out of the graph.
  Tensor detach() const {
    Tensor t;
    t.n_ = std::make_shared<TensorNode<S>>();
    t.n_->shape = n_->shape;
    t.n_->val = n_->val;
    t.n_->requires_grad = false;
    return t;
  }

  // Reverse pass from a scalar root. Leaf grads accumulate and persist.
  void backward() {
    if (numel() != 1) throw std::logic_error("backward(): root must be scalar");
    // Iterative post-order topo sort over requires_grad subgraph.
    std::vector<TensorNode<S>*> order;
    std::unordered_set<TensorNode<S>*> seen;
    struct Frame { TensorNode<S>* node; size_t next_parent; };
    std::vector<Frame> stack;
    if (!n_->requires_grad) return;
    stack.push_back({n_.get(), 0});
    seen.insert(n_.get());
    while (!stack.empty()) {
      Frame& f = stack.back();
      TensorNode<S>* nd = f.node;
      if (f.next_parent < nd->parents.size()) {
        TensorNode<S>* p = nd->parents[f.next_parent++].node();
        if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
      } else {
        order.push_back(nd);
        stack.pop_back();
      }
    }
    n_->ensure_grad();
    n_->grad[0] = S(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      TensorNode<S>* nd = *it;
      if (nd->backward_fn) {
        nd->ensure_grad();
        nd->backward_fn(*nd);
      }
    }
  }

  // Internal: wrap an op result.
  static Tensor make(std::vector<int> shape, std::vector<Tensor> parents,
                     std::function<void(TensorNode<S>&)> bw) {
    Tensor t = zeros(std::move(shape));
    bool need = false;
    if (grad_mode()) {
      for (const auto& p : parents)
        if (p.requires_grad()) { need = true; break; }
    }
    if (need) {
      t.n_->requires_grad = true;
      t.n_->parents = std::move(parents);
      t.n_->backward_fn = std::move(bw);
    }
    return t;
  }

 private:
  static size_t count(const std::vector<int>& shape) {
    size_t n = 1;
    for (int d : shape) {
      if (d < 0) throw std::invalid_argument("tensor: negative dim");
      n *= static_cast<size_t>(d);
    }
    return n;
  }

  std::shared_ptr<TensorNode<S>> n_;
};

namespace detail {
template <typename S>
void check_2d(const Tensor<S>& t, const char* op) {
  if (t.shape().size() != 2) throw std::invalid_argument(std::string(op) + ": expected 2-d tensor");
}
}  // namespace detail

// c = a @ b,  a: m x k, b: k x n
template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_2d(a, "matmul");
  detail::check_2d(b, "matmul");
  const int m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) throw std::invalid_argument("matmul: inner dimensions disagree");
  Tensor<S> c = Tensor<S>::make(
      {m, n}, {a, b}, [a, b, m, k, n](TensorNode<S>& out) {
        const S* dc = out.grad.data();
        if (a.requires_grad()) {
          S* da = a.g().data();
          const S* bv = b.v().data();
          // da[i,p] = sum_j dc[i,j] * b[p,j]
          for (int i = 0; i < m; ++i)
            for (int p = 0; p < k; ++p) {
              S acc = 0;
              const S* dci = dc + static_cast<size_t>(i) * n;
              const S* bp = bv + static_cast<size_t>(p) * n;
              for (int j = 0; j < n; ++j) acc += dci[j] * bp[j];
              da[static_cast<size_t>(i) * k + p] += acc;
            }
        }
        if (b.requires_grad()) {
          S* db = b.g().data();
          const S* av = a.v().data();
          // db[p,:] += a[i,p] * dc[i,:]
          for (int i = 0; i < m; ++i)
            for (int p = 0; p < k; ++p) {
              const S w = av[static_cast<size_t>(i) * k + p];
              if (w == S(0)) continue;
              const S* dci = dc + static_cast<size_t>(i) * n;
              S* dbp = db + static_cast<size_t>(p) * n;
              for (int j = 0; j < n; ++j) dbp[j] += w * dci[j];
            }
        }
      });
  S* cv = c.v().data();
  const S* av = a.v().data();
  const S* bv = b.v().data();
  for (int i = 0; i < m; ++i) {
    S* ci = cv + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const S w = av[static_cast<size_t>(i) * k + p];
      const S* bp = bv + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += w * bp[j];
    }
  }
  return c;
}

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() != b.shape()) throw std::invalid_argument("add: shape mismatch");
  Tensor<S> c = Tensor<S>::make(a.shape(), {a, b}, [a, b](TensorNode<S>& out) {
    const size_t n = out.val.size();
    if (a.requires_grad()) {
      S* da = a.g().data();
      for (size_t i = 0; i < n; ++i) da[i] += out.grad[i];
    }
    if (b.requires_grad()) {
      S* db = b.g().data();
      for (size_t i = 0; i < n; ++i) db[i] += out.grad[i];
    }
  });
  const size_t n = c.numel();
  for (size_t i = 0; i < n; ++i) c.v()[i] = a.v()[i] + b.v()[i];
  return c;
}

// a: m x n, bias: n (or 1 x n); adds bias to every row
template <typename S>
Tensor<S> add_rowvec(const Tensor<S>& a, const Tensor<S>& bias) {
  detail::check_2d(a, "add_rowvec");
  const int m = a.rows(), n = a.cols();
  if (static_cast<int>(bias.numel()) != n) throw std::invalid_argument("add_rowvec: width mismatch");
  Tensor<S> c = Tensor<S>::make({m, n}, {a, bias}, [a, bias, m, n](TensorNode<S>& out) {
    if (a.requires_grad()) {
      S* da = a.g().data();
      for (size_t i = 0; i < out.val.size(); ++i) da[i] += out.grad[i];
    }
    if (bias.requires_grad()) {
      S* db = bias.g().data();
      for (int i = 0; i < m; ++i) {
        const S* gi = out.grad.data() + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) db[j] += gi[j];
      }
    }
  });
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      c.v()[static_cast<size_t>(i) * n + j] = a.v()[static_cast<size_t>(i) * n + j] + bias.v()[j];
  return c;
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S s) {
  Tensor<S> c = Tensor<S>::make(a.shape(), {a}, [a, s](TensorNode<S>& out) {
    if (!a.requires_grad()) return;
    S* da = a.g().data();
    for (size_t i = 0; i < out.val.size(); ++i) da[i] += s * out.grad[i];
  });
  for (size_t i = 0; i < c.numel(); ++i) c.v()[i] = s * a.v()[i];
  return c;
}

// Exact gelu, 0.5 x (1 + erf(x / sqrt 2)).
template <typename S>
Tensor<S> gelu(const Tensor<S>& a) {
  Tensor<S> c = Tensor<S>::make(a.shape(), {a}, [a](TensorNode<S>& out) {
    if (!a.requires_grad()) return;
    S* da = a.g().data();
    const S* x = a.v().data();
    constexpr S inv_sqrt2 = S(0.7071067811865475244);
    constexpr S inv_sqrt2pi = S(0.3989422804014326779);
    for (size_t i = 0; i < out.val.size(); ++i) {
      const S cdf = S(0.5) * (S(1) + std::erf(x[i] * inv_sqrt2));
      const S pdf = inv_sqrt2pi * std::exp(S(-0.5) * x[i] * x[i]);
      da[i] += out.grad[i] * (cdf + x[i] * pdf);
    }
  });
  constexpr S inv_sqrt2 = S(0.7071067811865475244);
  for (size_t i = 0; i < c.numel(); ++i)
    c.v()[i] = S(0.5) * a.v()[i] * (S(1) + std::erf(a.v()[i] * inv_sqrt2));
  return c;
}

// Row-wise layer norm over the last dimension, epsilon fixed at 1e-5.
template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& bias) {
  detail::check_2d(x, "layer_norm");
  const int m = x.rows(), n = x.cols();
  if (static_cast<int>(gain.numel()) != n || static_cast<int>(bias.numel()) != n)
    throw std::invalid_argument("layer_norm: gain/bias width mismatch");
  const S eps = S(1e-5);
  // Cache normalized rows and inverse stddevs for the backward pass.
  auto xhat = std::make_shared<std::vector<S>>(static_cast<size_t>(m) * n);
  auto inv_sd = std::make_shared<std::vector<S>>(m);
  Tensor<S> c = Tensor<S>::make({m, n}, {x, gain, bias},
                                [x, gain, bias, xhat, inv_sd, m, n](TensorNode<S>& out) {
    const S* xh = xhat->data();
    for (int i = 0; i < m; ++i) {
      const S* gi = out.grad.data() + static_cast<size_t>(i) * n;
      const S* xhi = xh + static_cast<size_t>(i) * n;
      if (bias.requires_grad()) {
        S* db = bias.g().data();
        for (int j = 0; j < n; ++j) db[j] += gi[j];
      }
      if (gain.requires_grad()) {
        S* dg = gain.g().data();
        for (int j = 0; j < n; ++j) dg[j] += gi[j] * xhi[j];
      }
      if (x.requires_grad()) {
        S* dx = x.g().data() + static_cast<size_t>(i) * n;
        const S* gv = gain.v().data();
        S mean_d = 0, mean_dx = 0;
        for (int j = 0; j < n; ++j) {
          const S d = gi[j] * gv[j];
          mean_d += d;
          mean_dx += d * xhi[j];
        }
        mean_d /= S(n);
        mean_dx /= S(n);
        const S isd = (*inv_sd)[i];
        for (int j = 0; j < n; ++j) {
          const S d = gi[j] * gv[j];
          dx[j] += isd * (d - mean_d - xhi[j] * mean_dx);
        }
      }
    }
  });
  for (int i = 0; i < m; ++i) {
    const S* xi = x.v().data() + static_cast<size_t>(i) * n;
    S mu = 0;
    for (int j = 0; j < n; ++j) mu += xi[j];
    mu /= S(n);
    S var = 0;
    for (int j = 0; j < n; ++j) var += (xi[j] - mu) * (xi[j] - mu);
    var /= S(n);
    const S isd = S(1) / std::sqrt(var + eps);
    (*inv_sd)[i] = isd;
    S* ci = c.v().data() + static_cast<size_t>(i) * n;
    S* xhi = xhat->data() + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      xhi[j] = (xi[j] - mu) * isd;
      ci[j] = xhi[j] * gain.v()[j] + bias.v()[j];
    }
  }
  return c;
}

// Multi-head scaled dot-product attention under a hard boolean mask.
// q: Lq x d, k/v: Lk x d, mask: Lq x Lk. Disallowed keys get weight exactly 0;
// rows with no allowed key produce a zero output row (and pass no gradient).
template <typename S>
Tensor<S> masked_softmax_attention(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v,
                                   const AttentionMask& mask, int n_heads = 1) {
  detail::check_2d(q, "attention");
  detail::check_2d(k, "attention");
  detail::check_2d(v, "attention");
  const int lq = q.rows(), lk = k.rows(), d = q.cols();
  if (k.cols() != d || v.cols() != d) throw std::invalid_argument("attention: feature dims disagree");
  if (mask.q != lq || mask.k != lk) throw std::invalid_argument("attention: mask shape mismatch");
  if (n_heads < 1 || d % n_heads != 0) throw std::invalid_argument("attention: bad head count");
  const int dh = d / n_heads;
  const S sc = S(1) / std::sqrt(S(dh));

  // Attention weights cached for backward: [head][lq*lk]
  auto weights = std::make_shared<std::vector<S>>(static_cast<size_t>(n_heads) * lq * lk, S(0));
  AttentionMask m = mask;

  Tensor<S> out = Tensor<S>::make(
      {lq, d}, {q, k, v}, [q, k, v, m, weights, lq, lk, d, n_heads, dh, sc](TensorNode<S>& o) {
        std::vector<S> dw(static_cast<size_t>(lq) * lk);
        std::vector<S> ds(static_cast<size_t>(lq) * lk);
        for (int h = 0; h < n_heads; ++h) {
          const int c0 = h * dh;
          const S* w = weights->data() + static_cast<size_t>(h) * lq * lk;
          // dv and dw
          for (int i = 0; i < lq; ++i) {
            const S* go = o.grad.data() + static_cast<size_t>(i) * d + c0;
            for (int j = 0; j < lk; ++j) {
              const S wij = w[static_cast<size_t>(i) * lk + j];
              S acc = 0;
              if (m.at(i, j)) {
                const S* vj = v.v().data() + static_cast<size_t>(j) * d + c0;
                for (int c = 0; c < dh; ++c) acc += go[c] * vj[c];
                if (v.requires_grad() && wij != S(0)) {
                  S* dv = v.g().data() + static_cast<size_t>(j) * d + c0;
                  for (int c = 0; c < dh; ++c) dv[c] += wij * go[c];
                }
              }
              dw[static_cast<size_t>(i) * lk + j] = acc;
            }
          }
          // softmax backward: ds = w * (dw - sum_j w*dw)
          for (int i = 0; i < lq; ++i) {
            S dot = 0;
            for (int j = 0; j < lk; ++j)
              dot += w[static_cast<size_t>(i) * lk + j] * dw[static_cast<size_t>(i) * lk + j];
            for (int j = 0; j < lk; ++j) {
              const S wij = w[static_cast<size_t>(i) * lk + j];
              ds[static_cast<size_t>(i) * lk + j] = wij * (dw[static_cast<size_t>(i) * lk + j] - dot);
            }
          }
          if (q.requires_grad()) {
            for (int i = 0; i < lq; ++i) {
              S* dq = q.g().data() + static_cast<size_t>(i) * d + c0;
              for (int j = 0; j < lk; ++j) {
                const S s = ds[static_cast<size_t>(i) * lk + j];
                if (s == S(0)) continue;
                const S* kj = k.v().data() + static_cast<size_t>(j) * d + c0;
                for (int c = 0; c < dh; ++c) dq[c] += sc * s * kj[c];
              }
            }
          }
          if (k.requires_grad()) {
            for (int i = 0; i < lq; ++i) {
              const S* qi = q.v().data() + static_cast<size_t>(i) * d + c0;
              for (int j = 0; j < lk; ++j) {
                const S s = ds[static_cast<size_t>(i) * lk + j];
                if (s == S(0)) continue;
                S* dk = k.g().data() + static_cast<size_t>(j) * d + c0;
                for (int c = 0; c < dh; ++c) dk[c] += sc * s * qi[c];
              }
            }
          }
        }
      });

  std::vector<S> scores(lk);
  for (int h = 0; h < n_heads; ++h) {
    const int c0 = h * dh;
    S* w = weights->data() + static_cast<size_t>(h) * lq * lk;
    for (int i = 0; i < lq; ++i) {
      const S* qi = q.v().data() + static_cast<size_t>(i) * d + c0;
      S mx = 0;
      bool any = false;
      for (int j = 0; j < lk; ++j) {
        if (!mask.at(i, j)) continue;
        const S* kj = k.v().data() + static_cast<size_t>(j) * d + c0;
        S s = 0;
        for (int c = 0; c < dh; ++c) s += qi[c] * kj[c];
        s *= sc;
        scores[j] = s;
        if (!any || s > mx) mx = s;
        any = true;
      }
      if (!any) continue;  // fully masked row: zero weights, zero output
      S z = 0;
      for (int j = 0; j < lk; ++j) {
        if (!mask.at(i, j)) continue;
        const S e = std::exp(scores[j] - mx);
        w[static_cast<size_t>(i) * lk + j] = e;
        z += e;
      }
      S* oi = out.v().data() + static_cast<size_t>(i) * d + c0;
      for (int j = 0; j < lk; ++j) {
        if (!mask.at(i, j)) continue;
        const S wij = w[static_cast<size_t>(i) * lk + j] / z;
        w[static_cast<size_t>(i) * lk + j] = wij;
        const S* vj = v.v().data() + static_cast<size_t>(j) * d + c0;
        for (int c = 0; c < dh; ++c) oi[c] += wij * vj[c];
      }
    }
  }
  return out;
}

// Gather rows of a table by index; grad scatter-adds.
template <typename S>
Tensor<S> gather_rows(const Tensor<S>& table, const std::vector<int>& ids) {
  detail::check_2d(table, "gather_rows");
  const int n = table.cols();
  const int m = static_cast<int>(ids.size());
  for (int id : ids)
    if (id < 0 || id >= table.rows()) throw std::out_of_range("gather_rows: index out of range");
  Tensor<S> c = Tensor<S>::make({m, n}, {table}, [table, ids, n](TensorNode<S>& out) {
    if (!table.requires_grad()) return;
    S* dt = table.g().data();
    for (size_t i = 0; i < ids.size(); ++i) {
      const S* gi = out.grad.data() + i * n;
      S* row = dt + static_cast<size_t>(ids[i]) * n;
      for (int j = 0; j < n; ++j) row[j] += gi[j];
    }
  });
  for (int i = 0; i < m; ++i) {
    const S* src = table.v().data() + static_cast<size_t>(ids[i]) * n;
    S* dst = c.v().data() + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) dst[j] = src[j];
  }
  return c;
}

template <typename S>
Tensor<S> concat_rows(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_2d(a, "concat_rows");
  detail::check_2d(b, "concat_rows");
  const int n = a.cols();
  if (b.cols() != n) throw std::invalid_argument("concat_rows: width mismatch");
  const int ma = a.rows(), mb = b.rows();
  Tensor<S> c = Tensor<S>::make({ma + mb, n}, {a, b}, [a, b, ma, mb, n](TensorNode<S>& out) {
    if (a.requires_grad()) {
      S* da = a.g().data();
      for (size_t i = 0; i < static_cast<size_t>(ma) * n; ++i) da[i] += out.grad[i];
    }
    if (b.requires_grad()) {
      S* db = b.g().data();
      const S* gb = out.grad.data() + static_cast<size_t>(ma) * n;
      for (size_t i = 0; i < static_cast<size_t>(mb) * n; ++i) db[i] += gb[i];
    }
  });
  std::copy(a.v().begin(), a.v().end(), c.v().begin());
  std::copy(b.v().begin(), b.v().end(), c.v().begin() + static_cast<size_t>(ma) * n);
  return c;
}

template <typename S>
Tensor<S> slice_rows(const Tensor<S>& x, int start, int len) {
  detail::check_2d(x, "slice_rows");
  const int n = x.cols();
  if (start < 0 || len < 0 || start + len > x.rows())
    throw std::out_of_range("slice_rows: range out of bounds");
  Tensor<S> c = Tensor<S>::make({len, n}, {x}, [x, start, len, n](TensorNode<S>& out) {
    if (!x.requires_grad()) return;
    S* dx = x.g().data() + static_cast<size_t>(start) * n;
    for (size_t i = 0; i < static_cast<size_t>(len) * n; ++i) dx[i] += out.grad[i];
  });
  std::copy(x.v().begin() + static_cast<size_t>(start) * n,
            x.v().begin() + static_cast<size_t>(start + len) * n, c.v().begin());
  return c;
}

// Sum of negative log softmax over the listed rows. logits: m x V.
// rows may repeat-free subset of [0, m); targets indexed by row id.
template <typename S>
Tensor<S> cross_entropy_rows(const Tensor<S>& logits, const std::vector<int>& targets,
                             const std::vector<int>& rows) {
  detail::check_2d(logits, "cross_entropy");
  const int m = logits.rows(), vsz = logits.cols();
  if (static_cast<int>(targets.size()) != m)
    throw std::invalid_argument("cross_entropy: one target per row required");
  for (int r : rows) {
    if (r < 0 || r >= m) throw std::out_of_range("cross_entropy: row out of range");
    if (targets[r] < 0 || targets[r] >= vsz)
      throw std::out_of_range("cross_entropy: target outside vocabulary");
  }
  // Cache row softmaxes for the backward pass.
  auto probs = std::make_shared<std::vector<S>>(rows.size() * static_cast<size_t>(vsz));
  Tensor<S> c = Tensor<S>::make({1}, {logits}, [logits, targets, rows, probs, vsz](TensorNode<S>& out) {
    if (!logits.requires_grad()) return;
    const S gl = out.grad[0];
    S* dl = logits.g().data();
    for (size_t ri = 0; ri < rows.size(); ++ri) {
      const int r = rows[ri];
      const S* p = probs->data() + ri * vsz;
      S* drow = dl + static_cast<size_t>(r) * vsz;
      for (int j = 0; j < vsz; ++j) drow[j] += gl * p[j];
      drow[targets[r]] -= gl;
    }
  });
  S total = 0;
  for (size_t ri = 0; ri < rows.size(); ++ri) {
    const int r = rows[ri];
    const S* z = logits.v().data() + static_cast<size_t>(r) * vsz;
    S mx = z[0];
    for (int j = 1; j < vsz; ++j) mx = std::max(mx, z[j]);
    S sum = 0;
    S* p = probs->data() + ri * vsz;
    for (int j = 0; j < vsz; ++j) {
      p[j] = std::exp(z[j] - mx);
      sum += p[j];
    }
    for (int j = 0; j < vsz; ++j) p[j] /= sum;
    total += std::log(sum) - (z[targets[r]] - mx);
  }
  c.v()[0] = total;
  return c;
}

// Single-row convenience: -log softmax(logits)[target].
template <typename S>
Tensor<S> cross_entropy(const Tensor<S>& logits, int target) {
  if (logits.shape().size() == 2 && logits.rows() == 1)
    return cross_entropy_rows(logits, {target}, {0});
  const int vsz = static_cast<int>(logits.numel());
  Tensor<S> row = Tensor<S>::make({1, vsz}, {logits}, [logits](TensorNode<S>& out) {
    if (!logits.requires_grad()) return;
    S* dl = logits.g().data();
    for (size_t i = 0; i < out.val.size(); ++i) dl[i] += out.grad[i];
  });
  std::copy(logits.v().begin(), logits.v().end(), row.v().begin());
  return cross_entropy_rows(row, {target}, {0});
}

template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
  return add_rowvec(matmul(x, w), b);
}

}  // namespace flm
