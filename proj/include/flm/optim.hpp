#pragma once
// Named parameter store, AdamW with decoupled weight decay, and a central
// finite-difference gradient checker.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "flm/tensor.hpp"

namespace flm {

template <typename S>
struct ParamStore {
  std::vector<std::pair<std::string, Tensor<S>>> items;  // insertion order = manifest order
  std::map<std::string, size_t> index;

  Tensor<S>& add(const std::string& name, Tensor<S> t) {
    t.set_requires_grad(true);
    index[name] = items.size();
    items.emplace_back(name, std::move(t));
    return items.back().second;
  }

  Tensor<S>& at(const std::string& name) {
    auto it = index.find(name);
    if (it == index.end()) throw std::out_of_range("param not found: " + name);
    return items[it->second].second;
  }
  const Tensor<S>& at(const std::string& name) const {
    auto it = index.find(name);
    if (it == index.end()) throw std::out_of_range("param not found: " + name);
    return items[it->second].second;
  }
  bool has(const std::string& name) const { return index.count(name) != 0; }

  void zero_grads() {
    for (auto& [_, t] : items) t.zero_grad();
  }

  size_t total_count() const {
    size_t n = 0;
    for (const auto& [_, t] : items) n += t.numel();
    return n;
  }
};

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Decoupled weight decay: p <- p - lr*wd*p applied before the Adam term.
template <typename S>
class AdamW {
 public:
  AdamW(std::vector<Tensor<S>> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (size_t i = 0; i < params_.size(); ++i) {
      m_[i].assign(params_[i].numel(), S(0));
      v_[i].assign(params_[i].numel(), S(0));
    }
  }

  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    for (size_t i = 0; i < params_.size(); ++i) {
      Tensor<S>& p = params_[i];
      if (!p.has_grad()) p.g();  // treat missing grad as zero
      S* pv = p.v().data();
      const S* gv = p.g().data();
      S* m = m_[i].data();
      S* v = v_[i].data();
      const size_t n = p.numel();
      for (size_t j = 0; j < n; ++j) {
        pv[j] -= static_cast<S>(lr * cfg_.weight_decay) * pv[j];
        m[j] = static_cast<S>(cfg_.beta1) * m[j] + static_cast<S>(1.0 - cfg_.beta1) * gv[j];
        v[j] = static_cast<S>(cfg_.beta2) * v[j] + static_cast<S>(1.0 - cfg_.beta2) * gv[j] * gv[j];
        const double mhat = m[j] / bc1;
        const double vhat = v[j] / bc2;
        pv[j] -= static_cast<S>(lr * mhat / (std::sqrt(vhat) + cfg_.eps));
      }
    }
  }

  long step_count() const { return t_; }

 private:
  std::vector<Tensor<S>> params_;
  AdamWConfig cfg_;
  std::vector<std::vector<S>> m_, v_;
  long t_ = 0;
};

struct GradCheckGroup {
  std::string name;
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  size_t count = 0;
};

struct GradCheckReport {
  std::vector<GradCheckGroup> groups;
  bool pass = true;
  bool aborted = false;
  std::string message;

  double worst() const {
    double w = 0;
    for (const auto& g : groups) w = std::max(w, g.max_rel_err);
    return w;
  }
};

// Central finite differences against the analytic reverse pass. loss_fn must
// rebuild the same graph every call (frozen inputs, frozen sampling).
// Run with S=double; h=1e-5, tolerance 1e-3 are the defaults.
template <typename S>
GradCheckReport grad_check(const std::function<Tensor<S>()>& loss_fn, ParamStore<S>& params,
                           double h = 1e-5, double tolerance = 1e-3) {
  GradCheckReport report;
  params.zero_grads();
  Tensor<S> loss = loss_fn();
  if (!std::isfinite(static_cast<double>(loss.item()))) {
    report.aborted = true;
    report.pass = false;
    report.message = "non-finite loss; check aborted";
    return report;
  }
  loss.backward();

  for (auto& [name, p] : params.items) {
    GradCheckGroup grp;
    grp.name = name;
    grp.count = p.numel();
    std::vector<S> analytic(p.numel(), S(0));
    if (p.has_grad()) analytic = p.g();
    for (size_t j = 0; j < p.numel(); ++j) {
      const S keep = p.v()[j];
      p.v()[j] = keep + static_cast<S>(h);
      const double lp = static_cast<double>(loss_fn().item());
      p.v()[j] = keep - static_cast<S>(h);
      const double lm = static_cast<double>(loss_fn().item());
      p.v()[j] = keep;
      if (!std::isfinite(lp) || !std::isfinite(lm)) {
        report.aborted = true;
        report.pass = false;
        report.message = "non-finite loss while differencing " + name;
        return report;
      }
      const double fd = (lp - lm) / (2.0 * h);
      const double an = static_cast<double>(analytic[j]);
      const double abs_err = std::abs(an - fd);
      const double denom = std::max({std::abs(an), std::abs(fd), 1e-6});
      grp.max_abs_err = std::max(grp.max_abs_err, abs_err);
      grp.max_rel_err = std::max(grp.max_rel_err, abs_err / denom);
    }
    if (grp.max_rel_err > tolerance) report.pass = false;
    report.groups.push_back(grp);
  }
  return report;
}

// Gaussian init helper; deterministic for a fixed generator state.
template <typename S>
void fill_normal(Tensor<S>& t, std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& x : t.v()) x = static_cast<S>(dist(rng));
}

template <typename S>
void fill_const(Tensor<S>& t, S v) {
  std::fill(t.v().begin(), t.v().end(), v);
}

}  // namespace flm
