// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "lwlm/autograd.hpp"

namespace lwlm::nn {

/// Forward-pass mode: rng == nullptr disables dropout (eval).
struct TrainContext {
  double dropout_rate = 0.0;
  Rng* rng = nullptr;
};

using ParamVisitor = std::function<void(const std::string&, Parameter&)>;

struct LinearLayer {
  Parameter w;  // out x in
  Parameter b;  // 1 x out

  void init(int in, int out, Rng& rng) {
    w.resize(out, in);
    b.resize(1, out);
    w.init_gaussian(rng, 1.0 / std::sqrt(static_cast<double>(in)));
  }
  Value apply(Graph& g, Value x) const {
    auto& self = const_cast<LinearLayer&>(*this);
    return g.add_row_broadcast(g.matmul_nt(x, g.leaf(self.w)), g.leaf(self.b));
  }
  void visit(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + ".w", w);
    fn(prefix + ".b", b);
  }
};

struct LayerNorm {
  Parameter gamma, beta;  // 1 x width

  void init(int width) {
    gamma.resize(1, width);
    gamma.value.setOnes();
    beta.resize(1, width);
  }
  Value apply(Graph& g, Value x) const {
    auto& self = const_cast<LayerNorm&>(*this);
    return g.layernorm_rows(x, g.leaf(self.gamma), g.leaf(self.beta));
  }
  void visit(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + ".gamma", gamma);
    fn(prefix + ".beta", beta);
  }
};

struct MultiHeadAttention {
  LinearLayer q, k, v, out;
  int n_heads = 1;

  void init(int width, int heads, Rng& rng) {
    n_heads = heads;
    q.init(width, width, rng);
    k.init(width, width, rng);
    v.init(width, width, rng);
    out.init(width, width, rng);
  }
  Value apply(Graph& g, Value x, const TrainContext& ctx) const;
  void visit(const std::string& prefix, const ParamVisitor& fn) {
    q.visit(prefix + ".q", fn);
    k.visit(prefix + ".k", fn);
    v.visit(prefix + ".v", fn);
    out.visit(prefix + ".out", fn);
  }
};

/// Pre-norm transformer block: x += attn(ln1(x)); x += ffn(ln2(x)).
struct TransformerLayer {
  LayerNorm ln1, ln2;
  MultiHeadAttention attn;
  LinearLayer ff1, ff2;

  void init(int width, int heads, int d_ff, Rng& rng) {
    ln1.init(width);
    ln2.init(width);
    attn.init(width, heads, rng);
    ff1.init(width, d_ff, rng);
    ff2.init(d_ff, width, rng);
  }
  Value apply(Graph& g, Value x, const TrainContext& ctx) const;
  void visit(const std::string& prefix, const ParamVisitor& fn) {
    ln1.visit(prefix + ".ln1", fn);
    attn.visit(prefix + ".attn", fn);
    ln2.visit(prefix + ".ln2", fn);
    ff1.visit(prefix + ".ff1", fn);
    ff2.visit(prefix + ".ff2", fn);
  }
};

/// Adam with bias correction, applied to every parameter a visitor yields.
class Adam {
 public:
  explicit Adam(double lr = 1e-4, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const std::function<void(const ParamVisitor&)>& visit_all) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    visit_all([&](const std::string&, Parameter& p) {
      p.adam_m = beta1_ * p.adam_m + (1.0 - beta1_) * p.grad;
      p.adam_v = beta2_ * p.adam_v + (1.0 - beta2_) * p.grad.cwiseProduct(p.grad);
      p.value.array() -=
          lr_ * (p.adam_m.array() / bc1) / ((p.adam_v.array() / bc2).sqrt() + eps_);
    });
  }

  double lr() const { return lr_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
};

inline void zero_grads(const std::function<void(const ParamVisitor&)>& visit_all) {
  visit_all([](const std::string&, Parameter& p) { p.zero_grad(); });
}

struct ParamCountReport {
  struct Entry {
    std::string name;
    long count;
  };
  std::vector<Entry> entries;
  long total = 0;
};

inline ParamCountReport count_parameters(const std::function<void(const ParamVisitor&)>& visit_all) {
  ParamCountReport report;
  visit_all([&](const std::string& name, Parameter& p) {
    report.entries.push_back({name, static_cast<long>(p.count())});
    report.total += static_cast<long>(p.count());
  });
  return report;
}

}  // namespace lwlm::nn
