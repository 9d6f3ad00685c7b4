// SPDX-License-Identifier: Apache-2.0
#include "lwlm/layers.hpp"

#include <stdexcept>

namespace lwlm::nn {

Value MultiHeadAttention::apply(Graph& g, Value x, const TrainContext& ctx) const {
  const int width = static_cast<int>(g.val(x).cols());
  if (width % n_heads != 0)
    throw std::invalid_argument("MultiHeadAttention: width not divisible by heads");
  const int head_dim = width / n_heads;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(head_dim));

  Value qv = q.apply(g, x);
  Value kv = k.apply(g, x);
  Value vv = v.apply(g, x);

  std::vector<Value> heads;
  heads.reserve(n_heads);
  for (int h = 0; h < n_heads; ++h) {
    Value qh = g.slice_cols(qv, h * head_dim, head_dim);
    Value kh = g.slice_cols(kv, h * head_dim, head_dim);
    Value vh = g.slice_cols(vv, h * head_dim, head_dim);
    Value scores = g.scale(g.matmul_nt(qh, kh), inv_sqrt_d);
    Value probs = g.softmax_rows(scores);
    probs = g.dropout(probs, ctx.dropout_rate, ctx.rng);
    heads.push_back(g.matmul(probs, vh));
  }
  return out.apply(g, g.concat_cols(heads));
}

Value TransformerLayer::apply(Graph& g, Value x, const TrainContext& ctx) const {
  x = g.add(x, attn.apply(g, ln1.apply(g, x), ctx));
  Value h = g.gelu(ff1.apply(g, ln2.apply(g, x)));
  h = g.dropout(h, ctx.dropout_rate, ctx.rng);
  return g.add(x, ff2.apply(g, h));
}

}  // namespace lwlm::nn
