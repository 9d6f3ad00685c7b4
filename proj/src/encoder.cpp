// SPDX-License-Identifier: Apache-2.0
#include "lwlm/encoder.hpp"

#include <stdexcept>

namespace lwlm::encoder {

void EncoderConfig::validate() const {
  if (n_sfmcm + n_dti + n_picl != n_latent)
    throw std::invalid_argument("EncoderConfig: latent partition must sum to n_latent");
  if (n_embed % n_heads != 0)
    throw std::invalid_argument("EncoderConfig: n_embed must be divisible by n_heads");
  if (n_embed % 2 != 0) throw std::invalid_argument("EncoderConfig: n_embed must be even");
  if (n_enc < 0 || n_ant < 1 || n_subc < 1)
    throw std::invalid_argument("EncoderConfig: bad dimensions");
  embed::patch_count(n_ant, n_subc, kernel, stride, padding);  // throws on bad conv geometry
}

EncoderConfig EncoderConfig::desk() { return EncoderConfig{}; }

EncoderConfig EncoderConfig::paper() {
  EncoderConfig cfg;
  cfg.n_ant = 32;
  cfg.n_subc = 128;
  cfg.kernel = 6;
  cfg.stride = 4;
  cfg.padding = 1;
  cfg.n_enc = 4;
  cfg.n_heads = 4;
  cfg.n_embed = 512;
  cfg.d_ff = 256;
  cfg.n_latent = 256;
  cfg.n_sfmcm = 96;
  cfg.n_dti = 96;
  cfg.n_picl = 64;
  cfg.dropout_rate = 0.1;
  return cfg;
}

EncoderWeights EncoderWeights::init(const EncoderConfig& cfg, Rng& rng) {
  cfg.validate();
  EncoderWeights w;
  w.cfg = cfg;
  w.grid = embed::PatchGrid::make(cfg.n_ant, cfg.n_subc, cfg.kernel, cfg.stride, cfg.padding);
  w.seq_emb = embed::sequence_embedding(cfg.n_tokens(), cfg.n_embed);
  w.conv.init(w.grid.window, cfg.n_embed, rng);
  w.lst.resize(1, cfg.n_embed);
  w.lst.init_gaussian(rng, 0.02);
  w.layers.resize(cfg.n_enc);
  for (auto& layer : w.layers) layer.init(cfg.n_embed, cfg.n_heads, cfg.d_ff, rng);
  w.final_ln.init(cfg.n_embed);
  w.latent_proj.init(cfg.n_embed, cfg.n_latent, rng);
  return w;
}

void EncoderWeights::visit(const nn::ParamVisitor& fn) {
  conv.visit("encoder.patch_embed", fn);
  fn("encoder.lst", lst);
  for (std::size_t i = 0; i < layers.size(); ++i)
    layers[i].visit("encoder.layer" + std::to_string(i), fn);
  final_ln.visit("encoder.final_ln", fn);
  latent_proj.visit("encoder.latent_proj", fn);
}

Value EncoderWeights::encode_tokens(Graph& g, Value tokens, const TrainContext& ctx) const {
  Value x = tokens;
  for (const auto& layer : layers) x = layer.apply(g, x, ctx);
  x = final_ln.apply(g, x);
  return latent_proj.apply(g, x);
}

Value EncoderWeights::encode(Graph& g, const Eigen::MatrixXcd& cfr, const TrainContext& ctx) const {
  if (cfr.rows() != cfg.n_ant || cfr.cols() != cfg.n_subc)
    throw std::invalid_argument("encode: CFR shape does not match encoder config");
  auto& self = const_cast<EncoderWeights&>(*this);
  const Matrix planes = embed::split_mag_phase(cfr * input_scale);
  Value patches = embed::patch_embed(g, g.constant(planes), grid, conv);
  Value tokens = embed::assemble_sequence(g, patches, g.leaf(self.lst), seq_emb);
  return encode_tokens(g, tokens, ctx);
}

LatentRepresentation encode(const Eigen::MatrixXcd& cfr, const EncoderWeights& weights) {
  Graph g;
  const Value o = weights.encode(g, cfr, TrainContext{});
  LatentRepresentation rep;
  rep.o = g.val(o);
  rep.n_sfmcm = weights.cfg.n_sfmcm;
  rep.n_dti = weights.cfg.n_dti;
  rep.n_picl = weights.cfg.n_picl;
  return rep;
}

nn::ParamCountReport count_parameters(EncoderWeights& weights) {
  return nn::count_parameters([&](const nn::ParamVisitor& fn) { weights.visit(fn); });
}

}  // namespace lwlm::encoder
