// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "lwlm/channel.hpp"
#include "lwlm/embedding.hpp"
#include "lwlm/layers.hpp"

namespace lwlm::encoder {

using nn::Graph;
using nn::Matrix;
using nn::TrainContext;
using nn::Value;

struct EncoderConfig {
  // input geometry
  int n_ant = 8;
  int n_subc = 32;
  int kernel = 6;
  int stride = 4;
  int padding = 1;
  // transformer
  int n_enc = 2;
  int n_heads = 4;
  int n_embed = 64;
  int d_ff = 32;
  int n_latent = 32;
  int n_sfmcm = 12;
  int n_dti = 12;
  int n_picl = 8;
  double dropout_rate = 0.1;

  int n_patch() const { return embed::patch_count(n_ant, n_subc, kernel, stride, padding); }
  int n_tokens() const { return n_patch() + 1; }
  void validate() const;

  /// Small CPU-friendly profile used by default.
  static EncoderConfig desk();
  /// Full-scale profile (32x128 input, 512-wide, 4 layers, 96/96/64 latent).
  static EncoderConfig paper();
};

/// Encoder output: tokens x n_latent, columns partitioned
/// [reconstruction | domain-transform | contrastive] in that order, with the
/// LST summary in row 0.
struct LatentRepresentation {
  Matrix o;  // (n_patch + 1) x n_latent
  int n_sfmcm = 0, n_dti = 0, n_picl = 0;

  auto sfmcm() const { return o.middleCols(0, n_sfmcm); }
  auto dti() const { return o.middleCols(n_sfmcm, n_dti); }
  auto picl() const { return o.middleCols(n_sfmcm + n_dti, n_picl); }
  Eigen::RowVectorXd lst() const { return o.row(0); }
};

struct EncoderWeights {
  EncoderConfig cfg;
  embed::PatchGrid grid;
  Matrix seq_emb;  // fixed sinusoidal table, not trainable
  nn::LinearLayer conv;
  nn::Parameter lst;
  std::vector<nn::TransformerLayer> layers;
  nn::LayerNorm final_ln;
  nn::LinearLayer latent_proj;
  /// Fixed input gain applied to the complex CFR before tokenization; set
  /// from dataset statistics at pretraining time and stored in checkpoints.
  double input_scale = 1.0;

  static EncoderWeights init(const EncoderConfig& cfg, Rng& rng);
  void visit(const nn::ParamVisitor& fn);

  /// Transformer stack from an assembled token sequence to the latent matrix.
  Value encode_tokens(Graph& g, Value tokens, const TrainContext& ctx) const;
  /// Full pipeline: scale -> split mag/phase -> patch embed -> LST + sequence
  /// embedding -> encoder layers -> final norm -> per-token latent projection.
  Value encode(Graph& g, const Eigen::MatrixXcd& cfr, const TrainContext& ctx) const;
};

/// Deterministic eval-mode encoding.
LatentRepresentation encode(const Eigen::MatrixXcd& cfr, const EncoderWeights& weights);

nn::ParamCountReport count_parameters(EncoderWeights& weights);

/// Latent column offsets for each pretraining head.
struct LatentSlices {
  int sfmcm_begin = 0, dti_begin = 0, picl_begin = 0;
};
inline LatentSlices slices_of(const EncoderConfig& cfg) {
  return {0, cfg.n_sfmcm, cfg.n_sfmcm + cfg.n_dti};
}

/// Conditioning vector c = [bs_x, bs_y, bandwidth] in normalized units:
/// positions in scene-local coordinates, bandwidth in units of 10 MHz.
/// Defaults are the identity on positions.
struct ConfigEncoding {
  Eigen::Vector2d center = Eigen::Vector2d::Zero();
  Eigen::Vector2d halfspan = Eigen::Vector2d::Ones();
  double bw_unit_hz = 1e7;

  Eigen::RowVector3d encode(const channel::BsConfig& cfg) const {
    return {(cfg.bs_position.x() - center.x()) / halfspan.x(),
            (cfg.bs_position.y() - center.y()) / halfspan.y(), cfg.bandwidth_hz / bw_unit_hz};
  }
};

}  // namespace lwlm::encoder
