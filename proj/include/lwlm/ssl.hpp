// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <complex>
#include <span>
#include <vector>

#include "lwlm/channel.hpp"
#include "lwlm/encoder.hpp"

namespace lwlm::ssl {

using nn::Graph;
using nn::Matrix;
using nn::TrainContext;
using nn::Value;

/// Binary spatial-frequency mask: entry (i, j) is 0 iff antenna i or
/// subcarrier j is masked.
struct MaskSpec {
  Matrix mask_m;                // n_ant x n_subc in {0, 1}
  std::vector<int> masked_ant;  // sorted
  std::vector<int> masked_subc;
};

MaskSpec make_mask(int n_ant, int n_subc, int n_hat_ant, int n_hat_subc, Rng& rng);

inline Eigen::MatrixXcd apply_mask(const Eigen::MatrixXcd& h, const MaskSpec& m) {
  return h.cwiseProduct(m.mask_m.cast<std::complex<double>>());
}

/// Which entries the reconstruction loss scores. The masked region is the
/// default; scoring the unmasked region (multiplying by M) stays selectable.
enum class LossRegion { kMasked, kUnmaskedAsWritten, kFull };

/// Loss weights and contrastive temperature.
struct PretrainWeights {
  double alpha_sfmcm = 10.0;
  double alpha_dti = 20.0;
  double alpha_picl = 1.0;
  double temperature_tau = 0.1;
};

/// Mean over the batch of || (h_hat - h) .* R ||_F^2 with R selected by
/// `region` (complex Frobenius norm).
double sfmcm_loss(std::span<const Eigen::MatrixXcd> h_hat, std::span<const Eigen::MatrixXcd> h,
                  std::span<const MaskSpec> masks, LossRegion region = LossRegion::kMasked);

/// Angle-delay map T(H) = W_ant^H * H * W_subc^* with unitary DFT matrices
/// [W]_{i1,i2} = exp(-j*2*pi*i1*i2/N)/sqrt(N).
Eigen::MatrixXcd dti_transform(const Eigen::MatrixXcd& h);
Eigen::MatrixXcd dti_inverse(const Eigen::MatrixXcd& t);
Eigen::MatrixXcd unitary_dft(int n);

/// Mean over the batch of 1 - |<target, h_hat>_F| / (||target|| * ||h_hat||).
/// Throws on a zero-norm argument (cosine undefined).
double dti_loss(std::span<const Eigen::MatrixXcd> target, std::span<const Eigen::MatrixXcd> h_hat);

/// NT-Xent over the pooled 2N embeddings; proj_1[s] and proj_2[s] form the
/// positive pair, every other pooled embedding is a negative, and both
/// orderings of each pair contribute: loss = (1/2N) * sum_s l_{s,s+}.
double ntxent_loss(std::span<const Eigen::VectorXd> proj_1,
                   std::span<const Eigen::VectorXd> proj_2, double tau);

/// Transformer reconstruction head shared by the masked-modeling and
/// domain-transform tasks: latent slice -> width projection -> n_dec
/// self-attention layers -> drop the LST row -> per-token window projection
/// -> overlap-sum fold -> divide by per-pixel patch multiplicity.
struct ReconDecoderWeights {
  embed::PatchGrid grid;
  nn::LinearLayer in_proj;
  std::vector<nn::TransformerLayer> layers;
  nn::LayerNorm final_ln;
  nn::LinearLayer out_proj;
  Matrix inv_multiplicity;  // 2*n_ant x n_subc

  static ReconDecoderWeights init(const encoder::EncoderConfig& cfg, int n_slice, int n_dec,
                                  Rng& rng);
  /// latent: (n_patch + 1) x n_slice -> re/im planes [2*n_ant x n_subc].
  Value decode(Graph& g, Value latent_slice, const TrainContext& ctx) const;
  void visit(const std::string& prefix, const nn::ParamVisitor& fn);
};

/// Eval-mode reconstruction to a complex matrix.
Eigen::MatrixXcd reconstruction_decode(const Matrix& latent_slice, const ReconDecoderWeights& dec);

/// Mean pooling over the token dimension, a config embedding added in, and a
/// final linear map to the contrastive output width.
struct PiclDecoderWeights {
  nn::LinearLayer cfg_embed;  // n_picl x 3
  nn::LinearLayer out;        // n_picl_out x n_picl
  encoder::ConfigEncoding cfg_enc;

  static PiclDecoderWeights init(int n_picl, int n_picl_out, Rng& rng);
  Value project(Graph& g, Value o_picl, const channel::BsConfig& config) const;
  void visit(const std::string& prefix, const nn::ParamVisitor& fn);
};

Eigen::VectorXd picl_project(const Matrix& o_picl, const channel::BsConfig& config,
                             const PiclDecoderWeights& dec);

/// Encoder plus the three pretraining decoders.
struct PretrainModel {
  encoder::EncoderWeights enc;
  ReconDecoderWeights sfmcm_dec;
  ReconDecoderWeights dti_dec;
  PiclDecoderWeights picl_dec;

  static PretrainModel init(const encoder::EncoderConfig& cfg, int n_dec, int n_picl_out,
                            Rng& rng);
  void visit(const nn::ParamVisitor& fn);
  auto visit_all() {
    return [this](const nn::ParamVisitor& fn) { visit(fn); };
  }
};

/// Per-task batch losses. When grad_scale != 0 each builder backpropagates
/// grad_scale * d(mean loss)/d(params) into the parameters. Pass a fixed
/// TrainContext (no dropout) for deterministic values.
double sfmcm_task_loss(std::span<const Eigen::MatrixXcd> batch, std::span<const MaskSpec> masks,
                       PretrainModel& model, LossRegion region, const TrainContext& ctx,
                       double grad_scale);
double dti_task_loss(std::span<const Eigen::MatrixXcd> batch, PretrainModel& model,
                     const TrainContext& ctx, double grad_scale);
double picl_task_loss(std::span<const Eigen::MatrixXcd> batch_1,
                      std::span<const channel::BsConfig> cfg_1,
                      std::span<const Eigen::MatrixXcd> batch_2,
                      std::span<const channel::BsConfig> cfg_2, PretrainModel& model, double tau,
                      const TrainContext& ctx, double grad_scale);

struct PretrainStepResult {
  double l_sfmcm = 0, l_dti = 0, l_picl = 0, total = 0;
};

struct MaskPlan {
  int n_hat_ant = 0;
  int n_hat_subc = 0;
};

/// One step of the joint pretraining loop: masks batch_1 for reconstruction,
/// uses the clean batch_1 for the domain-transform task, pools batch_1 and
/// batch_2 for the contrastive task, then applies one optimizer update to
/// the encoder and all three decoders. Throws on a non-finite loss.
PretrainStepResult pretrain_step(std::span<const channel::ChannelSample* const> batch_1,
                                 std::span<const channel::ChannelSample* const> batch_2,
                                 PretrainModel& model, const PretrainWeights& hp,
                                 const MaskPlan& mask_plan, LossRegion region, nn::Adam& opt,
                                 Rng& mask_rng, Rng* dropout_rng);

}  // namespace lwlm::ssl
