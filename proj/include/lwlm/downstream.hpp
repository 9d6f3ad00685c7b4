// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <span>
#include <string>
#include <vector>

#include "lwlm/encoder.hpp"
#include "lwlm/ssl.hpp"

namespace lwlm::downstream {

using channel::BsConfig;
using channel::ChannelSample;
using channel::Vec2;
using nn::Graph;
using nn::Matrix;
using nn::TrainContext;
using nn::Value;

enum class Task { kToa, kAoa, kSbloc, kMbloc };

Task task_from_string(const std::string& name);
std::string to_string(Task task);

/// Affine map from the model's normalized outputs back to physical units:
/// physical = raw * scale + offset, per output dimension.
struct Denormalizer {
  Eigen::VectorXd scale;
  Eigen::VectorXd offset;

  Eigen::VectorXd apply(const Eigen::VectorXd& raw) const {
    return raw.cwiseProduct(scale) + offset;
  }
  Eigen::VectorXd normalize(const Eigen::VectorXd& physical) const {
    return (physical - offset).cwiseQuotient(scale);
  }
  static Denormalizer identity(int dim);
};

/// Config-conditioned regression head: the config embedding is added to the
/// LST vector, then a two-layer MLP regresses the target. The hidden
/// activation doubles as the feature the multi-BS attention scores.
struct TaskDecoderWeights {
  nn::LinearLayer cfg_embed;  // n_latent x 3
  nn::LinearLayer head1;      // hidden x n_latent
  nn::LinearLayer head2;      // out x hidden
  encoder::ConfigEncoding cfg_enc;
  Denormalizer denorm;

  static TaskDecoderWeights init(int n_latent, int hidden, int out_dim, Rng& rng);

  struct HeadOut {
    Value out;     // 1 x out_dim (normalized units)
    Value hidden;  // 1 x hidden
  };
  HeadOut apply(Graph& g, Value o_lst, const BsConfig& config) const;
  void visit(const std::string& prefix, const nn::ParamVisitor& fn);
  int out_dim() const { return static_cast<int>(head2.w.value.rows()); }
};

/// Eval-mode scalar prediction in physical units (seconds or radians).
double predict_scalar(const Eigen::MatrixXcd& cfr, const BsConfig& config,
                      const encoder::EncoderWeights& enc, const TaskDecoderWeights& dec);

/// Eval-mode 2D position prediction in meters.
Vec2 predict_position(const Eigen::MatrixXcd& cfr, const BsConfig& config,
                      const encoder::EncoderWeights& enc, const TaskDecoderWeights& dec);

double mae_loss(std::span<const double> pred, std::span<const double> target);
double euclid_loss(std::span<const Vec2> pred, std::span<const Vec2> target);

/// Per-BS position decoders fused by softmax confidence weights computed
/// from each head's penultimate feature. Works for any number of BSs; the
/// softmax renormalizes.
struct MultiBsDecoder {
  std::vector<TaskDecoderWeights> per_bs;
  nn::LinearLayer attn_mlp;  // 1 x hidden

  static MultiBsDecoder init(int n_latent, int hidden, int n_bs, Rng& rng);
  void visit(const std::string& prefix, const nn::ParamVisitor& fn);
};

struct MultiBsResult {
  Vec2 position;            // meters
  Eigen::VectorXd weights;  // per-BS, nonnegative, sums to 1
};

/// Fuses per-BS estimates for samples of one UE location (one sample per
/// participating BS, matched to per_bs decoders by list order).
MultiBsResult multi_bs_localize(std::span<const ChannelSample* const> samples,
                                const encoder::EncoderWeights& enc, const MultiBsDecoder& mbd);

/// Graph builders used by the fine-tuning loops. Targets are normalized with
/// the decoder's denormalizer; losses are in normalized units.
Value sample_loss(Graph& g, const ChannelSample& sample, const encoder::EncoderWeights& enc,
                  const TaskDecoderWeights& dec, Task task, const TrainContext& ctx);
Value fused_location_loss(Graph& g, std::span<const ChannelSample* const> samples,
                          const encoder::EncoderWeights& enc, const MultiBsDecoder& mbd,
                          const TrainContext& ctx);

}  // namespace lwlm::downstream
