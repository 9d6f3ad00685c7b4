// SPDX-License-Identifier: Apache-2.0
#include "lwlm/downstream.hpp"

#include <cmath>
#include <stdexcept>

namespace lwlm::downstream {

Task task_from_string(const std::string& name) {
  if (name == "toa") return Task::kToa;
  if (name == "aoa") return Task::kAoa;
  if (name == "sbloc") return Task::kSbloc;
  if (name == "mbloc") return Task::kMbloc;
  throw std::invalid_argument("unknown task '" + name + "' (expected toa|aoa|sbloc|mbloc)");
}

std::string to_string(Task task) {
  switch (task) {
    case Task::kToa: return "toa";
    case Task::kAoa: return "aoa";
    case Task::kSbloc: return "sbloc";
    case Task::kMbloc: return "mbloc";
  }
  return "?";
}

Denormalizer Denormalizer::identity(int dim) {
  Denormalizer d;
  d.scale = Eigen::VectorXd::Ones(dim);
  d.offset = Eigen::VectorXd::Zero(dim);
  return d;
}

TaskDecoderWeights TaskDecoderWeights::init(int n_latent, int hidden, int out_dim, Rng& rng) {
  TaskDecoderWeights d;
  d.cfg_embed.init(3, n_latent, rng);
  d.head1.init(n_latent, hidden, rng);
  d.head2.init(hidden, out_dim, rng);
  d.denorm = Denormalizer::identity(out_dim);
  return d;
}

TaskDecoderWeights::HeadOut TaskDecoderWeights::apply(Graph& g, Value o_lst,
                                                      const BsConfig& config) const {
  const Eigen::RowVector3d c = cfg_enc.encode(config);
  Value x = g.add(o_lst, cfg_embed.apply(g, g.constant(c)));
  Value hidden = g.gelu(head1.apply(g, x));
  return {head2.apply(g, hidden), hidden};
}

void TaskDecoderWeights::visit(const std::string& prefix, const nn::ParamVisitor& fn) {
  cfg_embed.visit(prefix + ".cfg_embed", fn);
  head1.visit(prefix + ".head1", fn);
  head2.visit(prefix + ".head2", fn);
}

namespace {

Value lst_row(Graph& g, const Eigen::MatrixXcd& cfr, const encoder::EncoderWeights& enc,
              const TrainContext& ctx) {
  Value latent = enc.encode(g, cfr, ctx);
  return g.slice_rows(latent, 0, 1);
}

Eigen::VectorXd eval_head(const Eigen::MatrixXcd& cfr, const BsConfig& config,
                          const encoder::EncoderWeights& enc, const TaskDecoderWeights& dec) {
  Graph g;
  const auto out = dec.apply(g, lst_row(g, cfr, enc, TrainContext{}), config);
  return dec.denorm.apply(g.val(out.out).row(0).transpose());
}

}  // namespace

double predict_scalar(const Eigen::MatrixXcd& cfr, const BsConfig& config,
                      const encoder::EncoderWeights& enc, const TaskDecoderWeights& dec) {
  if (dec.out_dim() != 1) throw std::invalid_argument("predict_scalar: decoder out_dim != 1");
  return eval_head(cfr, config, enc, dec)(0);
}

Vec2 predict_position(const Eigen::MatrixXcd& cfr, const BsConfig& config,
                      const encoder::EncoderWeights& enc, const TaskDecoderWeights& dec) {
  if (dec.out_dim() != 2) throw std::invalid_argument("predict_position: decoder out_dim != 2");
  const Eigen::VectorXd p = eval_head(cfr, config, enc, dec);
  return {p(0), p(1)};
}

double mae_loss(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size()) throw std::invalid_argument("mae_loss: length mismatch");
  if (pred.empty()) throw std::invalid_argument("mae_loss: empty batch");
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) total += std::abs(pred[i] - target[i]);
  return total / static_cast<double>(pred.size());
}

double euclid_loss(std::span<const Vec2> pred, std::span<const Vec2> target) {
  if (pred.size() != target.size()) throw std::invalid_argument("euclid_loss: length mismatch");
  if (pred.empty()) throw std::invalid_argument("euclid_loss: empty batch");
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) total += (pred[i] - target[i]).norm();
  return total / static_cast<double>(pred.size());
}

MultiBsDecoder MultiBsDecoder::init(int n_latent, int hidden, int n_bs, Rng& rng) {
  MultiBsDecoder m;
  m.per_bs.reserve(n_bs);
  for (int i = 0; i < n_bs; ++i) m.per_bs.push_back(TaskDecoderWeights::init(n_latent, hidden, 2, rng));
  m.attn_mlp.init(hidden, 1, rng);
  return m;
}

void MultiBsDecoder::visit(const std::string& prefix, const nn::ParamVisitor& fn) {
  for (std::size_t i = 0; i < per_bs.size(); ++i)
    per_bs[i].visit(prefix + ".bs" + std::to_string(i), fn);
  attn_mlp.visit(prefix + ".attn", fn);
}

namespace {

struct FusedOut {
  Value position;  // 1 x 2, normalized units
  Value weights;   // 1 x M
};

FusedOut fuse(Graph& g, std::span<const ChannelSample* const> samples,
              const encoder::EncoderWeights& enc, const MultiBsDecoder& mbd,
              const TrainContext& ctx) {
  const int m = static_cast<int>(samples.size());
  if (m == 0) throw std::invalid_argument("multi_bs_localize: empty BS list");
  if (m > static_cast<int>(mbd.per_bs.size()))
    throw std::invalid_argument("multi_bs_localize: more samples than per-BS decoders");
  std::vector<Value> positions, logits;
  positions.reserve(m);
  logits.reserve(m);
  for (int i = 0; i < m; ++i) {
    Value lst = lst_row(g, samples[i]->cfr, enc, ctx);
    const auto head = mbd.per_bs[i].apply(g, lst, samples[i]->config);
    positions.push_back(head.out);
    logits.push_back(mbd.attn_mlp.apply(g, head.hidden));
  }
  Value logit_row = g.concat_cols(logits);       // 1 x M
  Value weights = g.softmax_rows(logit_row);     // 1 x M
  Value stacked = g.concat_rows(positions);      // M x 2
  return {g.matmul(weights, stacked), weights};
}

}  // namespace

MultiBsResult multi_bs_localize(std::span<const ChannelSample* const> samples,
                                const encoder::EncoderWeights& enc, const MultiBsDecoder& mbd) {
  Graph g;
  const FusedOut fused = fuse(g, samples, enc, mbd, TrainContext{});
  const Eigen::VectorXd raw = g.val(fused.position).row(0).transpose();
  const Eigen::VectorXd phys = mbd.per_bs.front().denorm.apply(raw);
  MultiBsResult res;
  res.position = {phys(0), phys(1)};
  res.weights = g.val(fused.weights).row(0).transpose();
  return res;
}

Value sample_loss(Graph& g, const ChannelSample& sample, const encoder::EncoderWeights& enc,
                  const TaskDecoderWeights& dec, Task task, const TrainContext& ctx) {
  const auto head = dec.apply(g, lst_row(g, sample.cfr, enc, ctx), sample.config);
  switch (task) {
    case Task::kToa:
    case Task::kAoa: {
      const double physical = (task == Task::kToa) ? sample.toa_s : sample.aoa_rad;
      Eigen::VectorXd t(1);
      t << physical;
      const double target = dec.denorm.normalize(t)(0);
      return g.abs_el(g.add_scalar(head.out, -target));
    }
    case Task::kSbloc: {
      const Eigen::VectorXd target = dec.denorm.normalize(sample.ue_position);
      Value diff = g.sub(head.out, g.constant(target.transpose()));
      return g.sqrt_el(g.sum_all(g.square(diff)));
    }
    case Task::kMbloc:
      throw std::invalid_argument("sample_loss: mbloc uses fused_location_loss");
  }
  throw std::logic_error("sample_loss: bad task");
}

Value fused_location_loss(Graph& g, std::span<const ChannelSample* const> samples,
                          const encoder::EncoderWeights& enc, const MultiBsDecoder& mbd,
                          const TrainContext& ctx) {
  const FusedOut fused = fuse(g, samples, enc, mbd, ctx);
  const Eigen::VectorXd target = mbd.per_bs.front().denorm.normalize(samples.front()->ue_position);
  Value diff = g.sub(fused.position, g.constant(target.transpose()));
  return g.sqrt_el(g.sum_all(g.square(diff)));
}

}  // namespace lwlm::downstream
