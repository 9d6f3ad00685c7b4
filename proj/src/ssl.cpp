// SPDX-License-Identifier: Apache-2.0
#include "lwlm/ssl.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "lwlm/embedding.hpp"

namespace lwlm::ssl {

namespace {
constexpr std::complex<double> kJ{0.0, 1.0};

Matrix region_matrix(const MaskSpec& mask, LossRegion region) {
  switch (region) {
    case LossRegion::kMasked:
      return Matrix::Ones(mask.mask_m.rows(), mask.mask_m.cols()) - mask.mask_m;
    case LossRegion::kUnmaskedAsWritten:
      return mask.mask_m;
    case LossRegion::kFull:
      return Matrix::Ones(mask.mask_m.rows(), mask.mask_m.cols());
  }
  throw std::logic_error("region_matrix: bad enum");
}

Matrix stack_two(const Matrix& plane) {
  Matrix out(2 * plane.rows(), plane.cols());
  out.topRows(plane.rows()) = plane;
  out.bottomRows(plane.rows()) = plane;
  return out;
}
}  // namespace

MaskSpec make_mask(int n_ant, int n_subc, int n_hat_ant, int n_hat_subc, Rng& rng) {
  if (n_hat_ant > n_ant || n_hat_subc > n_subc || n_hat_ant < 0 || n_hat_subc < 0)
    throw std::invalid_argument("make_mask: mask sizes exceed matrix dimensions");
  MaskSpec m;
  m.masked_ant = rng.sample_without_replacement(n_ant, n_hat_ant);
  m.masked_subc = rng.sample_without_replacement(n_subc, n_hat_subc);
  std::sort(m.masked_ant.begin(), m.masked_ant.end());
  std::sort(m.masked_subc.begin(), m.masked_subc.end());
  m.mask_m = Matrix::Ones(n_ant, n_subc);
  for (int i : m.masked_ant) m.mask_m.row(i).setZero();
  for (int j : m.masked_subc) m.mask_m.col(j).setZero();
  return m;
}

double sfmcm_loss(std::span<const Eigen::MatrixXcd> h_hat, std::span<const Eigen::MatrixXcd> h,
                  std::span<const MaskSpec> masks, LossRegion region) {
  if (h_hat.size() != h.size() || h.size() != masks.size() || h.empty())
    throw std::invalid_argument("sfmcm_loss: batch size mismatch or empty batch");
  double total = 0.0;
  for (std::size_t s = 0; s < h.size(); ++s) {
    if (h_hat[s].rows() != h[s].rows() || h_hat[s].cols() != h[s].cols())
      throw std::invalid_argument("sfmcm_loss: shape mismatch");
    const Matrix r = region_matrix(masks[s], region);
    total += ((h_hat[s] - h[s]).cwiseProduct(r.cast<std::complex<double>>())).squaredNorm();
  }
  return total / static_cast<double>(h.size());
}

Eigen::MatrixXcd unitary_dft(int n) {
  Eigen::MatrixXcd w(n, n);
  const double inv_sqrt_n = 1.0 / std::sqrt(static_cast<double>(n));
  for (int i2 = 0; i2 < n; ++i2)
    for (int i1 = 0; i1 < n; ++i1)
      w(i1, i2) = inv_sqrt_n *
                  std::exp(-kJ * (2.0 * std::numbers::pi * static_cast<double>(i1) *
                                  static_cast<double>(i2) / static_cast<double>(n)));
  return w;
}

Eigen::MatrixXcd dti_transform(const Eigen::MatrixXcd& h) {
  const Eigen::MatrixXcd w_ant = unitary_dft(static_cast<int>(h.rows()));
  const Eigen::MatrixXcd w_subc = unitary_dft(static_cast<int>(h.cols()));
  return w_ant.adjoint() * h * w_subc.conjugate();
}

Eigen::MatrixXcd dti_inverse(const Eigen::MatrixXcd& t) {
  const Eigen::MatrixXcd w_ant = unitary_dft(static_cast<int>(t.rows()));
  const Eigen::MatrixXcd w_subc = unitary_dft(static_cast<int>(t.cols()));
  return w_ant * t * w_subc.transpose();
}

double dti_loss(std::span<const Eigen::MatrixXcd> target, std::span<const Eigen::MatrixXcd> h_hat) {
  if (target.size() != h_hat.size() || target.empty())
    throw std::invalid_argument("dti_loss: batch size mismatch or empty batch");
  double total = 0.0;
  for (std::size_t s = 0; s < target.size(); ++s) {
    const double nt = target[s].norm();
    const double nh = h_hat[s].norm();
    if (nt == 0.0 || nh == 0.0)
      throw std::invalid_argument("dti_loss: zero-norm input, cosine undefined");
    const std::complex<double> inner = (target[s].conjugate().cwiseProduct(h_hat[s])).sum();
    total += 1.0 - std::abs(inner) / (nt * nh);
  }
  return total / static_cast<double>(target.size());
}

double ntxent_loss(std::span<const Eigen::VectorXd> proj_1,
                   std::span<const Eigen::VectorXd> proj_2, double tau) {
  if (proj_1.size() != proj_2.size() || proj_1.empty())
    throw std::invalid_argument("ntxent_loss: batches must be nonempty and equal-sized");
  if (!(tau > 0)) throw std::invalid_argument("ntxent_loss: tau must be positive");
  const int n = static_cast<int>(proj_1.size());
  const int total = 2 * n;
  std::vector<Eigen::VectorXd> z(total);
  for (int s = 0; s < n; ++s) {
    z[s] = proj_1[s];
    z[n + s] = proj_2[s];
  }
  std::vector<double> norms(total);
  for (int s = 0; s < total; ++s) {
    norms[s] = z[s].norm();
    if (norms[s] == 0.0) throw std::invalid_argument("ntxent_loss: zero-norm embedding");
  }
  Matrix sim(total, total);
  for (int a = 0; a < total; ++a)
    for (int b = 0; b < total; ++b) sim(a, b) = z[a].dot(z[b]) / (norms[a] * norms[b]);

  double loss = 0.0;
  for (int s = 0; s < total; ++s) {
    const int pos = (s + n) % total;
    double max_term = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < total; ++j)
      if (j != s) max_term = std::max(max_term, sim(s, j) / tau);
    double denom = 0.0;
    for (int j = 0; j < total; ++j)
      if (j != s) denom += std::exp(sim(s, j) / tau - max_term);
    loss += -(sim(s, pos) / tau) + max_term + std::log(denom);
  }
  return loss / static_cast<double>(total);
}

ReconDecoderWeights ReconDecoderWeights::init(const encoder::EncoderConfig& cfg, int n_slice,
                                              int n_dec, Rng& rng) {
  ReconDecoderWeights d;
  d.grid = embed::PatchGrid::make(cfg.n_ant, cfg.n_subc, cfg.kernel, cfg.stride, cfg.padding);
  if ((d.grid.fold_multiplicity.array() <= 0.0).any())
    throw std::invalid_argument(
        "ReconDecoderWeights: fold leaves uncovered pixels; adjust kernel/stride/padding");
  d.in_proj.init(n_slice, cfg.n_embed, rng);
  d.layers.resize(n_dec);
  for (auto& layer : d.layers) layer.init(cfg.n_embed, cfg.n_heads, cfg.d_ff, rng);
  d.final_ln.init(cfg.n_embed);
  d.out_proj.init(cfg.n_embed, d.grid.window, rng);
  d.inv_multiplicity = d.grid.fold_multiplicity.cwiseInverse();
  return d;
}

Value ReconDecoderWeights::decode(Graph& g, Value latent_slice, const TrainContext& ctx) const {
  Value x = in_proj.apply(g, latent_slice);
  for (const auto& layer : layers) x = layer.apply(g, x, ctx);
  x = final_ln.apply(g, x);
  x = g.slice_rows(x, 1, grid.n_patch);  // LST token is discarded
  Value windows = out_proj.apply(g, x);
  Value summed = embed::fold(g, windows, grid);
  return g.mul(summed, g.constant(inv_multiplicity));
}

Eigen::MatrixXcd reconstruction_decode(const Matrix& latent_slice, const ReconDecoderWeights& dec) {
  Graph g;
  const Value planes = dec.decode(g, g.constant(latent_slice), TrainContext{});
  return embed::merge_re_im(g.val(planes), dec.grid.n_ant);
}

void ReconDecoderWeights::visit(const std::string& prefix, const nn::ParamVisitor& fn) {
  in_proj.visit(prefix + ".in_proj", fn);
  for (std::size_t i = 0; i < layers.size(); ++i)
    layers[i].visit(prefix + ".layer" + std::to_string(i), fn);
  final_ln.visit(prefix + ".final_ln", fn);
  out_proj.visit(prefix + ".out_proj", fn);
}

PiclDecoderWeights PiclDecoderWeights::init(int n_picl, int n_picl_out, Rng& rng) {
  PiclDecoderWeights d;
  d.cfg_embed.init(3, n_picl, rng);
  d.out.init(n_picl, n_picl_out, rng);
  return d;
}

Value PiclDecoderWeights::project(Graph& g, Value o_picl, const channel::BsConfig& config) const {
  Value pooled = g.mean_rows(o_picl);  // 1 x n_picl, mean over the token dimension
  const Eigen::RowVector3d c = cfg_enc.encode(config);
  Value emb = cfg_embed.apply(g, g.constant(c));
  return out.apply(g, g.add(pooled, emb));
}

Eigen::VectorXd picl_project(const Matrix& o_picl, const channel::BsConfig& config,
                             const PiclDecoderWeights& dec) {
  Graph g;
  const Value v = dec.project(g, g.constant(o_picl), config);
  return g.val(v).row(0).transpose();
}

void PiclDecoderWeights::visit(const std::string& prefix, const nn::ParamVisitor& fn) {
  cfg_embed.visit(prefix + ".cfg_embed", fn);
  out.visit(prefix + ".out", fn);
}

PretrainModel PretrainModel::init(const encoder::EncoderConfig& cfg, int n_dec, int n_picl_out,
                                  Rng& rng) {
  PretrainModel m;
  m.enc = encoder::EncoderWeights::init(cfg, rng);
  m.sfmcm_dec = ReconDecoderWeights::init(cfg, cfg.n_sfmcm, n_dec, rng);
  m.dti_dec = ReconDecoderWeights::init(cfg, cfg.n_dti, n_dec, rng);
  m.picl_dec = PiclDecoderWeights::init(cfg.n_picl, n_picl_out, rng);
  return m;
}

void PretrainModel::visit(const nn::ParamVisitor& fn) {
  enc.visit(fn);
  sfmcm_dec.visit("sfmcm_dec", fn);
  dti_dec.visit("dti_dec", fn);
  picl_dec.visit("picl_dec", fn);
}

namespace {

/// Scalar graph term || (planes - target) .* region ||^2 for one sample.
Value masked_sq_error(Graph& g, Value planes, const Matrix& target, const Matrix& region2) {
  Value diff = g.sub(planes, g.constant(target));
  Value masked = g.mul(diff, g.constant(region2));
  return g.sum_all(g.square(masked));
}

/// Scalar graph term 1 - |<target, planes>| / (||target|| * ||planes||).
Value cosine_dissimilarity(Graph& g, Value planes, const Eigen::MatrixXcd& target) {
  const int n_ant = static_cast<int>(target.rows());
  const Matrix t_re = target.real();
  const Matrix t_im = target.imag();
  const double t_norm = target.norm();
  if (t_norm == 0.0) throw std::invalid_argument("cosine_dissimilarity: zero-norm target");
  Value h_re = g.slice_rows(planes, 0, n_ant);
  Value h_im = g.slice_rows(planes, n_ant, n_ant);
  Value re_z = g.add(g.sum_all(g.mul(g.constant(t_re), h_re)),
                     g.sum_all(g.mul(g.constant(t_im), h_im)));
  Value im_z = g.sub(g.sum_all(g.mul(g.constant(t_re), h_im)),
                     g.sum_all(g.mul(g.constant(t_im), h_re)));
  Value abs_z = g.sqrt_el(g.add(g.square(re_z), g.square(im_z)));
  Value h_norm = g.sqrt_el(g.sum_all(g.square(planes)));
  Value ratio = g.cdiv(abs_z, g.scale(h_norm, t_norm));
  return g.add_scalar(g.scale(ratio, -1.0), 1.0);
}

}  // namespace

double sfmcm_task_loss(std::span<const Eigen::MatrixXcd> batch, std::span<const MaskSpec> masks,
                       PretrainModel& model, LossRegion region, const TrainContext& ctx,
                       double grad_scale) {
  if (batch.size() != masks.size() || batch.empty())
    throw std::invalid_argument("sfmcm_task_loss: batch/mask mismatch");
  const auto& cfg = model.enc.cfg;
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    Graph g;
    const Eigen::MatrixXcd masked_in = apply_mask(batch[s], masks[s]);
    Value latent = model.enc.encode(g, masked_in, ctx);
    Value slice = g.slice_cols(latent, 0, cfg.n_sfmcm);
    Value planes = model.sfmcm_dec.decode(g, slice, ctx);
    const Matrix target = embed::split_re_im(batch[s] * model.enc.input_scale);
    const Matrix region2 = stack_two(region_matrix(masks[s], region));
    Value term = masked_sq_error(g, planes, target, region2);
    total += g.val(term)(0, 0);
    if (grad_scale != 0.0) {
      Matrix seed(1, 1);
      seed(0, 0) = grad_scale * inv_n;
      g.backward(term, seed);
    }
  }
  return total * inv_n;
}

double dti_task_loss(std::span<const Eigen::MatrixXcd> batch, PretrainModel& model,
                     const TrainContext& ctx, double grad_scale) {
  if (batch.empty()) throw std::invalid_argument("dti_task_loss: empty batch");
  const auto& cfg = model.enc.cfg;
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (const auto& h : batch) {
    Graph g;
    Value latent = model.enc.encode(g, h, ctx);
    Value slice = g.slice_cols(latent, cfg.n_sfmcm, cfg.n_dti);
    Value planes = model.dti_dec.decode(g, slice, ctx);
    const Eigen::MatrixXcd target = dti_transform(h * model.enc.input_scale);
    Value term = cosine_dissimilarity(g, planes, target);
    total += g.val(term)(0, 0);
    if (grad_scale != 0.0) {
      Matrix seed(1, 1);
      seed(0, 0) = grad_scale * inv_n;
      g.backward(term, seed);
    }
  }
  return total * inv_n;
}

double picl_task_loss(std::span<const Eigen::MatrixXcd> batch_1,
                      std::span<const channel::BsConfig> cfg_1,
                      std::span<const Eigen::MatrixXcd> batch_2,
                      std::span<const channel::BsConfig> cfg_2, PretrainModel& model, double tau,
                      const TrainContext& ctx, double grad_scale) {
  if (batch_1.size() != batch_2.size() || batch_1.size() != cfg_1.size() ||
      batch_2.size() != cfg_2.size() || batch_1.empty())
    throw std::invalid_argument("picl_task_loss: batch size mismatch");
  if (!(tau > 0)) throw std::invalid_argument("picl_task_loss: tau must be positive");
  const auto& cfg = model.enc.cfg;
  const int n = static_cast<int>(batch_1.size());
  const int total_n = 2 * n;
  const int picl_begin = cfg.n_sfmcm + cfg.n_dti;

  Graph g;
  std::vector<Value> z(total_n);
  for (int s = 0; s < total_n; ++s) {
    const Eigen::MatrixXcd& h = (s < n) ? batch_1[s] : batch_2[s - n];
    const channel::BsConfig& c = (s < n) ? cfg_1[s] : cfg_2[s - n];
    Value latent = model.enc.encode(g, h, ctx);
    Value slice = g.slice_cols(latent, picl_begin, cfg.n_picl);
    z[s] = model.picl_dec.project(g, slice, c);
  }
  Value stacked = g.concat_rows(z);
  Value norms = g.sqrt_el(g.row_sums(g.square(stacked)));
  Value unit = g.div_col_broadcast(stacked, norms);
  Value sims = g.scale(g.matmul_nt(unit, unit), 1.0 / tau);
  Matrix diag_mask = Matrix::Zero(total_n, total_n);
  diag_mask.diagonal().setConstant(-1e9);
  Value masked = g.add(sims, g.constant(diag_mask));
  Value lse = g.logsumexp_rows(masked);
  std::vector<std::pair<int, int>> pos_entries;
  pos_entries.reserve(total_n);
  for (int s = 0; s < total_n; ++s) pos_entries.emplace_back(s, (s + n) % total_n);
  Value pos = g.gather(sims, std::move(pos_entries));
  Value loss = g.scale(g.sum_all(g.sub(lse, pos)), 1.0 / static_cast<double>(total_n));
  const double value = g.val(loss)(0, 0);
  if (grad_scale != 0.0) {
    Matrix seed(1, 1);
    seed(0, 0) = grad_scale;
    g.backward(loss, seed);
  }
  return value;
}

PretrainStepResult pretrain_step(std::span<const channel::ChannelSample* const> batch_1,
                                 std::span<const channel::ChannelSample* const> batch_2,
                                 PretrainModel& model, const PretrainWeights& hp,
                                 const MaskPlan& mask_plan, LossRegion region, nn::Adam& opt,
                                 Rng& mask_rng, Rng* dropout_rng) {
  if (batch_1.empty() || batch_1.size() != batch_2.size())
    throw std::invalid_argument("pretrain_step: batches must be nonempty and equal-sized");
  if (hp.alpha_sfmcm < 0 || hp.alpha_dti < 0 || hp.alpha_picl < 0 || hp.temperature_tau <= 0)
    throw std::invalid_argument("pretrain_step: invalid loss weights or temperature");
  const auto& cfg = model.enc.cfg;
  nn::zero_grads(model.visit_all());

  std::vector<Eigen::MatrixXcd> h1, h2;
  std::vector<channel::BsConfig> c1, c2;
  for (const auto* s : batch_1) {
    h1.push_back(s->cfr);
    c1.push_back(s->config);
  }
  for (const auto* s : batch_2) {
    h2.push_back(s->cfr);
    c2.push_back(s->config);
  }

  const TrainContext ctx{cfg.dropout_rate, dropout_rng};
  PretrainStepResult res;

  if (hp.alpha_sfmcm > 0) {
    std::vector<MaskSpec> masks;
    masks.reserve(h1.size());
    for (std::size_t s = 0; s < h1.size(); ++s)
      masks.push_back(
          make_mask(cfg.n_ant, cfg.n_subc, mask_plan.n_hat_ant, mask_plan.n_hat_subc, mask_rng));
    res.l_sfmcm = sfmcm_task_loss(h1, masks, model, region, ctx, hp.alpha_sfmcm);
  }
  if (hp.alpha_dti > 0) res.l_dti = dti_task_loss(h1, model, ctx, hp.alpha_dti);
  if (hp.alpha_picl > 0)
    res.l_picl = picl_task_loss(h1, c1, h2, c2, model, hp.temperature_tau, ctx, hp.alpha_picl);

  res.total = hp.alpha_sfmcm * res.l_sfmcm + hp.alpha_dti * res.l_dti + hp.alpha_picl * res.l_picl;
  if (!std::isfinite(res.total))
    throw std::runtime_error("pretrain_step: non-finite loss (sfmcm=" +
                             std::to_string(res.l_sfmcm) + ", dti=" + std::to_string(res.l_dti) +
                             ", picl=" + std::to_string(res.l_picl) + ")");
  opt.step(model.visit_all());
  return res;
}

}  // namespace lwlm::ssl
