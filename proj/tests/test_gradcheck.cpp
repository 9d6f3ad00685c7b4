// SPDX-License-Identifier: Apache-2.0
//
// End-to-end analytic-vs-numeric gradient checks: every SSL loss and both
// downstream losses composed through tiny encoder/decoder stacks, probed
// against central finite differences parameter by parameter.
#include <doctest.h>

#include "lwlm/downstream.hpp"
#include "lwlm/ssl.hpp"
#include "test_util.hpp"

using namespace lwlm;
using nn::Matrix;
using nn::Parameter;

namespace {

encoder::EncoderConfig tiny_config() {
  encoder::EncoderConfig cfg;
  cfg.n_ant = 4;
  cfg.n_subc = 8;
  cfg.kernel = 2;
  cfg.stride = 2;
  cfg.padding = 0;
  cfg.n_enc = 1;
  cfg.n_heads = 2;
  cfg.n_embed = 16;
  cfg.d_ff = 8;
  cfg.n_latent = 6;
  cfg.n_sfmcm = 2;
  cfg.n_dti = 2;
  cfg.n_picl = 2;
  cfg.dropout_rate = 0.0;
  return cfg;
}

struct ParamRef {
  std::string name;
  Parameter* p;
};

std::vector<ParamRef> collect(const std::function<void(const nn::ParamVisitor&)>& visit_all) {
  std::vector<ParamRef> out;
  visit_all([&](const std::string& name, Parameter& p) { out.push_back({name, &p}); });
  return out;
}

/// Probes n_probes random (parameter, entry) pairs: relative error between
/// the accumulated analytic gradient and a central difference of `eval`.
double probe_params(const std::vector<ParamRef>& params, const std::function<double()>& eval,
                    Rng& rng, int n_probes) {
  double worst = 0.0;
  for (int probe = 0; probe < n_probes; ++probe) {
    auto& [name, p] = params[rng.uniform_index(params.size())];
    const int flat = static_cast<int>(rng.uniform_index(p->value.size()));
    const int i = flat % static_cast<int>(p->value.rows());
    const int j = flat / static_cast<int>(p->value.rows());
    const double saved = p->value(i, j);
    const double h = 1e-6 * std::max(1.0, std::abs(saved));
    p->value(i, j) = saved + h;
    const double fp = eval();
    p->value(i, j) = saved - h;
    const double fm = eval();
    p->value(i, j) = saved;
    const double numeric = (fp - fm) / (2.0 * h);
    const double analytic = p->grad(i, j);
    const double err = test::grad_check_err(analytic, numeric);
    CAPTURE(name);
    CAPTURE(i);
    CAPTURE(j);
    CAPTURE(analytic);
    CAPTURE(numeric);
    CHECK(err < 1e-4);
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace

TEST_SUITE("gradcheck") {

TEST_CASE("all three SSL losses match central finite differences") {
  Rng rng(101);
  const auto cfg = tiny_config();
  auto model = ssl::PretrainModel::init(cfg, 1, 3, rng);
  model.enc.input_scale = 1.3;
  const nn::TrainContext ctx{0.0, nullptr};

  std::vector<Eigen::MatrixXcd> b1, b2;
  std::vector<channel::BsConfig> c1, c2;
  std::vector<ssl::MaskSpec> masks;
  Rng mask_rng(7);
  for (int s = 0; s < 2; ++s) {
    b1.push_back(test::random_complex(4, 8, rng));
    b2.push_back(test::random_complex(4, 8, rng));
    c1.push_back({{rng.uniform(-3, 3), rng.uniform(-3, 3)}, 1e7});
    c2.push_back({{rng.uniform(-3, 3), rng.uniform(-3, 3)}, 2e7});
    masks.push_back(ssl::make_mask(4, 8, 1, 2, mask_rng));
  }
  const auto params = collect(model.visit_all());

  SUBCASE("masked reconstruction loss") {
    nn::zero_grads(model.visit_all());
    ssl::sfmcm_task_loss(b1, masks, model, ssl::LossRegion::kMasked, ctx, 1.0);
    auto eval = [&] {
      return ssl::sfmcm_task_loss(b1, masks, model, ssl::LossRegion::kMasked, ctx, 0.0);
    };
    probe_params(params, eval, rng, 70);
  }
  SUBCASE("domain-transform loss") {
    nn::zero_grads(model.visit_all());
    ssl::dti_task_loss(b1, model, ctx, 1.0);
    auto eval = [&] { return ssl::dti_task_loss(b1, model, ctx, 0.0); };
    probe_params(params, eval, rng, 70);
  }
  SUBCASE("contrastive loss") {
    nn::zero_grads(model.visit_all());
    ssl::picl_task_loss(b1, c1, b2, c2, model, 0.5, ctx, 1.0);
    auto eval = [&] { return ssl::picl_task_loss(b1, c1, b2, c2, model, 0.5, ctx, 0.0); };
    probe_params(params, eval, rng, 70);
  }
}

TEST_CASE("both downstream losses match central finite differences") {
  Rng rng(202);
  const auto cfg = tiny_config();
  auto enc = encoder::EncoderWeights::init(cfg, rng);
  enc.input_scale = 0.8;
  const nn::TrainContext ctx{0.0, nullptr};

  std::vector<channel::ChannelSample> batch;
  for (int s = 0; s < 2; ++s) {
    channel::ChannelSample cs;
    cs.cfr = test::random_complex(4, 8, rng);
    cs.ue_position = {rng.uniform(-2, 2), rng.uniform(3, 6)};
    cs.config = {{rng.uniform(-2, 2), 0.0}, 1e7};
    cs.toa_s = rng.uniform(0.5, 2.0);   // target scale ~1 after normalization
    cs.aoa_rad = rng.uniform(-1, 1);
    batch.push_back(std::move(cs));
  }

  SUBCASE("absolute-error scalar head") {
    auto dec = downstream::TaskDecoderWeights::init(cfg.n_latent, cfg.n_latent, 1, rng);
    auto visit_all = [&](const nn::ParamVisitor& fn) {
      enc.visit(fn);
      dec.visit("dec", fn);
    };
    const auto params = collect(visit_all);
    auto eval = [&] {
      double total = 0;
      for (const auto& s : batch) {
        nn::Graph g;
        total += g.val(downstream::sample_loss(g, s, enc, dec, downstream::Task::kToa, ctx))(0, 0);
      }
      return total / batch.size();
    };
    nn::zero_grads(visit_all);
    for (const auto& s : batch) {
      nn::Graph g;
      nn::Value loss = downstream::sample_loss(g, s, enc, dec, downstream::Task::kToa, ctx);
      Matrix seed(1, 1);
      seed(0, 0) = 1.0 / batch.size();
      g.backward(loss, seed);
    }
    probe_params(params, eval, rng, 60);
  }
  SUBCASE("euclidean position head") {
    auto dec = downstream::TaskDecoderWeights::init(cfg.n_latent, cfg.n_latent, 2, rng);
    auto visit_all = [&](const nn::ParamVisitor& fn) {
      enc.visit(fn);
      dec.visit("dec", fn);
    };
    const auto params = collect(visit_all);
    auto eval = [&] {
      double total = 0;
      for (const auto& s : batch) {
        nn::Graph g;
        total +=
            g.val(downstream::sample_loss(g, s, enc, dec, downstream::Task::kSbloc, ctx))(0, 0);
      }
      return total / batch.size();
    };
    nn::zero_grads(visit_all);
    for (const auto& s : batch) {
      nn::Graph g;
      nn::Value loss = downstream::sample_loss(g, s, enc, dec, downstream::Task::kSbloc, ctx);
      Matrix seed(1, 1);
      seed(0, 0) = 1.0 / batch.size();
      g.backward(loss, seed);
    }
    probe_params(params, eval, rng, 60);
  }
  SUBCASE("fused multi-BS euclidean loss") {
    auto mbd = downstream::MultiBsDecoder::init(cfg.n_latent, cfg.n_latent, 2, rng);
    auto visit_all = [&](const nn::ParamVisitor& fn) {
      enc.visit(fn);
      mbd.visit("mbd", fn);
    };
    const auto params = collect(visit_all);
    std::vector<const channel::ChannelSample*> group = {&batch[0], &batch[1]};
    auto eval = [&] {
      nn::Graph g;
      return g.val(downstream::fused_location_loss(g, group, enc, mbd, ctx))(0, 0);
    };
    nn::zero_grads(visit_all);
    {
      nn::Graph g;
      g.backward(downstream::fused_location_loss(g, group, enc, mbd, ctx));
    }
    probe_params(params, eval, rng, 40);
  }
}

}  // TEST_SUITE
