// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "lwlm/ssl.hpp"
#include "test_util.hpp"

using namespace lwlm;
using namespace lwlm::ssl;
using nn::Graph;
using nn::Matrix;

namespace {
constexpr double kPi = std::numbers::pi;

encoder::EncoderConfig toy_config() {
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

/// Literal double-loop NT-Xent oracle straight from the definition.
double ntxent_oracle(const std::vector<Eigen::VectorXd>& z1, const std::vector<Eigen::VectorXd>& z2,
                     double tau) {
  const int n = static_cast<int>(z1.size());
  std::vector<Eigen::VectorXd> z;
  for (const auto& v : z1) z.push_back(v);
  for (const auto& v : z2) z.push_back(v);
  auto sim = [&](int a, int b) { return z[a].dot(z[b]) / (z[a].norm() * z[b].norm()); };
  double loss = 0.0;
  for (int s = 0; s < 2 * n; ++s) {
    const int pos = (s + n) % (2 * n);
    double denom = 0.0;
    for (int j = 0; j < 2 * n; ++j)
      if (j != s) denom += std::exp(sim(s, j) / tau);
    loss += -std::log(std::exp(sim(s, pos) / tau) / denom);
  }
  return loss / (2.0 * n);
}

}  // namespace

TEST_SUITE("ssl") {

TEST_CASE("make_mask structure") {
  Rng rng(1);

  SUBCASE("no masking gives the all-ones mask") {
    const auto m = make_mask(4, 6, 0, 0, rng);
    CHECK(m.mask_m == Matrix::Ones(4, 6));
  }
  SUBCASE("masking every antenna gives the all-zeros mask") {
    const auto m = make_mask(4, 6, 4, 0, rng);
    CHECK(m.mask_m == Matrix::Zero(4, 6));
  }
  SUBCASE("paper sizes: 32x128 with 16/64 masked zeroes 3072 entries") {
    const auto m = make_mask(32, 128, 16, 64, rng);
    CHECK(static_cast<int>(m.masked_ant.size()) == 16);
    CHECK(static_cast<int>(m.masked_subc.size()) == 64);
    CHECK((m.mask_m.array() == 0.0).count() == 3072);  // 4096 - 16*64
  }
  SUBCASE("row/column zero iff masked") {
    const auto m = make_mask(8, 10, 3, 4, rng);
    for (int i = 0; i < 8; ++i) {
      const bool masked =
          std::find(m.masked_ant.begin(), m.masked_ant.end(), i) != m.masked_ant.end();
      CHECK((m.mask_m.row(i).sum() == 0.0) == masked);
    }
    for (int j = 0; j < 10; ++j) {
      const bool masked =
          std::find(m.masked_subc.begin(), m.masked_subc.end(), j) != m.masked_subc.end();
      CHECK((m.mask_m.col(j).sum() == 0.0) == masked);
    }
  }
  SUBCASE("oversize rejected") {
    CHECK_THROWS_AS(make_mask(4, 6, 5, 0, rng), std::invalid_argument);
  }
}

TEST_CASE("sfmcm_loss") {
  Rng rng(2);
  const auto mask = make_mask(2, 3, 1, 1, rng);
  const std::vector<MaskSpec> masks = {mask};

  SUBCASE("perfect reconstruction gives zero in every region") {
    const std::vector<Eigen::MatrixXcd> h = {test::random_complex(2, 3, rng)};
    for (auto region : {LossRegion::kMasked, LossRegion::kUnmaskedAsWritten, LossRegion::kFull})
      CHECK(sfmcm_loss(h, h, masks, region) == 0.0);
  }
  SUBCASE("errors confined to unmasked entries vanish under the masked region") {
    const std::vector<Eigen::MatrixXcd> h = {test::random_complex(2, 3, rng)};
    std::vector<Eigen::MatrixXcd> h_hat = h;
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 3; ++j)
        if (mask.mask_m(i, j) == 1.0) h_hat[0](i, j) += std::complex<double>(1.0, -2.0);
    CHECK(sfmcm_loss(h_hat, h, masks, LossRegion::kMasked) == 0.0);
    CHECK(sfmcm_loss(h_hat, h, masks, LossRegion::kUnmaskedAsWritten) > 0.0);
  }
  SUBCASE("random batch matches the brute-force double loop") {
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<Eigen::MatrixXcd> h, h_hat;
      std::vector<MaskSpec> ms;
      const int n = 2 + static_cast<int>(rng.uniform_index(3));
      for (int s = 0; s < n; ++s) {
        h.push_back(test::random_complex(2, 3, rng));
        h_hat.push_back(test::random_complex(2, 3, rng));
        ms.push_back(make_mask(2, 3, 1, 1, rng));
      }
      double brute = 0.0;
      for (int s = 0; s < n; ++s)
        for (int i = 0; i < 2; ++i)
          for (int j = 0; j < 3; ++j)
            if (ms[s].mask_m(i, j) == 0.0) brute += std::norm(h_hat[s](i, j) - h[s](i, j));
      brute /= n;
      CHECK(test::rel_err(sfmcm_loss(h_hat, h, ms, LossRegion::kMasked), brute) < 1e-10);
    }
  }
  SUBCASE("shape mismatch rejected") {
    const std::vector<Eigen::MatrixXcd> h = {test::random_complex(2, 3, rng)};
    const std::vector<Eigen::MatrixXcd> bad = {test::random_complex(3, 3, rng)};
    CHECK_THROWS_AS(sfmcm_loss(bad, h, masks), std::invalid_argument);
  }
}

TEST_CASE("dti_transform") {
  SUBCASE("unitary DFT matrices: ||W^H W - I|| < 1e-10") {
    for (int n : {4, 8, 32, 128}) {
      const auto w = unitary_dft(n);
      CHECK((w.adjoint() * w - Eigen::MatrixXcd::Identity(n, n)).norm() < 1e-10);
    }
  }
  SUBCASE("all-ones 4x4 concentrates into a single entry of value 4") {
    const auto t = dti_transform(Eigen::MatrixXcd::Ones(4, 4));
    CHECK(std::abs(t(0, 0) - std::complex<double>(4, 0)) < 1e-12);
    CHECK((t.cwiseAbs().sum() - std::abs(t(0, 0))) < 1e-12);
  }
  SUBCASE("inverse recovers the input within 1e-10") {
    Rng rng(3);
    const auto h = test::random_complex(8, 16, rng);
    CHECK((dti_inverse(dti_transform(h)) - h).norm() < 1e-10);
  }
  SUBCASE("norm is preserved") {
    Rng rng(4);
    const auto h = test::random_complex(8, 16, rng);
    CHECK(std::abs(dti_transform(h).norm() - h.norm()) < 1e-10);
  }
  SUBCASE("on-grid single path concentrates >= 99% energy in one entry") {
    const int n_ant = 8, n_subc = 16;
    const auto geom = channel::ArrayGeometry::half_wavelength(n_ant, 0.1, {0, 0});
    const channel::BsConfig cfg{{0, 0}, 16e6};
    const double df = cfg.subcarrier_spacing(n_subc);
    // sin(theta) = 2*i2/n_ant and df*tau = i0/n_subc put the path on the grid
    const double theta = std::asin(2.0 * 1 / n_ant);
    const double tau = 2.0 / (n_subc * df);
    Rng rng(5);
    const auto h =
        channel::synthesize_cfr({{{1.0, 0.0}, tau, theta, true}}, cfg, geom, n_subc, 0.0, rng);
    const auto t = dti_transform(h);
    double peak = 0.0;
    for (int i = 0; i < t.rows(); ++i)
      for (int j = 0; j < t.cols(); ++j) peak = std::max(peak, std::norm(t(i, j)));
    CHECK(peak / t.squaredNorm() >= 0.99);
  }
}

TEST_CASE("dti_loss") {
  Rng rng(6);
  const std::vector<Eigen::MatrixXcd> t = {test::random_complex(3, 4, rng)};

  SUBCASE("identical matrices give zero") { CHECK(dti_loss(t, t) < 1e-12); }
  SUBCASE("global complex scaling is invisible") {
    std::vector<Eigen::MatrixXcd> scaled = {2.0 * std::exp(std::complex<double>(0, kPi / 3)) *
                                            t[0]};
    CHECK(dti_loss(t, scaled) < 1e-12);
    CHECK(dti_loss(scaled, t) < 1e-12);
  }
  SUBCASE("disjoint supports give exactly one") {
    Eigen::MatrixXcd a = Eigen::MatrixXcd::Zero(2, 2), b = Eigen::MatrixXcd::Zero(2, 2);
    a(0, 0) = {1, 1};
    b(1, 1) = {-2, 0.5};
    CHECK(dti_loss({{a}}, {{b}}) == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("stays in [0, 1] and is scale invariant") {
    for (int trial = 0; trial < 50; ++trial) {
      const std::vector<Eigen::MatrixXcd> x = {test::random_complex(3, 4, rng)};
      const std::vector<Eigen::MatrixXcd> y = {test::random_complex(3, 4, rng)};
      const double l = dti_loss(x, y);
      CHECK(l >= 0.0);
      CHECK(l <= 1.0);
      const std::complex<double> c = std::polar(rng.uniform(0.1, 3.0), rng.uniform(0.0, 2 * kPi));
      const std::vector<Eigen::MatrixXcd> yc = {c * y[0]};
      CHECK(test::rel_err(dti_loss(x, yc), l) < 1e-9);
    }
  }
  SUBCASE("zero-norm input rejected") {
    const std::vector<Eigen::MatrixXcd> z = {Eigen::MatrixXcd::Zero(3, 4)};
    CHECK_THROWS_AS(dti_loss(t, z), std::invalid_argument);
  }
}

TEST_CASE("ntxent_loss") {
  SUBCASE("N=2 with all identical embeddings gives log 3") {
    Eigen::VectorXd e(3);
    e << 1, 2, 3;
    const std::vector<Eigen::VectorXd> z = {e, e};
    CHECK(ntxent_loss(z, z, 0.7) == doctest::Approx(std::log(3.0)).epsilon(1e-12));
  }
  SUBCASE("identical positives, orthogonal negatives, tau=1: -log(e/(e+2))") {
    Eigen::VectorXd e1 = Eigen::VectorXd::Zero(2), e2 = Eigen::VectorXd::Zero(2);
    e1(0) = 1;
    e2(1) = 1;
    const std::vector<Eigen::VectorXd> z1 = {e1, e2};
    const double want = -std::log(std::exp(1.0) / (std::exp(1.0) + 2.0));
    CHECK(ntxent_loss(z1, z1, 1.0) == doctest::Approx(want).epsilon(1e-12));
    CHECK(want == doctest::Approx(0.5514).epsilon(1e-3));
  }
  SUBCASE("random batches match the double-loop oracle") {
    Rng rng(7);
    for (int trial = 0; trial < 100; ++trial) {
      const int n = 2 + static_cast<int>(rng.uniform_index(4));
      const int dim = 2 + static_cast<int>(rng.uniform_index(4));
      std::vector<Eigen::VectorXd> z1, z2;
      for (int s = 0; s < n; ++s) {
        z1.push_back(test::random_matrix(dim, 1, rng).col(0));
        z2.push_back(test::random_matrix(dim, 1, rng).col(0));
      }
      const double tau = rng.uniform(0.1, 2.0);
      CHECK(test::rel_err(ntxent_loss(z1, z2, tau), ntxent_oracle(z1, z2, tau)) < 1e-8);
    }
  }
  SUBCASE("invariant to positive rescaling of one embedding; symmetric in batches") {
    Rng rng(8);
    std::vector<Eigen::VectorXd> z1, z2;
    for (int s = 0; s < 3; ++s) {
      z1.push_back(test::random_matrix(4, 1, rng).col(0));
      z2.push_back(test::random_matrix(4, 1, rng).col(0));
    }
    const double base = ntxent_loss(z1, z2, 0.5);
    auto z1s = z1;
    z1s[1] *= 7.3;
    CHECK(test::rel_err(ntxent_loss(z1s, z2, 0.5), base) < 1e-10);
    CHECK(test::rel_err(ntxent_loss(z2, z1, 0.5), base) < 1e-10);
  }
  SUBCASE("N=1 identical pair gives 0; loss is never negative") {
    Eigen::VectorXd e(2);
    e << 1, 1;
    CHECK(ntxent_loss({{e}}, {{e}}, 0.3) == doctest::Approx(0.0));
    Rng rng(9);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<Eigen::VectorXd> z1 = {test::random_matrix(3, 1, rng).col(0)},
                                   z2 = {test::random_matrix(3, 1, rng).col(0)};
      CHECK(ntxent_loss(z1, z2, 1.0) >= 0.0);
    }
  }
  SUBCASE("zero-norm embedding rejected") {
    Eigen::VectorXd e(2), z = Eigen::VectorXd::Zero(2);
    e << 1, 0;
    CHECK_THROWS_AS(ntxent_loss({{e}}, {{z}}, 1.0), std::invalid_argument);
  }
}

TEST_CASE("reconstruction decoder") {
  Rng rng(10);
  const auto cfg = toy_config();

  SUBCASE("output has the CFR shape (two planes = complex matrix)") {
    auto dec = ReconDecoderWeights::init(cfg, cfg.n_sfmcm, 1, rng);
    const Matrix latent = test::random_matrix(cfg.n_patch() + 1, cfg.n_sfmcm, rng);
    const auto out = reconstruction_decode(latent, dec);
    CHECK(out.rows() == cfg.n_ant);
    CHECK(out.cols() == cfg.n_subc);
  }
  SUBCASE("paper profile decodes to 32x128") {
    const auto paper = encoder::EncoderConfig::paper();
    auto dec = ReconDecoderWeights::init(paper, paper.n_sfmcm, 1, rng);
    const Matrix latent = test::random_matrix(paper.n_patch() + 1, paper.n_sfmcm, rng);
    const auto out = reconstruction_decode(latent, dec);
    CHECK(out.rows() == 32);
    CHECK(out.cols() == 128);
  }
  SUBCASE("overlap-normalized fold reproduces constants") {
    // with k > s the decoder divides the overlap-sum by the multiplicity,
    // so a constant window field folds back to that constant
    encoder::EncoderConfig ov = cfg;
    ov.kernel = 3;
    ov.stride = 2;
    ov.padding = 1;
    ov.n_subc = 9;
    auto dec = ReconDecoderWeights::init(ov, 2, 1, rng);
    Graph g;
    const auto grid = dec.grid;
    const auto ones = g.constant(Matrix::Ones(grid.n_patch, grid.window));
    const auto summed = embed::fold(g, ones, grid);
    const auto normalized = g.mul(summed, g.constant(dec.inv_multiplicity));
    CHECK((g.val(normalized) - Matrix::Ones(2 * ov.n_ant, ov.n_subc)).norm() < 1e-12);
  }
}

TEST_CASE("picl projection") {
  Rng rng(11);
  const channel::BsConfig config{{10.0, -5.0}, 2e7};

  SUBCASE("output width follows the decoder config") {
    auto dec = PiclDecoderWeights::init(64, 32, rng);  // paper sizes
    const Matrix o_picl = test::random_matrix(257, 64, rng);
    CHECK(picl_project(o_picl, config, dec).size() == 32);
  }
  SUBCASE("zero weights, zero latent: zero output") {
    auto dec = PiclDecoderWeights::init(4, 3, rng);
    dec.cfg_embed.w.value.setZero();
    dec.cfg_embed.b.value.setZero();
    dec.out.w.value.setZero();
    dec.out.b.value.setZero();
    const Eigen::VectorXd out = picl_project(Matrix::Zero(9, 4), config, dec);
    CHECK(out.norm() == 0.0);
  }
  SUBCASE("permuting token rows leaves the output unchanged") {
    auto dec = PiclDecoderWeights::init(4, 3, rng);
    Matrix o_picl = test::random_matrix(9, 4, rng);
    const Eigen::VectorXd base = picl_project(o_picl, config, dec);
    Matrix permuted = o_picl;
    permuted.row(3).swap(permuted.row(7));
    permuted.row(1).swap(permuted.row(8));
    CHECK((picl_project(permuted, config, dec) - base).norm() < 1e-12);
  }
}

TEST_CASE("task losses agree with the pure public losses") {
  Rng rng(12);
  const auto cfg = toy_config();
  auto model = PretrainModel::init(cfg, 1, 3, rng);
  model.enc.input_scale = 2.0;
  const nn::TrainContext ctx{0.0, nullptr};

  std::vector<Eigen::MatrixXcd> batch;
  std::vector<channel::BsConfig> cfgs;
  std::vector<MaskSpec> masks;
  for (int s = 0; s < 3; ++s) {
    batch.push_back(test::random_complex(4, 8, rng));
    cfgs.push_back({{rng.uniform(-5, 5), rng.uniform(-5, 5)}, 1e7});
    masks.push_back(make_mask(4, 8, 1, 2, rng));
  }

  SUBCASE("masked reconstruction") {
    const double graph_loss = sfmcm_task_loss(batch, masks, model, LossRegion::kMasked, ctx, 0.0);
    std::vector<Eigen::MatrixXcd> h_hat, h_scaled;
    for (std::size_t s = 0; s < batch.size(); ++s) {
      const auto rep = encoder::encode(apply_mask(batch[s], masks[s]), model.enc);
      h_hat.push_back(reconstruction_decode(rep.sfmcm(), model.sfmcm_dec));
      h_scaled.push_back(batch[s] * model.enc.input_scale);
    }
    CHECK(test::rel_err(graph_loss, sfmcm_loss(h_hat, h_scaled, masks)) < 1e-10);
  }
  SUBCASE("domain-transform dissimilarity") {
    const double graph_loss = dti_task_loss(batch, model, ctx, 0.0);
    std::vector<Eigen::MatrixXcd> h_hat, targets;
    for (const auto& h : batch) {
      const auto rep = encoder::encode(h, model.enc);
      h_hat.push_back(reconstruction_decode(rep.dti(), model.dti_dec));
      targets.push_back(dti_transform(h * model.enc.input_scale));
    }
    CHECK(test::rel_err(graph_loss, dti_loss(targets, h_hat)) < 1e-10);
  }
  SUBCASE("contrastive loss over projected pairs") {
    std::vector<Eigen::MatrixXcd> batch2;
    std::vector<channel::BsConfig> cfgs2;
    for (int s = 0; s < 3; ++s) {
      batch2.push_back(test::random_complex(4, 8, rng));
      cfgs2.push_back({{rng.uniform(-5, 5), rng.uniform(-5, 5)}, 2e7});
    }
    const double tau = 0.37;
    const double graph_loss = picl_task_loss(batch, cfgs, batch2, cfgs2, model, tau, ctx, 0.0);
    std::vector<Eigen::VectorXd> z1, z2;
    for (int s = 0; s < 3; ++s) {
      z1.push_back(picl_project(encoder::encode(batch[s], model.enc).picl(), cfgs[s],
                                model.picl_dec));
      z2.push_back(picl_project(encoder::encode(batch2[s], model.enc).picl(), cfgs2[s],
                                model.picl_dec));
    }
    CHECK(test::rel_err(graph_loss, ntxent_loss(z1, z2, tau)) < 1e-10);
  }
}

TEST_CASE("pretrain_step") {
  Rng rng(13);
  const auto cfg = toy_config();
  auto model = PretrainModel::init(cfg, 1, 3, rng);
  const MaskPlan plan{1, 2};

  std::vector<channel::ChannelSample> store;
  for (int s = 0; s < 8; ++s) {
    channel::ChannelSample cs;
    cs.cfr = test::random_complex(4, 8, rng);
    cs.config = {{rng.uniform(-5, 5), rng.uniform(-5, 5)}, 1e7};
    cs.location_id = s / 2;
    store.push_back(std::move(cs));
  }
  std::vector<const channel::ChannelSample*> b1, b2;
  for (int s = 0; s < 4; ++s) {
    b1.push_back(&store[2 * s]);
    b2.push_back(&store[2 * s + 1]);
  }

  SUBCASE("total equals the hand-weighted sum of the logged components") {
    PretrainWeights hp;
    hp.alpha_sfmcm = 10;
    hp.alpha_dti = 20;
    hp.alpha_picl = 1;
    nn::Adam adam(1e-4);
    Rng mask_rng(1);
    const auto res = pretrain_step(b1, b2, model, hp, plan, LossRegion::kMasked, adam, mask_rng,
                                   nullptr);
    CHECK(test::rel_err(res.total, 10 * res.l_sfmcm + 20 * res.l_dti + 1 * res.l_picl) < 1e-10);
    CHECK(res.l_sfmcm > 0);
    CHECK(res.l_dti > 0);
    CHECK(res.l_picl > 0);
  }
  SUBCASE("all-zero weights: zero loss, unchanged parameters") {
    PretrainWeights hp;
    hp.alpha_sfmcm = 0;
    hp.alpha_dti = 0;
    hp.alpha_picl = 0;
    const Matrix before = model.enc.conv.w.value;
    nn::Adam adam(1e-2);
    Rng mask_rng(1);
    const auto res = pretrain_step(b1, b2, model, hp, plan, LossRegion::kMasked, adam, mask_rng,
                                   nullptr);
    CHECK(res.total == 0.0);
    CHECK(model.enc.conv.w.value == before);
    double grad_norm = 0.0;
    model.visit([&](const std::string&, nn::Parameter& p) { grad_norm += p.grad.norm(); });
    CHECK(grad_norm == 0.0);
  }
  SUBCASE("a step with nonzero weights moves encoder and all decoder parameters") {
    PretrainWeights hp;
    const Matrix enc_before = model.enc.conv.w.value;
    const Matrix sf_before = model.sfmcm_dec.out_proj.w.value;
    const Matrix dti_before = model.dti_dec.out_proj.w.value;
    const Matrix picl_before = model.picl_dec.out.w.value;
    nn::Adam adam(1e-3);
    Rng mask_rng(2);
    pretrain_step(b1, b2, model, hp, plan, LossRegion::kMasked, adam, mask_rng, nullptr);
    CHECK((model.enc.conv.w.value - enc_before).norm() > 0);
    CHECK((model.sfmcm_dec.out_proj.w.value - sf_before).norm() > 0);
    CHECK((model.dti_dec.out_proj.w.value - dti_before).norm() > 0);
    CHECK((model.picl_dec.out.w.value - picl_before).norm() > 0);
  }
}

}  // TEST_SUITE
