// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "lwlm/omp.hpp"
#include "test_util.hpp"

using namespace lwlm;
using namespace lwlm::omp;
using channel::kSpeedOfLight;

namespace {
constexpr double kPi = std::numbers::pi;

struct Setup {
  channel::ArrayGeometry geom = channel::ArrayGeometry::half_wavelength(8, 0.0857, {0, 0});
  channel::BsConfig cfg{{0, 0}, 16e6};
  int n_subc = 16;
  Dictionary dict = Dictionary::build(geom, cfg, n_subc, 61, 32);
};

Eigen::MatrixXcd cfr_for(const Setup& s, double theta, double tau,
                         std::complex<double> gain = {1.0, 0.0}) {
  Rng rng(0);
  return channel::synthesize_cfr({{gain, tau, theta, true}}, s.cfg, s.geom, s.n_subc, 0.0, rng);
}

}  // namespace

TEST_SUITE("baseline_omp") {

TEST_CASE("dictionary columns have unit norm") {
  const Setup s;
  for (int c = 0; c < s.dict.atoms.cols(); ++c)
    CHECK(std::abs(s.dict.atoms.col(c).norm() - 1.0) < 1e-10);
  CHECK(s.dict.angle_grid.size() == 61);
  CHECK(s.dict.delay_grid.size() == 32);
  // delays cover [0, n_subc/bandwidth)
  CHECK(s.dict.delay_grid(0) == 0.0);
  CHECK(s.dict.delay_grid(31) < s.n_subc / s.cfg.bandwidth_hz);
}

TEST_CASE("noiseless on-grid single path is recovered exactly") {
  const Setup s;
  const double theta = s.dict.angle_grid(40);
  const double tau = s.dict.delay_grid(7);
  const auto h = cfr_for(s, theta, tau, {0.8, -0.6});
  std::vector<double> residuals;
  const auto paths = omp_estimate(h, s.dict, 1, &residuals);
  REQUIRE(paths.size() == 1);
  CHECK(paths[0].theta == theta);
  CHECK(paths[0].tau == tau);
  CHECK(residuals.back() < 1e-8);
  // gain recovered up to the atom normalization
  CHECK(std::abs(paths[0].gain) ==
        doctest::Approx(std::hypot(0.8, 0.6) * std::sqrt(8.0 * 16.0)).epsilon(1e-8));
}

TEST_CASE("two well-separated on-grid paths are both recovered") {
  const Setup s;
  const double th1 = s.dict.angle_grid(15), tau1 = s.dict.delay_grid(3);
  const double th2 = s.dict.angle_grid(45), tau2 = s.dict.delay_grid(20);
  Rng rng(1);
  const auto h = channel::synthesize_cfr(
      {{{1.0, 0.0}, tau1, th1, true}, {{0.0, 0.7}, tau2, th2, false}}, s.cfg, s.geom, s.n_subc,
      0.0, rng);
  std::vector<double> residuals;
  const auto paths = omp_estimate(h, s.dict, 2, &residuals);
  REQUIRE(paths.size() == 2);
  // sorted by |gain| descending: path 1 is stronger
  CHECK(paths[0].theta == th1);
  CHECK(paths[0].tau == tau1);
  CHECK(paths[1].theta == th2);
  CHECK(paths[1].tau == tau2);
  CHECK(residuals.back() < 1e-8);
}

TEST_CASE("off-grid paths land within one grid step") {
  const Setup s;
  Rng rng(2);
  const double sin_step = 2.0 / 60.0;  // angle grid is uniform in sin(theta)
  const double tau_step = s.dict.delay_grid(1) - s.dict.delay_grid(0);
  for (int trial = 0; trial < 25; ++trial) {
    const double sin_true = rng.uniform(-0.9, 0.9);
    const double theta = std::asin(sin_true);
    const double tau = rng.uniform(0.1, 0.8) * s.n_subc / s.cfg.bandwidth_hz;
    const auto paths = omp_estimate(cfr_for(s, theta, tau), s.dict, 1);
    REQUIRE(paths.size() == 1);
    CHECK(std::abs(std::sin(paths[0].theta) - sin_true) <= sin_step + 1e-12);
    CHECK(std::abs(paths[0].tau - tau) <= tau_step + 1e-15);
  }
}

TEST_CASE("residual norms never increase") {
  const Setup s;
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const auto h = test::random_complex(8, 16, rng);
    std::vector<double> residuals;
    omp_estimate(h, s.dict, 5, &residuals);
    for (std::size_t i = 1; i < residuals.size(); ++i)
      CHECK(residuals[i] <= residuals[i - 1] + 1e-12);
  }
}

TEST_CASE("localize_from_toa_aoa") {
  const auto geom = channel::ArrayGeometry::half_wavelength(8, 0.0857, {0, 0});

  SUBCASE("boresight at 100 m") {
    const auto p = localize_from_toa_aoa(0.0, 100.0 / kSpeedOfLight, geom);
    CHECK((p - channel::Vec2(0, 100)).norm() < 1e-9);
  }
  SUBCASE("diagonal at sqrt(2)*100 m") {
    const auto p = localize_from_toa_aoa(kPi / 4, std::sqrt(2.0) * 100.0 / kSpeedOfLight, geom);
    CHECK((p - channel::Vec2(100, 100)).norm() < 1e-9);
  }
  SUBCASE("inverts generate_sample labels within 1e-6 m") {
    channel::SceneSpec scene;
    scene.region_xmin = -60;
    scene.region_ymin = 30;
    scene.region_xmax = 60;
    scene.region_ymax = 150;
    scene.bs_list = {{{5.0, -3.0}, 1e7}};
    scene.n_paths_max = 1;
    scene.noise_sigma = 0.0;
    scene.n_ant = 4;
    scene.n_subc = 8;
    Rng rng(4);
    for (int trial = 0; trial < 200; ++trial) {
      const channel::Vec2 ue{rng.uniform(scene.region_xmin, scene.region_xmax),
                             rng.uniform(scene.region_ymin, scene.region_ymax)};
      Rng srng(trial);
      const auto sample = channel::generate_sample(scene, ue, scene.bs_list[0], srng);
      const auto p =
          localize_from_toa_aoa(sample.aoa_rad, sample.toa_s, scene.geometry_for(scene.bs_list[0]));
      CHECK((p - ue).norm() < 1e-6);
    }
  }
  SUBCASE("nonpositive delay rejected") {
    CHECK_THROWS_AS(localize_from_toa_aoa(0.0, 0.0, geom), std::invalid_argument);
  }
}

TEST_CASE("multi_bs_average") {
  CHECK((multi_bs_average({channel::Vec2(2, 3)}) - channel::Vec2(2, 3)).norm() == 0.0);
  CHECK((multi_bs_average({channel::Vec2(0, 0), channel::Vec2(2, 2)}) - channel::Vec2(1, 1))
            .norm() == 0.0);
  const channel::Vec2 p{-4, 7};
  CHECK((multi_bs_average({p, p, p, p}) - p).norm() == 0.0);
  CHECK_THROWS_AS(multi_bs_average({}), std::invalid_argument);
}

}  // TEST_SUITE
