// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "lwlm/iblab.hpp"
#include "test_util.hpp"

using namespace lwlm;
using namespace lwlm::iblab;

TEST_SUITE("iblab") {

TEST_CASE("exact_mi closed forms and oracle") {
  SUBCASE("independent uniform 2x2 joint has zero information") {
    CHECK(exact_mi(Eigen::MatrixXd::Constant(2, 2, 0.25)) < 1e-12);
  }
  SUBCASE("perfectly correlated uniform 2x2 gives log 2") {
    Eigen::MatrixXd joint = Eigen::MatrixXd::Zero(2, 2);
    joint(0, 0) = joint(1, 1) = 0.5;
    CHECK(exact_mi(joint) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
  SUBCASE("random 4x4 joints match the definition-level double loop") {
    Rng rng(1);
    for (int trial = 0; trial < 50; ++trial) {
      Eigen::MatrixXd joint(4, 4);
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) joint(i, j) = 0.01 + rng.uniform();
      joint /= joint.sum();
      double oracle = 0.0;
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
          double px = 0, py = 0;
          for (int k = 0; k < 4; ++k) {
            px += joint(i, k);
            py += joint(k, j);
          }
          if (joint(i, j) > 0) oracle += joint(i, j) * std::log(joint(i, j) / (px * py));
        }
      CHECK(test::rel_err(exact_mi(joint), std::max(oracle, 0.0)) < 1e-12);
      CHECK(exact_mi(joint) >= 0.0);
    }
  }
  SUBCASE("factorizing joints have zero information") {
    Rng rng(2);
    Eigen::VectorXd px(3), py(4);
    for (int i = 0; i < 3; ++i) px(i) = 0.1 + rng.uniform();
    for (int j = 0; j < 4; ++j) py(j) = 0.1 + rng.uniform();
    px /= px.sum();
    py /= py.sum();
    CHECK(exact_mi(px * py.transpose()) < 1e-12);
  }
  SUBCASE("invalid joints rejected") {
    Eigen::MatrixXd neg = Eigen::MatrixXd::Constant(2, 2, 0.5);
    neg(0, 0) = -0.5;
    CHECK_THROWS_AS(exact_mi(neg), std::invalid_argument);
    CHECK_THROWS_AS(exact_mi(Eigen::MatrixXd::Constant(2, 2, 0.3)), std::invalid_argument);
  }
}

TEST_CASE("data-processing inequality holds exactly for constructed worlds") {
  Rng rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    Rng wrng = rng.derive(trial);
    const auto world = random_world(wrng);
    world.validate();
    CHECK(world.mi_obs_obs() <= world.mi_obs_label() + 1e-12);
  }
}

TEST_CASE("deterministic world: I(O;Y) = log(n_labels) and the bound holds") {
  const auto world = deterministic_world(6);
  CHECK(world.mi_obs_label() == doctest::Approx(std::log(6.0)).epsilon(1e-12));
  CHECK(world.mi_obs_obs() == doctest::Approx(std::log(6.0)).epsilon(1e-12));
  Rng rng(4);
  const auto rep = verify_bound(world, 4, 0.5, 1000, rng);
  CHECK(rep.holds);
  CHECK(rep.avg_bound <= rep.mi_oo + rep.slack);
}

TEST_CASE("constant embeddings: loss is exactly log(2N-1), bound trivially holds") {
  DiscreteWorld world = deterministic_world(4);
  Eigen::VectorXd c(3);
  c << 0.5, -1.0, 2.0;
  for (auto& e : world.embedding_table) e = c;
  Rng rng(5);
  const int n_bat = 4;
  const auto rep = verify_bound(world, n_bat, 0.7, 1000, rng);
  CHECK(rep.avg_loss == doctest::Approx(std::log(2.0 * n_bat - 1)).epsilon(1e-12));
  CHECK(rep.avg_bound < 0.0);
  CHECK(rep.holds);
}

TEST_CASE("randomized worlds satisfy the bound") {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    Rng wrng = rng.derive(trial);
    const auto world = random_world(wrng);
    const int n_bat = 2 + static_cast<int>(wrng.uniform_index(7));
    const double tau = wrng.uniform(0.1, 2.0);
    const auto rep = verify_bound(world, n_bat, tau, 1500, wrng);
    CAPTURE(trial);
    CAPTURE(rep.avg_bound);
    CAPTURE(rep.mi_oo);
    CHECK(rep.holds);
  }
}

TEST_CASE("verify_bound validates its inputs") {
  const auto world = deterministic_world(3);
  Rng rng(7);
  CHECK_THROWS_AS(verify_bound(world, 1, 0.5, 1000, rng), std::invalid_argument);
  CHECK_THROWS_AS(verify_bound(world, 4, 0.5, 999, rng), std::invalid_argument);
  CHECK_THROWS_AS(verify_bound(world, 4, 0.0, 1000, rng), std::invalid_argument);
}

}  // TEST_SUITE
