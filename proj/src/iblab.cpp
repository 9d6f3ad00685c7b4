// SPDX-License-Identifier: Apache-2.0
#include "lwlm/iblab.hpp"

#include <cmath>
#include <map>
#include <stdexcept>
#include <vector>

#include "lwlm/ssl.hpp"

namespace lwlm::iblab {

namespace {

int sample_pmf(const Eigen::VectorXd& pmf, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (int i = 0; i < pmf.size(); ++i) {
    acc += pmf(i);
    if (u < acc) return i;
  }
  return static_cast<int>(pmf.size()) - 1;
}

/// Groups observations with bitwise-identical embeddings so O is well
/// defined even when the lookup table is not injective.
std::vector<int> embedding_groups(const DiscreteWorld& w, int& n_groups) {
  std::map<std::vector<double>, int> seen;
  std::vector<int> group(w.n_obs());
  for (int h = 0; h < w.n_obs(); ++h) {
    std::vector<double> key(w.embedding_table[h].data(),
                            w.embedding_table[h].data() + w.embedding_table[h].size());
    auto [it, inserted] = seen.try_emplace(key, static_cast<int>(seen.size()));
    group[h] = it->second;
  }
  n_groups = static_cast<int>(seen.size());
  return group;
}

}  // namespace

void DiscreteWorld::validate() const {
  if (label_pmf.size() == 0 || emission_pmf.rows() != label_pmf.size() || emission_pmf.cols() == 0)
    throw std::invalid_argument("DiscreteWorld: inconsistent shapes");
  if ((label_pmf.array() < 0).any() || std::abs(label_pmf.sum() - 1.0) > 1e-12)
    throw std::invalid_argument("DiscreteWorld: label_pmf is not a pmf");
  for (int y = 0; y < n_labels(); ++y) {
    if ((emission_pmf.row(y).array() < 0).any() ||
        std::abs(emission_pmf.row(y).sum() - 1.0) > 1e-12)
      throw std::invalid_argument("DiscreteWorld: emission row is not a pmf");
  }
  if (static_cast<int>(embedding_table.size()) != n_obs())
    throw std::invalid_argument("DiscreteWorld: embedding table size mismatch");
  for (const auto& e : embedding_table)
    if (e.norm() == 0.0) throw std::invalid_argument("DiscreteWorld: zero-norm embedding");
}

double exact_mi(const Eigen::MatrixXd& joint) {
  if ((joint.array() < 0).any()) throw std::invalid_argument("exact_mi: negative entry");
  if (std::abs(joint.sum() - 1.0) > 1e-9)
    throw std::invalid_argument("exact_mi: joint pmf must sum to 1");
  const Eigen::VectorXd px = joint.rowwise().sum();
  const Eigen::VectorXd py = joint.colwise().sum();
  double mi = 0.0;
  for (int i = 0; i < joint.rows(); ++i)
    for (int j = 0; j < joint.cols(); ++j) {
      const double p = joint(i, j);
      if (p > 0.0) mi += p * std::log(p / (px(i) * py(j)));
    }
  return std::max(mi, 0.0);  // clamp -0.0 style round-off
}

double DiscreteWorld::mi_obs_label() const {
  int n_groups = 0;
  const std::vector<int> group = embedding_groups(*this, n_groups);
  Eigen::MatrixXd joint = Eigen::MatrixXd::Zero(n_labels(), n_groups);
  for (int y = 0; y < n_labels(); ++y)
    for (int h = 0; h < n_obs(); ++h) joint(y, group[h]) += label_pmf(y) * emission_pmf(y, h);
  return exact_mi(joint);
}

double DiscreteWorld::mi_obs_obs() const {
  int n_groups = 0;
  const std::vector<int> group = embedding_groups(*this, n_groups);
  // p(o | y) for grouped observations
  Eigen::MatrixXd p_o_given_y = Eigen::MatrixXd::Zero(n_labels(), n_groups);
  for (int y = 0; y < n_labels(); ++y)
    for (int h = 0; h < n_obs(); ++h) p_o_given_y(y, group[h]) += emission_pmf(y, h);
  Eigen::MatrixXd joint = Eigen::MatrixXd::Zero(n_groups, n_groups);
  for (int y = 0; y < n_labels(); ++y)
    joint += label_pmf(y) * (p_o_given_y.row(y).transpose() * p_o_given_y.row(y));
  return exact_mi(joint);
}

BoundReport verify_bound(const DiscreteWorld& world, int n_bat, double tau, int n_trials,
                         Rng& rng, double slack) {
  world.validate();
  if (n_bat < 2) throw std::invalid_argument("verify_bound: n_bat must be >= 2");
  if (n_trials < 1000) throw std::invalid_argument("verify_bound: n_trials must be >= 1000");
  if (!(tau > 0)) throw std::invalid_argument("verify_bound: tau must be positive");

  BoundReport rep;
  rep.n_bat = n_bat;
  rep.n_trials = n_trials;
  rep.tau = tau;
  rep.slack = slack;
  rep.mi_oy = world.mi_obs_label();
  rep.mi_oo = world.mi_obs_obs();

  double loss_sum = 0.0;
  std::vector<Eigen::VectorXd> proj_1(n_bat), proj_2(n_bat);
  for (int trial = 0; trial < n_trials; ++trial) {
    for (int s = 0; s < n_bat; ++s) {
      const int y = sample_pmf(world.label_pmf, rng);
      const int h = sample_pmf(world.emission_pmf.row(y), rng);
      const int h_pos = sample_pmf(world.emission_pmf.row(y), rng);
      proj_1[s] = world.embedding_table[h];
      proj_2[s] = world.embedding_table[h_pos];
    }
    loss_sum += ssl::ntxent_loss(proj_1, proj_2, tau);
  }
  rep.avg_loss = loss_sum / n_trials;
  rep.avg_bound = std::log(static_cast<double>(n_bat)) - rep.avg_loss;
  rep.holds = (rep.avg_bound <= rep.mi_oo + slack) && (rep.mi_oo <= rep.mi_oy + 1e-9);
  return rep;
}

DiscreteWorld random_world(Rng& rng) {
  DiscreteWorld w;
  const int n_labels = 2 + static_cast<int>(rng.uniform_index(5));
  w.obs_per_label = 1 + static_cast<int>(rng.uniform_index(3));
  const int n_obs = n_labels * w.obs_per_label;
  const int dim = 2 + static_cast<int>(rng.uniform_index(4));

  w.label_pmf.resize(n_labels);
  for (int y = 0; y < n_labels; ++y) w.label_pmf(y) = 0.2 + rng.uniform();
  w.label_pmf /= w.label_pmf.sum();

  // Each label concentrates on its own block of the alphabet but leaks onto
  // the rest, producing a spread of mutual-information values.
  w.emission_pmf.resize(n_labels, n_obs);
  const double leak = rng.uniform(0.0, 0.5);
  for (int y = 0; y < n_labels; ++y) {
    for (int h = 0; h < n_obs; ++h) {
      const bool own = h / w.obs_per_label == y;
      w.emission_pmf(y, h) = (own ? 1.0 : leak) * (0.05 + rng.uniform());
    }
    w.emission_pmf.row(y) /= w.emission_pmf.row(y).sum();
  }

  w.embedding_table.resize(n_obs);
  for (int h = 0; h < n_obs; ++h) {
    Eigen::VectorXd e(dim);
    do {
      for (int d = 0; d < dim; ++d) e(d) = rng.gaussian();
    } while (e.norm() < 1e-3);
    w.embedding_table[h] = e;
  }
  return w;
}

DiscreteWorld deterministic_world(int n_labels) {
  DiscreteWorld w;
  w.label_pmf = Eigen::VectorXd::Constant(n_labels, 1.0 / n_labels);
  w.obs_per_label = 1;
  w.emission_pmf = Eigen::MatrixXd::Identity(n_labels, n_labels);
  w.embedding_table.resize(n_labels);
  for (int h = 0; h < n_labels; ++h) {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(n_labels);
    e(h) = 1.0;
    w.embedding_table[h] = e;
  }
  return w;
}

}  // namespace lwlm::iblab
