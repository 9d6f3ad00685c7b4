// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <vector>

#include "lwlm/rng.hpp"

namespace lwlm::iblab {

/// Finite world with exactly computable information quantities. Labels Y
/// follow label_pmf; observations H follow emission_pmf conditionally on Y
/// (rows = labels, columns = a shared observation alphabet); the encoder is
/// a fixed lookup table H -> embedding, so O is a deterministic function of
/// H and both I(O;Y) and I(O;O+) reduce to sums over the table.
struct DiscreteWorld {
  Eigen::VectorXd label_pmf;                      // n_labels
  int obs_per_label = 1;                          // alphabet size = n_labels * obs_per_label
  Eigen::MatrixXd emission_pmf;                   // n_labels x n_obs, rows sum to 1
  std::vector<Eigen::VectorXd> embedding_table;   // n_obs entries, nonzero norm

  int n_labels() const { return static_cast<int>(label_pmf.size()); }
  int n_obs() const { return static_cast<int>(emission_pmf.cols()); }
  void validate() const;

  /// Exact I(O;Y) in nats, grouping observations with identical embeddings.
  double mi_obs_label() const;
  /// Exact I(O;O+) in nats under the O <- H <- Y -> H+ -> O+ chain.
  double mi_obs_obs() const;
};

/// sum p(x,y) * log(p(x,y)/(p(x)p(y))) in nats, 0*log0 := 0. Throws on
/// negative entries or a total differing from 1.
double exact_mi(const Eigen::MatrixXd& joint);

struct BoundReport {
  double mi_oy = 0;      // I(O;Y), exact
  double mi_oo = 0;      // I(O;O+), exact
  double avg_loss = 0;   // Monte-Carlo mean NT-Xent loss
  double avg_bound = 0;  // log(n_bat) - avg_loss
  bool holds = false;
  int n_bat = 0;
  int n_trials = 0;
  double tau = 0;
  double slack = 0;
};

/// Monte-Carlo check of log(N) - L <= I(O;O+) <= I(O;Y): samples n_trials
/// batches of positive pairs, averages the NT-Xent loss over them, and
/// compares against the exact information quantities (the data-processing
/// side is checked exactly, the bound side with Monte-Carlo slack in nats).
BoundReport verify_bound(const DiscreteWorld& world, int n_bat, double tau, int n_trials,
                         Rng& rng, double slack = 0.05);

/// Random small world: 2-6 labels, 1-3 observations per label, soft random
/// emissions, random embeddings with norms bounded away from zero.
DiscreteWorld random_world(Rng& rng);

/// Y drawn uniformly, one observation per label emitted deterministically,
/// orthogonal one-hot embeddings.
DiscreteWorld deterministic_world(int n_labels);

}  // namespace lwlm::iblab
