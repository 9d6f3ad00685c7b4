// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <complex>
#include <vector>

#include "lwlm/channel.hpp"

namespace lwlm::omp {

using channel::ArrayGeometry;
using channel::BsConfig;
using channel::Vec2;

/// Angle-delay dictionary: column (g_theta, g_tau) vectorizes
/// a(theta_{g_theta}) * exp(-j*2*pi*k*df*tau_{g_tau}) over subcarriers
/// k = 1..n_subc, unit-normalized. Angles are uniform in sin(theta) over
/// [-1, 1]; delays uniform over [0, n_subc/bandwidth).
struct Dictionary {
  Eigen::VectorXd angle_grid;  // radians, size g_theta
  Eigen::VectorXd delay_grid;  // seconds, size g_tau
  Eigen::MatrixXcd atoms;      // (n_ant*n_subc) x (g_theta*g_tau); column = g_t * g_tau_n + g_d
  int n_ant = 0;
  int n_subc = 0;

  static Dictionary build(const ArrayGeometry& geom, const BsConfig& config, int n_subc,
                          int g_theta = 181, int g_tau = 0 /* 0 = 2*n_subc */);
  int atom_index(int g_t, int g_d) const { return g_t * static_cast<int>(delay_grid.size()) + g_d; }
};

struct PathEstimate {
  double theta = 0.0;  // radians
  double tau = 0.0;    // seconds
  std::complex<double> gain;
};

/// Greedy matching pursuit with per-iteration least-squares refit. Returns
/// estimates sorted by |gain| descending; stops early if the selected set
/// loses rank. residual_norms, when given, receives the residual norm after
/// each accepted iteration (starting from ||y||).
std::vector<PathEstimate> omp_estimate(const Eigen::MatrixXcd& cfr, const Dictionary& dict,
                                       int k_paths, std::vector<double>* residual_norms = nullptr);

/// Inverts the LoS label convention: p = p_bs + c*tau*(sin(theta), cos(theta)).
Vec2 localize_from_toa_aoa(double theta, double tau, const ArrayGeometry& geom);

Vec2 multi_bs_average(const std::vector<Vec2>& estimates);

/// First-arriving (minimum-delay) recovered path, used as the LoS estimate.
PathEstimate first_arriving(const std::vector<PathEstimate>& paths);

}  // namespace lwlm::omp
