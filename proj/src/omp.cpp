// SPDX-License-Identifier: Apache-2.0
#include "lwlm/omp.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace lwlm::omp {

namespace {
constexpr double kPi = std::numbers::pi;
constexpr std::complex<double> kJ{0.0, 1.0};
}  // namespace

Dictionary Dictionary::build(const ArrayGeometry& geom, const BsConfig& config, int n_subc,
                             int g_theta, int g_tau) {
  geom.validate();
  if (n_subc < 1 || g_theta < 2) throw std::invalid_argument("Dictionary: bad grid sizes");
  if (g_tau == 0) g_tau = 2 * n_subc;
  Dictionary d;
  d.n_ant = geom.n_ant;
  d.n_subc = n_subc;
  d.angle_grid.resize(g_theta);
  d.delay_grid.resize(g_tau);
  const double df = config.subcarrier_spacing(n_subc);
  const double tau_max = static_cast<double>(n_subc) / config.bandwidth_hz;
  for (int g = 0; g < g_tau; ++g) d.delay_grid(g) = tau_max * g / static_cast<double>(g_tau);

  const int dim = geom.n_ant * n_subc;
  d.atoms.resize(dim, g_theta * g_tau);
  Eigen::VectorXcd steer(geom.n_ant);
  Eigen::VectorXcd delay_phase(n_subc);
  for (int gt = 0; gt < g_theta; ++gt) {
    const double sin_theta = -1.0 + 2.0 * gt / static_cast<double>(g_theta - 1);
    d.angle_grid(gt) = std::asin(std::clamp(sin_theta, -1.0, 1.0));
    const double step = 2.0 * kPi * geom.spacing_d / geom.wavelength_lambda * sin_theta;
    for (int n = 0; n < geom.n_ant; ++n) steer(n) = std::exp(-kJ * (step * n));
    for (int gd = 0; gd < g_tau; ++gd) {
      const double tau = d.delay_grid(gd);
      for (int k = 0; k < n_subc; ++k)
        delay_phase(k) = std::exp(-kJ * (2.0 * kPi * (k + 1) * df * tau));
      // vec() in column-major order: entry (k*n_ant + n)
      Eigen::VectorXcd atom(dim);
      for (int k = 0; k < n_subc; ++k) atom.segment(k * geom.n_ant, geom.n_ant) = steer * delay_phase(k);
      d.atoms.col(d.atom_index(gt, gd)) = atom / atom.norm();
    }
  }
  return d;
}

std::vector<PathEstimate> omp_estimate(const Eigen::MatrixXcd& cfr, const Dictionary& dict,
                                       int k_paths, std::vector<double>* residual_norms) {
  if (cfr.rows() != dict.n_ant || cfr.cols() != dict.n_subc)
    throw std::invalid_argument("omp_estimate: CFR shape does not match dictionary");
  if (k_paths < 1 || k_paths > dict.atoms.cols())
    throw std::invalid_argument("omp_estimate: k_paths out of range");

  const Eigen::VectorXcd y = Eigen::Map<const Eigen::VectorXcd>(cfr.data(), cfr.size());
  Eigen::VectorXcd residual = y;
  std::vector<int> selected;
  Eigen::VectorXcd coeffs;
  if (residual_norms) residual_norms->assign(1, residual.norm());

  for (int it = 0; it < k_paths; ++it) {
    const Eigen::VectorXcd corr = dict.atoms.adjoint() * residual;
    int best = -1;
    double best_mag = -1.0;
    for (int a = 0; a < corr.size(); ++a) {
      if (std::find(selected.begin(), selected.end(), a) != selected.end()) continue;
      const double mag = std::abs(corr(a));
      if (mag > best_mag) {
        best_mag = mag;
        best = a;
      }
    }
    if (best < 0) break;
    selected.push_back(best);

    Eigen::MatrixXcd sub(dict.atoms.rows(), selected.size());
    for (std::size_t i = 0; i < selected.size(); ++i) sub.col(i) = dict.atoms.col(selected[i]);
    Eigen::ColPivHouseholderQR<Eigen::MatrixXcd> qr(sub);
    if (qr.rank() < static_cast<Eigen::Index>(selected.size())) {
      selected.pop_back();  // degenerate atom set: stop with the paths found so far
      break;
    }
    coeffs = qr.solve(y);
    residual = y - sub * coeffs;
    if (residual_norms) residual_norms->push_back(residual.norm());
  }

  std::vector<PathEstimate> out;
  const int g_tau = static_cast<int>(dict.delay_grid.size());
  for (std::size_t i = 0; i < selected.size(); ++i) {
    PathEstimate p;
    p.theta = dict.angle_grid(selected[i] / g_tau);
    p.tau = dict.delay_grid(selected[i] % g_tau);
    p.gain = coeffs(static_cast<Eigen::Index>(i));
    out.push_back(p);
  }
  std::sort(out.begin(), out.end(),
            [](const PathEstimate& a, const PathEstimate& b) { return std::abs(a.gain) > std::abs(b.gain); });
  return out;
}

Vec2 localize_from_toa_aoa(double theta, double tau, const ArrayGeometry& geom) {
  if (!(tau > 0)) throw std::invalid_argument("localize_from_toa_aoa: tau must be positive");
  const double dist = channel::kSpeedOfLight * tau;
  return geom.bs_position + dist * Vec2(std::sin(theta), std::cos(theta));
}

Vec2 multi_bs_average(const std::vector<Vec2>& estimates) {
  if (estimates.empty()) throw std::invalid_argument("multi_bs_average: empty estimate list");
  Vec2 sum = Vec2::Zero();
  for (const auto& p : estimates) sum += p;
  return sum / static_cast<double>(estimates.size());
}

PathEstimate first_arriving(const std::vector<PathEstimate>& paths) {
  if (paths.empty()) throw std::invalid_argument("first_arriving: no paths");
  return *std::min_element(paths.begin(), paths.end(),
                           [](const PathEstimate& a, const PathEstimate& b) { return a.tau < b.tau; });
}

}  // namespace lwlm::omp
