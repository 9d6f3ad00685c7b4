// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lwlm/rng.hpp"

namespace lwlm::channel {

inline constexpr double kSpeedOfLight = 299'792'458.0;  // m/s, exact

using Vec2 = Eigen::Vector2d;

/// Uniform linear array along the global x-axis, broadside facing +y.
/// Angles are measured from broadside: theta = atan2(dx, dy), valid on the
/// front half-plane dy > 0, so theta stays inside (-pi/2, pi/2).
struct ArrayGeometry {
  int n_ant = 1;
  double spacing_d = 0.0;          // meters
  double wavelength_lambda = 0.0;  // meters
  Vec2 bs_position = Vec2::Zero();

  static ArrayGeometry half_wavelength(int n_ant, double wavelength, Vec2 bs_position) {
    return ArrayGeometry{n_ant, wavelength / 2.0, wavelength, bs_position};
  }
  void validate() const;
};

struct MultipathComponent {
  std::complex<double> gain_alpha;
  double delay_tau = 0.0;  // seconds, >= 0
  double aoa_theta = 0.0;  // radians in (-pi/2, pi/2)
  bool is_los = false;
};

/// Per-sample BS conditioning: c_s = [bs_x, bs_y, bandwidth].
struct BsConfig {
  Vec2 bs_position = Vec2::Zero();
  double bandwidth_hz = 0.0;

  double subcarrier_spacing(int n_subc) const { return bandwidth_hz / n_subc; }
};

struct ChannelSample {
  Eigen::MatrixXcd cfr;  // n_ant x n_subc
  Vec2 ue_position = Vec2::Zero();
  BsConfig config;
  double toa_s = 0.0;
  double aoa_rad = 0.0;
  bool los_flag = false;
  std::int64_t location_id = 0;
};

/// Synthetic 2D scene that replaces ray-traced data: a rectangular UE region
/// in the front half-plane of every BS, plus fixed single-bounce scatterers.
struct SceneSpec {
  double region_xmin = 0, region_ymin = 0, region_xmax = 0, region_ymax = 0;
  std::vector<BsConfig> bs_list;   // cross product of BS sites and bandwidths
  std::vector<Vec2> scatterers;
  int n_paths_max = 1;
  double noise_sigma = 0.0;        // per complex entry std; <0 means "auto" (20 dB LoS SNR at region center)
  std::uint64_t seed = 0;
  // generation extent
  int n_ant = 8;
  int n_subc = 32;
  double carrier_freq_hz = 3.5e9;
  int n_locations = 0;
  int n_pilot = 1;                 // comb factor applied to stored CFRs; 1 = full CSI

  double wavelength() const { return kSpeedOfLight / carrier_freq_hz; }
  Vec2 region_center() const {
    return {(region_xmin + region_xmax) / 2.0, (region_ymin + region_ymax) / 2.0};
  }
  ArrayGeometry geometry_for(const BsConfig& cfg) const {
    return ArrayGeometry::half_wavelength(n_ant, wavelength(), cfg.bs_position);
  }
  void validate() const;
  /// Resolves noise_sigma < 0 to the 20 dB-SNR-at-center default.
  double resolved_noise_sigma() const;
};

/// Reads a SceneSpec from a key-value text file (see configs/ for the schema).
SceneSpec load_scene(const std::filesystem::path& path);

/// ULA response: element n is exp(-j*2*pi*(d/lambda)*n*sin(theta)).
/// Throws std::domain_error when |theta| >= pi/2.
Eigen::VectorXcd steering_vector(double theta, const ArrayGeometry& geom);

/// h_k = sum_l alpha_l a(theta_l) exp(-j*2*pi*k*df*tau_l) + n_k, subcarrier
/// index k running 1..n_subc, noise circularly symmetric with per-entry std
/// noise_sigma. Throws std::invalid_argument on an empty path list.
Eigen::MatrixXcd synthesize_cfr(const std::vector<MultipathComponent>& paths,
                                const BsConfig& config, const ArrayGeometry& geom, int n_subc,
                                double noise_sigma, Rng& rng);

/// Builds the LoS path plus up to n_paths_max-1 single-bounce scatterer paths
/// and synthesizes the labeled sample. The UE must lie strictly in the front
/// half-plane of the array.
ChannelSample generate_sample(const SceneSpec& scene, const Vec2& ue_position,
                              const BsConfig& config, Rng& rng, std::int64_t location_id = 0);

/// Keeps entries whose antenna index and subcarrier index are both 0 mod
/// n_pilot; zeroes everything else. n_pilot = 1 is the identity.
Eigen::MatrixXcd apply_pilot_comb(const Eigen::MatrixXcd& cfr, int n_pilot);

/// Deterministic dataset for one scene: n_locations UE positions drawn from
/// the region, each observed under every BsConfig. location_id is the
/// location index; per-sample RNG streams derive from (seed, location,
/// config) so any generation order (or thread count) gives identical bits.
std::vector<ChannelSample> generate_dataset(const SceneSpec& scene, int n_threads = 1);

}  // namespace lwlm::channel
