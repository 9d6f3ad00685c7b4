// SPDX-License-Identifier: Apache-2.0
#include "lwlm/channel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace lwlm::channel {

namespace {
constexpr double kPi = std::numbers::pi;
constexpr std::complex<double> kJ{0.0, 1.0};
}  // namespace

void ArrayGeometry::validate() const {
  if (n_ant < 1) throw std::invalid_argument("ArrayGeometry: n_ant must be >= 1");
  if (spacing_d <= 0) throw std::invalid_argument("ArrayGeometry: spacing_d must be positive");
  if (wavelength_lambda <= 0)
    throw std::invalid_argument("ArrayGeometry: wavelength must be positive");
}

void SceneSpec::validate() const {
  if (region_xmax <= region_xmin || region_ymax <= region_ymin)
    throw std::invalid_argument("SceneSpec: ue_region must have positive area");
  if (bs_list.empty()) throw std::invalid_argument("SceneSpec: at least one BS config required");
  if (n_paths_max < 1) throw std::invalid_argument("SceneSpec: n_paths_max must be >= 1");
  if (n_ant < 1 || n_subc < 1) throw std::invalid_argument("SceneSpec: bad array dimensions");
  if (carrier_freq_hz <= 0) throw std::invalid_argument("SceneSpec: carrier frequency must be positive");
  if (n_pilot < 1) throw std::invalid_argument("SceneSpec: n_pilot must be >= 1");
  for (const auto& bs : bs_list) {
    if (bs.bandwidth_hz <= 0) throw std::invalid_argument("SceneSpec: bandwidth must be positive");
    if (bs.bs_position.y() >= region_ymin)
      throw std::invalid_argument("SceneSpec: UE region must lie in the front half-plane of every BS");
  }
}

double SceneSpec::resolved_noise_sigma() const {
  if (noise_sigma >= 0) return noise_sigma;
  // LoS per-entry amplitude at region center, averaged over BSs; 20 dB SNR.
  const Vec2 center = region_center();
  double amp = 0.0;
  for (const auto& bs : bs_list) amp += wavelength() / (4.0 * kPi * (center - bs.bs_position).norm());
  amp /= static_cast<double>(bs_list.size());
  return amp / 10.0;
}

Eigen::VectorXcd steering_vector(double theta, const ArrayGeometry& geom) {
  geom.validate();
  if (!(std::abs(theta) < kPi / 2.0))
    throw std::domain_error("steering_vector: theta must lie in (-pi/2, pi/2)");
  Eigen::VectorXcd a(geom.n_ant);
  const double phase_step = 2.0 * kPi * geom.spacing_d / geom.wavelength_lambda * std::sin(theta);
  for (int n = 0; n < geom.n_ant; ++n) a(n) = std::exp(-kJ * (phase_step * n));
  return a;
}

Eigen::MatrixXcd synthesize_cfr(const std::vector<MultipathComponent>& paths,
                                const BsConfig& config, const ArrayGeometry& geom, int n_subc,
                                double noise_sigma, Rng& rng) {
  if (paths.empty()) throw std::invalid_argument("synthesize_cfr: empty path list");
  if (n_subc < 1) throw std::invalid_argument("synthesize_cfr: n_subc must be >= 1");
  const double df = config.subcarrier_spacing(n_subc);
  Eigen::MatrixXcd h = Eigen::MatrixXcd::Zero(geom.n_ant, n_subc);
  for (const auto& p : paths) {
    const Eigen::VectorXcd a = steering_vector(p.aoa_theta, geom);
    Eigen::RowVectorXcd f(n_subc);
    for (int col = 0; col < n_subc; ++col) {
      const double k = static_cast<double>(col + 1);  // subcarrier index runs 1..n_subc
      f(col) = std::exp(-kJ * (2.0 * kPi * k * df * p.delay_tau));
    }
    h.noalias() += p.gain_alpha * (a * f);
  }
  if (noise_sigma > 0) {
    const double comp_std = noise_sigma / std::sqrt(2.0);
    for (int col = 0; col < n_subc; ++col)
      for (int row = 0; row < geom.n_ant; ++row)
        h(row, col) += comp_std * std::complex<double>(rng.gaussian(), rng.gaussian());
  }
  return h;
}

ChannelSample generate_sample(const SceneSpec& scene, const Vec2& ue_position,
                              const BsConfig& config, Rng& rng, std::int64_t location_id) {
  const ArrayGeometry geom = scene.geometry_for(config);
  const Vec2 delta = ue_position - config.bs_position;
  if (delta.y() <= 0)
    throw std::invalid_argument("generate_sample: UE must lie in the array's front half-plane");
  const double lambda = scene.wavelength();
  const double dist = delta.norm();
  const double toa = dist / kSpeedOfLight;
  const double aoa = std::atan2(delta.x(), delta.y());

  std::vector<MultipathComponent> paths;
  // LoS: free-space amplitude with the physical propagation phase.
  const double los_amp = lambda / (4.0 * kPi * dist);
  paths.push_back({los_amp * std::exp(-kJ * (2.0 * kPi * dist / lambda)), toa, aoa, true});

  // Candidate single-bounce paths, strongest (shortest total length) first.
  struct Bounce {
    double total;
    double theta;
  };
  std::vector<Bounce> bounces;
  for (const auto& sc : scene.scatterers) {
    const Vec2 to_sc = sc - config.bs_position;
    if (to_sc.y() <= 0) continue;  // scatterer behind the array, no valid arrival angle
    const double d1 = (sc - ue_position).norm();
    const double d2 = to_sc.norm();
    if (d1 <= 0 || d2 <= 0) continue;
    bounces.push_back({d1 + d2, std::atan2(to_sc.x(), to_sc.y())});
  }
  std::sort(bounces.begin(), bounces.end(),
            [](const Bounce& a, const Bounce& b) { return a.total < b.total; });
  constexpr double kReflectionGamma = 0.3;
  const int n_bounce = std::min<int>(scene.n_paths_max - 1, static_cast<int>(bounces.size()));
  for (int i = 0; i < n_bounce; ++i) {
    const double amp = kReflectionGamma * lambda / (4.0 * kPi * bounces[i].total);
    const double phase = rng.uniform(0.0, 2.0 * kPi);
    paths.push_back({amp * std::exp(kJ * phase), bounces[i].total / kSpeedOfLight,
                     bounces[i].theta, false});
  }

  ChannelSample s;
  s.cfr = synthesize_cfr(paths, config, geom, scene.n_subc, scene.resolved_noise_sigma(), rng);
  if (scene.n_pilot > 1) s.cfr = apply_pilot_comb(s.cfr, scene.n_pilot);
  s.ue_position = ue_position;
  s.config = config;
  s.toa_s = toa;
  s.aoa_rad = aoa;
  s.los_flag = true;
  s.location_id = location_id;
  return s;
}

Eigen::MatrixXcd apply_pilot_comb(const Eigen::MatrixXcd& cfr, int n_pilot) {
  if (n_pilot < 1) throw std::invalid_argument("apply_pilot_comb: n_pilot must be >= 1");
  if (n_pilot == 1) return cfr;
  Eigen::MatrixXcd out = Eigen::MatrixXcd::Zero(cfr.rows(), cfr.cols());
  for (int i = 0; i < cfr.rows(); i += n_pilot)
    for (int j = 0; j < cfr.cols(); j += n_pilot) out(i, j) = cfr(i, j);
  return out;
}

std::vector<ChannelSample> generate_dataset(const SceneSpec& scene, int n_threads) {
  scene.validate();
  const int n_cfg = static_cast<int>(scene.bs_list.size());
  const Rng root(scene.seed);

  // UE positions depend only on (seed, location), never on generation order.
  std::vector<Vec2> positions(scene.n_locations);
  for (int loc = 0; loc < scene.n_locations; ++loc) {
    Rng r = root.derive(Rng::hash_name("ue-position"), static_cast<std::uint64_t>(loc));
    positions[loc] = {r.uniform(scene.region_xmin, scene.region_xmax),
                      r.uniform(scene.region_ymin, scene.region_ymax)};
  }

  std::vector<ChannelSample> samples(static_cast<std::size_t>(scene.n_locations) * n_cfg);
  auto worker = [&](int begin, int end) {
    for (int idx = begin; idx < end; ++idx) {
      const int loc = idx / n_cfg;
      const int cfg = idx % n_cfg;
      Rng r = root.derive(static_cast<std::uint64_t>(loc), static_cast<std::uint64_t>(cfg));
      samples[idx] = generate_sample(scene, positions[loc], scene.bs_list[cfg], r, loc);
    }
  };

  const int total = static_cast<int>(samples.size());
  if (n_threads <= 1 || total < 2) {
    worker(0, total);
  } else {
    std::vector<std::thread> pool;
    const int chunk = (total + n_threads - 1) / n_threads;
    for (int t = 0; t < n_threads; ++t) {
      const int begin = t * chunk;
      const int end = std::min(total, begin + chunk);
      if (begin < end) pool.emplace_back(worker, begin, end);
    }
    for (auto& th : pool) th.join();
  }
  return samples;
}

namespace {

std::vector<std::string> tokenize(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream ss(line);
  std::string tok;
  while (ss >> tok) out.push_back(tok);
  return out;
}

}  // namespace

SceneSpec load_scene(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_scene: cannot open " + path.string());
  SceneSpec scene;
  scene.noise_sigma = -1.0;  // auto unless overridden
  std::vector<Vec2> bs_sites;
  std::vector<double> bandwidths;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto pos = line.find('#'); pos != std::string::npos) line.erase(pos);
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      if (!tokenize(line).empty())
        throw std::runtime_error("load_scene: malformed line " + std::to_string(lineno));
      continue;
    }
    std::string key = line.substr(0, eq);
    key.erase(std::remove_if(key.begin(), key.end(), [](unsigned char c) { return std::isspace(c); }),
              key.end());
    const auto vals = tokenize(line.substr(eq + 1));
    auto need = [&](std::size_t n) {
      if (vals.size() != n)
        throw std::runtime_error("load_scene: key '" + key + "' expects " + std::to_string(n) +
                                 " value(s) at line " + std::to_string(lineno));
    };
    auto num = [&](std::size_t i) { return std::stod(vals.at(i)); };
    if (key == "ue_region") {
      need(4);
      scene.region_xmin = num(0);
      scene.region_ymin = num(1);
      scene.region_xmax = num(2);
      scene.region_ymax = num(3);
    } else if (key == "bs") {
      need(2);
      bs_sites.push_back({num(0), num(1)});
    } else if (key == "bandwidths") {
      for (std::size_t i = 0; i < vals.size(); ++i) bandwidths.push_back(num(i));
    } else if (key == "scatterer") {
      need(2);
      scene.scatterers.push_back({num(0), num(1)});
    } else if (key == "n_paths_max") {
      need(1);
      scene.n_paths_max = static_cast<int>(num(0));
    } else if (key == "noise_sigma") {
      need(1);
      scene.noise_sigma = (vals[0] == "auto") ? -1.0 : num(0);
    } else if (key == "seed") {
      need(1);
      scene.seed = static_cast<std::uint64_t>(std::stoull(vals[0]));
    } else if (key == "n_ant") {
      need(1);
      scene.n_ant = static_cast<int>(num(0));
    } else if (key == "n_subc") {
      need(1);
      scene.n_subc = static_cast<int>(num(0));
    } else if (key == "carrier_freq_hz") {
      need(1);
      scene.carrier_freq_hz = num(0);
    } else if (key == "n_locations") {
      need(1);
      scene.n_locations = static_cast<int>(num(0));
    } else if (key == "n_pilot") {
      need(1);
      scene.n_pilot = static_cast<int>(num(0));
    } else {
      throw std::runtime_error("load_scene: unknown key '" + key + "' at line " +
                               std::to_string(lineno));
    }
  }
  for (const auto& site : bs_sites)
    for (double bw : bandwidths) scene.bs_list.push_back({site, bw});
  scene.validate();
  return scene;
}

}  // namespace lwlm::channel
