// SPDX-License-Identifier: Apache-2.0
#include "lwlm/dataio.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <stdexcept>

#include "lwlm/fsutil.hpp"

static_assert(std::endian::native == std::endian::little,
              "dataset container assumes a little-endian host");

namespace lwlm::dataio {

using nlohmann::json;

std::vector<std::int64_t> DatasetContainer::location_ids() const {
  std::vector<std::int64_t> ids;
  ids.reserve(pair_index.size());
  for (const auto& [loc, _] : pair_index) ids.push_back(loc);
  return ids;
}

DatasetContainer write_dataset(const std::vector<channel::ChannelSample>& samples,
                               const std::filesystem::path& path) {
  DatasetContainer ds;
  ds.n_samples = static_cast<int>(samples.size());
  if (!samples.empty()) {
    ds.n_ant = static_cast<int>(samples.front().cfr.rows());
    ds.n_subc = static_cast<int>(samples.front().cfr.cols());
  }
  for (const auto& s : samples) {
    if (s.cfr.rows() != ds.n_ant || s.cfr.cols() != ds.n_subc)
      throw std::invalid_argument("write_dataset: samples have mixed CFR shapes");
  }
  ds.samples = samples;
  for (int i = 0; i < ds.n_samples; ++i) ds.pair_index[samples[i].location_id].push_back(i);

  std::filesystem::create_directories(path);

  std::string cfr_bytes;
  cfr_bytes.reserve(static_cast<std::size_t>(ds.n_samples) * ds.n_ant * ds.n_subc * 8);
  auto put_f32 = [&cfr_bytes](float v) {
    char buf[4];
    std::memcpy(buf, &v, 4);
    cfr_bytes.append(buf, 4);
  };
  for (const auto& s : samples)
    for (int a = 0; a < ds.n_ant; ++a)
      for (int k = 0; k < ds.n_subc; ++k) {
        put_f32(static_cast<float>(s.cfr(a, k).real()));
        put_f32(static_cast<float>(s.cfr(a, k).imag()));
      }
  fsutil::atomic_write(path / "cfr.bin", cfr_bytes);

  std::string label_bytes;
  label_bytes.reserve(static_cast<std::size_t>(ds.n_samples) * kLabelFieldCount * 8);
  auto put_f64 = [&label_bytes](double v) {
    char buf[8];
    std::memcpy(buf, &v, 8);
    label_bytes.append(buf, 8);
  };
  for (const auto& s : samples) {
    put_f64(s.ue_position.x());
    put_f64(s.ue_position.y());
    put_f64(s.config.bs_position.x());
    put_f64(s.config.bs_position.y());
    put_f64(s.config.bandwidth_hz);
    put_f64(s.toa_s);
    put_f64(s.aoa_rad);
    put_f64(s.los_flag ? 1.0 : 0.0);
    put_f64(static_cast<double>(s.location_id));
  }
  fsutil::atomic_write(path / "labels.bin", label_bytes);

  json meta = {
      {"version", ds.version},
      {"n_samples", ds.n_samples},
      {"n_ant", ds.n_ant},
      {"n_subc", ds.n_subc},
      {"cfr_format", "interleaved float32 little-endian, layout [sample][ant][subc][re,im]"},
      {"label_fields",
       {"ue_x", "ue_y", "bs_x", "bs_y", "bandwidth_hz", "toa_s", "aoa_rad", "los_flag",
        "location_id"}},
  };
  fsutil::atomic_write(path / "meta.json", meta.dump(2) + "\n");

  json pairs = json::object();
  for (const auto& [loc, idx] : ds.pair_index) pairs[std::to_string(loc)] = idx;
  fsutil::atomic_write(path / "pairs.json", pairs.dump() + "\n");

  return ds;
}

DatasetContainer load_dataset(const std::filesystem::path& path) {
  DatasetContainer ds;
  const json meta = json::parse(fsutil::read_file(path / "meta.json"));
  ds.version = meta.at("version").get<int>();
  ds.n_samples = meta.at("n_samples").get<int>();
  ds.n_ant = meta.at("n_ant").get<int>();
  ds.n_subc = meta.at("n_subc").get<int>();

  const std::string cfr_bytes = fsutil::read_file(path / "cfr.bin");
  const std::size_t expect_cfr = static_cast<std::size_t>(ds.n_samples) * ds.n_ant * ds.n_subc * 8;
  if (cfr_bytes.size() != expect_cfr)
    throw std::runtime_error("load_dataset: cfr.bin has " + std::to_string(cfr_bytes.size()) +
                             " bytes, expected " + std::to_string(expect_cfr));
  const std::string label_bytes = fsutil::read_file(path / "labels.bin");
  if (label_bytes.size() != static_cast<std::size_t>(ds.n_samples) * kLabelFieldCount * 8)
    throw std::runtime_error("load_dataset: labels.bin has unexpected size");

  ds.samples.resize(ds.n_samples);
  const char* cp = cfr_bytes.data();
  const char* lp = label_bytes.data();
  auto get_f32 = [&cp]() {
    float v;
    std::memcpy(&v, cp, 4);
    cp += 4;
    return v;
  };
  auto get_f64 = [&lp]() {
    double v;
    std::memcpy(&v, lp, 8);
    lp += 8;
    return v;
  };
  for (auto& s : ds.samples) {
    s.cfr.resize(ds.n_ant, ds.n_subc);
    for (int a = 0; a < ds.n_ant; ++a)
      for (int k = 0; k < ds.n_subc; ++k) {
        const double re = get_f32();
        const double im = get_f32();
        s.cfr(a, k) = {re, im};
      }
    s.ue_position.x() = get_f64();
    s.ue_position.y() = get_f64();
    s.config.bs_position.x() = get_f64();
    s.config.bs_position.y() = get_f64();
    s.config.bandwidth_hz = get_f64();
    s.toa_s = get_f64();
    s.aoa_rad = get_f64();
    s.los_flag = get_f64() != 0.0;
    s.location_id = static_cast<std::int64_t>(get_f64());
  }

  const json pairs = json::parse(fsutil::read_file(path / "pairs.json"));
  std::size_t indexed = 0;
  for (const auto& [key, idx] : pairs.items()) {
    auto& bucket = ds.pair_index[std::stoll(key)];
    bucket = idx.get<std::vector<int>>();
    indexed += bucket.size();
  }
  if (indexed != static_cast<std::size_t>(ds.n_samples))
    throw std::runtime_error("load_dataset: pairs.json does not cover every sample exactly once");
  return ds;
}

std::vector<int> sample_batch(const DatasetContainer& ds, int n_bat, Rng& rng) {
  if (n_bat > ds.n_samples)
    throw std::invalid_argument("sample_batch: n_bat exceeds dataset size");
  return rng.sample_without_replacement(ds.n_samples, n_bat);
}

std::vector<int> sample_positive_batch(const DatasetContainer& ds,
                                       const std::vector<int>& anchor_batch, Rng& rng) {
  std::vector<int> out;
  out.reserve(anchor_batch.size());
  for (int anchor : anchor_batch) {
    const auto loc = ds.sample(anchor).location_id;
    const auto& bucket = ds.pair_index.at(loc);
    if (bucket.size() < 2)
      throw std::runtime_error("sample_positive_batch: location_id " + std::to_string(loc) +
                               " has a single sample, no positive pair exists");
    int pick;
    do {
      pick = bucket[rng.uniform_index(bucket.size())];
    } while (pick == anchor);
    out.push_back(pick);
  }
  return out;
}

}  // namespace lwlm::dataio
