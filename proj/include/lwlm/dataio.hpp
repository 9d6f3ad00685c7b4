// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <vector>

#include "lwlm/channel.hpp"
#include "lwlm/rng.hpp"

namespace lwlm::dataio {

/// On-disk dataset layout (all multi-byte values little-endian):
///   meta.json   UTF-8 JSON header: version, n_samples, n_ant, n_subc, label field list
///   cfr.bin     [sample][ant][subc][re,im] as float32, row-major
///   labels.bin  per sample, 9 float64: ue_x, ue_y, bs_x, bs_y, bandwidth_hz,
///               toa_s, aoa_rad, los_flag, location_id
///   pairs.json  location_id -> list of sample indices
struct DatasetContainer {
  int version = 1;
  int n_samples = 0;
  int n_ant = 0;
  int n_subc = 0;
  std::vector<channel::ChannelSample> samples;
  std::map<std::int64_t, std::vector<int>> pair_index;

  const channel::ChannelSample& sample(int i) const { return samples.at(i); }
  std::vector<std::int64_t> location_ids() const;
};

inline constexpr int kLabelFieldCount = 9;

/// Serializes the samples (which must share n_ant and n_subc) into `path`,
/// creating the directory if needed. Returns the in-memory container.
DatasetContainer write_dataset(const std::vector<channel::ChannelSample>& samples,
                               const std::filesystem::path& path);

DatasetContainer load_dataset(const std::filesystem::path& path);

/// n_bat indices uniform without replacement.
std::vector<int> sample_batch(const DatasetContainer& ds, int n_bat, Rng& rng);

/// For each anchor index, a sample sharing its location_id but with a
/// different sample index (different BS/bandwidth configuration). Throws,
/// naming the location_id, when a location has no alternative sample.
std::vector<int> sample_positive_batch(const DatasetContainer& ds,
                                       const std::vector<int>& anchor_batch, Rng& rng);

}  // namespace lwlm::dataio
