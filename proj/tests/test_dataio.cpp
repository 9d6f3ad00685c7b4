// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <set>

#include "lwlm/dataio.hpp"
#include "lwlm/fsutil.hpp"
#include "test_util.hpp"

using namespace lwlm;
using namespace lwlm::dataio;

namespace {

std::vector<channel::ChannelSample> make_samples(int n_locations, int n_configs, int n_ant,
                                                 int n_subc, Rng& rng) {
  std::vector<channel::ChannelSample> out;
  for (int loc = 0; loc < n_locations; ++loc)
    for (int cfg = 0; cfg < n_configs; ++cfg) {
      channel::ChannelSample s;
      // float32-exact values so the write/read round trip is bitwise
      Eigen::MatrixXcd h(n_ant, n_subc);
      for (int i = 0; i < n_ant; ++i)
        for (int j = 0; j < n_subc; ++j)
          h(i, j) = {static_cast<float>(rng.gaussian()), static_cast<float>(rng.gaussian())};
      s.cfr = h;
      s.ue_position = {rng.uniform(-10, 10), rng.uniform(40, 60)};
      s.config = {{static_cast<double>(cfg), 0.0}, 1e7 * (cfg + 1)};
      s.toa_s = rng.uniform(1e-7, 5e-7);
      s.aoa_rad = rng.uniform(-1.0, 1.0);
      s.los_flag = true;
      s.location_id = loc;
      out.push_back(std::move(s));
    }
  return out;
}

std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("lwlm_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

}  // namespace

TEST_SUITE("dataio") {

TEST_CASE("write/read round trip is bit-exact") {
  Rng rng(1);
  const auto samples = make_samples(50, 2, 3, 5, rng);
  const auto dir = temp_dir("roundtrip");
  write_dataset(samples, dir);
  const auto ds = load_dataset(dir);
  REQUIRE(ds.n_samples == 100);
  for (int i = 0; i < ds.n_samples; ++i) {
    CHECK(ds.sample(i).cfr == samples[i].cfr);
    CHECK(ds.sample(i).ue_position == samples[i].ue_position);
    CHECK(ds.sample(i).toa_s == samples[i].toa_s);
    CHECK(ds.sample(i).aoa_rad == samples[i].aoa_rad);
    CHECK(ds.sample(i).location_id == samples[i].location_id);
  }
  // writing the loaded dataset again reproduces cfr.bin byte for byte
  const auto dir2 = temp_dir("roundtrip2");
  write_dataset(ds.samples, dir2);
  CHECK(fsutil::read_file(dir / "cfr.bin") == fsutil::read_file(dir2 / "cfr.bin"));
  CHECK(fsutil::read_file(dir / "labels.bin") == fsutil::read_file(dir2 / "labels.bin"));
}

TEST_CASE("empty dataset is valid") {
  const auto dir = temp_dir("empty");
  write_dataset({}, dir);
  const auto ds = load_dataset(dir);
  CHECK(ds.n_samples == 0);
  CHECK(ds.samples.empty());
}

TEST_CASE("cfr.bin is exactly n*ant*subc*8 bytes") {
  Rng rng(2);
  const auto samples = make_samples(1, 1, 2, 3, rng);
  const auto dir = temp_dir("bytes");
  write_dataset(samples, dir);
  CHECK(std::filesystem::file_size(dir / "cfr.bin") == 48);  // 2*3*8
  CHECK(std::filesystem::file_size(dir / "labels.bin") == 72);  // 9 float64
}

TEST_CASE("mixed shapes rejected") {
  Rng rng(3);
  auto samples = make_samples(2, 1, 2, 3, rng);
  samples[1].cfr = Eigen::MatrixXcd::Ones(3, 3);
  CHECK_THROWS_AS(write_dataset(samples, temp_dir("mixed")), std::invalid_argument);
}

TEST_CASE("sample_batch draws without replacement, deterministically") {
  Rng rng(4);
  const auto samples = make_samples(100, 2, 2, 2, rng);
  const auto dir = temp_dir("batch");
  const auto ds = write_dataset(samples, dir);

  SUBCASE("n_bat = n_samples is a permutation") {
    Rng r(5);
    auto idx = sample_batch(ds, ds.n_samples, r);
    std::set<int> uniq(idx.begin(), idx.end());
    CHECK(static_cast<int>(uniq.size()) == ds.n_samples);
  }
  SUBCASE("fixed seed reproduces the index sequence") {
    Rng r1(6), r2(6);
    CHECK(sample_batch(ds, 32, r1) == sample_batch(ds, 32, r2));
  }
  SUBCASE("32 draws are distinct") {
    Rng r(7);
    auto idx = sample_batch(ds, 32, r);
    std::set<int> uniq(idx.begin(), idx.end());
    CHECK(uniq.size() == 32);
  }
  SUBCASE("oversized batch rejected") {
    Rng r(8);
    CHECK_THROWS_AS(sample_batch(ds, ds.n_samples + 1, r), std::invalid_argument);
  }
}

TEST_CASE("sample_positive_batch pairs by location, different sample") {
  Rng rng(9);

  SUBCASE("two configs per location force the other config") {
    const auto ds = write_dataset(make_samples(20, 2, 2, 2, rng), temp_dir("pos2"));
    Rng r(10);
    const auto anchors = sample_batch(ds, 10, r);
    const auto pos = sample_positive_batch(ds, anchors, r);
    for (std::size_t i = 0; i < anchors.size(); ++i) {
      CHECK(ds.sample(pos[i]).location_id == ds.sample(anchors[i]).location_id);
      CHECK(pos[i] != anchors[i]);
      // with exactly two samples per location the positive is forced
      const auto& bucket = ds.pair_index.at(ds.sample(anchors[i]).location_id);
      REQUIRE(bucket.size() == 2);
      CHECK(pos[i] == (anchors[i] == bucket[0] ? bucket[1] : bucket[0]));
    }
  }
  SUBCASE("twelve configs per location draw among the 11 alternatives") {
    const auto ds = write_dataset(make_samples(4, 12, 2, 2, rng), temp_dir("pos12"));
    Rng r(11);
    std::vector<int> anchors(64, 0);  // location 0, config 0 anchor
    const auto pos = sample_positive_batch(ds, anchors, r);
    std::set<int> seen(pos.begin(), pos.end());
    CHECK(seen.count(0) == 0);
    for (int p : pos) CHECK(ds.sample(p).location_id == 0);
    CHECK(seen.size() > 1);  // actually samples among alternatives
  }
  SUBCASE("singleton location reports its id") {
    const auto ds = write_dataset(make_samples(3, 1, 2, 2, rng), temp_dir("pos1"));
    Rng r(12);
    try {
      sample_positive_batch(ds, {1}, r);
      FAIL("expected throw");
    } catch (const std::runtime_error& e) {
      CHECK(std::string(e.what()).find("1") != std::string::npos);
    }
  }
}

}  // TEST_SUITE
