// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lwlm/dataio.hpp"
#include "lwlm/downstream.hpp"
#include "lwlm/metrics.hpp"
#include "lwlm/ssl.hpp"

namespace lwlm::harness {

/// key = value configuration file (UTF-8, '#' comments).
class KvFile {
 public:
  static KvFile parse(const std::filesystem::path& path);
  static KvFile from_string(const std::string& text);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  std::string get_str(const std::string& key) const;
  std::string get_str(const std::string& key, const std::string& fallback) const;
  double get_num(const std::string& key, double fallback) const;
  int get_int(const std::string& key, int fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

 private:
  std::map<std::string, std::string> values_;
};

/// Model-size profile. "desk" trains in minutes on a laptop CPU; "paper"
/// reproduces the full-scale dimensions for shape and parameter-count checks.
encoder::EncoderConfig profile_config(const std::string& profile);
/// Default masked antenna/subcarrier counts for a profile (half of each).
ssl::MaskPlan profile_mask_plan(const encoder::EncoderConfig& cfg);
/// Contrastive output width for a profile.
int profile_picl_out(const std::string& profile);

/// Location-level disjoint split. With budget >= 0 the train set has exactly
/// `budget` locations and the rest divides between val and test by the
/// val:test ratio. With budget < 0 all three shares derive from the
/// train:val:test ratio (floors, remainder to train).
struct Split {
  std::vector<std::int64_t> train, val, test;
};
Split label_budget_split(const dataio::DatasetContainer& ds, int budget, Rng& rng,
                         int ratio_train = 10, int ratio_val = 1, int ratio_test = 10);

/// Positional statistics used for target normalization and the config vector.
struct DatasetStats {
  Eigen::Vector2d pos_center = Eigen::Vector2d::Zero();
  Eigen::Vector2d pos_halfspan = Eigen::Vector2d::Ones();
  double bandwidth_mean = 1e7;
  double cfr_rms = 1.0;
};
DatasetStats dataset_stats(const dataio::DatasetContainer& ds);

/// Distinct BsConfigs in first-appearance order and each sample's index into
/// that list.
struct ConfigIndex {
  std::vector<channel::BsConfig> configs;
  std::vector<int> of_sample;
};
ConfigIndex index_configs(const dataio::DatasetContainer& ds);

// ---------------------------------------------------------------------------
// pipelines

struct PretrainOptions {
  std::filesystem::path data_dir;
  std::filesystem::path out_dir;
  std::string profile = "desk";
  int steps = 200;  // <= 0: derived from epochs
  int epochs = 0;
  int batch = 32;
  double lr = 1e-4;
  double dropout = 0.1;
  ssl::PretrainWeights hp;
  std::optional<ssl::MaskPlan> mask_plan;  // profile default when unset
  ssl::LossRegion region = ssl::LossRegion::kMasked;
  int n_dec = 2;
  int n_picl_out = -1;  // profile default when < 0
  std::uint64_t seed = 1;
  bool write_artifacts = true;
};

struct StepLog {
  int step;
  double l_sfmcm, l_dti, l_picl, total;
};

struct PretrainOutcome {
  std::filesystem::path checkpoint;
  std::vector<StepLog> log;
  double first_total = 0;
  double last_total = 0;
};

PretrainOutcome run_pretrain(const PretrainOptions& opts);

struct FinetuneOptions {
  downstream::Task task = downstream::Task::kSbloc;
  std::filesystem::path data_dir;
  std::filesystem::path out_dir;
  std::filesystem::path checkpoint_in;  // empty = train from scratch
  std::string profile = "desk";
  int budget = -1;  // labeled train locations; -1 = ratio default
  int epochs = 50;
  int batch = 32;
  double lr = 1e-4;
  double dropout = 0.1;
  int config_index = 0;  // which BS config single-BS tasks use
  bool mbloc_freeze_per_bs = false;
  std::uint64_t seed = 1;
  bool write_artifacts = true;
};

struct FinetuneOutcome {
  std::filesystem::path checkpoint;
  ErrorReport test_report;
  double centroid_mean_error = 0;  // sbloc/mbloc only: naive predictor on the same test split
  std::filesystem::path predictions_csv;
};

FinetuneOutcome run_finetune(const FinetuneOptions& opts);

struct EvaluateOptions {
  std::filesystem::path data_dir;
  std::filesystem::path checkpoint;  // finetune checkpoint
  std::filesystem::path out_dir;
  int config_index = 0;
  bool write_artifacts = true;
};

ErrorReport run_evaluate(const EvaluateOptions& opts);

struct OmpOptions {
  downstream::Task task = downstream::Task::kSbloc;
  std::filesystem::path data_dir;
  std::filesystem::path out_dir;
  int k_paths = 3;
  int g_theta = 181;
  int g_tau = 0;  // 0 = 2*n_subc
  int config_index = 0;
  bool write_artifacts = true;
};

ErrorReport run_omp(const OmpOptions& opts);

struct IblabOptions {
  int n_worlds = 100;
  int n_trials = 2000;
  int n_bat = 4;      // <= 0: per-world random batch size in [2, 8]
  double tau = 0.5;   // <= 0: per-world random temperature in [0.1, 2]
  std::uint64_t seed = 1;
  std::filesystem::path out_file;  // empty = no file
};

struct IblabOutcome {
  int n_worlds = 0;
  int n_holds = 0;
  bool all_hold = false;
};

IblabOutcome run_iblab(const IblabOptions& opts);

// ---------------------------------------------------------------------------
// command dispatch (the CLI surface)

enum class Command { kGenerate, kPretrain, kFinetune, kEvaluate, kOmp, kIblab };
Command command_from_string(const std::string& name);

struct RunConfig {
  Command command = Command::kGenerate;
  std::filesystem::path config_path;
  std::string profile;  // empty = config/commands default
  std::optional<std::uint64_t> seed;
  std::filesystem::path out_dir;  // empty = LWLM_OUT_ROOT/<command> or ./out/<command>
  int threads = 1;
};

/// Dispatches a parsed command; returns a process exit status and writes all
/// artifacts under the resolved output directory.
int run(const RunConfig& config);

}  // namespace lwlm::harness
