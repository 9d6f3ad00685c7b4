// SPDX-License-Identifier: Apache-2.0
#include "lwlm/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <sstream>
#include <stdexcept>

#include "lwlm/checkpoint.hpp"
#include "lwlm/fsutil.hpp"
#include "lwlm/omp.hpp"
#include "lwlm/iblab.hpp"

namespace lwlm::harness {

using nlohmann::json;

// ---------------------------------------------------------------------------
// KvFile

KvFile KvFile::parse(const std::filesystem::path& path) {
  return from_string(fsutil::read_file(path));
}

KvFile KvFile::from_string(const std::string& text) {
  KvFile kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto pos = line.find('#'); pos != std::string::npos) line.erase(pos);
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      if (line.find_first_not_of(" \t\r\n") != std::string::npos)
        throw std::runtime_error("config: malformed line " + std::to_string(lineno));
      continue;
    }
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r\n");
      const auto b = s.find_last_not_of(" \t\r\n");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw std::runtime_error("config: empty key at line " + std::to_string(lineno));
    kv.values_[key] = value;
  }
  return kv;
}

std::string KvFile::get_str(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw std::runtime_error("config: missing required key '" + key + "'");
  return it->second;
}
std::string KvFile::get_str(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}
double KvFile::get_num(const std::string& key, double fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : std::stod(it->second);
}
int KvFile::get_int(const std::string& key, int fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : std::stoi(it->second);
}
std::uint64_t KvFile::get_u64(const std::string& key, std::uint64_t fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : std::stoull(it->second);
}
bool KvFile::get_bool(const std::string& key, bool fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  if (it->second == "true" || it->second == "1") return true;
  if (it->second == "false" || it->second == "0") return false;
  throw std::runtime_error("config: key '" + key + "' must be true/false");
}

// ---------------------------------------------------------------------------
// profiles, splits, stats

encoder::EncoderConfig profile_config(const std::string& profile) {
  if (profile == "desk" || profile.empty()) return encoder::EncoderConfig::desk();
  if (profile == "paper") return encoder::EncoderConfig::paper();
  throw std::invalid_argument("unknown profile '" + profile + "' (expected desk|paper)");
}

ssl::MaskPlan profile_mask_plan(const encoder::EncoderConfig& cfg) {
  return {cfg.n_ant / 2, cfg.n_subc / 2};
}

int profile_picl_out(const std::string& profile) { return profile == "paper" ? 32 : 8; }

Split label_budget_split(const dataio::DatasetContainer& ds, int budget, Rng& rng,
                         int ratio_train, int ratio_val, int ratio_test) {
  const std::vector<std::int64_t> locations = ds.location_ids();
  const int n = static_cast<int>(locations.size());
  if (n < 3) throw std::invalid_argument("label_budget_split: insufficient locations");
  int n_train, n_val, n_test;
  if (budget >= 0) {
    if (budget > n) throw std::invalid_argument("label_budget_split: budget exceeds locations");
    n_train = budget;
    const int rest = n - budget;
    n_val = rest * ratio_val / (ratio_val + ratio_test);
    n_test = rest - n_val;
  } else {
    n_val = n * ratio_val / (ratio_train + ratio_val + ratio_test);
    n_test = (n - n_val) * ratio_test / (ratio_train + ratio_test);
    n_train = n - n_val - n_test;
  }
  const std::vector<int> order = rng.sample_without_replacement(n, n);
  Split split;
  int at = 0;
  for (int i = 0; i < n_train; ++i) split.train.push_back(locations[order[at++]]);
  for (int i = 0; i < n_val; ++i) split.val.push_back(locations[order[at++]]);
  for (int i = 0; i < n_test; ++i) split.test.push_back(locations[order[at++]]);
  return split;
}

DatasetStats dataset_stats(const dataio::DatasetContainer& ds) {
  DatasetStats st;
  if (ds.n_samples == 0) return st;
  Eigen::Vector2d lo = ds.samples.front().ue_position;
  Eigen::Vector2d hi = lo;
  double bw = 0.0;
  for (const auto& s : ds.samples) {
    lo = lo.cwiseMin(s.ue_position);
    hi = hi.cwiseMax(s.ue_position);
    bw += s.config.bandwidth_hz;
  }
  st.pos_center = (lo + hi) / 2.0;
  st.pos_halfspan = ((hi - lo) / 2.0).cwiseMax(1e-9);
  st.bandwidth_mean = bw / ds.n_samples;

  double sq = 0.0;
  long count = 0;
  const int limit = std::min(ds.n_samples, 1024);
  for (int i = 0; i < limit; ++i) {
    sq += ds.samples[i].cfr.squaredNorm();
    count += ds.samples[i].cfr.size();
  }
  st.cfr_rms = count > 0 ? std::sqrt(sq / static_cast<double>(count)) : 1.0;
  if (st.cfr_rms <= 0) st.cfr_rms = 1.0;
  return st;
}

ConfigIndex index_configs(const dataio::DatasetContainer& ds) {
  ConfigIndex idx;
  idx.of_sample.reserve(ds.n_samples);
  for (const auto& s : ds.samples) {
    int found = -1;
    for (std::size_t c = 0; c < idx.configs.size(); ++c) {
      if (idx.configs[c].bs_position == s.config.bs_position &&
          idx.configs[c].bandwidth_hz == s.config.bandwidth_hz) {
        found = static_cast<int>(c);
        break;
      }
    }
    if (found < 0) {
      found = static_cast<int>(idx.configs.size());
      idx.configs.push_back(s.config);
    }
    idx.of_sample.push_back(found);
  }
  return idx;
}

// ---------------------------------------------------------------------------
// JSON codecs for checkpoint metadata

namespace {

json enc_cfg_to_json(const encoder::EncoderConfig& c) {
  return {{"n_ant", c.n_ant},       {"n_subc", c.n_subc},   {"kernel", c.kernel},
          {"stride", c.stride},     {"padding", c.padding}, {"n_enc", c.n_enc},
          {"n_heads", c.n_heads},   {"n_embed", c.n_embed}, {"d_ff", c.d_ff},
          {"n_latent", c.n_latent}, {"n_sfmcm", c.n_sfmcm}, {"n_dti", c.n_dti},
          {"n_picl", c.n_picl},     {"dropout_rate", c.dropout_rate}};
}

encoder::EncoderConfig enc_cfg_from_json(const json& j) {
  encoder::EncoderConfig c;
  c.n_ant = j.at("n_ant");
  c.n_subc = j.at("n_subc");
  c.kernel = j.at("kernel");
  c.stride = j.at("stride");
  c.padding = j.at("padding");
  c.n_enc = j.at("n_enc");
  c.n_heads = j.at("n_heads");
  c.n_embed = j.at("n_embed");
  c.d_ff = j.at("d_ff");
  c.n_latent = j.at("n_latent");
  c.n_sfmcm = j.at("n_sfmcm");
  c.n_dti = j.at("n_dti");
  c.n_picl = j.at("n_picl");
  c.dropout_rate = j.at("dropout_rate");
  return c;
}

json cfg_enc_to_json(const encoder::ConfigEncoding& e) {
  return {{"center", {e.center.x(), e.center.y()}},
          {"halfspan", {e.halfspan.x(), e.halfspan.y()}},
          {"bw_unit_hz", e.bw_unit_hz}};
}

encoder::ConfigEncoding cfg_enc_from_json(const json& j) {
  encoder::ConfigEncoding e;
  e.center = Eigen::Vector2d(j.at("center")[0].get<double>(), j.at("center")[1].get<double>());
  e.halfspan =
      Eigen::Vector2d(j.at("halfspan")[0].get<double>(), j.at("halfspan")[1].get<double>());
  e.bw_unit_hz = j.at("bw_unit_hz");
  return e;
}

json denorm_to_json(const downstream::Denormalizer& d) {
  json scale = json::array(), offset = json::array();
  for (int i = 0; i < d.scale.size(); ++i) {
    scale.push_back(d.scale(i));
    offset.push_back(d.offset(i));
  }
  return {{"scale", scale}, {"offset", offset}};
}

downstream::Denormalizer denorm_from_json(const json& j) {
  downstream::Denormalizer d;
  const auto& scale = j.at("scale");
  const auto& offset = j.at("offset");
  d.scale.resize(scale.size());
  d.offset.resize(offset.size());
  for (std::size_t i = 0; i < scale.size(); ++i) {
    d.scale(i) = scale[i];
    d.offset(i) = offset[i];
  }
  return d;
}

std::string fmt(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

std::map<std::string, nn::Matrix> snapshot(const ckpt::VisitAll& visit_all) {
  std::map<std::string, nn::Matrix> snap;
  visit_all([&](const std::string& name, nn::Parameter& p) { snap[name] = p.value; });
  return snap;
}

void restore(const ckpt::VisitAll& visit_all, const std::map<std::string, nn::Matrix>& snap) {
  visit_all([&](const std::string& name, nn::Parameter& p) { p.value = snap.at(name); });
}

encoder::ConfigEncoding encoding_from_stats(const DatasetStats& st) {
  encoder::ConfigEncoding e;
  e.center = st.pos_center;
  e.halfspan = st.pos_halfspan;
  return e;
}

downstream::Denormalizer denorm_for_task(downstream::Task task, const DatasetStats& st) {
  downstream::Denormalizer d;
  switch (task) {
    case downstream::Task::kToa:
      d.scale = Eigen::VectorXd::Constant(1, 1.0 / st.bandwidth_mean);
      d.offset = Eigen::VectorXd::Zero(1);
      break;
    case downstream::Task::kAoa:
      d = downstream::Denormalizer::identity(1);
      break;
    case downstream::Task::kSbloc:
    case downstream::Task::kMbloc:
      d.scale = st.pos_halfspan;
      d.offset = st.pos_center;
      break;
  }
  return d;
}

}  // namespace

// ---------------------------------------------------------------------------
// pretraining pipeline

PretrainOutcome run_pretrain(const PretrainOptions& opts) {
  const auto ds = dataio::load_dataset(opts.data_dir);
  encoder::EncoderConfig cfg = profile_config(opts.profile);
  cfg.dropout_rate = opts.dropout;
  if (ds.n_ant != cfg.n_ant || ds.n_subc != cfg.n_subc)
    throw std::runtime_error("pretrain: dataset CFR shape " + std::to_string(ds.n_ant) + "x" +
                             std::to_string(ds.n_subc) + " does not match profile");
  if (opts.batch > ds.n_samples) throw std::runtime_error("pretrain: batch exceeds dataset");
  int steps = opts.steps;
  if (steps <= 0) {
    if (opts.epochs <= 0) throw std::runtime_error("pretrain: need steps or epochs");
    steps = std::max(1, opts.epochs * (ds.n_samples / opts.batch));
  }

  const DatasetStats stats = dataset_stats(ds);
  const ssl::MaskPlan mask_plan = opts.mask_plan.value_or(profile_mask_plan(cfg));
  const int picl_out = opts.n_picl_out > 0 ? opts.n_picl_out : profile_picl_out(opts.profile);

  Rng init_rng = Rng::substream(opts.seed, "init");
  ssl::PretrainModel model = ssl::PretrainModel::init(cfg, opts.n_dec, picl_out, init_rng);
  model.enc.input_scale = 1.0 / stats.cfr_rms;
  model.picl_dec.cfg_enc = encoding_from_stats(stats);

  Rng batch_rng = Rng::substream(opts.seed, "batch");
  Rng mask_rng = Rng::substream(opts.seed, "mask");
  Rng dropout_rng = Rng::substream(opts.seed, "dropout");
  nn::Adam adam(opts.lr);

  PretrainOutcome outcome;
  for (int step = 1; step <= steps; ++step) {
    const std::vector<int> idx1 = dataio::sample_batch(ds, opts.batch, batch_rng);
    const std::vector<int> idx2 = dataio::sample_positive_batch(ds, idx1, batch_rng);
    std::vector<const channel::ChannelSample*> b1, b2;
    for (int i : idx1) b1.push_back(&ds.sample(i));
    for (int i : idx2) b2.push_back(&ds.sample(i));
    const auto res = ssl::pretrain_step(b1, b2, model, opts.hp, mask_plan, opts.region, adam,
                                        mask_rng, opts.dropout > 0 ? &dropout_rng : nullptr);
    outcome.log.push_back({step, res.l_sfmcm, res.l_dti, res.l_picl, res.total});
    if (step == 1) outcome.first_total = res.total;
    outcome.last_total = res.total;
  }

  if (opts.write_artifacts) {
    std::filesystem::create_directories(opts.out_dir);
    json meta = {{"kind", "pretrain"},
                 {"encoder", enc_cfg_to_json(cfg)},
                 {"input_scale", model.enc.input_scale},
                 {"config_encoding", cfg_enc_to_json(model.picl_dec.cfg_enc)},
                 {"n_dec", opts.n_dec},
                 {"n_picl_out", picl_out},
                 {"seed", opts.seed},
                 {"steps", steps},
                 {"batch", opts.batch},
                 {"lr", opts.lr},
                 {"alpha", {opts.hp.alpha_sfmcm, opts.hp.alpha_dti, opts.hp.alpha_picl}},
                 {"tau", opts.hp.temperature_tau},
                 {"mask", {mask_plan.n_hat_ant, mask_plan.n_hat_subc}},
                 {"profile", opts.profile}};
    outcome.checkpoint = opts.out_dir / "pretrain.ckpt";
    ckpt::save(outcome.checkpoint, meta, model.visit_all());

    std::ostringstream csv;
    csv << "# seed=" << opts.seed << "\n# config=" << meta.dump() << "\n";
    csv << "step,L_sfmcm,L_dti,L_picl,L_total\n";
    for (const auto& row : outcome.log)
      csv << row.step << ',' << fmt(row.l_sfmcm) << ',' << fmt(row.l_dti) << ',' << fmt(row.l_picl)
          << ',' << fmt(row.total) << "\n";
    fsutil::atomic_write(opts.out_dir / "pretrain_loss.csv", csv.str());
  }
  return outcome;
}

// ---------------------------------------------------------------------------
// fine-tuning pipeline

namespace {

struct SinglePools {
  std::vector<int> train, val, test;  // sample indices
};

SinglePools single_task_pools(const dataio::DatasetContainer& ds, const ConfigIndex& cfgidx,
                              int config_index, const Split& split) {
  auto in = [](const std::vector<std::int64_t>& locs, std::int64_t id) {
    return std::find(locs.begin(), locs.end(), id) != locs.end();
  };
  SinglePools pools;
  for (int i = 0; i < ds.n_samples; ++i) {
    if (cfgidx.of_sample[i] != config_index) continue;
    const auto loc = ds.sample(i).location_id;
    if (in(split.train, loc)) pools.train.push_back(i);
    else if (in(split.val, loc)) pools.val.push_back(i);
    else if (in(split.test, loc)) pools.test.push_back(i);
  }
  return pools;
}

double physical_error(downstream::Task task, const channel::ChannelSample& s,
                      const Eigen::VectorXd& pred_physical) {
  switch (task) {
    case downstream::Task::kToa: return std::abs(pred_physical(0) - s.toa_s);
    case downstream::Task::kAoa: return std::abs(pred_physical(0) - s.aoa_rad);
    case downstream::Task::kSbloc:
    case downstream::Task::kMbloc:
      return (Eigen::Vector2d(pred_physical(0), pred_physical(1)) - s.ue_position).norm();
  }
  return 0.0;
}

Eigen::VectorXd predict_physical(downstream::Task task, const channel::ChannelSample& s,
                                 const encoder::EncoderWeights& enc,
                                 const downstream::TaskDecoderWeights& dec) {
  if (task == downstream::Task::kSbloc) {
    const auto p = downstream::predict_position(s.cfr, s.config, enc, dec);
    Eigen::VectorXd v(2);
    v << p.x(), p.y();
    return v;
  }
  Eigen::VectorXd v(1);
  v << downstream::predict_scalar(s.cfr, s.config, enc, dec);
  return v;
}

double label_value(downstream::Task task, const channel::ChannelSample& s, int dim) {
  switch (task) {
    case downstream::Task::kToa: return s.toa_s;
    case downstream::Task::kAoa: return s.aoa_rad;
    default: return s.ue_position(dim);
  }
}

void write_predictions_csv(const std::filesystem::path& path, downstream::Task task,
                           const std::vector<std::int64_t>& ids,
                           const std::vector<Eigen::VectorXd>& preds,
                           const std::vector<const channel::ChannelSample*>& samples,
                           const std::vector<double>& errors, const json& meta) {
  std::ostringstream csv;
  csv << "# seed=" << meta.value("seed", 0) << "\n# config=" << meta.dump() << "\n";
  const bool scalar = task == downstream::Task::kToa || task == downstream::Task::kAoa;
  csv << (scalar ? "sample_id,prediction,label,error"
                 : "sample_id,pred_x,pred_y,label_x,label_y,error")
      << "\n";
  for (std::size_t i = 0; i < ids.size(); ++i) {
    csv << ids[i] << ',';
    if (scalar)
      csv << fmt(preds[i](0)) << ',' << fmt(label_value(task, *samples[i], 0)) << ',';
    else
      csv << fmt(preds[i](0)) << ',' << fmt(preds[i](1)) << ','
          << fmt(label_value(task, *samples[i], 0)) << ',' << fmt(label_value(task, *samples[i], 1))
          << ',';
    csv << fmt(errors[i]) << "\n";
  }
  fsutil::atomic_write(path, csv.str());
}

void write_report_json(const std::filesystem::path& path, const ErrorReport& report,
                       const json& extra) {
  json j = extra;
  j["n"] = report.per_sample_errors.size();
  j["mean"] = report.mean;
  j["median"] = report.median;
  j["p90"] = report.p90;
  j["per_sample_errors"] = report.per_sample_errors;
  fsutil::atomic_write(path, j.dump(2) + "\n");
}

void write_cdf_csv(const std::filesystem::path& path, const std::vector<double>& errors,
                   const json& meta) {
  std::ostringstream csv;
  csv << "# config=" << meta.dump() << "\nerror_value,cumulative_fraction\n";
  for (const auto& [e, f] : error_cdf(errors)) csv << fmt(e) << ',' << fmt(f) << "\n";
  fsutil::atomic_write(path, csv.str());
}

}  // namespace

FinetuneOutcome run_finetune(const FinetuneOptions& opts) {
  const auto ds = dataio::load_dataset(opts.data_dir);
  const DatasetStats stats = dataset_stats(ds);
  const ConfigIndex cfgidx = index_configs(ds);

  // Encoder: from the pretraining checkpoint when given, fresh otherwise.
  encoder::EncoderConfig cfg;
  encoder::ConfigEncoding cfg_enc;
  double input_scale;
  std::optional<ckpt::Loaded> loaded;
  if (!opts.checkpoint_in.empty()) {
    loaded = ckpt::load(opts.checkpoint_in);
    cfg = enc_cfg_from_json(loaded->meta.at("encoder"));
    cfg_enc = cfg_enc_from_json(loaded->meta.at("config_encoding"));
    input_scale = loaded->meta.at("input_scale");
  } else {
    cfg = profile_config(opts.profile);
    cfg_enc = encoding_from_stats(stats);
    input_scale = 1.0 / stats.cfr_rms;
  }
  cfg.dropout_rate = opts.dropout;
  if (ds.n_ant != cfg.n_ant || ds.n_subc != cfg.n_subc)
    throw std::runtime_error("finetune: dataset CFR shape does not match encoder config");

  Rng init_rng = Rng::substream(opts.seed, "init");
  encoder::EncoderWeights enc = encoder::EncoderWeights::init(cfg, init_rng);
  enc.input_scale = input_scale;
  if (loaded) ckpt::assign(*loaded, [&](const nn::ParamVisitor& fn) { enc.visit(fn); });

  Rng split_rng = Rng::substream(opts.seed, "split");
  const Split split = label_budget_split(ds, opts.budget, split_rng);
  Rng batch_rng = Rng::substream(opts.seed, "ft-batch");
  Rng dropout_rng = Rng::substream(opts.seed, "dropout");
  nn::Adam adam(opts.lr);
  const nn::TrainContext train_ctx{opts.dropout, opts.dropout > 0 ? &dropout_rng : nullptr};

  FinetuneOutcome outcome;
  json meta = {{"kind", "finetune"},
               {"task", downstream::to_string(opts.task)},
               {"encoder", enc_cfg_to_json(cfg)},
               {"input_scale", input_scale},
               {"config_encoding", cfg_enc_to_json(cfg_enc)},
               {"seed", opts.seed},
               {"budget", opts.budget},
               {"epochs", opts.epochs},
               {"batch", opts.batch},
               {"lr", opts.lr},
               {"config_index", opts.config_index},
               {"pretrained", !opts.checkpoint_in.empty()}};

  if (opts.task != downstream::Task::kMbloc) {
    const SinglePools pools = single_task_pools(ds, cfgidx, opts.config_index, split);
    if (pools.train.empty() || pools.test.empty())
      throw std::runtime_error("finetune: empty train or test pool (check config_index/budget)");

    const int out_dim = opts.task == downstream::Task::kSbloc ? 2 : 1;
    downstream::TaskDecoderWeights dec =
        downstream::TaskDecoderWeights::init(cfg.n_latent, cfg.n_latent, out_dim, init_rng);
    dec.cfg_enc = cfg_enc;
    dec.denorm = denorm_for_task(opts.task, stats);

    auto visit_all = [&](const nn::ParamVisitor& fn) {
      enc.visit(fn);
      dec.visit("task_dec", fn);
    };

    double best_val = std::numeric_limits<double>::infinity();
    std::map<std::string, nn::Matrix> best;
    auto eval_pool_error = [&](const std::vector<int>& pool) {
      double total = 0.0;
      for (int i : pool)
        total += physical_error(opts.task, ds.sample(i),
                                predict_physical(opts.task, ds.sample(i), enc, dec));
      return pool.empty() ? 0.0 : total / static_cast<double>(pool.size());
    };

    for (int epoch = 0; epoch < opts.epochs; ++epoch) {
      std::vector<int> order =
          batch_rng.sample_without_replacement(static_cast<int>(pools.train.size()),
                                               static_cast<int>(pools.train.size()));
      for (std::size_t at = 0; at < order.size(); at += opts.batch) {
        const std::size_t end = std::min(order.size(), at + opts.batch);
        nn::zero_grads(visit_all);
        nn::Matrix seed(1, 1);
        seed(0, 0) = 1.0 / static_cast<double>(end - at);
        for (std::size_t b = at; b < end; ++b) {
          nn::Graph g;
          nn::Value loss =
              downstream::sample_loss(g, ds.sample(pools.train[order[b]]), enc, dec, opts.task,
                                      train_ctx);
          g.backward(loss, seed);
        }
        adam.step(visit_all);
      }
      if (!pools.val.empty()) {
        const double val_err = eval_pool_error(pools.val);
        if (val_err < best_val) {
          best_val = val_err;
          best = snapshot(visit_all);
        }
      }
    }
    if (!best.empty()) restore(visit_all, best);

    std::vector<std::int64_t> ids;
    std::vector<Eigen::VectorXd> preds;
    std::vector<const channel::ChannelSample*> samples;
    std::vector<double> errors;
    for (int i : pools.test) {
      const auto& s = ds.sample(i);
      const Eigen::VectorXd p = predict_physical(opts.task, s, enc, dec);
      ids.push_back(i);
      preds.push_back(p);
      samples.push_back(&s);
      errors.push_back(physical_error(opts.task, s, p));
    }
    outcome.test_report = make_error_report(errors);

    if (opts.task == downstream::Task::kSbloc) {
      Eigen::Vector2d centroid = Eigen::Vector2d::Zero();
      int n_train_locs = 0;
      for (int i : pools.train) {
        centroid += ds.sample(i).ue_position;
        ++n_train_locs;
      }
      centroid /= std::max(1, n_train_locs);
      double cent_err = 0.0;
      for (int i : pools.test) cent_err += (centroid - ds.sample(i).ue_position).norm();
      outcome.centroid_mean_error = cent_err / static_cast<double>(pools.test.size());
      meta["centroid_mean_error"] = outcome.centroid_mean_error;
    }

    if (opts.write_artifacts) {
      std::filesystem::create_directories(opts.out_dir);
      meta["denormalizer"] = denorm_to_json(dec.denorm);
      outcome.checkpoint = opts.out_dir / "finetune.ckpt";
      ckpt::save(outcome.checkpoint, meta, visit_all);
      outcome.predictions_csv = opts.out_dir / "predictions.csv";
      write_predictions_csv(outcome.predictions_csv, opts.task, ids, preds, samples, errors, meta);
      write_report_json(opts.out_dir / "report.json", outcome.test_report, meta);
      write_cdf_csv(opts.out_dir / "error_cdf.csv", outcome.test_report.per_sample_errors, meta);
    }
    return outcome;
  }

  // ------------------------------ multi-BS ------------------------------
  const int n_bs = static_cast<int>(cfgidx.configs.size());
  if (n_bs < 1) throw std::runtime_error("finetune: no configs in dataset");
  for (const auto& [loc, bucket] : ds.pair_index)
    if (static_cast<int>(bucket.size()) != n_bs)
      throw std::runtime_error("finetune: location " + std::to_string(loc) +
                               " does not observe every BS config");

  downstream::MultiBsDecoder mbd =
      downstream::MultiBsDecoder::init(cfg.n_latent, cfg.n_latent, n_bs, init_rng);
  const downstream::Denormalizer pos_denorm = denorm_for_task(opts.task, stats);
  for (auto& d : mbd.per_bs) {
    d.cfg_enc = cfg_enc;
    d.denorm = pos_denorm;
  }
  // A single-BS fine-tune checkpoint seeds every per-BS decoder.
  if (loaded && loaded->meta.value("kind", "") == "finetune" &&
      loaded->meta.value("task", "") == "sbloc") {
    for (auto& d : mbd.per_bs)
      ckpt::assign(*loaded, [&](const nn::ParamVisitor& fn) { d.visit("task_dec", fn); });
  }

  auto visit_trainable = [&](const nn::ParamVisitor& fn) {
    enc.visit(fn);
    if (!opts.mbloc_freeze_per_bs) {
      for (std::size_t i = 0; i < mbd.per_bs.size(); ++i)
        mbd.per_bs[i].visit("mbloc.bs" + std::to_string(i), fn);
    }
    mbd.attn_mlp.visit("mbloc.attn", fn);
  };
  auto visit_all = [&](const nn::ParamVisitor& fn) {
    enc.visit(fn);
    mbd.visit("mbloc", fn);
  };

  auto group_of = [&](std::int64_t loc) {
    std::vector<const channel::ChannelSample*> group;
    for (int i : ds.pair_index.at(loc)) group.push_back(&ds.sample(i));
    return group;
  };
  auto fused_error = [&](std::int64_t loc) {
    const auto group = group_of(loc);
    const auto res = downstream::multi_bs_localize(group, enc, mbd);
    return (res.position - group.front()->ue_position).norm();
  };

  double best_val = std::numeric_limits<double>::infinity();
  std::map<std::string, nn::Matrix> best;
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    std::vector<int> order = batch_rng.sample_without_replacement(
        static_cast<int>(split.train.size()), static_cast<int>(split.train.size()));
    for (std::size_t at = 0; at < order.size(); at += opts.batch) {
      const std::size_t end = std::min(order.size(), at + opts.batch);
      nn::zero_grads(visit_all);
      nn::Matrix seed(1, 1);
      seed(0, 0) = 1.0 / static_cast<double>(end - at);
      for (std::size_t b = at; b < end; ++b) {
        const auto group = group_of(split.train[order[b]]);
        nn::Graph g;
        nn::Value loss = downstream::fused_location_loss(g, group, enc, mbd, train_ctx);
        g.backward(loss, seed);
      }
      adam.step(visit_trainable);
    }
    if (!split.val.empty()) {
      double val_err = 0.0;
      for (auto loc : split.val) val_err += fused_error(loc);
      val_err /= static_cast<double>(split.val.size());
      if (val_err < best_val) {
        best_val = val_err;
        best = snapshot(visit_all);
      }
    }
  }
  if (!best.empty()) restore(visit_all, best);

  std::vector<std::int64_t> ids;
  std::vector<Eigen::VectorXd> preds;
  std::vector<const channel::ChannelSample*> samples;
  std::vector<double> errors;
  Eigen::Vector2d centroid = Eigen::Vector2d::Zero();
  for (auto loc : split.train) centroid += group_of(loc).front()->ue_position;
  centroid /= std::max<std::size_t>(1, split.train.size());
  double cent_err = 0.0;
  for (auto loc : split.test) {
    const auto group = group_of(loc);
    const auto res = downstream::multi_bs_localize(group, enc, mbd);
    Eigen::VectorXd p(2);
    p << res.position.x(), res.position.y();
    ids.push_back(loc);
    preds.push_back(p);
    samples.push_back(group.front());
    errors.push_back((res.position - group.front()->ue_position).norm());
    cent_err += (centroid - group.front()->ue_position).norm();
  }
  outcome.test_report = make_error_report(errors);
  outcome.centroid_mean_error = cent_err / static_cast<double>(split.test.size());
  meta["centroid_mean_error"] = outcome.centroid_mean_error;
  meta["n_bs"] = n_bs;

  if (opts.write_artifacts) {
    std::filesystem::create_directories(opts.out_dir);
    meta["denormalizer"] = denorm_to_json(pos_denorm);
    outcome.checkpoint = opts.out_dir / "finetune.ckpt";
    ckpt::save(outcome.checkpoint, meta, visit_all);
    outcome.predictions_csv = opts.out_dir / "predictions.csv";
    write_predictions_csv(outcome.predictions_csv, opts.task, ids, preds, samples, errors, meta);
    write_report_json(opts.out_dir / "report.json", outcome.test_report, meta);
    write_cdf_csv(opts.out_dir / "error_cdf.csv", outcome.test_report.per_sample_errors, meta);
  }
  return outcome;
}

// ---------------------------------------------------------------------------
// evaluation pipeline

ErrorReport run_evaluate(const EvaluateOptions& opts) {
  const auto ds = dataio::load_dataset(opts.data_dir);
  const ConfigIndex cfgidx = index_configs(ds);
  ckpt::Loaded loaded = ckpt::load(opts.checkpoint);
  if (loaded.meta.value("kind", "") != "finetune")
    throw std::runtime_error("evaluate: checkpoint is not a fine-tuned model");
  const downstream::Task task = downstream::task_from_string(loaded.meta.at("task"));
  encoder::EncoderConfig cfg = enc_cfg_from_json(loaded.meta.at("encoder"));
  cfg.dropout_rate = 0.0;
  if (ds.n_ant != cfg.n_ant || ds.n_subc != cfg.n_subc)
    throw std::runtime_error("evaluate: dataset shape does not match checkpoint");

  Rng init_rng(0);
  encoder::EncoderWeights enc = encoder::EncoderWeights::init(cfg, init_rng);
  enc.input_scale = loaded.meta.at("input_scale");
  ckpt::assign(loaded, [&](const nn::ParamVisitor& fn) { enc.visit(fn); });

  std::vector<std::int64_t> ids;
  std::vector<Eigen::VectorXd> preds;
  std::vector<const channel::ChannelSample*> samples;
  std::vector<double> errors;

  if (task != downstream::Task::kMbloc) {
    const int out_dim = task == downstream::Task::kSbloc ? 2 : 1;
    downstream::TaskDecoderWeights dec =
        downstream::TaskDecoderWeights::init(cfg.n_latent, cfg.n_latent, out_dim, init_rng);
    dec.cfg_enc = cfg_enc_from_json(loaded.meta.at("config_encoding"));
    dec.denorm = denorm_from_json(loaded.meta.at("denormalizer"));
    ckpt::assign(loaded, [&](const nn::ParamVisitor& fn) { dec.visit("task_dec", fn); });
    for (int i = 0; i < ds.n_samples; ++i) {
      if (cfgidx.of_sample[i] != opts.config_index) continue;
      const auto& s = ds.sample(i);
      const Eigen::VectorXd p = predict_physical(task, s, enc, dec);
      ids.push_back(i);
      preds.push_back(p);
      samples.push_back(&s);
      errors.push_back(physical_error(task, s, p));
    }
  } else {
    const int n_bs = loaded.meta.at("n_bs");
    downstream::MultiBsDecoder mbd =
        downstream::MultiBsDecoder::init(cfg.n_latent, cfg.n_latent, n_bs, init_rng);
    for (auto& d : mbd.per_bs) {
      d.cfg_enc = cfg_enc_from_json(loaded.meta.at("config_encoding"));
      d.denorm = denorm_from_json(loaded.meta.at("denormalizer"));
    }
    ckpt::assign(loaded, [&](const nn::ParamVisitor& fn) { mbd.visit("mbloc", fn); });
    for (const auto& [loc, bucket] : ds.pair_index) {
      std::vector<const channel::ChannelSample*> group;
      for (int i : bucket) group.push_back(&ds.sample(i));
      if (static_cast<int>(group.size()) != n_bs) continue;
      const auto res = downstream::multi_bs_localize(group, enc, mbd);
      Eigen::VectorXd p(2);
      p << res.position.x(), res.position.y();
      ids.push_back(loc);
      preds.push_back(p);
      samples.push_back(group.front());
      errors.push_back((res.position - group.front()->ue_position).norm());
    }
  }
  if (errors.empty()) throw std::runtime_error("evaluate: nothing to evaluate");
  ErrorReport report = make_error_report(errors);
  if (opts.write_artifacts) {
    std::filesystem::create_directories(opts.out_dir);
    json meta = loaded.meta;
    meta.erase("tensors");
    write_predictions_csv(opts.out_dir / "predictions.csv", task, ids, preds, samples, errors,
                          meta);
    write_report_json(opts.out_dir / "report.json", report, meta);
    write_cdf_csv(opts.out_dir / "error_cdf.csv", report.per_sample_errors, meta);
  }
  return report;
}

// ---------------------------------------------------------------------------
// OMP baseline pipeline

ErrorReport run_omp(const OmpOptions& opts) {
  const auto ds = dataio::load_dataset(opts.data_dir);
  const ConfigIndex cfgidx = index_configs(ds);
  if (ds.n_samples == 0) throw std::runtime_error("omp: empty dataset");

  // Wavelength is recoverable from the stored geometry only through the
  // scene defaults; the dictionary only needs d/lambda = 1/2.
  auto geom_for = [&](const channel::BsConfig& cfg) {
    return channel::ArrayGeometry::half_wavelength(ds.n_ant, 1.0, cfg.bs_position);
  };
  std::vector<std::optional<omp::Dictionary>> dicts(cfgidx.configs.size());
  auto dict_for = [&](int c) -> const omp::Dictionary& {
    if (!dicts[c])
      dicts[c] = omp::Dictionary::build(geom_for(cfgidx.configs[c]), cfgidx.configs[c], ds.n_subc,
                                        opts.g_theta, opts.g_tau);
    return *dicts[c];
  };

  std::vector<std::int64_t> ids;
  std::vector<Eigen::VectorXd> preds;
  std::vector<const channel::ChannelSample*> samples;
  std::vector<double> errors;

  auto estimate_for = [&](int sample_idx) {
    const auto& s = ds.sample(sample_idx);
    const int c = cfgidx.of_sample[sample_idx];
    const auto& dict = dict_for(c);
    auto est = omp::first_arriving(omp::omp_estimate(s.cfr, dict, opts.k_paths));
    // a first path pinned to the zero-delay bin cannot be inverted to a
    // position; nudge it to half a delay step
    if (est.tau <= 0) est.tau = dict.delay_grid(1) / 2.0;
    return est;
  };

  if (opts.task != downstream::Task::kMbloc) {
    for (int i = 0; i < ds.n_samples; ++i) {
      if (cfgidx.of_sample[i] != opts.config_index) continue;
      const auto& s = ds.sample(i);
      const auto est = estimate_for(i);
      Eigen::VectorXd p;
      if (opts.task == downstream::Task::kSbloc) {
        const auto pos = omp::localize_from_toa_aoa(est.theta, est.tau,
                                                    geom_for(cfgidx.configs[opts.config_index]));
        p.resize(2);
        p << pos.x(), pos.y();
      } else {
        p.resize(1);
        p << (opts.task == downstream::Task::kToa ? est.tau : est.theta);
      }
      ids.push_back(i);
      preds.push_back(p);
      samples.push_back(&s);
      errors.push_back(physical_error(opts.task, s, p));
    }
  } else {
    for (const auto& [loc, bucket] : ds.pair_index) {
      std::vector<channel::Vec2> estimates;
      for (int i : bucket) {
        const auto est = estimate_for(i);
        estimates.push_back(
            omp::localize_from_toa_aoa(est.theta, est.tau, geom_for(ds.sample(i).config)));
      }
      const auto fused = omp::multi_bs_average(estimates);
      Eigen::VectorXd p(2);
      p << fused.x(), fused.y();
      const auto& s0 = ds.sample(bucket.front());
      ids.push_back(loc);
      preds.push_back(p);
      samples.push_back(&s0);
      errors.push_back((fused - s0.ue_position).norm());
    }
  }
  if (errors.empty()) throw std::runtime_error("omp: nothing to evaluate");
  ErrorReport report = make_error_report(errors);
  if (opts.write_artifacts) {
    std::filesystem::create_directories(opts.out_dir);
    json meta = {{"kind", "omp"},
                 {"task", downstream::to_string(opts.task)},
                 {"k_paths", opts.k_paths},
                 {"g_theta", opts.g_theta},
                 {"g_tau", opts.g_tau},
                 {"config_index", opts.config_index}};
    write_predictions_csv(opts.out_dir / "predictions.csv", opts.task, ids, preds, samples, errors,
                          meta);
    write_report_json(opts.out_dir / "report.json", report, meta);
    write_cdf_csv(opts.out_dir / "error_cdf.csv", report.per_sample_errors, meta);
  }
  return report;
}

// ---------------------------------------------------------------------------
// information-bound lab pipeline

IblabOutcome run_iblab(const IblabOptions& opts) {
  Rng root = Rng::substream(opts.seed, "iblab");
  json worlds = json::array();
  IblabOutcome outcome;
  outcome.n_worlds = opts.n_worlds;
  for (int w = 0; w < opts.n_worlds; ++w) {
    Rng rng = root.derive(static_cast<std::uint64_t>(w));
    const iblab::DiscreteWorld world = iblab::random_world(rng);
    const int n_bat = opts.n_bat > 0 ? opts.n_bat : 2 + static_cast<int>(rng.uniform_index(7));
    const double tau = opts.tau > 0 ? opts.tau : rng.uniform(0.1, 2.0);
    const auto rep = iblab::verify_bound(world, n_bat, tau, opts.n_trials, rng);
    if (rep.holds) ++outcome.n_holds;
    worlds.push_back({{"world", w},
                      {"n_labels", world.n_labels()},
                      {"n_obs", world.n_obs()},
                      {"n_bat", rep.n_bat},
                      {"tau", rep.tau},
                      {"n_trials", rep.n_trials},
                      {"mi_oy", rep.mi_oy},
                      {"mi_oo", rep.mi_oo},
                      {"avg_loss", rep.avg_loss},
                      {"avg_bound", rep.avg_bound},
                      {"slack", rep.slack},
                      {"holds", rep.holds}});
  }
  outcome.all_hold = outcome.n_holds == outcome.n_worlds;
  if (!opts.out_file.empty()) {
    json out = {{"seed", opts.seed},
                {"n_worlds", opts.n_worlds},
                {"n_holds", outcome.n_holds},
                {"all_hold", outcome.all_hold},
                {"worlds", worlds}};
    std::filesystem::create_directories(opts.out_file.parent_path());
    fsutil::atomic_write(opts.out_file, out.dump(2) + "\n");
  }
  return outcome;
}

// ---------------------------------------------------------------------------
// dispatch

Command command_from_string(const std::string& name) {
  if (name == "generate") return Command::kGenerate;
  if (name == "pretrain") return Command::kPretrain;
  if (name == "finetune") return Command::kFinetune;
  if (name == "evaluate") return Command::kEvaluate;
  if (name == "omp") return Command::kOmp;
  if (name == "iblab") return Command::kIblab;
  throw std::invalid_argument("unknown command '" + name + "'");
}

namespace {

std::filesystem::path resolve_out_dir(const RunConfig& rc, const std::string& command) {
  if (!rc.out_dir.empty()) return rc.out_dir;
  if (const char* root = std::getenv("LWLM_OUT_ROOT")) return std::filesystem::path(root) / command;
  return std::filesystem::path("out") / command;
}

ssl::LossRegion region_from_string(const std::string& name) {
  if (name == "masked") return ssl::LossRegion::kMasked;
  if (name == "written") return ssl::LossRegion::kUnmaskedAsWritten;
  if (name == "full") return ssl::LossRegion::kFull;
  throw std::runtime_error("config: region must be masked|written|full");
}

}  // namespace

int run(const RunConfig& rc) {
  try {
    switch (rc.command) {
      case Command::kGenerate: {
        channel::SceneSpec scene = channel::load_scene(rc.config_path);
        if (rc.seed) scene.seed = *rc.seed;
        const auto out = resolve_out_dir(rc, "generate");
        const auto samples = channel::generate_dataset(scene, rc.threads);
        dataio::write_dataset(samples, out);
        std::cout << "wrote " << samples.size() << " samples (" << scene.n_locations
                  << " locations x " << scene.bs_list.size() << " configs) to " << out << "\n";
        return 0;
      }
      case Command::kPretrain: {
        const KvFile kv = KvFile::parse(rc.config_path);
        PretrainOptions opts;
        opts.out_dir = resolve_out_dir(rc, "pretrain");
        if (kv.has("scene")) {
          // generate the pretraining corpus from a scene file on the fly
          channel::SceneSpec scene = channel::load_scene(kv.get_str("scene"));
          if (rc.seed) scene.seed = *rc.seed;
          opts.data_dir = opts.out_dir / "dataset";
          dataio::write_dataset(channel::generate_dataset(scene, rc.threads), opts.data_dir);
        } else {
          opts.data_dir = kv.get_str("data");
        }
        opts.profile = rc.profile.empty() ? kv.get_str("profile", "desk") : rc.profile;
        opts.steps = kv.get_int("steps", kv.has("epochs") ? 0 : 200);
        opts.epochs = kv.get_int("epochs", 0);
        opts.batch = kv.get_int("batch", 32);
        opts.lr = kv.get_num("lr", 1e-4);
        opts.dropout = kv.get_num("dropout", 0.1);
        opts.hp.alpha_sfmcm = kv.get_num("alpha_sfmcm", 10.0);
        opts.hp.alpha_dti = kv.get_num("alpha_dti", 20.0);
        opts.hp.alpha_picl = kv.get_num("alpha_picl", 1.0);
        opts.hp.temperature_tau = kv.get_num("tau", 0.1);
        if (kv.has("mask_ant") || kv.has("mask_subc"))
          opts.mask_plan = ssl::MaskPlan{kv.get_int("mask_ant", 0), kv.get_int("mask_subc", 0)};
        opts.region = region_from_string(kv.get_str("region", "masked"));
        opts.n_dec = kv.get_int("n_dec", 2);
        opts.n_picl_out = kv.get_int("picl_out", -1);
        opts.seed = rc.seed.value_or(kv.get_u64("seed", 1));
        const auto outcome = run_pretrain(opts);
        std::cout << "pretrained " << outcome.log.size() << " steps, total loss "
                  << outcome.first_total << " -> " << outcome.last_total << ", checkpoint "
                  << outcome.checkpoint << "\n";
        return 0;
      }
      case Command::kFinetune: {
        const KvFile kv = KvFile::parse(rc.config_path);
        FinetuneOptions opts;
        opts.task = downstream::task_from_string(kv.get_str("task"));
        opts.data_dir = kv.get_str("data");
        opts.checkpoint_in = kv.get_str("checkpoint", "");
        opts.out_dir = resolve_out_dir(rc, "finetune");
        opts.profile = rc.profile.empty() ? kv.get_str("profile", "desk") : rc.profile;
        opts.budget = kv.get_int("budget", -1);
        opts.epochs = kv.get_int("epochs", 50);
        opts.batch = kv.get_int("batch", 32);
        opts.lr = kv.get_num("lr", 1e-4);
        opts.dropout = kv.get_num("dropout", 0.1);
        opts.config_index = kv.get_int("config_index", 0);
        opts.mbloc_freeze_per_bs = kv.get_bool("mbloc_freeze_per_bs", false);
        opts.seed = rc.seed.value_or(kv.get_u64("seed", 1));
        const auto outcome = run_finetune(opts);
        std::cout << "finetuned " << downstream::to_string(opts.task) << ": mean test error "
                  << outcome.test_report.mean << ", median " << outcome.test_report.median
                  << ", checkpoint " << outcome.checkpoint << "\n";
        return 0;
      }
      case Command::kEvaluate: {
        const KvFile kv = KvFile::parse(rc.config_path);
        EvaluateOptions opts;
        opts.data_dir = kv.get_str("data");
        opts.checkpoint = kv.get_str("checkpoint");
        opts.out_dir = resolve_out_dir(rc, "evaluate");
        opts.config_index = kv.get_int("config_index", 0);
        const auto report = run_evaluate(opts);
        std::cout << "evaluated: mean error " << report.mean << ", median " << report.median
                  << "\n";
        return 0;
      }
      case Command::kOmp: {
        const KvFile kv = KvFile::parse(rc.config_path);
        OmpOptions opts;
        opts.task = downstream::task_from_string(kv.get_str("task", "sbloc"));
        opts.data_dir = kv.get_str("data");
        opts.out_dir = resolve_out_dir(rc, "omp");
        opts.k_paths = kv.get_int("k_paths", 3);
        opts.g_theta = kv.get_int("g_theta", 181);
        opts.g_tau = kv.get_int("g_tau", 0);
        opts.config_index = kv.get_int("config_index", 0);
        const auto report = run_omp(opts);
        std::cout << "omp " << downstream::to_string(opts.task) << ": mean error " << report.mean
                  << ", median " << report.median << "\n";
        return 0;
      }
      case Command::kIblab: {
        IblabOptions opts;
        if (!rc.config_path.empty()) {
          const KvFile kv = KvFile::parse(rc.config_path);
          opts.n_worlds = kv.get_int("worlds", opts.n_worlds);
          opts.n_trials = kv.get_int("trials", opts.n_trials);
          opts.n_bat = kv.get_int("n_bat", 0);
          opts.tau = kv.get_num("tau", 0);
          opts.seed = kv.get_u64("seed", opts.seed);
        } else {
          opts.n_bat = 0;  // randomize batch size and temperature per world
          opts.tau = 0;
        }
        if (rc.seed) opts.seed = *rc.seed;
        opts.out_file = resolve_out_dir(rc, "iblab") / "iblab_report.json";
        const auto outcome = run_iblab(opts);
        std::cout << "iblab: bound held in " << outcome.n_holds << "/" << outcome.n_worlds
                  << " worlds, report " << opts.out_file << "\n";
        return outcome.all_hold ? 0 : 1;
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace lwlm::harness
