// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end. Five commands cover the working cycle: synth
// writes an observable record CSV plus its ground-truth sidecar,
// preprocess turns records into normalized tensor splits, train fits a
// model and keeps the best validation snapshot, predict writes interval
// forecasts from one checkpoint or an ensemble, and evaluate scores a
// forecast table (or oracle intervals, or two finished reports against
// each other). Every command reads a flat key=value config with
// command-line overrides, writes the resolved config next to its
// outputs, and never mutates its inputs.
//
// Exit codes: 0 success, 1 usage error, 2 data or validation error,
// 3 numeric failure during training.

#include "duq/data.hpp"
#include "duq/infer.hpp"
#include "duq/metrics.hpp"
#include "duq/model.hpp"
#include "duq/serialize.hpp"
#include "duq/synth.hpp"
#include "duq/train.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace fs = std::filesystem;

namespace {

using duq::Index;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string format_double(double value) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  return buf;
}

std::string trim(const std::string& text) {
  const auto begin = text.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = text.find_last_not_of(" \t\r");
  return text.substr(begin, end - begin + 1);
}

/// Flat key=value settings. Typed getters record the value they settled
/// on (explicit or default), so the resolved config written next to the
/// outputs replays the run exactly. Keys nobody read are typos and are
/// rejected before any output is produced.
class KeyValues {
 public:
  void load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config file " + path);
    std::string line;
    Index line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const std::string text = trim(line);
      if (text.empty()) continue;
      const auto eq = text.find('=');
      if (eq == std::string::npos) {
        throw UsageError(path + ":" + std::to_string(line_no) + ": expected key=value, got '" +
                         text + "'");
      }
      set(trim(text.substr(0, eq)), trim(text.substr(eq + 1)));
    }
  }

  void set(const std::string& key, const std::string& value) {
    if (key.empty()) throw UsageError("empty config key");
    values_[key] = value;
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string str(const std::string& key, const std::string& fallback) {
    return fetch(key, fallback);
  }

  std::string require_str(const std::string& key) {
    if (!has(key)) throw UsageError("missing required config key '" + key + "'");
    return fetch(key, "");
  }

  Index index(const std::string& key, Index fallback) {
    return parse_index(key, fetch(key, std::to_string(fallback)));
  }

  double f64(const std::string& key, double fallback) {
    const std::string text = fetch(key, format_double(fallback));
    try {
      std::size_t used = 0;
      const double value = std::stod(text, &used);
      if (used != text.size()) throw std::invalid_argument("");
      return value;
    } catch (const std::exception&) {
      throw UsageError("config key '" + key + "': cannot parse '" + text + "' as a number");
    }
  }

  std::uint64_t u64(const std::string& key, std::uint64_t fallback) {
    const std::string text = fetch(key, std::to_string(fallback));
    try {
      std::size_t used = 0;
      const std::uint64_t value = std::stoull(text, &used);
      if (used != text.size()) throw std::invalid_argument("");
      return value;
    } catch (const std::exception&) {
      throw UsageError("config key '" + key + "': cannot parse '" + text +
                       "' as a non-negative integer");
    }
  }

  std::vector<Index> index_list(const std::string& key, const std::vector<Index>& fallback) {
    std::string def;
    for (std::size_t i = 0; i < fallback.size(); ++i) {
      if (i > 0) def += ',';
      def += std::to_string(fallback[i]);
    }
    const std::string text = fetch(key, def);
    std::vector<Index> out;
    std::stringstream parts(text);
    std::string item;
    while (std::getline(parts, item, ',')) out.push_back(parse_index(key, trim(item)));
    if (out.empty()) throw UsageError("config key '" + key + "': expected a comma-separated list");
    return out;
  }

  /// Rejects keys that were set but never consumed by the command.
  void finish() const {
    for (const auto& [key, value] : values_) {
      if (!read_.count(key)) throw UsageError("unknown config key '" + key + "'");
    }
  }

  void write_resolved(const std::string& path) const {
    std::string body;
    for (const auto& [key, value] : resolved_) body += key + " = " + value + "\n";
    duq::atomic_write_file(path, body);
  }

 private:
  std::string fetch(const std::string& key, const std::string& fallback) {
    read_.insert(key);
    const auto it = values_.find(key);
    const std::string value = it == values_.end() ? fallback : it->second;
    resolved_[key] = value;
    return value;
  }

  Index parse_index(const std::string& key, const std::string& text) {
    try {
      std::size_t used = 0;
      const long long value = std::stoll(text, &used);
      if (used != text.size()) throw std::invalid_argument("");
      return static_cast<Index>(value);
    } catch (const std::exception&) {
      throw UsageError("config key '" + key + "': cannot parse '" + text + "' as an integer");
    }
  }

  std::map<std::string, std::string> values_;
  std::set<std::string> read_;
  mutable std::map<std::string, std::string> resolved_;
};

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  long long seed = 0;
  bool seed_given = false;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "flat key=value config file")
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", args.seed, "override the 'seed' config key");
  cmd->add_option("--out", args.out_dir, "output directory")->required();
  cmd->add_option("overrides", args.overrides, "extra key=value settings (override the file)");
}

KeyValues make_config(CLI::App* cmd, const CommonArgs& args,
                      const std::vector<std::string>& extra_overrides = {}) {
  KeyValues kv;
  if (!args.config_path.empty()) kv.load_file(args.config_path);
  const auto apply = [&kv](const std::string& item) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) {
      throw UsageError("override '" + item + "' is not of the form key=value");
    }
    kv.set(trim(item.substr(0, eq)), trim(item.substr(eq + 1)));
  };
  for (const std::string& item : args.overrides) apply(item);
  for (const std::string& item : extra_overrides) apply(item);
  if (cmd->count("--seed") > 0) kv.set("seed", std::to_string(args.seed));
  return kv;
}

std::string join_path(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

duq::DatasetTensors apply_mask(const duq::DatasetTensors& tensors, const std::string& mask) {
  if (mask == "nwp") return duq::mask_channel(tensors, duq::MaskTarget::kNwp);
  if (mask == "obs") return duq::mask_channel(tensors, duq::MaskTarget::kObservations);
  if (mask == "none") return tensors;
  throw UsageError("mask must be one of none, nwp, obs; got '" + mask + "'");
}

/// Runs a path-taking writer against a sibling temp file, then renames,
/// so a failed command never leaves a partial output behind.
template <typename Fn>
void write_atomically(const std::string& path, Fn&& fn) {
  const std::string tmp = path + ".tmp";
  fn(tmp);
  fs::rename(tmp, path);
}

// ---------------------------------------------------------------------------
// synth

int cmd_synth(CLI::App* cmd, const CommonArgs& common) {
  KeyValues kv = make_config(cmd, common);
  duq::SynthConfig cfg;
  cfg.dates = kv.index("dates", cfg.dates);
  cfg.stations = kv.index("stations", cfg.stations);
  cfg.t_e = kv.index("t_e", cfg.t_e);
  cfg.t_d = kv.index("t_d", cfg.t_d);
  cfg.n1 = kv.index("n1", cfg.n1);
  cfg.nwp_width = kv.index("nwp_width", cfg.nwp_width);
  cfg.n3 = kv.index("n3", cfg.n3);
  cfg.seasonal_amp = kv.f64("seasonal_amp", cfg.seasonal_amp);
  cfg.daily_amp = kv.f64("daily_amp", cfg.daily_amp);
  cfg.station_offset_scale = kv.f64("station_offset_scale", cfg.station_offset_scale);
  cfg.sigma_base = kv.f64("sigma_base", cfg.sigma_base);
  cfg.sigma_amp = kv.f64("sigma_amp", cfg.sigma_amp);
  cfg.day_shift_scale = kv.f64("day_shift_scale", cfg.day_shift_scale);
  cfg.event_scale = kv.f64("event_scale", cfg.event_scale);
  cfg.event_grid_hours = kv.index("event_grid_hours", cfg.event_grid_hours);
  cfg.obs_noise = kv.f64("obs_noise", cfg.obs_noise);
  cfg.nwp_bias = kv.f64("nwp_bias", cfg.nwp_bias);
  cfg.nwp_noise = kv.f64("nwp_noise", cfg.nwp_noise);
  cfg.seed = kv.u64("seed", cfg.seed);
  const double block_rate = kv.f64("block_rate", 0.0);
  const double local_rate = kv.f64("local_rate", 0.0);
  kv.finish();

  duq::validate(cfg);
  duq::SynthResult result = duq::generate(cfg);
  duq::StationRecords observed =
      duq::inject_missing(result.records, block_rate, local_rate, cfg.seed);

  fs::create_directories(common.out_dir);
  const std::string records_path = join_path(common.out_dir, "records.csv");
  const std::string truth_path = join_path(common.out_dir, "truth.csv");
  write_atomically(records_path, [&](const std::string& p) { duq::save_records(observed, p); });
  write_atomically(truth_path, [&](const std::string& p) { duq::save_truth(result.truth, p); });
  kv.write_resolved(join_path(common.out_dir, "resolved_config.txt"));

  std::cout << "wrote " << records_path << " (" << cfg.dates << " dates, " << cfg.stations
            << " stations)\n"
            << "wrote " << truth_path << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// preprocess

int cmd_preprocess(CLI::App* cmd, const CommonArgs& common) {
  KeyValues kv = make_config(cmd, common);
  const std::string records_path = kv.require_str("data");
  duq::CsvSchema schema;
  schema.num_stations = kv.index("stations", schema.num_stations);
  schema.t_e = kv.index("t_e", schema.t_e);
  schema.t_d = kv.index("t_d", schema.t_d);
  schema.n1 = kv.index("n1", schema.n1);
  schema.nwp_width = kv.index("nwp_width", schema.nwp_width);
  schema.n3 = kv.index("n3", schema.n3);
  const double train_frac = kv.f64("train_frac", 0.7);
  const double val_frac = kv.f64("val_frac", 0.15);
  kv.finish();

  const duq::StationRecords raw = duq::load_records(records_path, schema);
  duq::StationRecords kept = duq::drop_block_missing(raw);
  duq::repair_missing(kept);
  const duq::SplitIndices split = duq::split_by_date(kept.dates(), train_frac, val_frac);

  const duq::StationRecords train_rec = duq::subset_dates(kept, split.train);
  const duq::NormalizationSpec norm = duq::fit_normalizer(train_rec);

  fs::create_directories(common.out_dir);
  const auto build_split = [&](const std::vector<Index>& positions, const std::string& name) {
    const duq::StationRecords rec = duq::apply_normalizer(norm, duq::subset_dates(kept, positions));
    const duq::DatasetTensors tensors = duq::build_tensors(rec, norm, schema.t_e, schema.t_d);
    duq::save_dataset(tensors, join_path(common.out_dir, name));
    std::cout << name << ": " << tensors.dates() << " dates, encoder "
              << duq::shape_to_string(tensors.encoder.shape()) << ", decoder "
              << duq::shape_to_string(tensors.decoder.shape()) << ", targets "
              << duq::shape_to_string(tensors.targets.shape()) << "\n";
  };
  build_split(split.train, "train");
  build_split(split.val, "val");
  build_split(split.test, "test");
  kv.write_resolved(join_path(common.out_dir, "resolved_config.txt"));

  std::cout << "kept " << kept.dates() << " of " << raw.dates() << " dates\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train

int cmd_train(CLI::App* cmd, const CommonArgs& common, const std::string& mask_flag) {
  KeyValues kv = make_config(cmd, common);
  if (!mask_flag.empty()) kv.set("mask", mask_flag);
  const std::string data_dir = kv.require_str("data");
  const std::string mask = kv.str("mask", "none");

  const duq::DatasetTensors train_data =
      apply_mask(duq::load_dataset(join_path(data_dir, "train")), mask);
  const duq::DatasetTensors val_data =
      apply_mask(duq::load_dataset(join_path(data_dir, "val")), mask);

  duq::ModelConfig mc;
  mc.hidden_sizes = kv.index_list("hidden_sizes", mc.hidden_sizes);
  mc.embed_dim_station = kv.index("embed_dim_station", mc.embed_dim_station);
  mc.embed_dim_time = kv.index("embed_dim_time", mc.embed_dim_time);
  mc.min_variance = kv.f64("min_variance", mc.min_variance);
  mc.num_stations = train_data.stations();
  mc.n1 = train_data.n1();
  mc.n2_nwp = train_data.n2() - 2;
  mc.n3 = train_data.n3();
  mc.t_e = train_data.t_e();
  mc.t_d = train_data.t_d();
  mc.seed = kv.u64("seed", 0);

  duq::TrainConfig tc;
  tc.batch_size = kv.index("batch_size", 512);
  tc.max_iterations = kv.index("max_iterations", 10000);
  tc.validation_interval = kv.index("validation_interval", 50);
  tc.early_stop_tolerance = kv.index("early_stop_tolerance", 10);
  tc.loss_kind = duq::loss_kind_from_string(kv.str("loss_kind", "nle"));
  tc.learning_rate = kv.f64("learning_rate", tc.learning_rate);
  tc.beta1 = kv.f64("beta1", tc.beta1);
  tc.beta2 = kv.f64("beta2", tc.beta2);
  tc.adam_epsilon = kv.f64("adam_epsilon", tc.adam_epsilon);
  tc.clip_norm = kv.f64("clip_norm", tc.clip_norm);
  tc.seed = mc.seed;
  kv.finish();
  duq::validate(mc);
  duq::validate(tc);

  duq::Rng rng(mc.seed);
  const duq::ModelParams initial = duq::init_params(mc, rng);
  const duq::TrainResult result = duq::train(initial, train_data, val_data, tc);

  fs::create_directories(common.out_dir);
  const std::string ckpt_path = join_path(common.out_dir, "model.duqp");
  duq::save_checkpoint(result.params, ckpt_path);
  duq::write_training_log(result.history, join_path(common.out_dir, "training_log.csv"));
  kv.write_resolved(join_path(common.out_dir, "resolved_config.txt"));

  const duq::TrainHistory& h = result.history;
  std::cout << "ti = " << h.total_iterations << " = " << h.validation_times << "*"
            << tc.validation_interval << "\n"
            << "best validation loss " << format_double(h.best_val_loss) << " at iteration "
            << h.best_iteration << "\n"
            << "wrote " << ckpt_path << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// predict

int cmd_predict(CLI::App* cmd, const CommonArgs& common,
                const std::vector<std::string>& member_flags) {
  // --members takes every following bare token; key=value stragglers it
  // swallowed are really config overrides, so hand them back.
  std::vector<std::string> member_paths;
  std::vector<std::string> extra_overrides;
  for (const std::string& token : member_flags) {
    (token.find('=') == std::string::npos ? member_paths : extra_overrides).push_back(token);
  }
  KeyValues kv = make_config(cmd, common, extra_overrides);
  const std::string data_dir = kv.require_str("data");
  if (member_paths.empty() && kv.has("checkpoint")) {
    member_paths.push_back(kv.require_str("checkpoint"));
  } else if (!member_paths.empty() && kv.has("checkpoint")) {
    throw UsageError("give either checkpoint= or --members, not both");
  }
  if (member_paths.empty()) {
    throw UsageError("missing required config key 'checkpoint' (or --members)");
  }
  const double z = kv.f64("z", 0.1);
  const std::string mode_name = kv.str("variance_mode", "mean");
  const std::string mask = kv.str("mask", "none");
  kv.finish();

  duq::EnsembleVariance mode;
  if (mode_name == "mean") {
    mode = duq::EnsembleVariance::kMeanVariance;
  } else if (mode_name == "mixture") {
    mode = duq::EnsembleVariance::kMixture;
  } else {
    throw UsageError("variance_mode must be mean or mixture; got '" + mode_name + "'");
  }

  const duq::DatasetTensors ds = apply_mask(duq::load_dataset(data_dir), mask);
  std::vector<duq::ModelParams> members;
  members.reserve(member_paths.size());
  for (const std::string& path : member_paths) members.push_back(duq::load_checkpoint(path));
  std::vector<const duq::ModelParams*> ptrs;
  for (const duq::ModelParams& m : members) ptrs.push_back(&m);

  const Index d_count = ds.dates();
  const Index s_count = ds.stations();
  const Index t_d = ds.t_d();
  const Index n3 = ds.n3();
  duq::ForecastTable table;
  table.date_ids = ds.date_ids;
  table.point = duq::Tensor({d_count, s_count, t_d, n3});
  table.lower = duq::Tensor({d_count, s_count, t_d, n3});
  table.upper = duq::Tensor({d_count, s_count, t_d, n3});
  table.sigma = duq::Tensor({d_count, s_count, t_d, n3});
  table.z = z;
  table.lambda = duq::lambda_from_z(z);
  table.variance_mode = duq::to_string(mode);
  table.members = static_cast<Index>(ptrs.size());

  for (Index i = 0; i < d_count; ++i) {
    for (Index s = 0; s < s_count; ++s) {
      const duq::Sample sample = duq::extract_sample(ds, i, s);
      const duq::PredictionInterval pi = duq::ensemble_predict(ptrs, sample, z, ds.norm, mode);
      for (Index t = 0; t < t_d; ++t) {
        for (Index o = 0; o < n3; ++o) {
          table.point(i, s, t, o) = pi.point(t, o);
          table.lower(i, s, t, o) = pi.lower(t, o);
          table.upper(i, s, t, o) = pi.upper(t, o);
          table.sigma(i, s, t, o) = pi.sigma(t, o);
        }
      }
    }
  }

  fs::create_directories(common.out_dir);
  const std::string forecast_path = join_path(common.out_dir, "forecasts.csv");
  duq::save_forecasts(table, forecast_path);
  kv.write_resolved(join_path(common.out_dir, "resolved_config.txt"));
  std::cout << "wrote " << forecast_path << " (" << d_count << " dates, " << table.members
            << " member" << (table.members == 1 ? "" : "s") << ", z = " << format_double(z)
            << ")\n";
  return 0;
}

// ---------------------------------------------------------------------------
// evaluate

struct ReportRow {
  Index date_id = 0;
  Index objective = 0;
  double rmse = 0.0;
  double ss = 0.0;
  double picp = 0.0;
};

std::vector<ReportRow> read_report_rows(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open report file " + path);
  std::string line;
  if (!std::getline(in, line) || trim(line) != "date_idx,objective,rmse,ss,picp") {
    throw std::runtime_error(path + ": not a report CSV (bad header)");
  }
  std::vector<ReportRow> rows;
  Index line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    std::stringstream parts(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(parts, cell, ',')) cells.push_back(cell);
    if (cells.size() != 5) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": expected 5 columns");
    }
    ReportRow row;
    try {
      row.date_id = static_cast<Index>(std::stoll(cells[0]));
      row.objective = static_cast<Index>(std::stoll(cells[1]));
      row.rmse = std::stod(cells[2]);
      row.ss = std::stod(cells[3]);
      row.picp = std::stod(cells[4]);
    } catch (const std::exception&) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": malformed row");
    }
    rows.push_back(row);
  }
  if (rows.empty()) throw std::runtime_error(path + ": report has no rows");
  return rows;
}

int run_ttest(const std::vector<std::string>& report_paths, const CommonArgs& common,
              KeyValues& kv) {
  kv.finish();
  const std::vector<ReportRow> first = read_report_rows(report_paths[0]);
  const std::vector<ReportRow> second = read_report_rows(report_paths[1]);
  if (first.size() != second.size()) {
    throw std::runtime_error("reports cover different row counts (" +
                             std::to_string(first.size()) + " vs " +
                             std::to_string(second.size()) + ")");
  }
  std::vector<double> rmse_first, rmse_second, ss_first, ss_second;
  for (std::size_t i = 0; i < first.size(); ++i) {
    if (first[i].date_id != second[i].date_id || first[i].objective != second[i].objective) {
      throw std::runtime_error("reports disagree on row " + std::to_string(i + 1) +
                               ": dates or objectives differ");
    }
    rmse_first.push_back(first[i].rmse);
    rmse_second.push_back(second[i].rmse);
    ss_first.push_back(first[i].ss);
    ss_second.push_back(second[i].ss);
  }

  // Small p under rmse_first_lower supports the first report having the
  // lower error; small p under ss_first_higher supports the first report
  // having the higher skill.
  const duq::TTestResult rmse_test = duq::paired_t_test(rmse_second, rmse_first);
  const duq::TTestResult ss_test = duq::paired_t_test(ss_first, ss_second);

  nlohmann::json doc;
  doc["pairs"] = first.size();
  doc["first"] = report_paths[0];
  doc["second"] = report_paths[1];
  doc["rmse_first_lower"] = {{"t_stat", rmse_test.t_stat}, {"p_value", rmse_test.p_value}};
  doc["ss_first_higher"] = {{"t_stat", ss_test.t_stat}, {"p_value", ss_test.p_value}};

  fs::create_directories(common.out_dir);
  const std::string out_path = join_path(common.out_dir, "ttest.json");
  duq::atomic_write_file(out_path, doc.dump(2) + "\n");
  kv.write_resolved(join_path(common.out_dir, "resolved_config.txt"));
  std::cout << "p(rmse lower) = " << format_double(rmse_test.p_value) << "\n"
            << "p(skill higher) = " << format_double(ss_test.p_value) << "\n"
            << "wrote " << out_path << "\n";
  return 0;
}

duq::ForecastTable oracle_table(const duq::SynthTruth& truth, const duq::DatasetTensors& ds,
                                double z) {
  const double lambda = duq::lambda_from_z(z);
  const Index d_count = ds.dates();
  const Index s_count = ds.stations();
  const Index t_d = ds.t_d();
  const Index n3 = ds.n3();
  if (truth.mu.extent(1) != t_d || truth.mu.extent(2) != s_count || truth.mu.extent(3) != n3) {
    throw std::runtime_error("truth sidecar grid " + duq::shape_to_string(truth.mu.shape()) +
                             " does not match the dataset");
  }
  std::unordered_map<Index, Index> position;
  for (std::size_t i = 0; i < truth.date_ids.size(); ++i) {
    position[truth.date_ids[i]] = static_cast<Index>(i);
  }

  duq::ForecastTable table;
  table.date_ids = ds.date_ids;
  table.point = duq::Tensor({d_count, s_count, t_d, n3});
  table.lower = duq::Tensor({d_count, s_count, t_d, n3});
  table.upper = duq::Tensor({d_count, s_count, t_d, n3});
  table.sigma = duq::Tensor({d_count, s_count, t_d, n3});
  table.z = z;
  table.lambda = lambda;
  table.variance_mode = "mean";
  table.members = 1;
  for (Index d = 0; d < d_count; ++d) {
    const auto it = position.find(ds.date_ids[static_cast<std::size_t>(d)]);
    if (it == position.end()) {
      throw std::runtime_error("truth sidecar has no date " +
                               std::to_string(ds.date_ids[static_cast<std::size_t>(d)]));
    }
    const Index p = it->second;
    for (Index s = 0; s < s_count; ++s) {
      for (Index t = 0; t < t_d; ++t) {
        const double sd = truth.sigma[t];
        for (Index o = 0; o < n3; ++o) {
          const double m = truth.mu(p, t, s, o);
          table.point(d, s, t, o) = m;
          table.lower(d, s, t, o) = m - lambda * sd;
          table.upper(d, s, t, o) = m + lambda * sd;
          table.sigma(d, s, t, o) = sd;
        }
      }
    }
  }
  return table;
}

int cmd_evaluate(CLI::App* cmd, const CommonArgs& common,
                 const std::vector<std::string>& ttest_paths) {
  KeyValues kv = make_config(cmd, common);
  if (!ttest_paths.empty()) return run_ttest(ttest_paths, common, kv);

  const std::string data_dir = kv.require_str("data");
  const bool has_forecasts = kv.has("forecasts");
  const bool has_truth = kv.has("truth");
  if (has_forecasts == has_truth) {
    throw UsageError("give exactly one of forecasts= (model output) or truth= (oracle sidecar)");
  }

  const duq::DatasetTensors ds = duq::load_dataset(data_dir);
  duq::ForecastTable table;
  if (has_forecasts) {
    table = duq::load_forecasts(kv.require_str("forecasts"));
  } else {
    const double z = kv.f64("z", 0.1);
    table = oracle_table(duq::load_truth(kv.require_str("truth")), ds, z);
  }
  kv.finish();

  const Index d_count = ds.dates();
  const Index s_count = ds.stations();
  const Index t_d = ds.t_d();
  const Index n3 = ds.n3();
  if (table.date_ids != ds.date_ids) {
    throw std::runtime_error("forecast dates do not match the dataset dates");
  }
  const duq::Shape grid{d_count, s_count, t_d, n3};
  if (table.point.shape() != grid) {
    throw std::runtime_error("forecast grid " + duq::shape_to_string(table.point.shape()) +
                             " does not match the dataset grid " + duq::shape_to_string(grid));
  }
  if (ds.n2() - 2 < n3) {
    throw std::runtime_error("dataset has " + std::to_string(ds.n2() - 2) +
                             " forecast channels but " + std::to_string(n3) +
                             " objectives; no reference channel per objective");
  }

  duq::EvaluationInputs inputs;
  inputs.date_ids = ds.date_ids;
  inputs.truth = duq::Tensor(grid);
  inputs.nwp = duq::Tensor(grid);
  inputs.point = table.point;
  inputs.lower = table.lower;
  inputs.upper = table.upper;
  for (Index d = 0; d < d_count; ++d) {
    for (Index s = 0; s < s_count; ++s) {
      for (Index t = 0; t < t_d; ++t) {
        for (Index o = 0; o < n3; ++o) {
          inputs.truth(d, s, t, o) = duq::invert_range(ds.norm.targets[static_cast<std::size_t>(o)],
                                                       ds.targets(d, t, s, o));
          inputs.nwp(d, s, t, o) = duq::invert_range(ds.norm.nwp[static_cast<std::size_t>(o)],
                                                     ds.decoder(d, t, s, 2 + o));
        }
      }
    }
  }

  const duq::MetricsReport report = duq::build_report(inputs, table.z);
  fs::create_directories(common.out_dir);
  const std::string csv_path = join_path(common.out_dir, "report.csv");
  const std::string json_path = join_path(common.out_dir, "report.json");
  write_atomically(csv_path, [&](const std::string& p) { duq::write_report_csv(report, p); });
  write_atomically(json_path, [&](const std::string& p) { duq::write_report_json(report, p); });
  kv.write_resolved(join_path(common.out_dir, "resolved_config.txt"));

  std::cout << "rmse_avg = " << format_double(report.rmse_avg) << "\n"
            << "ss_avg = " << format_double(report.ss_avg) << "\n"
            << "picp_avg = " << format_double(report.picp_avg) << "\n"
            << "wrote " << csv_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"joint point and interval forecasting for multi-station weather series"};
  app.require_subcommand(1);

  CommonArgs synth_args;
  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic record CSV plus its truth");
  add_common(synth, synth_args);

  CommonArgs prep_args;
  CLI::App* preprocess =
      app.add_subcommand("preprocess", "records to normalized train/val/test tensors");
  add_common(preprocess, prep_args);

  CommonArgs train_args;
  std::string mask_flag;
  CLI::App* train = app.add_subcommand("train", "fit a model, keep the best snapshot");
  add_common(train, train_args);
  train->add_option("--mask", mask_flag, "zero an input block: nwp or obs");

  CommonArgs predict_args;
  std::vector<std::string> member_flags;
  CLI::App* predict = app.add_subcommand("predict", "write interval forecasts for a dataset");
  add_common(predict, predict_args);
  predict->add_option("--members", member_flags, "ensemble checkpoint paths")->expected(-1);

  CommonArgs eval_args;
  std::vector<std::string> ttest_paths;
  CLI::App* evaluate = app.add_subcommand("evaluate", "score forecasts, or compare two reports");
  add_common(evaluate, eval_args);
  evaluate->add_option("--ttest", ttest_paths, "two report CSVs to compare")->expected(2);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (synth->parsed()) return cmd_synth(synth, synth_args);
    if (preprocess->parsed()) return cmd_preprocess(preprocess, prep_args);
    if (train->parsed()) return cmd_train(train, train_args, mask_flag);
    if (predict->parsed()) return cmd_predict(predict, predict_args, member_flags);
    if (evaluate->parsed()) return cmd_evaluate(evaluate, eval_args, ttest_paths);
  } catch (const UsageError& e) {
    std::cerr << "duq: " << e.what() << "\n";
    return 1;
  } catch (const duq::TrainingDiverged& e) {
    std::cerr << "duq: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "duq: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
