// SPDX-License-Identifier: Apache-2.0

#include "duq/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace duq {

namespace {

constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  for (char ch : line) {
    if (ch == ',') {
      cells.push_back(cell);
      cell.clear();
    } else if (ch != '\r') {
      cell.push_back(ch);
    }
  }
  cells.push_back(cell);
  return cells;
}

[[noreturn]] void reject_line(std::size_t line_no, const std::string& why) {
  throw std::invalid_argument("load_records: line " + std::to_string(line_no) + ": " + why);
}

double parse_cell(const std::string& cell, std::size_t line_no) {
  if (cell.empty()) return kMissing;
  std::size_t used = 0;
  double value = 0.0;
  try {
    value = std::stod(cell, &used);
  } catch (const std::exception&) {
    reject_line(line_no, "not a number: '" + cell + "'");
  }
  if (used != cell.size()) reject_line(line_no, "trailing characters in '" + cell + "'");
  return value;
}

Index parse_int_cell(const std::string& cell, std::size_t line_no, const char* what) {
  const double v = parse_cell(cell, line_no);
  if (std::isnan(v) || v != std::floor(v)) {
    reject_line(line_no, std::string(what) + " must be an integer, got '" + cell + "'");
  }
  return static_cast<Index>(v);
}

std::string format_cell(double value) {
  if (std::isnan(value)) return "";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  return buf;
}

bool series_all_missing(const Tensor& block, Index channel) {
  for (Index t = 0; t < block.extent(0); ++t) {
    if (!std::isnan(block(t, channel))) return false;
  }
  return true;
}

void check_channel_count(std::size_t have, std::size_t want, const char* what) {
  if (have != want) {
    throw std::invalid_argument(std::string("apply_normalizer: spec covers ") +
                                std::to_string(have) + " " + what + " channels, records have " +
                                std::to_string(want));
  }
}

void update_ranges(std::vector<FeatureRange>& ranges, const Tensor& block) {
  for (Index c = 0; c < block.extent(1); ++c) {
    auto& r = ranges[static_cast<std::size_t>(c)];
    for (Index t = 0; t < block.extent(0); ++t) {
      const double v = block(t, c);
      if (std::isnan(v)) continue;
      r.min = std::min(r.min, v);
      r.max = std::max(r.max, v);
    }
  }
}

void normalize_block(const std::vector<FeatureRange>& ranges, Tensor& block) {
  for (Index c = 0; c < block.extent(1); ++c) {
    const FeatureRange& r = ranges[static_cast<std::size_t>(c)];
    for (Index t = 0; t < block.extent(0); ++t) {
      double& v = block(t, c);
      if (!std::isnan(v)) v = apply_range(r, v);
    }
  }
}

}  // namespace

StationRecords load_records(const std::string& path, const CsvSchema& schema) {
  if (schema.num_stations < 1 || schema.t_e < 1 || schema.t_d < 1 || schema.n1 < 1 ||
      schema.nwp_width < 0 || schema.n3 < 1) {
    throw std::invalid_argument("load_records: invalid schema");
  }
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("load_records: cannot open '" + path + "'");

  const Index feature_cols = std::max(schema.n1, schema.nwp_width);
  const std::size_t want_cols = static_cast<std::size_t>(4 + feature_cols + schema.n3);

  std::string line;
  if (!std::getline(in, line)) {
    throw std::invalid_argument("load_records: '" + path + "' is empty");
  }
  if (split_csv_line(line).size() != want_cols ||
      line.rfind("date_idx,station_id,hour_idx,role", 0) != 0) {
    throw std::invalid_argument("load_records: unexpected header in '" + path + "'");
  }

  // date label -> per-station blocks, filled as rows arrive.
  struct DayBlocks {
    std::vector<Tensor> obs, nwp, targets;
    std::vector<char> seen_obs, seen_fcst;  // per station x hour
  };
  std::map<Index, DayBlocks> days;

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != want_cols) {
      reject_line(line_no, "expected " + std::to_string(want_cols) + " columns, got " +
                               std::to_string(cells.size()));
    }
    const Index date = parse_int_cell(cells[0], line_no, "date_idx");
    const Index station = parse_int_cell(cells[1], line_no, "station_id");
    if (station < 0 || station >= schema.num_stations) {
      reject_line(line_no, "unknown station id " + std::to_string(station));
    }
    const Index hour = parse_int_cell(cells[2], line_no, "hour_idx");
    const std::string& role = cells[3];
    const bool is_obs = role == "obs";
    if (!is_obs && role != "fcst") reject_line(line_no, "role must be obs or fcst, got '" + role + "'");
    const Index grid = is_obs ? schema.t_e : schema.t_d;
    if (hour < 0 || hour >= grid) {
      reject_line(line_no, "hour_idx " + std::to_string(hour) + " outside [0, " +
                               std::to_string(grid) + ") for role " + role);
    }

    auto [it, created] = days.try_emplace(date);
    DayBlocks& day = it->second;
    if (created) {
      const std::size_t s = static_cast<std::size_t>(schema.num_stations);
      day.obs.assign(s, Tensor::full({schema.t_e, schema.n1}, kMissing));
      day.nwp.assign(s, Tensor::full({schema.t_d, schema.nwp_width}, kMissing));
      day.targets.assign(s, Tensor::full({schema.t_d, schema.n3}, kMissing));
      day.seen_obs.assign(s * static_cast<std::size_t>(schema.t_e), 0);
      day.seen_fcst.assign(s * static_cast<std::size_t>(schema.t_d), 0);
    }

    auto& seen = is_obs ? day.seen_obs : day.seen_fcst;
    char& mark = seen[static_cast<std::size_t>(station * grid + hour)];
    if (mark) {
      reject_line(line_no, "duplicate row for date " + std::to_string(date) + ", station " +
                               std::to_string(station) + ", role " + role + ", hour " +
                               std::to_string(hour));
    }
    mark = 1;

    const Index active = is_obs ? schema.n1 : schema.nwp_width;
    for (Index f = 0; f < feature_cols; ++f) {
      const std::string& cell = cells[static_cast<std::size_t>(4 + f)];
      if (f >= active) {
        if (!cell.empty()) reject_line(line_no, "unused feature column f" + std::to_string(f + 1) + " must be empty");
        continue;
      }
      const double v = parse_cell(cell, line_no);
      if (is_obs) {
        day.obs[static_cast<std::size_t>(station)](hour, f) = v;
      } else {
        day.nwp[static_cast<std::size_t>(station)](hour, f) = v;
      }
    }
    for (Index k = 0; k < schema.n3; ++k) {
      const std::string& cell = cells[static_cast<std::size_t>(4 + feature_cols + k)];
      if (is_obs) {
        if (!cell.empty()) reject_line(line_no, "target cells must be empty on obs rows");
      } else {
        day.targets[static_cast<std::size_t>(station)](hour, k) = parse_cell(cell, line_no);
      }
    }
  }
  if (days.empty()) throw std::invalid_argument("load_records: no data rows in '" + path + "'");

  StationRecords out;
  out.num_stations = schema.num_stations;
  out.t_e = schema.t_e;
  out.t_d = schema.t_d;
  out.n1 = schema.n1;
  out.nwp_width = schema.nwp_width;
  out.n3 = schema.n3;
  for (auto& [date, day] : days) {
    for (Index s = 0; s < schema.num_stations; ++s) {
      for (Index h = 0; h < schema.t_e; ++h) {
        if (!day.seen_obs[static_cast<std::size_t>(s * schema.t_e + h)]) {
          throw std::invalid_argument("load_records: date " + std::to_string(date) +
                                      " station " + std::to_string(s) +
                                      " is missing obs hour " + std::to_string(h));
        }
      }
      for (Index h = 0; h < schema.t_d; ++h) {
        if (!day.seen_fcst[static_cast<std::size_t>(s * schema.t_d + h)]) {
          throw std::invalid_argument("load_records: date " + std::to_string(date) +
                                      " station " + std::to_string(s) +
                                      " is missing fcst hour " + std::to_string(h));
        }
      }
    }
    out.date_ids.push_back(date);
    for (auto& t : day.obs) out.obs.push_back(std::move(t));
    for (auto& t : day.nwp) out.nwp.push_back(std::move(t));
    for (auto& t : day.targets) out.targets.push_back(std::move(t));
  }
  return out;
}

void save_records(const StationRecords& records, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::invalid_argument("save_records: cannot open '" + path + "' for writing");
  const Index feature_cols = std::max(records.n1, records.nwp_width);
  out << "date_idx,station_id,hour_idx,role";
  for (Index f = 0; f < feature_cols; ++f) out << ",f" << (f + 1);
  for (Index k = 0; k < records.n3; ++k) out << ",t" << (k + 1);
  out << "\n";
  for (Index i = 0; i < records.dates(); ++i) {
    const Index date = records.date_ids[static_cast<std::size_t>(i)];
    for (Index s = 0; s < records.num_stations; ++s) {
      const Tensor& obs = records.obs_at(i, s);
      for (Index h = 0; h < records.t_e; ++h) {
        out << date << ',' << s << ',' << h << ",obs";
        for (Index f = 0; f < feature_cols; ++f) {
          out << ',' << (f < records.n1 ? format_cell(obs(h, f)) : "");
        }
        for (Index k = 0; k < records.n3; ++k) out << ',';
        out << "\n";
      }
      const Tensor& nwp = records.nwp_at(i, s);
      const Tensor& tgt = records.targets_at(i, s);
      for (Index h = 0; h < records.t_d; ++h) {
        out << date << ',' << s << ',' << h << ",fcst";
        for (Index f = 0; f < feature_cols; ++f) {
          out << ',' << (f < records.nwp_width ? format_cell(nwp(h, f)) : "");
        }
        for (Index k = 0; k < records.n3; ++k) out << ',' << format_cell(tgt(h, k));
        out << "\n";
      }
    }
  }
  if (!out) throw std::runtime_error("save_records: write to '" + path + "' failed");
}

StationRecords drop_block_missing(const StationRecords& records) {
  std::vector<Index> keep;
  for (Index i = 0; i < records.dates(); ++i) {
    bool unrepairable = false;
    for (Index s = 0; s < records.num_stations && !unrepairable; ++s) {
      const Tensor& obs = records.obs_at(i, s);
      for (Index c = 0; c < records.n1 && !unrepairable; ++c) {
        unrepairable = series_all_missing(obs, c);
      }
      const Tensor& nwp = records.nwp_at(i, s);
      for (Index c = 0; c < records.nwp_width && !unrepairable; ++c) {
        unrepairable = series_all_missing(nwp, c);
      }
      const Tensor& tgt = records.targets_at(i, s);
      for (Index c = 0; c < records.n3 && !unrepairable; ++c) {
        unrepairable = series_all_missing(tgt, c);
      }
    }
    if (!unrepairable) keep.push_back(i);
  }
  return subset_dates(records, keep);
}

std::vector<double> interpolate_local_missing(std::vector<double> series) {
  const std::size_t n = series.size();
  std::vector<std::size_t> present;
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isnan(series[i])) present.push_back(i);
  }
  if (present.empty()) {
    throw std::invalid_argument("interpolate_local_missing: series is entirely missing");
  }
  // Hold edges, interpolate interior gaps.
  for (std::size_t i = 0; i < present.front(); ++i) series[i] = series[present.front()];
  for (std::size_t i = present.back() + 1; i < n; ++i) series[i] = series[present.back()];
  for (std::size_t k = 0; k + 1 < present.size(); ++k) {
    const std::size_t lo = present[k];
    const std::size_t hi = present[k + 1];
    const double span = static_cast<double>(hi - lo);
    for (std::size_t i = lo + 1; i < hi; ++i) {
      const double w = static_cast<double>(i - lo) / span;
      series[i] = series[lo] * (1.0 - w) + series[hi] * w;
    }
  }
  return series;
}

void repair_missing(StationRecords& records) {
  auto repair_block = [](Tensor& block) {
    for (Index c = 0; c < block.extent(1); ++c) {
      bool any = false;
      for (Index t = 0; t < block.extent(0); ++t) any = any || std::isnan(block(t, c));
      if (!any) continue;
      std::vector<double> series(static_cast<std::size_t>(block.extent(0)));
      for (Index t = 0; t < block.extent(0); ++t) series[static_cast<std::size_t>(t)] = block(t, c);
      series = interpolate_local_missing(std::move(series));
      for (Index t = 0; t < block.extent(0); ++t) block(t, c) = series[static_cast<std::size_t>(t)];
    }
  };
  for (auto& t : records.obs) repair_block(t);
  for (auto& t : records.nwp) repair_block(t);
  for (auto& t : records.targets) repair_block(t);
}

double apply_range(const FeatureRange& range, double value) {
  if (range.constant) return 0.0;
  return (value - range.min) / (range.max - range.min);
}

double invert_range(const FeatureRange& range, double value) {
  if (range.constant) return range.min;
  return range.min + value * (range.max - range.min);
}

NormalizationSpec fit_normalizer(const StationRecords& train) {
  if (train.dates() == 0) throw std::invalid_argument("fit_normalizer: no training dates");
  NormalizationSpec spec;
  const double inf = std::numeric_limits<double>::infinity();
  spec.obs.assign(static_cast<std::size_t>(train.n1), FeatureRange{inf, -inf, false});
  spec.nwp.assign(static_cast<std::size_t>(train.nwp_width), FeatureRange{inf, -inf, false});
  spec.targets.assign(static_cast<std::size_t>(train.n3), FeatureRange{inf, -inf, false});
  for (const auto& t : train.obs) update_ranges(spec.obs, t);
  for (const auto& t : train.nwp) update_ranges(spec.nwp, t);
  for (const auto& t : train.targets) update_ranges(spec.targets, t);
  auto finish = [](std::vector<FeatureRange>& ranges, const char* what) {
    for (std::size_t c = 0; c < ranges.size(); ++c) {
      auto& r = ranges[c];
      if (r.min > r.max) {
        throw std::invalid_argument(std::string("fit_normalizer: ") + what + " channel " +
                                    std::to_string(c) + " has no present values");
      }
      r.constant = r.min == r.max;
    }
  };
  finish(spec.obs, "obs");
  finish(spec.nwp, "nwp");
  finish(spec.targets, "target");
  return spec;
}

StationRecords apply_normalizer(const NormalizationSpec& spec, const StationRecords& records) {
  check_channel_count(spec.obs.size(), static_cast<std::size_t>(records.n1), "obs");
  check_channel_count(spec.nwp.size(), static_cast<std::size_t>(records.nwp_width), "nwp");
  check_channel_count(spec.targets.size(), static_cast<std::size_t>(records.n3), "target");
  StationRecords out = records;
  for (auto& t : out.obs) normalize_block(spec.obs, t);
  for (auto& t : out.nwp) normalize_block(spec.nwp, t);
  for (auto& t : out.targets) normalize_block(spec.targets, t);
  return out;
}

Tensor invert_targets(const NormalizationSpec& spec, const Tensor& values) {
  if (values.rank() != 2 || values.extent(1) != static_cast<Index>(spec.targets.size())) {
    throw std::invalid_argument("invert_targets: shape " + shape_to_string(values.shape()) +
                                " does not match " + std::to_string(spec.targets.size()) +
                                " target channels");
  }
  Tensor out = values;
  for (Index r = 0; r < out.extent(0); ++r) {
    for (Index c = 0; c < out.extent(1); ++c) {
      out(r, c) = invert_range(spec.targets[static_cast<std::size_t>(c)], out(r, c));
    }
  }
  return out;
}

StationRecords subset_dates(const StationRecords& records, const std::vector<Index>& positions) {
  StationRecords out;
  out.num_stations = records.num_stations;
  out.t_e = records.t_e;
  out.t_d = records.t_d;
  out.n1 = records.n1;
  out.nwp_width = records.nwp_width;
  out.n3 = records.n3;
  for (Index i : positions) {
    if (i < 0 || i >= records.dates()) {
      throw std::invalid_argument("subset_dates: position " + std::to_string(i) + " out of range");
    }
    out.date_ids.push_back(records.date_ids[static_cast<std::size_t>(i)]);
    for (Index s = 0; s < records.num_stations; ++s) {
      out.obs.push_back(records.obs_at(i, s));
      out.nwp.push_back(records.nwp_at(i, s));
      out.targets.push_back(records.targets_at(i, s));
    }
  }
  return out;
}

DatasetTensors build_tensors(const StationRecords& records, const NormalizationSpec& spec,
                             Index t_e, Index t_d) {
  if (records.t_e != t_e || records.t_d != t_d) {
    throw std::invalid_argument("build_tensors: records grid (" + std::to_string(records.t_e) +
                                ", " + std::to_string(records.t_d) + ") does not match requested (" +
                                std::to_string(t_e) + ", " + std::to_string(t_d) + ")");
  }
  const Index i_count = records.dates();
  const Index s_count = records.num_stations;
  if (i_count == 0) throw std::invalid_argument("build_tensors: no dates");

  DatasetTensors out;
  out.norm = spec;
  out.date_ids = records.date_ids;
  out.encoder = Tensor({i_count, t_e, s_count, records.n1});
  out.decoder = Tensor({i_count, t_d, s_count, 2 + records.nwp_width});
  out.targets = Tensor({i_count, t_d, s_count, records.n3});

  for (Index i = 0; i < i_count; ++i) {
    for (Index s = 0; s < s_count; ++s) {
      const Tensor& obs = records.obs_at(i, s);
      const Tensor& nwp = records.nwp_at(i, s);
      const Tensor& tgt = records.targets_at(i, s);
      if (!obs.all_finite() || !nwp.all_finite() || !tgt.all_finite()) {
        throw std::invalid_argument("build_tensors: date " +
                                    std::to_string(records.date_ids[static_cast<std::size_t>(i)]) +
                                    " still has missing cells");
      }
      for (Index t = 0; t < t_e; ++t) {
        for (Index c = 0; c < records.n1; ++c) out.encoder(i, t, s, c) = obs(t, c);
      }
      for (Index t = 0; t < t_d; ++t) {
        out.decoder(i, t, s, 0) = static_cast<double>(t);
        out.decoder(i, t, s, 1) = static_cast<double>(s);
        for (Index c = 0; c < records.nwp_width; ++c) out.decoder(i, t, s, 2 + c) = nwp(t, c);
        for (Index c = 0; c < records.n3; ++c) out.targets(i, t, s, c) = tgt(t, c);
      }
    }
  }
  return out;
}

Sample extract_sample(const DatasetTensors& tensors, Index i, Index s) {
  if (i < 0 || i >= tensors.dates() || s < 0 || s >= tensors.stations()) {
    throw std::invalid_argument("extract_sample: (" + std::to_string(i) + ", " +
                                std::to_string(s) + ") outside (" +
                                std::to_string(tensors.dates()) + ", " +
                                std::to_string(tensors.stations()) + ")");
  }
  Sample out;
  out.date_idx = i;
  out.station = s;
  out.encoder_input = Tensor({tensors.t_e(), tensors.n1()});
  for (Index t = 0; t < tensors.t_e(); ++t) {
    for (Index c = 0; c < tensors.n1(); ++c) out.encoder_input(t, c) = tensors.encoder(i, t, s, c);
  }
  out.decoder_input = Tensor({tensors.t_d(), tensors.n2()});
  out.target = Tensor({tensors.t_d(), tensors.n3()});
  for (Index t = 0; t < tensors.t_d(); ++t) {
    for (Index c = 0; c < tensors.n2(); ++c) out.decoder_input(t, c) = tensors.decoder(i, t, s, c);
    for (Index c = 0; c < tensors.n3(); ++c) out.target(t, c) = tensors.targets(i, t, s, c);
  }
  return out;
}

std::vector<Sample> sample_batch(const DatasetTensors& tensors, Index batch_size, Rng& rng) {
  if (batch_size < 1) throw std::invalid_argument("sample_batch: batch_size must be at least 1");
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(batch_size));
  for (Index k = 0; k < batch_size; ++k) {
    const Index i = static_cast<Index>(rng.below(static_cast<std::uint64_t>(tensors.dates())));
    const Index s = static_cast<Index>(rng.below(static_cast<std::uint64_t>(tensors.stations())));
    out.push_back(extract_sample(tensors, i, s));
  }
  return out;
}

DatasetTensors mask_channel(const DatasetTensors& tensors, MaskTarget which) {
  DatasetTensors out = tensors;
  if (which == MaskTarget::kObservations) {
    out.encoder.array() = 0.0;
    return out;
  }
  for (Index i = 0; i < out.dates(); ++i) {
    for (Index t = 0; t < out.t_d(); ++t) {
      for (Index s = 0; s < out.stations(); ++s) {
        for (Index c = 2; c < out.n2(); ++c) out.decoder(i, t, s, c) = 0.0;
      }
    }
  }
  return out;
}

SplitIndices split_by_date(Index dates, double train_frac, double val_frac) {
  if (dates < 1) throw std::invalid_argument("split_by_date: no dates");
  if (train_frac < 0.0 || val_frac < 0.0 || train_frac + val_frac > 1.0) {
    throw std::invalid_argument("split_by_date: fractions must be non-negative and sum to <= 1");
  }
  const Index n_train = static_cast<Index>(std::floor(static_cast<double>(dates) * train_frac));
  const Index n_val = static_cast<Index>(std::floor(static_cast<double>(dates) * val_frac));
  SplitIndices out;
  for (Index i = 0; i < n_train; ++i) out.train.push_back(i);
  for (Index i = n_train; i < n_train + n_val; ++i) out.val.push_back(i);
  for (Index i = n_train + n_val; i < dates; ++i) out.test.push_back(i);
  return out;
}

}  // namespace duq
