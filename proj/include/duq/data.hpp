// SPDX-License-Identifier: Apache-2.0
//
// Ingestion and preparation of per-station weather series: CSV load/save,
// whole-day drop of block-missing data, linear repair of scattered gaps,
// min-max normalization fitted on the training span, assembly into the
// four-axis dataset tensors, and the with-replacement batch sampler.

#pragma once

#include "duq/rng.hpp"
#include "duq/sample.hpp"
#include "duq/tensor.hpp"

#include <string>
#include <vector>

namespace duq {

/// Column layout of the record CSV. One row per date x station x hour,
/// role "obs" rows carry the observed channels over the history grid,
/// role "fcst" rows carry the forecast channels and truth targets over
/// the horizon grid. Empty cells mean missing.
struct CsvSchema {
  Index num_stations = 1;
  Index t_e = 1;
  Index t_d = 1;
  Index n1 = 1;
  Index nwp_width = 0;
  Index n3 = 1;
};

/// Dense per-day blocks for every (date, station); NaN marks missing.
/// Dates keep their original labels; positions are always dense.
struct StationRecords {
  Index num_stations = 0;
  Index t_e = 0;
  Index t_d = 0;
  Index n1 = 0;
  Index nwp_width = 0;
  Index n3 = 0;
  std::vector<Index> date_ids;  // ascending original labels
  std::vector<Tensor> obs;      // (T_E, N1) per date*S + station
  std::vector<Tensor> nwp;      // (T_D, nwp_width)
  std::vector<Tensor> targets;  // (T_D, N3)

  Index dates() const { return static_cast<Index>(date_ids.size()); }
  Index block(Index date, Index station) const { return date * num_stations + station; }
  Tensor& obs_at(Index date, Index station) {
    return obs[static_cast<std::size_t>(block(date, station))];
  }
  const Tensor& obs_at(Index date, Index station) const {
    return obs[static_cast<std::size_t>(block(date, station))];
  }
  Tensor& nwp_at(Index date, Index station) {
    return nwp[static_cast<std::size_t>(block(date, station))];
  }
  const Tensor& nwp_at(Index date, Index station) const {
    return nwp[static_cast<std::size_t>(block(date, station))];
  }
  Tensor& targets_at(Index date, Index station) {
    return targets[static_cast<std::size_t>(block(date, station))];
  }
  const Tensor& targets_at(Index date, Index station) const {
    return targets[static_cast<std::size_t>(block(date, station))];
  }
};

StationRecords load_records(const std::string& path, const CsvSchema& schema);
void save_records(const StationRecords& records, const std::string& path);

/// Removes every date on which any station has a completely missing
/// channel series in any block (observations, forecasts, or targets);
/// such series would be unrepairable by interpolation. Surviving dates
/// keep their labels and are re-packed densely.
StationRecords drop_block_missing(const StationRecords& records);

/// Fills NaN gaps by linear interpolation between the nearest present
/// neighbors; leading/trailing gaps hold the nearest present value.
/// An all-missing series is rejected.
std::vector<double> interpolate_local_missing(std::vector<double> series);

/// Applies interpolate_local_missing to every per-day channel series.
void repair_missing(StationRecords& records);

struct FeatureRange {
  double min = 0.0;
  double max = 0.0;
  bool constant = false;
};

double apply_range(const FeatureRange& range, double value);
double invert_range(const FeatureRange& range, double value);

/// Per-channel (min, max) for observed, forecast, and target channels,
/// fitted on training data only.
struct NormalizationSpec {
  std::vector<FeatureRange> obs;
  std::vector<FeatureRange> nwp;
  std::vector<FeatureRange> targets;
};

NormalizationSpec fit_normalizer(const StationRecords& train);

/// Normalized copy: x -> (x - min) / (max - min), constants -> 0.
/// Values outside the fitted range map outside [0, 1]; nothing clips.
StationRecords apply_normalizer(const NormalizationSpec& spec, const StationRecords& records);

/// Undoes target normalization on (rows, N3) values.
Tensor invert_targets(const NormalizationSpec& spec, const Tensor& values);

/// Records restricted to the given date positions (for fitting on a split).
StationRecords subset_dates(const StationRecords& records, const std::vector<Index>& positions);

/// The assembled dataset. Decoder channel order is [TimeID, StaID, nwp...].
struct DatasetTensors {
  Tensor encoder;  // (I, T_E, S, N1)
  Tensor decoder;  // (I, T_D, S, 2 + nwp_width)
  Tensor targets;  // (I, T_D, S, N3)
  NormalizationSpec norm;
  std::vector<Index> date_ids;

  Index dates() const { return encoder.extent(0); }
  Index stations() const { return encoder.extent(2); }
  Index t_e() const { return encoder.extent(1); }
  Index t_d() const { return decoder.extent(1); }
  Index n1() const { return encoder.extent(3); }
  Index n2() const { return decoder.extent(3); }
  Index n3() const { return targets.extent(3); }
};

/// Rejects records that still contain missing cells (naming the date) or
/// whose grid does not match the requested lengths.
DatasetTensors build_tensors(const StationRecords& records, const NormalizationSpec& spec,
                             Index t_e, Index t_d);

/// Verbatim slice of the tensors at (date position i, station s).
Sample extract_sample(const DatasetTensors& tensors, Index i, Index s);

/// batch_size independent (i, s) draws with replacement.
std::vector<Sample> sample_batch(const DatasetTensors& tensors, Index batch_size, Rng& rng);

enum class MaskTarget { kNwp, kObservations };

/// Copy with the forecast channels of the decoder inputs, or the whole
/// encoder block, zeroed. Id columns are never touched.
DatasetTensors mask_channel(const DatasetTensors& tensors, MaskTarget which);

/// Chronological date split: first train_frac, then val_frac, rest test.
struct SplitIndices {
  std::vector<Index> train;
  std::vector<Index> val;
  std::vector<Index> test;
};
SplitIndices split_by_date(Index dates, double train_frac, double val_frac);

}  // namespace duq
