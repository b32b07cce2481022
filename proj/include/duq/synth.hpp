// SPDX-License-Identifier: Apache-2.0
//
// Deterministic generator for multi-station series with a known conditional
// mean and a known time-varying noise level, plus simulated forecast
// channels. The generative law keeps two partially exclusive information
// sources: a per-day level shift that only the observation history reveals,
// and a smooth horizon-window event that only the forecast channels carry.
// Calibration and fusion behavior can therefore be checked against ground
// truth.

#pragma once

#include "duq/data.hpp"
#include "duq/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace duq {

struct SynthConfig {
  Index dates = 400;
  Index stations = 4;
  Index t_e = 16;
  Index t_d = 12;
  Index n1 = 3;
  Index nwp_width = 3;
  Index n3 = 3;
  double seasonal_amp = 1.0;  // yearly cycle over the date index
  double daily_amp = 1.0;     // 24-hour cycle over the hour grid
  double station_offset_scale = 0.5;
  double sigma_base = 0.6;  // noise level sigma(t) = base + amp * |sin(2*pi*t/24)|
  double sigma_amp = 0.8;
  double day_shift_scale = 0.7;  // per-day level shift, absent from forecast channels
  double event_scale = 0.7;      // horizon-window bump, absent from the history window
  Index event_grid_hours = 6;    // knot spacing of the piecewise-linear event
  double obs_noise = 0.2;
  double nwp_bias = 0.3;
  double nwp_noise = 0.1;
  std::uint64_t seed = 0;
};

void validate(const SynthConfig& config);

/// Ground truth alongside the observable dataset: the conditional mean of
/// every target cell, the noise level per horizon step, and the recorded
/// standard normal draws, so target == mu + sigma(t) * epsilon holds exactly.
struct SynthTruth {
  std::vector<Index> date_ids;
  Tensor mu;       // (I, T_D, S, N3)
  Tensor sigma;    // (T_D)
  Tensor epsilon;  // (I, T_D, S, N3); empty when read back from disk
};

struct SynthResult {
  StationRecords records;
  SynthTruth truth;
};

SynthResult generate(const SynthConfig& config);

/// Copy with observation cells blanked: whole station-days at block_rate,
/// isolated cells at local_rate. Rates must lie in [0, 1).
StationRecords inject_missing(const StationRecords& records, double block_rate, double local_rate,
                              std::uint64_t seed);

/// Sidecar with one row per target cell:
/// date_idx,station_id,step,target,mu_star,sigma_star
void save_truth(const SynthTruth& truth, const std::string& path);
SynthTruth load_truth(const std::string& path);

}  // namespace duq
