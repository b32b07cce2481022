// SPDX-License-Identifier: Apache-2.0
//
// Prediction in physical units: the forward pass runs in normalized space,
// the symmetric (1-z) Gaussian interval is formed there, and the point and
// both bounds are de-normalized per target. Ensembles average member means;
// how member variances combine is selectable and recorded in the output.

#pragma once

#include "duq/data.hpp"
#include "duq/model.hpp"
#include "duq/tensor.hpp"

#include <string>
#include <vector>

namespace duq {

/// Two-sided standard normal quantile: Phi^-1(1 - z/2) for z in (0, 1).
double lambda_from_z(double z);

struct PredictionInterval {
  Tensor point;  // (T_D, N3), physical units
  Tensor lower;
  Tensor upper;
  Tensor sigma;  // predicted standard deviation, physical units
  double z = 0.0;
  double lambda = 0.0;
};

PredictionInterval predict(const ModelParams& params, const Sample& sample, double z,
                           const NormalizationSpec& spec);

/// kMeanVariance averages member variances; kMixture adds the spread of
/// member means (the total variance of the equal-weight mixture).
enum class EnsembleVariance { kMeanVariance, kMixture };

std::string to_string(EnsembleVariance mode);

PredictionInterval ensemble_predict(const std::vector<const ModelParams*>& members,
                                    const Sample& sample, double z, const NormalizationSpec& spec,
                                    EnsembleVariance mode = EnsembleVariance::kMeanVariance);

/// Forecast grids for an evaluation span, axes (date, station, step,
/// target), physical units throughout.
struct ForecastTable {
  std::vector<Index> date_ids;
  Tensor point;  // (D, S, T_D, N3)
  Tensor lower;
  Tensor upper;
  Tensor sigma;
  double z = 0.0;
  double lambda = 0.0;
  std::string variance_mode = "mean";
  Index members = 1;
};

/// CSV: a '#' metadata line, a header, then one row per cell:
/// date_idx,station_id,step,target,point,lower,upper,sigma
void save_forecasts(const ForecastTable& table, const std::string& path);
ForecastTable load_forecasts(const std::string& path);

}  // namespace duq
