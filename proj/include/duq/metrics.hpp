// SPDX-License-Identifier: Apache-2.0
//
// Forecast verification: per-day per-objective RMSE, skill score against
// the numerical forecast, prediction interval coverage, the one-tail
// paired t-test, and the assembled per-day report with its aggregates.

#pragma once

#include "duq/tensor.hpp"

#include <string>
#include <vector>

namespace duq {

/// Root mean squared residual pooled over all cells of two equally shaped
/// grids (stations x timesteps for one objective on one day).
double rmse_obj(const Tensor& y, const Tensor& yhat);

/// 1 - rmse_ml / rmse_nwp. Positive means the model beats the numerical
/// forecast. A zero denominator is rejected.
double ss_obj(double rmse_ml, double rmse_nwp);

/// Mean skill score over the objectives of one day.
double ss_day(const std::vector<double>& ss_values);

/// Fraction of cells whose truth lies inside the closed interval
/// [lower, upper]. Any inverted interval is rejected.
double picp_obj(const Tensor& y, const Tensor& lower, const Tensor& upper);

struct TTestResult {
  double t_stat = 0.0;
  double p_value = 0.0;
};

/// Classic paired t statistic on a - b with n-1 degrees of freedom and the
/// upper one-tail p-value: small p supports mean(a - b) > 0. Fewer than
/// two pairs or zero-variance differences are rejected.
TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b);

/// Student-t CDF via the regularized incomplete beta function.
double student_t_cdf(double t, double dof);

/// Everything build_report needs, aligned cell-by-cell as
/// (day, station, step, objective).
struct EvaluationInputs {
  std::vector<Index> date_ids;  // day labels, length D
  Tensor truth;                 // (D, S, T_D, N3), physical units
  Tensor point;                 // model point forecast
  Tensor lower;                 // interval bounds
  Tensor upper;
  Tensor nwp;                   // numerical point forecast per objective
};

struct DayMetrics {
  Index date_id = 0;
  std::vector<double> rmse;  // per objective
  double rmse_day = 0.0;     // mean of the per-objective rmses
  std::vector<double> ss;
  double ss_day = 0.0;
  std::vector<double> picp;
};

struct MetricsReport {
  std::vector<DayMetrics> days;
  std::vector<double> rmse_avg_obj;  // per-objective means over days
  std::vector<double> ss_avg_obj;
  std::vector<double> picp_avg_obj;
  double rmse_avg = 0.0;  // mean of rmse_day over days
  double ss_avg = 0.0;
  double picp_avg = 0.0;
  double z = 0.0;
  Index stations = 0;
  Index day_count = 0;
};

MetricsReport build_report(const EvaluationInputs& inputs, double z);

/// One row per day per objective: date_idx, objective, rmse, ss, picp.
void write_report_csv(const MetricsReport& report, const std::string& path);

/// Aggregates plus metadata as a single JSON object.
void write_report_json(const MetricsReport& report, const std::string& path);

}  // namespace duq
