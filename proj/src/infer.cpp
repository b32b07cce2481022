// SPDX-License-Identifier: Apache-2.0

#include "duq/infer.hpp"

#include "duq/serialize.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

namespace duq {

namespace {

// Acklam's rational approximation of the standard normal quantile,
// sharpened by one Halley step through erfc.
double inverse_normal_cdf(double p) {
  constexpr double a[6] = {-3.969683028665376e+01, 2.209460984245205e+02,
                           -2.759285104469687e+02, 1.383577518672690e+02,
                           -3.066479806614716e+01, 2.506628277459239e+00};
  constexpr double b[5] = {-5.447609879822406e+01, 1.615858368580409e+02,
                           -1.556989798598866e+02, 6.680131188771972e+01,
                           -1.328068155288572e+01};
  constexpr double c[6] = {-7.784894002430293e-03, -3.223964580411365e-01,
                           -2.400758277161838e+00, -2.549732539343734e+00,
                           4.374664141464968e+00,  2.938163982698783e+00};
  constexpr double d[4] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                           3.754408661907416e+00};
  constexpr double p_low = 0.02425;

  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double err = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
  const double u = err * std::sqrt(2.0 * 3.14159265358979323846) * std::exp(x * x / 2.0);
  return x - u / (1.0 + x * u / 2.0);
}

/// Interval construction shared by single and ensemble prediction: bounds
/// in normalized space, then every grid de-normalized per target.
PredictionInterval finish(const Tensor& mean, const Tensor& variance, double z, double lambda,
                          const NormalizationSpec& spec) {
  Tensor sigma_norm(variance.shape());
  for (Index i = 0; i < variance.size(); ++i) sigma_norm[i] = std::sqrt(variance[i]);

  Tensor lower_norm(mean.shape());
  Tensor upper_norm(mean.shape());
  for (Index i = 0; i < mean.size(); ++i) {
    lower_norm[i] = mean[i] - lambda * sigma_norm[i];
    upper_norm[i] = mean[i] + lambda * sigma_norm[i];
  }

  PredictionInterval out;
  out.z = z;
  out.lambda = lambda;
  out.point = invert_targets(spec, mean);
  out.lower = invert_targets(spec, lower_norm);
  out.upper = invert_targets(spec, upper_norm);
  out.sigma = Tensor(sigma_norm.shape());
  for (Index t = 0; t < sigma_norm.extent(0); ++t) {
    for (Index o = 0; o < sigma_norm.extent(1); ++o) {
      const FeatureRange& r = spec.targets[static_cast<std::size_t>(o)];
      const double span = r.constant ? 0.0 : r.max - r.min;
      out.sigma(t, o) = sigma_norm(t, o) * span;
    }
  }
  return out;
}

}  // namespace

double lambda_from_z(double z) {
  if (!(z > 0.0 && z < 1.0)) {
    throw std::invalid_argument("lambda_from_z: z must lie strictly inside (0, 1), got " +
                                std::to_string(z));
  }
  return inverse_normal_cdf(1.0 - z / 2.0);
}

PredictionInterval predict(const ModelParams& params, const Sample& sample, double z,
                           const NormalizationSpec& spec) {
  const double lambda = lambda_from_z(z);
  const ForecastDistribution f = forward(params, sample);
  return finish(f.mean, f.variance, z, lambda, spec);
}

std::string to_string(EnsembleVariance mode) {
  return mode == EnsembleVariance::kMeanVariance ? "mean" : "mixture";
}

PredictionInterval ensemble_predict(const std::vector<const ModelParams*>& members,
                                    const Sample& sample, double z, const NormalizationSpec& spec,
                                    EnsembleVariance mode) {
  if (members.empty()) throw std::invalid_argument("ensemble_predict: no members");
  const double lambda = lambda_from_z(z);
  const double count = static_cast<double>(members.size());

  std::vector<ForecastDistribution> fs;
  fs.reserve(members.size());
  for (const ModelParams* m : members) {
    fs.push_back(forward(*m, sample));
    if (!fs.back().mean.same_shape(fs.front().mean)) {
      throw std::invalid_argument("ensemble_predict: members disagree on (steps, targets)");
    }
  }

  Tensor mean = Tensor::zeros(fs.front().mean.shape());
  for (const ForecastDistribution& f : fs) mean.array() += f.mean.array();
  mean.array() /= count;

  Tensor variance = Tensor::zeros(mean.shape());
  if (mode == EnsembleVariance::kMeanVariance) {
    for (const ForecastDistribution& f : fs) variance.array() += f.variance.array();
    variance.array() /= count;
  } else {
    for (const ForecastDistribution& f : fs) {
      variance.array() += f.variance.array() + f.mean.array().square();
    }
    variance.array() /= count;
    variance.array() -= mean.array().square();
    // Guard the subtraction against cancellation just below zero.
    for (Index i = 0; i < variance.size(); ++i) variance[i] = std::max(variance[i], 0.0);
  }
  return finish(mean, variance, z, lambda, spec);
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void save_forecasts(const ForecastTable& table, const std::string& path) {
  const Tensor& point = table.point;
  if (point.rank() != 4 || !point.same_shape(table.lower) || !point.same_shape(table.upper) ||
      !point.same_shape(table.sigma)) {
    throw std::invalid_argument("save_forecasts: grids must share one (D, S, T, O) shape");
  }
  if (static_cast<Index>(table.date_ids.size()) != point.extent(0)) {
    throw std::invalid_argument("save_forecasts: date labels do not match the date extent");
  }
  std::ostringstream out;
  out << "# z=" << fmt(table.z) << " lambda=" << fmt(table.lambda) << " members=" << table.members
      << " variance=" << table.variance_mode << "\n";
  out << "date_idx,station_id,step,target,point,lower,upper,sigma\n";
  for (Index d = 0; d < point.extent(0); ++d) {
    for (Index s = 0; s < point.extent(1); ++s) {
      for (Index t = 0; t < point.extent(2); ++t) {
        for (Index o = 0; o < point.extent(3); ++o) {
          out << table.date_ids[static_cast<std::size_t>(d)] << ',' << s << ',' << t << ',' << o
              << ',' << fmt(point(d, s, t, o)) << ',' << fmt(table.lower(d, s, t, o)) << ','
              << fmt(table.upper(d, s, t, o)) << ',' << fmt(table.sigma(d, s, t, o)) << "\n";
        }
      }
    }
  }
  atomic_write_file(path, out.str());
}

ForecastTable load_forecasts(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("load_forecasts: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line.rfind("# ", 0) != 0) {
    throw std::invalid_argument("load_forecasts: '" + path + "' is missing the metadata line");
  }

  ForecastTable table;
  {
    std::stringstream meta(line.substr(2));
    std::string token;
    bool saw_z = false, saw_lambda = false;
    while (meta >> token) {
      const std::size_t eq = token.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = token.substr(0, eq);
      const std::string value = token.substr(eq + 1);
      try {
        if (key == "z") {
          table.z = std::stod(value);
          saw_z = true;
        } else if (key == "lambda") {
          table.lambda = std::stod(value);
          saw_lambda = true;
        } else if (key == "members") {
          table.members = static_cast<Index>(std::stoll(value));
        } else if (key == "variance") {
          table.variance_mode = value;
        }
      } catch (const std::exception&) {
        throw std::invalid_argument("load_forecasts: bad metadata token '" + token + "'");
      }
    }
    if (!saw_z || !saw_lambda) {
      throw std::invalid_argument("load_forecasts: metadata must carry z and lambda");
    }
  }

  if (!std::getline(in, line) ||
      line.rfind("date_idx,station_id,step,target,point,lower,upper,sigma", 0) != 0) {
    throw std::invalid_argument("load_forecasts: '" + path + "' has an unexpected header");
  }

  struct Row {
    Index station, step, target;
    double point, lower, upper, sigma;
  };
  std::map<Index, std::vector<Row>> by_date;
  Index max_station = -1, max_step = -1, max_target = -1;
  std::size_t line_no = 2;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 8) {
      throw std::invalid_argument("load_forecasts: line " + std::to_string(line_no) +
                                  ": expected 8 columns, got " + std::to_string(cells.size()));
    }
    Row r;
    Index date;
    try {
      date = static_cast<Index>(std::stoll(cells[0]));
      r.station = static_cast<Index>(std::stoll(cells[1]));
      r.step = static_cast<Index>(std::stoll(cells[2]));
      r.target = static_cast<Index>(std::stoll(cells[3]));
      r.point = std::stod(cells[4]);
      r.lower = std::stod(cells[5]);
      r.upper = std::stod(cells[6]);
      r.sigma = std::stod(cells[7]);
    } catch (const std::exception&) {
      throw std::invalid_argument("load_forecasts: line " + std::to_string(line_no) +
                                  ": unparseable cell");
    }
    if (r.station < 0 || r.step < 0 || r.target < 0) {
      throw std::invalid_argument("load_forecasts: line " + std::to_string(line_no) +
                                  ": negative index");
    }
    max_station = std::max(max_station, r.station);
    max_step = std::max(max_step, r.step);
    max_target = std::max(max_target, r.target);
    by_date[date].push_back(r);
  }
  if (by_date.empty()) throw std::invalid_argument("load_forecasts: '" + path + "' has no rows");

  const Index stations = max_station + 1;
  const Index steps = max_step + 1;
  const Index targets = max_target + 1;
  const Index dates = static_cast<Index>(by_date.size());
  const std::size_t per_date = static_cast<std::size_t>(stations) *
                               static_cast<std::size_t>(steps) * static_cast<std::size_t>(targets);

  const double unset = std::numeric_limits<double>::quiet_NaN();
  const Shape shape{dates, stations, steps, targets};
  table.point = Tensor::full(shape, unset);
  table.lower = Tensor::full(shape, unset);
  table.upper = Tensor::full(shape, unset);
  table.sigma = Tensor::full(shape, unset);
  Index d = 0;
  for (const auto& [date, rows] : by_date) {
    if (rows.size() != per_date) {
      throw std::invalid_argument("load_forecasts: date " + std::to_string(date) + " has " +
                                  std::to_string(rows.size()) + " rows, expected " +
                                  std::to_string(per_date));
    }
    table.date_ids.push_back(date);
    for (const Row& r : rows) {
      if (!std::isnan(table.point(d, r.station, r.step, r.target))) {
        throw std::invalid_argument("load_forecasts: duplicate cell for date " +
                                    std::to_string(date));
      }
      table.point(d, r.station, r.step, r.target) = r.point;
      table.lower(d, r.station, r.step, r.target) = r.lower;
      table.upper(d, r.station, r.step, r.target) = r.upper;
      table.sigma(d, r.station, r.step, r.target) = r.sigma;
    }
    ++d;
  }
  if (!table.point.all_finite() || !table.lower.all_finite() || !table.upper.all_finite() ||
      !table.sigma.all_finite()) {
    throw std::invalid_argument("load_forecasts: grid has holes");
  }
  return table;
}

}  // namespace duq
