// SPDX-License-Identifier: Apache-2.0

#include "duq/metrics.hpp"

#include "json.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace duq {

namespace {

// Continued-fraction core of the regularized incomplete beta (modified
// Lentz iteration).
double beta_cf(double a, double b, double x) {
  constexpr int kMaxIter = 400;
  constexpr double kEps = 3e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) return h;
  }
  throw std::runtime_error("regularized incomplete beta did not converge");
}

double reg_inc_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                          a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return front * beta_cf(a, b, x) / a;
  }
  return 1.0 - front * beta_cf(b, a, 1.0 - x) / b;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(what) + ": misaligned shapes " +
                                shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
  }
}

// (S, T_D) slice of a (D, S, T_D, N3) grid for one day and one objective.
Tensor day_grid(const Tensor& t, Index day, Index objective) {
  Tensor out({t.extent(1), t.extent(2)});
  for (Index s = 0; s < t.extent(1); ++s) {
    for (Index step = 0; step < t.extent(2); ++step) {
      out(s, step) = t(day, s, step, objective);
    }
  }
  return out;
}

}  // namespace

double rmse_obj(const Tensor& y, const Tensor& yhat) {
  check_same_shape(y, yhat, "rmse_obj");
  if (y.size() == 0) throw std::invalid_argument("rmse_obj: empty grids");
  const double mse = (y.array() - yhat.array()).square().mean();
  return std::sqrt(mse);
}

double ss_obj(double rmse_ml, double rmse_nwp) {
  if (!(rmse_nwp > 0.0)) {
    throw std::invalid_argument("ss_obj: reference rmse must be positive, got " +
                                std::to_string(rmse_nwp));
  }
  return 1.0 - rmse_ml / rmse_nwp;
}

double ss_day(const std::vector<double>& ss_values) {
  if (ss_values.empty()) throw std::invalid_argument("ss_day: no objectives");
  double total = 0.0;
  for (double v : ss_values) total += v;
  return total / static_cast<double>(ss_values.size());
}

double picp_obj(const Tensor& y, const Tensor& lower, const Tensor& upper) {
  check_same_shape(y, lower, "picp_obj");
  check_same_shape(y, upper, "picp_obj");
  if (y.size() == 0) throw std::invalid_argument("picp_obj: empty grids");
  Index covered = 0;
  for (Index i = 0; i < y.size(); ++i) {
    if (lower[i] > upper[i]) {
      throw std::invalid_argument("picp_obj: inverted interval at cell " + std::to_string(i));
    }
    if (lower[i] <= y[i] && y[i] <= upper[i]) ++covered;
  }
  return static_cast<double>(covered) / static_cast<double>(y.size());
}

double student_t_cdf(double t, double dof) {
  if (dof <= 0.0) throw std::invalid_argument("student_t_cdf: dof must be positive");
  const double x = dof / (dof + t * t);
  const double two_tail = reg_inc_beta(dof / 2.0, 0.5, x);
  return t >= 0.0 ? 1.0 - two_tail / 2.0 : two_tail / 2.0;
}

TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("paired_t_test: length mismatch " + std::to_string(a.size()) +
                                " vs " + std::to_string(b.size()));
  }
  const std::size_t n = a.size();
  if (n < 2) throw std::invalid_argument("paired_t_test: need at least 2 pairs");
  std::vector<double> d(n);
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    d[i] = a[i] - b[i];
    mean += d[i];
  }
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double v : d) ss += (v - mean) * (v - mean);
  if (ss == 0.0) {
    throw std::invalid_argument(
        "paired_t_test: differences have zero variance (all pairs differ by the same amount), "
        "the statistic is undefined");
  }
  const double var = ss / static_cast<double>(n - 1);
  const double se = std::sqrt(var / static_cast<double>(n));
  TTestResult r;
  r.t_stat = mean / se;
  r.p_value = 1.0 - student_t_cdf(r.t_stat, static_cast<double>(n - 1));
  return r;
}

MetricsReport build_report(const EvaluationInputs& inputs, double z) {
  const Tensor& truth = inputs.truth;
  if (truth.rank() != 4) {
    throw std::invalid_argument("build_report: expected (days, stations, steps, objectives), got " +
                                shape_to_string(truth.shape()));
  }
  check_same_shape(truth, inputs.point, "build_report");
  check_same_shape(truth, inputs.lower, "build_report");
  check_same_shape(truth, inputs.upper, "build_report");
  check_same_shape(truth, inputs.nwp, "build_report");
  const Index days = truth.extent(0);
  const Index objectives = truth.extent(3);
  if (static_cast<Index>(inputs.date_ids.size()) != days) {
    throw std::invalid_argument("build_report: " + std::to_string(inputs.date_ids.size()) +
                                " date labels for " + std::to_string(days) + " days");
  }

  MetricsReport report;
  report.z = z;
  report.stations = truth.extent(1);
  report.day_count = days;
  report.rmse_avg_obj.assign(static_cast<std::size_t>(objectives), 0.0);
  report.ss_avg_obj.assign(static_cast<std::size_t>(objectives), 0.0);
  report.picp_avg_obj.assign(static_cast<std::size_t>(objectives), 0.0);

  for (Index d = 0; d < days; ++d) {
    DayMetrics day;
    day.date_id = inputs.date_ids[static_cast<std::size_t>(d)];
    for (Index o = 0; o < objectives; ++o) {
      const Tensor y = day_grid(truth, d, o);
      const double rmse_ml = rmse_obj(y, day_grid(inputs.point, d, o));
      const double rmse_nwp = rmse_obj(y, day_grid(inputs.nwp, d, o));
      day.rmse.push_back(rmse_ml);
      day.ss.push_back(ss_obj(rmse_ml, rmse_nwp));
      day.picp.push_back(picp_obj(y, day_grid(inputs.lower, d, o), day_grid(inputs.upper, d, o)));
    }
    double rmse_total = 0.0;
    for (double v : day.rmse) rmse_total += v;
    day.rmse_day = rmse_total / static_cast<double>(objectives);
    day.ss_day = ss_day(day.ss);
    for (Index o = 0; o < objectives; ++o) {
      report.rmse_avg_obj[static_cast<std::size_t>(o)] += day.rmse[static_cast<std::size_t>(o)];
      report.ss_avg_obj[static_cast<std::size_t>(o)] += day.ss[static_cast<std::size_t>(o)];
      report.picp_avg_obj[static_cast<std::size_t>(o)] += day.picp[static_cast<std::size_t>(o)];
      report.picp_avg += day.picp[static_cast<std::size_t>(o)];
    }
    report.rmse_avg += day.rmse_day;
    report.ss_avg += day.ss_day;
    report.days.push_back(std::move(day));
  }
  const double nd = static_cast<double>(days);
  report.rmse_avg /= nd;
  report.ss_avg /= nd;
  report.picp_avg /= nd * static_cast<double>(objectives);
  for (Index o = 0; o < objectives; ++o) {
    report.rmse_avg_obj[static_cast<std::size_t>(o)] /= nd;
    report.ss_avg_obj[static_cast<std::size_t>(o)] /= nd;
    report.picp_avg_obj[static_cast<std::size_t>(o)] /= nd;
  }
  return report;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void write_report_csv(const MetricsReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::invalid_argument("write_report_csv: cannot open '" + path + "'");
  out << "date_idx,objective,rmse,ss,picp\n";
  for (const DayMetrics& day : report.days) {
    for (std::size_t o = 0; o < day.rmse.size(); ++o) {
      out << day.date_id << ',' << o << ',' << fmt(day.rmse[o]) << ',' << fmt(day.ss[o]) << ','
          << fmt(day.picp[o]) << "\n";
    }
  }
  if (!out) throw std::runtime_error("write_report_csv: write to '" + path + "' failed");
}

void write_report_json(const MetricsReport& report, const std::string& path) {
  nlohmann::json j;
  j["rmse_avg"] = report.rmse_avg;
  j["ss_avg"] = report.ss_avg;
  j["picp_avg"] = report.picp_avg;
  j["rmse_avg_obj"] = report.rmse_avg_obj;
  j["ss_avg_obj"] = report.ss_avg_obj;
  j["picp_avg_obj"] = report.picp_avg_obj;
  j["z"] = report.z;
  j["stations"] = report.stations;
  j["days"] = report.day_count;
  std::ofstream out(path);
  if (!out) throw std::invalid_argument("write_report_json: cannot open '" + path + "'");
  out << j.dump(2) << "\n";
  if (!out) throw std::runtime_error("write_report_json: write to '" + path + "' failed");
}

}  // namespace duq
