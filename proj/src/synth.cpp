// SPDX-License-Identifier: Apache-2.0

#include "duq/synth.hpp"

#include "duq/rng.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

namespace duq {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

void require(bool ok, const char* why) {
  if (!ok) throw std::invalid_argument(std::string("SynthConfig: ") + why);
}

}  // namespace

void validate(const SynthConfig& c) {
  require(c.dates >= 1, "dates must be at least 1");
  require(c.stations >= 1, "stations must be at least 1");
  require(c.t_e >= 1, "t_e must be at least 1");
  require(c.t_d >= 1, "t_d must be at least 1");
  require(c.n1 >= 1, "n1 must be at least 1");
  require(c.nwp_width >= 1, "nwp_width must be at least 1");
  require(c.n3 >= 1, "n3 must be at least 1");
  require(c.sigma_base > 0.0, "sigma_base must be positive");
  require(c.sigma_amp >= 0.0, "sigma_amp must not be negative");
  require(c.seasonal_amp >= 0.0, "seasonal_amp must not be negative");
  require(c.daily_amp >= 0.0, "daily_amp must not be negative");
  require(c.station_offset_scale >= 0.0, "station_offset_scale must not be negative");
  require(c.day_shift_scale >= 0.0, "day_shift_scale must not be negative");
  require(c.event_scale >= 0.0, "event_scale must not be negative");
  require(c.event_grid_hours >= 1, "event_grid_hours must be at least 1");
  require(c.obs_noise >= 0.0, "obs_noise must not be negative");
  require(c.nwp_noise >= 0.0, "nwp_noise must not be negative");
}

SynthResult generate(const SynthConfig& c) {
  validate(c);
  Rng rng(c.seed);

  std::vector<double> phase_year(static_cast<std::size_t>(c.n3));
  std::vector<double> phase_day(static_cast<std::size_t>(c.n3));
  for (Index o = 0; o < c.n3; ++o) {
    phase_year[static_cast<std::size_t>(o)] = rng.uniform(0.0, 2.0 * kPi);
    phase_day[static_cast<std::size_t>(o)] = rng.uniform(0.0, 2.0 * kPi);
  }
  Tensor offset({c.stations, c.n3});
  for (Index s = 0; s < c.stations; ++s) {
    for (Index o = 0; o < c.n3; ++o) {
      offset(s, o) = rng.uniform(-c.station_offset_scale, c.station_offset_scale);
    }
  }

  SynthResult out;
  StationRecords& rec = out.records;
  rec.num_stations = c.stations;
  rec.t_e = c.t_e;
  rec.t_d = c.t_d;
  rec.n1 = c.n1;
  rec.nwp_width = c.nwp_width;
  rec.n3 = c.n3;

  SynthTruth& truth = out.truth;
  truth.mu = Tensor::zeros({c.dates, c.t_d, c.stations, c.n3});
  truth.epsilon = Tensor::zeros({c.dates, c.t_d, c.stations, c.n3});
  truth.sigma = Tensor({c.t_d});
  for (Index t = 0; t < c.t_d; ++t) {
    truth.sigma[t] = c.sigma_base + c.sigma_amp * std::abs(std::sin(2.0 * kPi * t / 24.0));
  }

  // The day's clock runs from -T_E (oldest history hour) to T_D - 1
  // (last horizon step); the daily cycle is continuous across zero.
  const auto level = [&](Index i, double clock, Index s, Index o) {
    const double year = std::sin(2.0 * kPi * static_cast<double>(i % 365) / 365.0 +
                                 phase_year[static_cast<std::size_t>(o)]);
    const double day =
        std::sin(2.0 * kPi * clock / 24.0 + phase_day[static_cast<std::size_t>(o)]);
    return c.seasonal_amp * year + c.daily_amp * day + offset(s, o);
  };

  const Index knots = (c.t_d - 1) / c.event_grid_hours + 2;
  Tensor day_shift({c.stations, c.n3});
  Tensor event_knots({c.n3, knots});
  Tensor event({c.t_d, c.n3});

  for (Index i = 0; i < c.dates; ++i) {
    truth.date_ids.push_back(i);
    for (Index s = 0; s < c.stations; ++s) {
      for (Index o = 0; o < c.n3; ++o) day_shift(s, o) = c.day_shift_scale * rng.normal();
    }
    for (Index o = 0; o < c.n3; ++o) {
      for (Index k = 0; k < knots; ++k) event_knots(o, k) = rng.normal();
    }
    for (Index t = 0; t < c.t_d; ++t) {
      const double pos = static_cast<double>(t) / static_cast<double>(c.event_grid_hours);
      const Index k = static_cast<Index>(pos);
      const double frac = pos - static_cast<double>(k);
      for (Index o = 0; o < c.n3; ++o) {
        event(t, o) =
            c.event_scale * ((1.0 - frac) * event_knots(o, k) + frac * event_knots(o, k + 1));
      }
    }

    for (Index s = 0; s < c.stations; ++s) {
      Tensor obs({c.t_e, c.n1});
      for (Index h = 0; h < c.t_e; ++h) {
        const double clock = static_cast<double>(h - c.t_e);
        for (Index ch = 0; ch < c.n1; ++ch) {
          const Index o = ch % c.n3;
          obs(h, ch) = level(i, clock, s, o) + day_shift(s, o) + c.obs_noise * rng.normal();
        }
      }
      rec.obs.push_back(std::move(obs));

      Tensor targets({c.t_d, c.n3});
      for (Index t = 0; t < c.t_d; ++t) {
        for (Index o = 0; o < c.n3; ++o) {
          const double mu =
              level(i, static_cast<double>(t), s, o) + day_shift(s, o) + event(t, o);
          const double eps = rng.normal();
          truth.mu(i, t, s, o) = mu;
          truth.epsilon(i, t, s, o) = eps;
          targets(t, o) = mu + truth.sigma[t] * eps;
        }
      }
      rec.targets.push_back(std::move(targets));

      Tensor nwp({c.t_d, c.nwp_width});
      for (Index t = 0; t < c.t_d; ++t) {
        for (Index ch = 0; ch < c.nwp_width; ++ch) {
          const Index o = ch % c.n3;
          const double base = level(i, static_cast<double>(t), s, o) + event(t, o);
          if (ch < c.n3) {
            nwp(t, ch) = base + c.nwp_bias + c.nwp_noise * rng.normal();
          } else {
            nwp(t, ch) = base + c.nwp_bias * (1.0 + 0.1 * static_cast<double>(ch)) +
                         2.0 * c.nwp_noise * rng.normal();
          }
        }
      }
      rec.nwp.push_back(std::move(nwp));
    }
    rec.date_ids.push_back(i);
  }
  return out;
}

StationRecords inject_missing(const StationRecords& records, double block_rate, double local_rate,
                              std::uint64_t seed) {
  if (!(block_rate >= 0.0 && block_rate < 1.0) || !(local_rate >= 0.0 && local_rate < 1.0)) {
    throw std::invalid_argument("inject_missing: rates must lie in [0, 1)");
  }
  StationRecords out = records;
  Rng rng(seed);
  for (Index d = 0; d < out.dates(); ++d) {
    if (rng.uniform() < block_rate) {
      const Index s = static_cast<Index>(rng.below(static_cast<std::uint64_t>(out.num_stations)));
      Tensor& block = out.obs_at(d, s);
      for (Index i = 0; i < block.size(); ++i) block[i] = kMissing;
    }
    for (Index s = 0; s < out.num_stations; ++s) {
      Tensor& block = out.obs_at(d, s);
      for (Index i = 0; i < block.size(); ++i) {
        if (rng.uniform() < local_rate) block[i] = kMissing;
      }
    }
  }
  return out;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void save_truth(const SynthTruth& truth, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::invalid_argument("save_truth: cannot open '" + path + "'");
  out << "date_idx,station_id,step,target,mu_star,sigma_star\n";
  const Index dates = truth.mu.extent(0);
  const Index t_d = truth.mu.extent(1);
  const Index stations = truth.mu.extent(2);
  const Index n3 = truth.mu.extent(3);
  for (Index i = 0; i < dates; ++i) {
    for (Index s = 0; s < stations; ++s) {
      for (Index t = 0; t < t_d; ++t) {
        for (Index o = 0; o < n3; ++o) {
          out << truth.date_ids[static_cast<std::size_t>(i)] << ',' << s << ',' << t << ',' << o
              << ',' << fmt(truth.mu(i, t, s, o)) << ',' << fmt(truth.sigma[t]) << "\n";
        }
      }
    }
  }
  if (!out) throw std::runtime_error("save_truth: write to '" + path + "' failed");
}

SynthTruth load_truth(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("load_truth: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line.rfind("date_idx,station_id,step,target,mu_star,sigma_star", 0) != 0) {
    throw std::invalid_argument("load_truth: '" + path + "' has an unexpected header");
  }

  struct Cell {
    Index station, step, target;
    double mu, sigma;
  };
  std::map<Index, std::vector<Cell>> by_date;
  Index max_station = -1, max_step = -1, max_target = -1;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 6) {
      throw std::invalid_argument("load_truth: line " + std::to_string(line_no) +
                                  ": expected 6 columns, got " + std::to_string(cells.size()));
    }
    Cell c;
    Index date;
    try {
      date = static_cast<Index>(std::stoll(cells[0]));
      c.station = static_cast<Index>(std::stoll(cells[1]));
      c.step = static_cast<Index>(std::stoll(cells[2]));
      c.target = static_cast<Index>(std::stoll(cells[3]));
      c.mu = std::stod(cells[4]);
      c.sigma = std::stod(cells[5]);
    } catch (const std::exception&) {
      throw std::invalid_argument("load_truth: line " + std::to_string(line_no) +
                                  ": unparseable cell");
    }
    if (c.station < 0 || c.step < 0 || c.target < 0) {
      throw std::invalid_argument("load_truth: line " + std::to_string(line_no) +
                                  ": negative index");
    }
    max_station = std::max(max_station, c.station);
    max_step = std::max(max_step, c.step);
    max_target = std::max(max_target, c.target);
    by_date[date].push_back(c);
  }
  if (by_date.empty()) throw std::invalid_argument("load_truth: '" + path + "' has no rows");

  const Index stations = max_station + 1;
  const Index t_d = max_step + 1;
  const Index n3 = max_target + 1;
  const Index dates = static_cast<Index>(by_date.size());
  const std::size_t per_date =
      static_cast<std::size_t>(stations) * static_cast<std::size_t>(t_d) *
      static_cast<std::size_t>(n3);

  SynthTruth truth;
  truth.mu = Tensor::full({dates, t_d, stations, n3}, kMissing);
  truth.sigma = Tensor::full({t_d}, kMissing);
  Index i = 0;
  for (const auto& [date, cells] : by_date) {
    if (cells.size() != per_date) {
      throw std::invalid_argument("load_truth: date " + std::to_string(date) + " has " +
                                  std::to_string(cells.size()) + " rows, expected " +
                                  std::to_string(per_date));
    }
    truth.date_ids.push_back(date);
    for (const Cell& c : cells) {
      if (!std::isnan(truth.mu(i, c.step, c.station, c.target))) {
        throw std::invalid_argument("load_truth: duplicate cell for date " + std::to_string(date));
      }
      truth.mu(i, c.step, c.station, c.target) = c.mu;
      if (std::isnan(truth.sigma[c.step])) {
        truth.sigma[c.step] = c.sigma;
      } else if (truth.sigma[c.step] != c.sigma) {
        throw std::invalid_argument("load_truth: sigma_star disagrees at step " +
                                    std::to_string(c.step));
      }
    }
    ++i;
  }
  if (!truth.mu.all_finite() || !truth.sigma.all_finite()) {
    throw std::invalid_argument("load_truth: grid has holes");
  }
  return truth;
}

}  // namespace duq
