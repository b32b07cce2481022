// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "duq/synth.hpp"
#include "duq/data.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <vector>

using duq::Index;
using duq::StationRecords;
using duq::SynthConfig;
using duq::SynthResult;
using duq::Tensor;

namespace {

bool tensors_identical(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return false;
  return std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

bool records_identical(const StationRecords& a, const StationRecords& b) {
  if (a.date_ids != b.date_ids) return false;
  if (a.obs.size() != b.obs.size()) return false;
  for (std::size_t i = 0; i < a.obs.size(); ++i) {
    if (!tensors_identical(a.obs[i], b.obs[i])) return false;
    if (!tensors_identical(a.nwp[i], b.nwp[i])) return false;
    if (!tensors_identical(a.targets[i], b.targets[i])) return false;
  }
  return true;
}

SynthConfig small_config() {
  SynthConfig c;
  c.dates = 24;
  c.stations = 3;
  c.t_e = 8;
  c.t_d = 6;
  c.n1 = 3;
  c.nwp_width = 4;
  c.n3 = 2;
  c.seed = 11;
  return c;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace

TEST_CASE("generation is deterministic per seed and shaped by the config") {
  const SynthConfig c = small_config();
  const SynthResult a = duq::generate(c);
  const SynthResult b = duq::generate(c);
  CHECK(records_identical(a.records, b.records));
  CHECK(tensors_identical(a.truth.mu, b.truth.mu));
  CHECK(tensors_identical(a.truth.epsilon, b.truth.epsilon));
  CHECK(a.truth.date_ids == b.truth.date_ids);

  SynthConfig other = c;
  other.seed = 12;
  CHECK_FALSE(records_identical(a.records, duq::generate(other).records));

  CHECK(a.records.dates() == c.dates);
  CHECK(a.records.num_stations == c.stations);
  REQUIRE(a.records.obs.size() == static_cast<std::size_t>(c.dates * c.stations));
  CHECK(a.records.obs[0].shape() == duq::Shape{c.t_e, c.n1});
  CHECK(a.records.nwp[0].shape() == duq::Shape{c.t_d, c.nwp_width});
  CHECK(a.records.targets[0].shape() == duq::Shape{c.t_d, c.n3});
  CHECK(a.truth.mu.shape() == duq::Shape{c.dates, c.t_d, c.stations, c.n3});
  CHECK(a.truth.sigma.shape() == duq::Shape{c.t_d});
  CHECK(a.truth.mu.all_finite());
}

TEST_CASE("config validation rejects bad extents and scales") {
  SynthConfig c = small_config();
  c.dates = 0;
  CHECK_THROWS_AS(duq::generate(c), std::invalid_argument);
  c = small_config();
  c.sigma_base = 0.0;
  CHECK_THROWS_AS(duq::generate(c), std::invalid_argument);
  c = small_config();
  c.obs_noise = -0.1;
  CHECK_THROWS_AS(duq::generate(c), std::invalid_argument);
  c = small_config();
  c.event_grid_hours = 0;
  CHECK_THROWS_AS(duq::generate(c), std::invalid_argument);
}

TEST_CASE("targets decompose exactly into mean plus recorded noise") {
  const SynthConfig c = small_config();
  const SynthResult r = duq::generate(c);
  for (Index i = 0; i < c.dates; ++i) {
    for (Index s = 0; s < c.stations; ++s) {
      const Tensor& y = r.records.targets_at(i, s);
      for (Index t = 0; t < c.t_d; ++t) {
        for (Index o = 0; o < c.n3; ++o) {
          CHECK(y(t, o) == r.truth.mu(i, t, s, o) + r.truth.sigma[t] * r.truth.epsilon(i, t, s, o));
        }
      }
    }
  }
  for (Index t = 0; t < c.t_d; ++t) {
    CHECK(r.truth.sigma[t] ==
          c.sigma_base + c.sigma_amp * std::abs(std::sin(2.0 * 3.14159265358979323846 * t / 24.0)));
  }
}

TEST_CASE("degenerate config makes the first forecast channels the exact mean") {
  SynthConfig c = small_config();
  c.sigma_amp = 0.0;
  c.nwp_noise = 0.0;
  c.nwp_bias = 0.0;
  c.day_shift_scale = 0.0;
  const SynthResult r = duq::generate(c);
  for (Index i = 0; i < c.dates; ++i) {
    for (Index s = 0; s < c.stations; ++s) {
      const Tensor& f = r.records.nwp_at(i, s);
      for (Index t = 0; t < c.t_d; ++t) {
        for (Index o = 0; o < c.n3; ++o) {
          CHECK(f(t, o) == r.truth.mu(i, t, s, o));
        }
      }
    }
  }
}

TEST_CASE("horizon events are invisible to the history window") {
  SynthConfig base = small_config();
  base.event_scale = 0.0;
  SynthConfig bumped = base;
  bumped.event_scale = 50.0;
  const SynthResult a = duq::generate(base);
  const SynthResult b = duq::generate(bumped);
  bool targets_differ = false;
  for (std::size_t i = 0; i < a.records.obs.size(); ++i) {
    CHECK(tensors_identical(a.records.obs[i], b.records.obs[i]));
    if (!tensors_identical(a.records.targets[i], b.records.targets[i])) targets_differ = true;
  }
  CHECK(targets_differ);
}

TEST_CASE("day shifts are invisible to the forecast channels") {
  SynthConfig base = small_config();
  base.day_shift_scale = 0.0;
  SynthConfig shifted = base;
  shifted.day_shift_scale = 5.0;
  const SynthResult a = duq::generate(base);
  const SynthResult b = duq::generate(shifted);
  bool obs_differ = false;
  for (std::size_t i = 0; i < a.records.obs.size(); ++i) {
    CHECK(tensors_identical(a.records.nwp[i], b.records.nwp[i]));
    if (!tensors_identical(a.records.obs[i], b.records.obs[i])) obs_differ = true;
  }
  CHECK(obs_differ);
}

TEST_CASE("empirical noise level per step matches the stated law") {
  SynthConfig c;
  c.dates = 850;
  c.stations = 4;
  c.t_e = 2;
  c.t_d = 12;
  c.n1 = 1;
  c.nwp_width = 1;
  c.n3 = 3;
  c.seed = 77;
  const SynthResult r = duq::generate(c);
  for (Index t = 0; t < c.t_d; ++t) {
    double acc = 0.0;
    Index n = 0;
    for (Index i = 0; i < c.dates; ++i) {
      for (Index s = 0; s < c.stations; ++s) {
        for (Index o = 0; o < c.n3; ++o) {
          const double d = r.records.targets_at(i, s)(t, o) - r.truth.mu(i, t, s, o);
          acc += d * d;
          ++n;
        }
      }
    }
    const double sd = std::sqrt(acc / static_cast<double>(n));
    CHECK(sd == doctest::Approx(r.truth.sigma[t]).epsilon(0.03));
  }
}

TEST_CASE("oracle intervals at z = 0.1 cover about ninety percent") {
  SynthConfig c;
  c.dates = 400;
  c.stations = 4;
  c.t_e = 16;
  c.t_d = 12;
  c.n1 = 3;
  c.nwp_width = 3;
  c.n3 = 3;
  c.seed = 5;
  const SynthResult r = duq::generate(c);
  const double lambda = 1.6448536269514722;
  Index covered = 0;
  Index cells = 0;
  for (Index i = 0; i < c.dates; ++i) {
    for (Index s = 0; s < c.stations; ++s) {
      for (Index t = 0; t < c.t_d; ++t) {
        for (Index o = 0; o < c.n3; ++o) {
          const double y = r.records.targets_at(i, s)(t, o);
          const double mu = r.truth.mu(i, t, s, o);
          const double half = lambda * r.truth.sigma[t];
          if (mu - half <= y && y <= mu + half) ++covered;
          ++cells;
        }
      }
    }
  }
  const double picp = static_cast<double>(covered) / static_cast<double>(cells);
  const double slack = 2.0 / std::sqrt(static_cast<double>(cells));
  CHECK(picp > 0.90 - slack);
  CHECK(picp < 0.90 + slack);
}

TEST_CASE("forecast-to-target correlation falls as forecast noise rises") {
  std::vector<double> corrs;
  for (double noise : {0.0, 0.5, 2.0}) {
    SynthConfig c = small_config();
    c.dates = 200;
    c.nwp_noise = noise;
    const SynthResult r = duq::generate(c);
    std::vector<double> xs, ys;
    for (Index i = 0; i < c.dates; ++i) {
      for (Index s = 0; s < c.stations; ++s) {
        for (Index t = 0; t < c.t_d; ++t) {
          xs.push_back(r.records.nwp_at(i, s)(t, 0));
          ys.push_back(r.records.targets_at(i, s)(t, 0));
        }
      }
    }
    corrs.push_back(pearson(xs, ys));
  }
  CHECK(corrs[0] > corrs[1]);
  CHECK(corrs[1] > corrs[2]);
  CHECK(corrs[0] > 0.5);
}

TEST_CASE("missing injection blanks blocks and cells deterministically") {
  const SynthConfig c = small_config();
  const StationRecords clean = duq::generate(c).records;

  CHECK(records_identical(duq::inject_missing(clean, 0.0, 0.0, 3), clean));
  CHECK_THROWS_AS(duq::inject_missing(clean, 1.0, 0.0, 3), std::invalid_argument);
  CHECK_THROWS_AS(duq::inject_missing(clean, 0.0, -0.1, 3), std::invalid_argument);

  const StationRecords holed = duq::inject_missing(clean, 0.3, 0.05, 3);
  CHECK(records_identical(holed, duq::inject_missing(clean, 0.3, 0.05, 3)));
  Index blanked_days = 0;
  Index holes = 0;
  for (Index d = 0; d < holed.dates(); ++d) {
    bool day_blanked = false;
    for (Index s = 0; s < holed.num_stations; ++s) {
      const Tensor& block = holed.obs_at(d, s);
      bool all_gone = true;
      for (Index i = 0; i < block.size(); ++i) {
        if (std::isnan(block[i])) ++holes;
        else all_gone = false;
      }
      day_blanked = day_blanked || all_gone;
      CHECK(holed.nwp_at(d, s).all_finite());
      CHECK(holed.targets_at(d, s).all_finite());
    }
    if (day_blanked) ++blanked_days;
  }
  CHECK(blanked_days > 0);
  CHECK(holes > blanked_days * c.t_e * c.n1);
}

TEST_CASE("block rate reproduces the expected count of lost days") {
  SynthConfig c;
  c.dates = 1188;
  c.stations = 2;
  c.t_e = 4;
  c.t_d = 2;
  c.n1 = 1;
  c.nwp_width = 1;
  c.n3 = 1;
  c.seed = 9;
  const StationRecords clean = duq::generate(c).records;
  const StationRecords holed = duq::inject_missing(clean, 40.0 / 1188.0, 0.0, 21);
  const StationRecords kept = duq::drop_block_missing(holed);
  const Index lost = clean.dates() - kept.dates();
  CHECK(lost > 15);
  CHECK(lost < 65);
}

TEST_CASE("injected datasets come out of the repair pipeline complete") {
  const SynthConfig c = small_config();
  const StationRecords clean = duq::generate(c).records;
  StationRecords holed = duq::inject_missing(clean, 0.2, 0.1, 17);
  StationRecords kept = duq::drop_block_missing(holed);
  CHECK(kept.dates() > 0);
  duq::repair_missing(kept);
  for (Index d = 0; d < kept.dates(); ++d) {
    for (Index s = 0; s < kept.num_stations; ++s) {
      CHECK(kept.obs_at(d, s).all_finite());
      CHECK(kept.nwp_at(d, s).all_finite());
      CHECK(kept.targets_at(d, s).all_finite());
    }
  }
}

TEST_CASE("truth sidecar round trips through disk") {
  const SynthConfig c = small_config();
  const SynthResult r = duq::generate(c);
  const std::string path = "test_synth_truth.csv";
  duq::save_truth(r.truth, path);
  const duq::SynthTruth back = duq::load_truth(path);
  CHECK(back.date_ids == r.truth.date_ids);
  CHECK(tensors_identical(back.mu, r.truth.mu));
  CHECK(tensors_identical(back.sigma, r.truth.sigma));
  CHECK(back.epsilon.size() == 0);
  std::remove(path.c_str());
}

TEST_CASE("truth loader rejects malformed sidecars") {
  const std::string path = "test_synth_bad.csv";
  {
    std::ofstream out(path);
    out << "nope\n";
  }
  CHECK_THROWS_WITH_AS(duq::load_truth(path), doctest::Contains("header"), std::invalid_argument);
  {
    std::ofstream out(path);
    out << "date_idx,station_id,step,target,mu_star,sigma_star\n";
    out << "0,0,0,0,1.5,0.6\n";
    out << "0,0,1,0,1.5\n";
  }
  CHECK_THROWS_WITH_AS(duq::load_truth(path), doctest::Contains("columns"), std::invalid_argument);
  {
    std::ofstream out(path);
    out << "date_idx,station_id,step,target,mu_star,sigma_star\n";
    out << "0,0,0,0,1.5,0.6\n";
    out << "0,0,1,0,1.5,0.7\n";
    out << "1,0,0,0,2.5,0.6\n";
    out << "1,0,1,0,2.5,0.9\n";
  }
  CHECK_THROWS_WITH_AS(duq::load_truth(path), doctest::Contains("sigma_star disagrees"),
                       std::invalid_argument);
  {
    std::ofstream out(path);
    out << "date_idx,station_id,step,target,mu_star,sigma_star\n";
    out << "0,0,0,0,1.5,0.6\n";
    out << "0,0,0,0,1.5,0.6\n";
    out << "1,0,0,0,2.5,0.6\n";
  }
  CHECK_THROWS_AS(duq::load_truth(path), std::invalid_argument);
  std::remove(path.c_str());
}
