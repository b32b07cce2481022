// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "duq/infer.hpp"

#include "duq/rng.hpp"
#include "support/oracles.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

using duq::Index;
using duq::ModelConfig;
using duq::ModelParams;
using duq::NormalizationSpec;
using duq::PredictionInterval;
using duq::Rng;
using duq::Tensor;

namespace {

bool tensors_identical(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return false;
  return std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

ModelConfig base_config(std::vector<Index> hidden) {
  ModelConfig c;
  c.hidden_sizes = std::move(hidden);
  c.embed_dim_station = 2;
  c.embed_dim_time = 2;
  c.num_stations = 2;
  c.n1 = 2;
  c.n2_nwp = 2;
  c.n3 = 2;
  c.t_e = 4;
  c.t_d = 3;
  return c;
}

duq::Sample make_sample(const ModelConfig& c, Index station, std::uint64_t seed) {
  duq::Sample s;
  s.station = station;
  Rng rng(seed);
  s.encoder_input = Tensor({c.t_e, c.n1});
  for (Index i = 0; i < s.encoder_input.size(); ++i) s.encoder_input[i] = rng.uniform();
  s.decoder_input = Tensor::zeros({c.t_d, c.n2()});
  for (Index t = 0; t < c.t_d; ++t) {
    s.decoder_input(t, 0) = static_cast<double>(t);
    s.decoder_input(t, 1) = static_cast<double>(station);
    for (Index k = 2; k < c.n2(); ++k) s.decoder_input(t, k) = rng.uniform();
  }
  s.target = Tensor::zeros({c.t_d, c.n3});
  return s;
}

NormalizationSpec spec_for(const ModelConfig& c, double lo, double hi) {
  NormalizationSpec spec;
  spec.obs.assign(static_cast<std::size_t>(c.n1), {0.0, 1.0, false});
  spec.nwp.assign(static_cast<std::size_t>(c.n2_nwp), {0.0, 1.0, false});
  spec.targets.assign(static_cast<std::size_t>(c.n3), {lo, hi, false});
  return spec;
}

}  // namespace

TEST_CASE("the interval scale factor reproduces normal quantiles") {
  CHECK(std::abs(duq::lambda_from_z(0.1) - 1.645) < 5e-3);
  CHECK(std::abs(duq::lambda_from_z(0.1) - 1.6448536269514722) < 1e-9);
  CHECK(std::abs(duq::lambda_from_z(0.3173) - 1.0) < 5e-4);
  CHECK(std::abs(duq::lambda_from_z(0.9999)) < 1e-3);

  double prev = duq::lambda_from_z(0.01);
  for (double z = 0.05; z < 1.0; z += 0.05) {
    const double lambda = duq::lambda_from_z(z);
    CHECK(lambda < prev);
    // Quantile consistency: Phi(lambda) must equal 1 - z/2.
    CHECK(std::abs(duq::testing::normal_cdf_quadrature(lambda) - (1.0 - z / 2.0)) < 1e-8);
    prev = lambda;
  }

  CHECK_THROWS_AS(duq::lambda_from_z(0.0), std::invalid_argument);
  CHECK_THROWS_AS(duq::lambda_from_z(1.0), std::invalid_argument);
  CHECK_THROWS_AS(duq::lambda_from_z(-0.2), std::invalid_argument);
  CHECK_THROWS_AS(duq::lambda_from_z(1.7), std::invalid_argument);
}

TEST_CASE("intervals are symmetric, ordered, and scale with the fitted range") {
  const ModelConfig c = base_config({6});
  Rng rng(3);
  const ModelParams params = duq::init_params(c, rng);
  const duq::Sample sample = make_sample(c, 1, 4);
  const NormalizationSpec spec = spec_for(c, -5.0, 15.0);

  const PredictionInterval p = duq::predict(params, sample, 0.1, spec);
  CHECK(p.z == 0.1);
  CHECK(p.lambda == duq::lambda_from_z(0.1));
  const duq::ForecastDistribution f = duq::forward(params, sample);
  for (Index t = 0; t < c.t_d; ++t) {
    for (Index o = 0; o < c.n3; ++o) {
      CHECK(p.lower(t, o) <= p.point(t, o));
      CHECK(p.point(t, o) <= p.upper(t, o));
      CHECK(std::abs((p.upper(t, o) - p.point(t, o)) - (p.point(t, o) - p.lower(t, o))) < 1e-9);
      const double width = 2.0 * p.lambda * std::sqrt(f.variance(t, o)) * 20.0;
      CHECK(p.upper(t, o) - p.lower(t, o) == doctest::Approx(width).epsilon(1e-9));
      CHECK(p.sigma(t, o) == doctest::Approx(std::sqrt(f.variance(t, o)) * 20.0).epsilon(1e-12));
    }
  }

  // Tighter miscoverage nests the looser interval.
  const PredictionInterval wide = duq::predict(params, sample, 0.05, spec);
  const PredictionInterval narrow = duq::predict(params, sample, 0.2, spec);
  for (Index i = 0; i < wide.point.size(); ++i) {
    CHECK(wide.lower[i] <= narrow.lower[i]);
    CHECK(wide.upper[i] >= narrow.upper[i]);
  }
}

TEST_CASE("a zeroed model maps the normalized midpoint onto the physical range") {
  const ModelConfig c = base_config({4});
  Rng rng(1);
  ModelParams params = duq::init_params(c, rng);
  for (duq::Parameter* p : duq::ordered_params(params)) {
    for (Index i = 0; i < p->value.size(); ++i) p->value[i] = 0.0;
  }
  for (Index o = 0; o < c.n3; ++o) params.head_b.value(0, o) = 0.5;

  const duq::Sample sample = make_sample(c, 0, 9);
  const PredictionInterval p = duq::predict(params, sample, 0.1, spec_for(c, 0.0, 40.0));
  for (Index i = 0; i < p.point.size(); ++i) CHECK(p.point[i] == 20.0);
}

TEST_CASE("the variance floor collapses the interval onto the point") {
  ModelConfig c = base_config({4});
  c.min_variance = 1e-9;
  Rng rng(2);
  ModelParams params = duq::init_params(c, rng);
  for (Index o = 0; o < c.n3; ++o) params.head_b.value(0, c.n3 + o) = -50.0;
  for (Index i = 0; i < params.head_w.value.size(); ++i) params.head_w.value[i] *= 1e-3;

  const duq::Sample sample = make_sample(c, 0, 10);
  const PredictionInterval p = duq::predict(params, sample, 0.1, spec_for(c, 0.0, 2.0));
  for (Index i = 0; i < p.point.size(); ++i) {
    CHECK(std::abs(p.upper[i] - p.lower[i]) < 1e-3);
    CHECK(std::abs(p.point[i] - p.lower[i]) < 1e-3);
  }
}

TEST_CASE("an ensemble of one member is exactly the single prediction") {
  const ModelConfig c = base_config({5});
  Rng rng(6);
  const ModelParams params = duq::init_params(c, rng);
  const duq::Sample sample = make_sample(c, 1, 11);
  const NormalizationSpec spec = spec_for(c, 0.0, 10.0);

  const PredictionInterval single = duq::predict(params, sample, 0.1, spec);
  const PredictionInterval one = duq::ensemble_predict({&params}, sample, 0.1, spec);
  CHECK(tensors_identical(single.point, one.point));
  CHECK(tensors_identical(single.lower, one.lower));
  CHECK(tensors_identical(single.upper, one.upper));
  CHECK(tensors_identical(single.sigma, one.sigma));

  CHECK_THROWS_AS(duq::ensemble_predict({}, sample, 0.1, spec), std::invalid_argument);
}

TEST_CASE("mirrored member means cancel to the normalized zero point") {
  const ModelConfig c = base_config({5});
  Rng rng(7);
  const ModelParams a = duq::init_params(c, rng);
  ModelParams b = a;
  for (Index h = 0; h < b.head_w.value.extent(0); ++h) {
    for (Index o = 0; o < c.n3; ++o) b.head_w.value(h, o) = -b.head_w.value(h, o);
  }
  for (Index o = 0; o < c.n3; ++o) b.head_b.value(0, o) = -b.head_b.value(0, o);

  const duq::Sample sample = make_sample(c, 0, 12);
  const NormalizationSpec spec = spec_for(c, -3.0, 7.0);
  const PredictionInterval p = duq::ensemble_predict({&a, &b}, sample, 0.1, spec);
  // Normalized point 0 de-normalizes to the range minimum.
  for (Index i = 0; i < p.point.size(); ++i) CHECK(p.point[i] == -3.0);
}

TEST_CASE("mixed-capacity ensembles average member means after checking shapes") {
  const ModelConfig c1 = base_config({12, 12});
  const ModelConfig c2 = base_config({8, 8});
  const ModelConfig c3 = base_config({4, 4});
  Rng r1(1), r2(2), r3(3);
  const ModelParams m1 = duq::init_params(c1, r1);
  const ModelParams m2 = duq::init_params(c2, r2);
  const ModelParams m3 = duq::init_params(c3, r3);
  const duq::Sample sample = make_sample(c1, 1, 13);
  const NormalizationSpec spec = spec_for(c1, 2.0, 6.0);

  const PredictionInterval e =
      duq::ensemble_predict({&m1, &m2, &m3}, sample, 0.1, spec);
  const PredictionInterval p1 = duq::predict(m1, sample, 0.1, spec);
  const PredictionInterval p2 = duq::predict(m2, sample, 0.1, spec);
  const PredictionInterval p3 = duq::predict(m3, sample, 0.1, spec);

  // De-normalization is affine, so averaging commutes with it.
  for (Index i = 0; i < e.point.size(); ++i) {
    const double averaged = (p1.point[i] + p2.point[i] + p3.point[i]) / 3.0;
    CHECK(e.point[i] == doctest::Approx(averaged).epsilon(1e-12));
  }

  // A mismatched horizon is rejected.
  ModelConfig short_c = base_config({4});
  short_c.t_d = 2;
  Rng r4(4);
  const ModelParams m4 = duq::init_params(short_c, r4);
  CHECK_THROWS_AS(duq::ensemble_predict({&m1, &m4}, sample, 0.1, spec), std::invalid_argument);
}

TEST_CASE("mixture variance widens intervals when member means disagree") {
  const ModelConfig c = base_config({6});
  Rng r1(21), r2(22);
  const ModelParams m1 = duq::init_params(c, r1);
  const ModelParams m2 = duq::init_params(c, r2);
  const duq::Sample sample = make_sample(c, 0, 14);
  const NormalizationSpec spec = spec_for(c, 0.0, 1.0);

  const PredictionInterval avg =
      duq::ensemble_predict({&m1, &m2}, sample, 0.1, spec, duq::EnsembleVariance::kMeanVariance);
  const PredictionInterval mix =
      duq::ensemble_predict({&m1, &m2}, sample, 0.1, spec, duq::EnsembleVariance::kMixture);
  bool widened = false;
  for (Index i = 0; i < avg.point.size(); ++i) {
    CHECK(mix.upper[i] - mix.lower[i] >= avg.upper[i] - avg.lower[i] - 1e-12);
    if (mix.upper[i] - mix.lower[i] > avg.upper[i] - avg.lower[i] + 1e-9) widened = true;
    CHECK(mix.point[i] == avg.point[i]);
  }
  CHECK(widened);

  // Identical members add no spread: both modes agree.
  const PredictionInterval same_avg =
      duq::ensemble_predict({&m1, &m1}, sample, 0.1, spec, duq::EnsembleVariance::kMeanVariance);
  const PredictionInterval same_mix =
      duq::ensemble_predict({&m1, &m1}, sample, 0.1, spec, duq::EnsembleVariance::kMixture);
  for (Index i = 0; i < same_avg.point.size(); ++i) {
    CHECK(same_mix.upper[i] == doctest::Approx(same_avg.upper[i]).epsilon(1e-12));
  }
}

TEST_CASE("the ensemble point error never exceeds the mean member error") {
  const ModelConfig c = base_config({6});
  Rng rng(30);
  std::vector<ModelParams> members;
  for (int k = 0; k < 3; ++k) members.push_back(duq::init_params(c, rng));
  const NormalizationSpec spec = spec_for(c, -1.0, 3.0);

  double ens_sq = 0.0;
  std::vector<double> member_sq(members.size(), 0.0);
  Index cells = 0;
  for (int rep = 0; rep < 40; ++rep) {
    const duq::Sample sample = make_sample(c, rep % c.num_stations, 100 + rep);
    Tensor truth({c.t_d, c.n3});
    for (Index i = 0; i < truth.size(); ++i) truth[i] = rng.uniform(-1.0, 3.0);

    std::vector<const ModelParams*> ptrs;
    for (const ModelParams& m : members) ptrs.push_back(&m);
    const PredictionInterval e = duq::ensemble_predict(ptrs, sample, 0.1, spec);
    for (std::size_t k = 0; k < members.size(); ++k) {
      const PredictionInterval p = duq::predict(members[k], sample, 0.1, spec);
      for (Index i = 0; i < truth.size(); ++i) {
        member_sq[k] += (p.point[i] - truth[i]) * (p.point[i] - truth[i]);
      }
    }
    for (Index i = 0; i < truth.size(); ++i) {
      ens_sq += (e.point[i] - truth[i]) * (e.point[i] - truth[i]);
      ++cells;
    }
  }
  const double n = static_cast<double>(cells);
  double member_rmse_mean = 0.0;
  for (double sq : member_sq) member_rmse_mean += std::sqrt(sq / n);
  member_rmse_mean /= static_cast<double>(member_sq.size());
  CHECK(std::sqrt(ens_sq / n) <= member_rmse_mean + 1e-12);
}

TEST_CASE("forecast tables survive the disk round trip") {
  Rng rng(40);
  duq::ForecastTable table;
  table.z = 0.1;
  table.lambda = duq::lambda_from_z(0.1);
  table.members = 3;
  table.variance_mode = "mixture";
  table.date_ids = {7, 9, 12};
  const duq::Shape shape{3, 2, 4, 2};
  table.point = Tensor(shape);
  table.lower = Tensor(shape);
  table.upper = Tensor(shape);
  table.sigma = Tensor(shape);
  for (Index i = 0; i < table.point.size(); ++i) {
    table.point[i] = rng.normal();
    table.sigma[i] = std::abs(rng.normal());
    table.lower[i] = table.point[i] - table.sigma[i];
    table.upper[i] = table.point[i] + table.sigma[i];
  }

  const std::string path = "test_infer_forecasts.csv";
  duq::save_forecasts(table, path);
  const duq::ForecastTable back = duq::load_forecasts(path);
  CHECK(back.date_ids == table.date_ids);
  CHECK(tensors_identical(back.point, table.point));
  CHECK(tensors_identical(back.lower, table.lower));
  CHECK(tensors_identical(back.upper, table.upper));
  CHECK(tensors_identical(back.sigma, table.sigma));
  CHECK(back.z == table.z);
  CHECK(back.lambda == table.lambda);
  CHECK(back.members == 3);
  CHECK(back.variance_mode == "mixture");
  std::remove(path.c_str());
}

TEST_CASE("forecast loader rejects malformed files") {
  const std::string path = "test_infer_bad.csv";
  {
    std::ofstream out(path);
    out << "date_idx,station_id,step,target,point,lower,upper,sigma\n";
    out << "0,0,0,0,1,0,2,1\n";
  }
  CHECK_THROWS_WITH_AS(duq::load_forecasts(path), doctest::Contains("metadata"),
                       std::invalid_argument);
  {
    std::ofstream out(path);
    out << "# z=0.1 lambda=1.64\n";
    out << "date_idx,station_id,step,target,point,lower,upper,sigma\n";
    out << "0,0,0,0,1,0,2\n";
  }
  CHECK_THROWS_WITH_AS(duq::load_forecasts(path), doctest::Contains("columns"),
                       std::invalid_argument);
  {
    std::ofstream out(path);
    out << "# z=0.1 lambda=1.64\n";
    out << "date_idx,station_id,step,target,point,lower,upper,sigma\n";
    out << "0,0,0,0,1,0,2,1\n";
    out << "0,0,1,0,1,0,2,1\n";
    out << "1,0,0,0,1,0,2,1\n";
  }
  CHECK_THROWS_WITH_AS(duq::load_forecasts(path), doctest::Contains("expected"),
                       std::invalid_argument);
  std::remove(path.c_str());
}
