// SPDX-License-Identifier: Apache-2.0

#include "duq/model.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace duq {

namespace {

double glorot_bound(Index fan_in, Index fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

void fill_uniform(Tensor& t, Rng& rng, double bound) {
  for (Index i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
}

GruLayerParams init_gru_layer(const std::string& prefix, Index input, Index hidden, Rng& rng) {
  GruLayerParams layer;
  layer.w = Parameter{prefix + ".w", Tensor({input, 3 * hidden})};
  layer.u = Parameter{prefix + ".u", Tensor({hidden, 3 * hidden})};
  layer.b = Parameter{prefix + ".b", Tensor({1, 3 * hidden})};
  fill_uniform(layer.w.value, rng, glorot_bound(input, 3 * hidden));
  fill_uniform(layer.u.value, rng, glorot_bound(hidden, 3 * hidden));
  return layer;
}

Index checked_id(double raw, Index limit, const char* what) {
  if (!(raw == std::floor(raw))) {
    throw std::invalid_argument(std::string(what) + " id must be integral, got " +
                                std::to_string(raw));
  }
  const Index id = static_cast<Index>(raw);
  if (id < 0 || id >= limit) {
    throw std::invalid_argument(std::string(what) + " id " + std::to_string(id) +
                                " out of range [0, " + std::to_string(limit) + ")");
  }
  return id;
}

void check_sample_shapes(const ModelConfig& c, const Sample& s) {
  if (s.encoder_input.rank() != 2 || s.encoder_input.extent(0) != c.t_e ||
      s.encoder_input.extent(1) != c.n1) {
    throw std::invalid_argument("forward: encoder input shape " +
                                shape_to_string(s.encoder_input.shape()) + " does not match (" +
                                std::to_string(c.t_e) + ", " + std::to_string(c.n1) + ")");
  }
  if (s.decoder_input.rank() != 2 || s.decoder_input.extent(0) != c.t_d ||
      s.decoder_input.extent(1) != c.n2()) {
    throw std::invalid_argument("forward: decoder input shape " +
                                shape_to_string(s.decoder_input.shape()) + " does not match (" +
                                std::to_string(c.t_d) + ", " + std::to_string(c.n2()) + ")");
  }
}

}  // namespace

void validate(const ModelConfig& config) {
  if (config.hidden_sizes.empty()) {
    throw std::invalid_argument("ModelConfig: hidden_sizes must be non-empty");
  }
  for (Index h : config.hidden_sizes) {
    if (h <= 0) throw std::invalid_argument("ModelConfig: hidden sizes must be positive");
  }
  if (config.min_variance <= 0.0) {
    throw std::invalid_argument("ModelConfig: min_variance must be positive");
  }
  if (config.embed_dim_station < 1 || config.embed_dim_time < 1) {
    throw std::invalid_argument("ModelConfig: embedding dims must be at least 1");
  }
  if (config.num_stations < 1) {
    throw std::invalid_argument("ModelConfig: num_stations must be at least 1");
  }
  if (config.n1 < 1 || config.n3 < 1) {
    throw std::invalid_argument("ModelConfig: channel counts must be at least 1");
  }
  if (config.n2_nwp < 0) {
    throw std::invalid_argument("ModelConfig: n2_nwp must be non-negative");
  }
  if (config.t_e < 1 || config.t_d < 1) {
    throw std::invalid_argument("ModelConfig: sequence lengths must be at least 1");
  }
}

std::vector<Parameter*> ordered_params(ModelParams& params) {
  std::vector<Parameter*> out;
  for (auto& layer : params.encoder) {
    out.push_back(&layer.w);
    out.push_back(&layer.u);
    out.push_back(&layer.b);
  }
  for (auto& layer : params.decoder) {
    out.push_back(&layer.w);
    out.push_back(&layer.u);
    out.push_back(&layer.b);
  }
  out.push_back(&params.station_embed);
  out.push_back(&params.time_embed);
  out.push_back(&params.head_w);
  out.push_back(&params.head_b);
  return out;
}

std::vector<const Parameter*> ordered_params(const ModelParams& params) {
  auto mutable_view = ordered_params(const_cast<ModelParams&>(params));
  return std::vector<const Parameter*>(mutable_view.begin(), mutable_view.end());
}

Index param_count(const ModelConfig& config) {
  Index total = 0;
  Index enc_in = config.n1;
  Index dec_in = config.embed_dim_station + config.embed_dim_time + config.n2_nwp;
  for (Index h : config.hidden_sizes) {
    total += enc_in * 3 * h + h * 3 * h + 3 * h;
    total += dec_in * 3 * h + h * 3 * h + 3 * h;
    enc_in = h;
    dec_in = h;
  }
  total += config.num_stations * config.embed_dim_station;
  total += config.t_d * config.embed_dim_time;
  const Index top = config.hidden_sizes.back();
  total += top * 2 * config.n3 + 2 * config.n3;
  return total;
}

ModelParams init_params(const ModelConfig& config, Rng& rng) {
  validate(config);
  ModelParams params;
  params.config = config;
  Index enc_in = config.n1;
  Index dec_in = config.embed_dim_station + config.embed_dim_time + config.n2_nwp;
  for (std::size_t l = 0; l < config.hidden_sizes.size(); ++l) {
    const Index h = config.hidden_sizes[l];
    params.encoder.push_back(init_gru_layer("encoder." + std::to_string(l), enc_in, h, rng));
    enc_in = h;
  }
  for (std::size_t l = 0; l < config.hidden_sizes.size(); ++l) {
    const Index h = config.hidden_sizes[l];
    params.decoder.push_back(init_gru_layer("decoder." + std::to_string(l), dec_in, h, rng));
    dec_in = h;
  }
  params.station_embed =
      Parameter{"embed.station", Tensor({config.num_stations, config.embed_dim_station})};
  fill_uniform(params.station_embed.value, rng, 0.05);
  params.time_embed = Parameter{"embed.time", Tensor({config.t_d, config.embed_dim_time})};
  fill_uniform(params.time_embed.value, rng, 0.05);
  const Index top = config.hidden_sizes.back();
  params.head_w = Parameter{"head.w", Tensor({top, 2 * config.n3})};
  fill_uniform(params.head_w.value, rng, glorot_bound(top, 2 * config.n3));
  params.head_b = Parameter{"head.b", Tensor({1, 2 * config.n3})};
  return params;
}

Tensor gru_step(const GruLayerParams& layer, const Tensor& x, const Tensor& h_prev) {
  const Index input = layer.w.value.extent(0);
  const Index hidden = layer.u.value.extent(0);
  if (x.rank() != 2 || h_prev.rank() != 2 || x.extent(1) != input ||
      h_prev.extent(1) != hidden || x.extent(0) != h_prev.extent(0)) {
    throw std::invalid_argument("gru_step: shape mismatch, x " + shape_to_string(x.shape()) +
                                ", h " + shape_to_string(h_prev.shape()) + ", w " +
                                shape_to_string(layer.w.value.shape()));
  }
  const Index rows = x.extent(0);

  RowMatrixXd gates = x.matrix() * layer.w.value.matrix();
  gates.rowwise() += layer.b.value.matrix().row(0);
  RowMatrixXd zr = h_prev.matrix() * layer.u.value.matrix().leftCols(2 * hidden);

  Eigen::ArrayXXd z =
      (gates.leftCols(hidden) + zr.leftCols(hidden)).array().unaryExpr([](double v) {
        return sigmoid_value(v);
      });
  Eigen::ArrayXXd r =
      (gates.middleCols(hidden, hidden) + zr.rightCols(hidden)).array().unaryExpr([](double v) {
        return sigmoid_value(v);
      });
  RowMatrixXd gated = (r * h_prev.matrix().array()).matrix();
  Eigen::ArrayXXd n =
      (gates.rightCols(hidden) + gated * layer.u.value.matrix().rightCols(hidden)).array().tanh();

  Tensor out({rows, hidden});
  out.matrix() = ((1.0 - z) * h_prev.matrix().array() + z * n).matrix();
  return out;
}

std::vector<Tensor> encode(const ModelParams& params, const Tensor& e) {
  const ModelConfig& c = params.config;
  if (e.rank() != 2 || e.extent(0) < 1) {
    throw std::invalid_argument("encode: input must have at least one step, got shape " +
                                shape_to_string(e.shape()));
  }
  if (e.extent(1) != c.n1) {
    throw std::invalid_argument("encode: expected " + std::to_string(c.n1) +
                                " channels, got shape " + shape_to_string(e.shape()));
  }
  if (!e.all_finite()) {
    throw std::invalid_argument("encode: input contains non-finite entries");
  }
  const Index steps = e.extent(0);
  std::vector<Tensor> seq;
  seq.reserve(static_cast<std::size_t>(steps));
  for (Index t = 0; t < steps; ++t) {
    Tensor row({1, c.n1});
    row.matrix() = e.matrix().row(t);
    seq.push_back(std::move(row));
  }
  std::vector<Tensor> context;
  for (const auto& layer : params.encoder) {
    const Index h = layer.u.value.extent(0);
    Tensor state = Tensor::zeros({1, h});
    for (Index t = 0; t < steps; ++t) {
      state = gru_step(layer, seq[static_cast<std::size_t>(t)], state);
      seq[static_cast<std::size_t>(t)] = state;
    }
    context.push_back(state);
  }
  return context;
}

ForecastDistribution decode(const ModelParams& params, const std::vector<Tensor>& context,
                            const Tensor& d) {
  const ModelConfig& c = params.config;
  if (d.rank() != 2 || d.extent(0) != c.t_d || d.extent(1) != c.n2()) {
    throw std::invalid_argument("decode: input shape " + shape_to_string(d.shape()) +
                                " does not match (" + std::to_string(c.t_d) + ", " +
                                std::to_string(c.n2()) + ")");
  }
  if (context.size() != params.decoder.size()) {
    throw std::invalid_argument("decode: context has " + std::to_string(context.size()) +
                                " layers, decoder has " + std::to_string(params.decoder.size()));
  }
  for (std::size_t l = 0; l < context.size(); ++l) {
    const Index h = params.decoder[l].u.value.extent(0);
    if (context[l].rank() != 2 || context[l].extent(1) != h) {
      throw std::invalid_argument("decode: context layer " + std::to_string(l) + " shape " +
                                  shape_to_string(context[l].shape()) + " does not match hidden " +
                                  std::to_string(h));
    }
  }

  std::vector<Tensor> states = context;
  ForecastDistribution out;
  out.mean = Tensor({c.t_d, c.n3});
  out.variance = Tensor({c.t_d, c.n3});
  const Index dec_in = c.embed_dim_station + c.embed_dim_time + c.n2_nwp;

  for (Index t = 0; t < c.t_d; ++t) {
    const Index tid = checked_id(d(t, 0), c.t_d, "time");
    const Index sta = checked_id(d(t, 1), c.num_stations, "station");
    Tensor x({1, dec_in});
    Index col = 0;
    for (Index k = 0; k < c.embed_dim_station; ++k) x[col++] = params.station_embed.value(sta, k);
    for (Index k = 0; k < c.embed_dim_time; ++k) x[col++] = params.time_embed.value(tid, k);
    for (Index k = 0; k < c.n2_nwp; ++k) x[col++] = d(t, 2 + k);

    for (std::size_t l = 0; l < params.decoder.size(); ++l) {
      states[l] = gru_step(params.decoder[l], l == 0 ? x : states[l - 1], states[l]);
    }
    const Tensor& top = states.back();
    Eigen::RowVectorXd head = top.matrix() * params.head_w.value.matrix();
    head += params.head_b.value.matrix().row(0);
    for (Index k = 0; k < c.n3; ++k) {
      out.mean(t, k) = head(k);
      out.variance(t, k) = softplus_value(head(c.n3 + k)) + c.min_variance;
    }
  }
  return out;
}

ForecastDistribution forward(const ModelParams& params, const Sample& sample) {
  check_sample_shapes(params.config, sample);
  return decode(params, encode(params, sample.encoder_input), sample.decoder_input);
}

GraphOutputs forward_graph(Tape& tape, const ModelParams& params,
                           const std::vector<const Sample*>& batch) {
  const ModelConfig& c = params.config;
  if (batch.empty()) throw std::invalid_argument("forward_graph: empty batch");
  for (const Sample* s : batch) check_sample_shapes(c, *s);
  const Index b = static_cast<Index>(batch.size());

  Var ones = tape.constant(Tensor::full({b, 1}, 1.0));
  Var one_scalar = tape.constant_scalar(1.0);

  struct LayerVars {
    Var w, uzr, un, bias_rows;
    Index hidden;
  };
  auto bind_layer = [&](const GruLayerParams& layer) {
    LayerVars v;
    v.hidden = layer.u.value.extent(0);
    v.w = tape.parameter(layer.w);
    Var u = tape.parameter(layer.u);
    v.uzr = tape.slice(u, 1, 0, 2 * v.hidden);
    v.un = tape.slice(u, 1, 2 * v.hidden, v.hidden);
    v.bias_rows = tape.matmul(ones, tape.parameter(layer.b));
    return v;
  };
  auto step = [&](const LayerVars& lv, Var x, Var h_prev) {
    const Index h = lv.hidden;
    Var gates = tape.add(tape.matmul(x, lv.w), lv.bias_rows);
    Var zr = tape.matmul(h_prev, lv.uzr);
    Var z = tape.sigmoid(tape.add(tape.slice(gates, 1, 0, h), tape.slice(zr, 1, 0, h)));
    Var r = tape.sigmoid(tape.add(tape.slice(gates, 1, h, h), tape.slice(zr, 1, h, h)));
    Var n = tape.tanh(
        tape.add(tape.slice(gates, 1, 2 * h, h), tape.matmul(tape.mul(r, h_prev), lv.un)));
    return tape.add(tape.mul(tape.sub(one_scalar, z), h_prev), tape.mul(z, n));
  };

  // Encoder over stacked per-step inputs.
  std::vector<Var> seq;
  seq.reserve(static_cast<std::size_t>(c.t_e));
  for (Index t = 0; t < c.t_e; ++t) {
    Tensor xt({b, c.n1});
    for (Index i = 0; i < b; ++i) {
      xt.matrix().row(i) = batch[static_cast<std::size_t>(i)]->encoder_input.matrix().row(t);
    }
    seq.push_back(tape.constant(std::move(xt)));
  }
  std::vector<Var> context;
  for (const auto& layer : params.encoder) {
    LayerVars lv = bind_layer(layer);
    Var state = tape.constant(Tensor::zeros({b, lv.hidden}));
    for (Index t = 0; t < c.t_e; ++t) {
      state = step(lv, seq[static_cast<std::size_t>(t)], state);
      seq[static_cast<std::size_t>(t)] = state;
    }
    context.push_back(state);
  }

  // Decoder ids and forecast channels.
  Var sta_table = tape.parameter(params.station_embed);
  Var time_table = tape.parameter(params.time_embed);
  std::vector<Index> sta_ids;
  sta_ids.reserve(static_cast<std::size_t>(b));
  for (const Sample* s : batch) {
    sta_ids.push_back(checked_id(s->decoder_input(0, 1), c.num_stations, "station"));
  }
  Var sta_rows = tape.gather_rows(sta_table, sta_ids);

  std::vector<LayerVars> dec_layers;
  for (const auto& layer : params.decoder) dec_layers.push_back(bind_layer(layer));
  std::vector<Var> states = context;

  Var head_w = tape.parameter(params.head_w);
  Var head_bias_rows = tape.matmul(ones, tape.parameter(params.head_b));
  std::vector<Var> mean_steps, rawvar_steps;
  mean_steps.reserve(static_cast<std::size_t>(c.t_d));
  rawvar_steps.reserve(static_cast<std::size_t>(c.t_d));

  for (Index t = 0; t < c.t_d; ++t) {
    std::vector<Index> time_ids;
    time_ids.reserve(static_cast<std::size_t>(b));
    Tensor nwp({b, c.n2_nwp});
    for (Index i = 0; i < b; ++i) {
      const Tensor& d = batch[static_cast<std::size_t>(i)]->decoder_input;
      time_ids.push_back(checked_id(d(t, 0), c.t_d, "time"));
      for (Index k = 0; k < c.n2_nwp; ++k) nwp(i, k) = d(t, 2 + k);
    }
    std::vector<Var> parts{sta_rows, tape.gather_rows(time_table, time_ids)};
    if (c.n2_nwp > 0) parts.push_back(tape.constant(std::move(nwp)));
    Var x = tape.concat(parts, 1);

    for (std::size_t l = 0; l < dec_layers.size(); ++l) {
      states[l] = step(dec_layers[l], l == 0 ? x : states[l - 1], states[l]);
    }
    Var head = tape.add(tape.matmul(states.back(), head_w), head_bias_rows);
    mean_steps.push_back(tape.slice(head, 1, 0, c.n3));
    rawvar_steps.push_back(tape.slice(head, 1, c.n3, c.n3));
  }

  GraphOutputs out;
  out.batch = b;
  out.mean = tape.concat(mean_steps, 0);
  Var rawvar = tape.concat(rawvar_steps, 0);
  out.variance = tape.add(tape.softplus(rawvar), tape.constant_scalar(c.min_variance));
  return out;
}

Tensor stack_targets(const std::vector<const Sample*>& batch) {
  if (batch.empty()) throw std::invalid_argument("stack_targets: empty batch");
  const Index b = static_cast<Index>(batch.size());
  const Index t_d = batch[0]->target.extent(0);
  const Index n3 = batch[0]->target.extent(1);
  Tensor out({t_d * b, n3});
  for (Index i = 0; i < b; ++i) {
    const Tensor& y = batch[static_cast<std::size_t>(i)]->target;
    if (y.extent(0) != t_d || y.extent(1) != n3) {
      throw std::invalid_argument("stack_targets: inconsistent target shapes in batch");
    }
    for (Index t = 0; t < t_d; ++t) {
      out.matrix().row(t * b + i) = y.matrix().row(t);
    }
  }
  return out;
}

}  // namespace duq
