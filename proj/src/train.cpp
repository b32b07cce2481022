// SPDX-License-Identifier: Apache-2.0

#include "duq/train.hpp"

#include "duq/loss.hpp"
#include "duq/serialize.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>

namespace duq {

LossKind loss_kind_from_string(const std::string& name) {
  if (name == "nle") return LossKind::kNle;
  if (name == "mse") return LossKind::kMse;
  if (name == "mae") return LossKind::kMae;
  throw std::invalid_argument("unknown loss kind '" + name + "', expected nle, mse, or mae");
}

std::string to_string(LossKind kind) {
  switch (kind) {
    case LossKind::kNle: return "nle";
    case LossKind::kMse: return "mse";
    case LossKind::kMae: return "mae";
  }
  throw std::logic_error("unreachable loss kind");
}

void validate(const TrainConfig& c) {
  const auto fail = [](const char* why) {
    throw std::invalid_argument(std::string("TrainConfig: ") + why);
  };
  if (c.batch_size < 1) fail("batch_size must be at least 1");
  if (c.validation_interval < 1) fail("validation_interval must be at least 1");
  if (c.early_stop_tolerance < 1) fail("early_stop_tolerance must be at least 1");
  if (c.max_iterations < c.validation_interval) {
    fail("max_iterations must cover at least one validation interval");
  }
  if (!(c.learning_rate > 0.0)) fail("learning_rate must be positive");
  if (!(c.beta1 >= 0.0 && c.beta1 < 1.0)) fail("beta1 must lie in [0, 1)");
  if (!(c.beta2 >= 0.0 && c.beta2 < 1.0)) fail("beta2 must lie in [0, 1)");
  if (!(c.adam_epsilon > 0.0)) fail("adam_epsilon must be positive");
  if (!(c.clip_norm > 0.0)) fail("clip_norm must be positive");
}

TrainingDiverged::TrainingDiverged(Index at)
    : std::runtime_error("training loss became non-finite at iteration " + std::to_string(at)),
      iteration(at) {}

AdamOptimizer::AdamOptimizer(std::vector<Parameter*> params, double learning_rate, double beta1,
                             double beta2, double epsilon)
    : params_(std::move(params)), lr_(learning_rate), beta1_(beta1), beta2_(beta2),
      epsilon_(epsilon) {
  for (const Parameter* p : params_) {
    m_.push_back(Tensor::zeros(p->value.shape()));
    v_.push_back(Tensor::zeros(p->value.shape()));
  }
}

void AdamOptimizer::step(const GradientStore& grads) {
  ++t_;
  const double m_corr = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double v_corr = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = *params_[i];
    if (!grads.contains(p)) continue;
    const Tensor& g = grads.grad(p);
    auto m = m_[i].array();
    auto v = v_[i].array();
    m = beta1_ * m + (1.0 - beta1_) * g.array();
    v = beta2_ * v + (1.0 - beta2_) * g.array().square();
    p.value.array() -= lr_ * (m / m_corr) / ((v / v_corr).sqrt() + epsilon_);
  }
}

EarlyStopTracker::EarlyStopTracker(Index tolerance) : tolerance_(tolerance) {
  if (tolerance_ < 1) throw std::invalid_argument("EarlyStopTracker: tolerance must be positive");
}

EarlyStopTracker::Decision EarlyStopTracker::observe(double val_loss) {
  Decision d;
  if (val_loss < best_) {
    best_ = val_loss;
    fails_ = 0;
    d.is_best = true;
  } else {
    ++fails_;
  }
  d.should_stop = fails_ >= tolerance_;
  return d;
}

double validation_loss(const ModelParams& params, const DatasetTensors& data, LossKind kind) {
  if (data.dates() < 1 || data.stations() < 1) {
    throw std::invalid_argument("validation_loss: empty dataset");
  }
  double total = 0.0;
  Index count = 0;
  for (Index i = 0; i < data.dates(); ++i) {
    for (Index s = 0; s < data.stations(); ++s) {
      const Sample sample = extract_sample(data, i, s);
      const ForecastDistribution f = forward(params, sample);
      switch (kind) {
        case LossKind::kNle:
          total += nle_value(f.mean, f.variance, sample.target, 1).value;
          break;
        case LossKind::kMse:
          total += mse_value(f.mean, sample.target).value;
          break;
        case LossKind::kMae:
          total += mae_value(f.mean, sample.target).value;
          break;
      }
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

TrainResult train(const ModelParams& initial, const DatasetTensors& train_data,
                  const DatasetTensors& val_data, const TrainConfig& config) {
  validate(config);
  if (train_data.dates() < 1) throw std::invalid_argument("train: empty training set");
  if (val_data.dates() < 1) throw std::invalid_argument("train: empty validation set");

  TrainResult result;
  result.params = initial;
  ModelParams& params = result.params;
  TrainHistory& history = result.history;

  AdamOptimizer optimizer(ordered_params(params), config.learning_rate, config.beta1, config.beta2,
                          config.adam_epsilon);
  EarlyStopTracker stopper(config.early_stop_tolerance);
  Rng rng(config.seed);

  ModelParams best = params;
  Index iter = 0;
  while (iter < config.max_iterations) {
    ++iter;
    const std::vector<Sample> batch = sample_batch(train_data, config.batch_size, rng);
    std::vector<const Sample*> views;
    views.reserve(batch.size());
    for (const Sample& s : batch) views.push_back(&s);

    Tape tape;
    const GraphOutputs out = forward_graph(tape, params, views);
    const Tensor y = stack_targets(views);
    Var loss;
    switch (config.loss_kind) {
      case LossKind::kNle:
        loss = nle_objective(tape, out.mean, out.variance, y, out.batch);
        break;
      case LossKind::kMse:
        loss = mse_objective(tape, out.mean, y);
        break;
      case LossKind::kMae:
        loss = mae_objective(tape, out.mean, y);
        break;
    }
    if (!std::isfinite(tape.value(loss)[0])) throw TrainingDiverged(iter);

    GradientStore grads = tape.backward(loss);
    const double norm = grads.global_norm();
    if (!std::isfinite(norm)) throw TrainingDiverged(iter);
    if (norm > config.clip_norm) grads.scale(config.clip_norm / norm);
    optimizer.step(grads);

    if (iter % config.validation_interval == 0) {
      const double val = validation_loss(params, val_data, config.loss_kind);
      if (!std::isfinite(val)) throw TrainingDiverged(iter);
      const EarlyStopTracker::Decision d = stopper.observe(val);
      history.events.push_back({iter, val, d.is_best});
      ++history.validation_times;
      if (d.is_best) {
        best = params;
        history.best_val_loss = val;
        history.best_iteration = iter;
      }
      if (d.should_stop) break;
    }
  }
  history.total_iterations = iter;
  result.params = best;
  return result;
}

void write_training_log(const TrainHistory& history, const std::string& path) {
  std::ostringstream out;
  out << "iter,val_loss,is_best\n";
  char buf[32];
  for (const ValidationEvent& e : history.events) {
    std::snprintf(buf, sizeof(buf), "%.17g", e.val_loss);
    out << e.iteration << ',' << buf << ',' << (e.is_best ? 1 : 0) << "\n";
  }
  atomic_write_file(path, out.str());
}

}  // namespace duq
