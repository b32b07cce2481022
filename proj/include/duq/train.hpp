// SPDX-License-Identifier: Apache-2.0
//
// Batched stochastic optimization with periodic validation and early
// stopping. Every iteration samples a batch with replacement, runs the
// taped forward pass, backpropagates the chosen objective, clips the
// global gradient norm, and applies an adaptive moment update. Every
// validation_interval iterations the full validation set is scored; the
// best-scoring parameters are snapshotted and training stops after
// early_stop_tolerance consecutive validations without improvement.

#pragma once

#include "duq/autodiff.hpp"
#include "duq/data.hpp"
#include "duq/model.hpp"

#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace duq {

enum class LossKind { kNle, kMse, kMae };

/// Accepts "nle", "mse", or "mae".
LossKind loss_kind_from_string(const std::string& name);
std::string to_string(LossKind kind);

struct TrainConfig {
  Index batch_size = 32;
  Index max_iterations = 10000;
  Index validation_interval = 50;   // vi
  Index early_stop_tolerance = 10;  // est
  LossKind loss_kind = LossKind::kNle;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double clip_norm = 5.0;
  std::uint64_t seed = 0;
};

void validate(const TrainConfig& config);

struct ValidationEvent {
  Index iteration = 0;
  double val_loss = 0.0;
  bool is_best = false;
};

struct TrainHistory {
  std::vector<ValidationEvent> events;
  Index total_iterations = 0;  // ti; equals vt * vi when early stopping fired
  Index validation_times = 0;  // vt
  double best_val_loss = std::numeric_limits<double>::infinity();
  Index best_iteration = 0;
};

/// Thrown when the training loss leaves the finite range.
class TrainingDiverged : public std::runtime_error {
 public:
  explicit TrainingDiverged(Index iteration);
  Index iteration = 0;
};

/// Adaptive moment estimation over a fixed parameter list. Parameters
/// missing from a gradient store are treated as having zero gradient.
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<Parameter*> params, double learning_rate, double beta1, double beta2,
                double epsilon);
  void step(const GradientStore& grads);

 private:
  std::vector<Parameter*> params_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  double lr_;
  double beta1_;
  double beta2_;
  double epsilon_;
  Index t_ = 0;
};

/// Best-so-far bookkeeping: strict improvement resets the failure count,
/// ties and regressions increment it, and tolerance failures in a row stop.
class EarlyStopTracker {
 public:
  explicit EarlyStopTracker(Index tolerance);
  struct Decision {
    bool is_best = false;
    bool should_stop = false;
  };
  Decision observe(double val_loss);
  double best() const { return best_; }

 private:
  Index tolerance_;
  Index fails_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
};

/// Mean per-sample loss over every (date, station) pair, in date-major
/// order, without touching any tape.
double validation_loss(const ModelParams& params, const DatasetTensors& data, LossKind kind);

struct TrainResult {
  ModelParams params;
  TrainHistory history;
};

TrainResult train(const ModelParams& initial, const DatasetTensors& train_data,
                  const DatasetTensors& val_data, const TrainConfig& config);

/// CSV log, one line per validation event: iter,val_loss,is_best.
void write_training_log(const TrainHistory& history, const std::string& path);

}  // namespace duq
