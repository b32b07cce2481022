// SPDX-License-Identifier: Apache-2.0

#include "duq/loss.hpp"

#include <cmath>
#include <stdexcept>

namespace duq {

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch " +
                                shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
  }
}

void check_batch(Index batch_size) {
  if (batch_size <= 0) {
    throw std::invalid_argument("nle: batch_size must be positive, got " +
                                std::to_string(batch_size));
  }
}

void check_variance_positive(const Tensor& variance) {
  if ((variance.array() <= 0.0).any()) {
    throw std::invalid_argument("nle: variance contains non-positive entries");
  }
}

double nle_total(const Tensor& mean, const Tensor& variance, const Tensor& y) {
  double total = 0.0;
  for (Index i = 0; i < mean.size(); ++i) {
    const double r = y[i] - mean[i];
    total += 0.5 * std::log(variance[i]) + r * r / (2.0 * variance[i]);
  }
  return total;
}

}  // namespace

Var nle_objective(Tape& tape, Var mean, Var variance, const Tensor& y, Index batch_size) {
  const Tensor& u = tape.value(mean);
  const Tensor& v = tape.value(variance);
  check_same_shape(u, v, "nle");
  check_same_shape(u, y, "nle");
  check_batch(batch_size);
  check_variance_positive(v);

  const double inv_b = 1.0 / static_cast<double>(batch_size);
  Tensor out = Tensor::scalar(nle_total(u, v, y) * inv_b);
  Tensor truth = y;  // captured by the closure
  return tape.custom({mean, variance}, std::move(out), [truth, inv_b](BackwardContext& ctx) {
    const double g = ctx.adjoint()[0] * inv_b;
    const Tensor& u = ctx.input(0);
    const Tensor& v = ctx.input(1);
    Tensor gu(u.shape());
    Tensor gv(v.shape());
    for (Index i = 0; i < u.size(); ++i) {
      const double r = truth[i] - u[i];
      const double var = v[i];
      gu[i] = g * (-r / var);
      gv[i] = g * (0.5 / var - 0.5 * r * r / (var * var));
    }
    ctx.accumulate(0, std::move(gu));
    ctx.accumulate(1, std::move(gv));
  });
}

Var mse_objective(Tape& tape, Var mean, const Tensor& y) {
  check_same_shape(tape.value(mean), y, "mse");
  Var truth = tape.constant(y);
  return tape.reduce_mean(tape.square(tape.sub(mean, truth)));
}

Var mae_objective(Tape& tape, Var mean, const Tensor& y) {
  const Tensor& u = tape.value(mean);
  check_same_shape(u, y, "mae");
  const double inv_n = 1.0 / static_cast<double>(u.size());
  double total = 0.0;
  for (Index i = 0; i < u.size(); ++i) total += std::abs(u[i] - y[i]);
  Tensor out = Tensor::scalar(total * inv_n);
  Tensor truth = y;
  return tape.custom({mean}, std::move(out), [truth, inv_n](BackwardContext& ctx) {
    const double g = ctx.adjoint()[0] * inv_n;
    const Tensor& u = ctx.input(0);
    Tensor gu(u.shape());
    for (Index i = 0; i < u.size(); ++i) {
      const double r = u[i] - truth[i];
      gu[i] = r > 0.0 ? g : (r < 0.0 ? -g : 0.0);
    }
    ctx.accumulate(0, std::move(gu));
  });
}

LossValue nle_value(const Tensor& mean, const Tensor& variance, const Tensor& y,
                    Index batch_size) {
  check_same_shape(mean, variance, "nle");
  check_same_shape(mean, y, "nle");
  check_batch(batch_size);
  check_variance_positive(variance);
  LossValue out;
  out.value = nle_total(mean, variance, y) / static_cast<double>(batch_size);
  out.residuals = Tensor(mean.shape());
  out.residuals.array() = mean.array() - y.array();
  return out;
}

LossValue mse_value(const Tensor& mean, const Tensor& y) {
  check_same_shape(mean, y, "mse");
  LossValue out;
  out.residuals = Tensor(mean.shape());
  out.residuals.array() = mean.array() - y.array();
  out.value = out.residuals.array().square().mean();
  return out;
}

LossValue mae_value(const Tensor& mean, const Tensor& y) {
  check_same_shape(mean, y, "mae");
  LossValue out;
  out.residuals = Tensor(mean.shape());
  out.residuals.array() = mean.array() - y.array();
  out.value = out.residuals.array().abs().mean();
  return out;
}

}  // namespace duq
