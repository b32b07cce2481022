// SPDX-License-Identifier: Apache-2.0
//
// Training objectives. The Gaussian negative log-likelihood treats each
// output cell as an independent normal with predicted mean and variance;
// its additive constant is dropped. MSE and MAE are the plain baselines.

#pragma once

#include "duq/autodiff.hpp"
#include "duq/tensor.hpp"

namespace duq {

/// Scalar objective plus optional per-cell residuals (mean - truth).
struct LossValue {
  double value = 0.0;
  Tensor residuals;
};

/// sum over cells of log(var)/2 + (y - mean)^2 / (2 var), divided by
/// batch_size. Cells are (sample, step, target) triples laid out in rows;
/// dividing the grand total by the batch size sums within each sample and
/// averages across samples. Rejects non-positive variance.
Var nle_objective(Tape& tape, Var mean, Var variance, const Tensor& y, Index batch_size);

/// Mean squared residual over all cells.
Var mse_objective(Tape& tape, Var mean, const Tensor& y);

/// Mean absolute residual over all cells (derivative 0 at exact zeros).
Var mae_objective(Tape& tape, Var mean, const Tensor& y);

// Tape-free evaluations for validation loops.
LossValue nle_value(const Tensor& mean, const Tensor& variance, const Tensor& y,
                    Index batch_size);
LossValue mse_value(const Tensor& mean, const Tensor& y);
LossValue mae_value(const Tensor& mean, const Tensor& y);

}  // namespace duq
