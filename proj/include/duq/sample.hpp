// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "duq/tensor.hpp"

namespace duq {

/// One (date, station) training example.
///   encoder_input: (T_E, N1) observed history, normalized
///   decoder_input: (T_D, 2 + nwp_width); columns are [TimeID, StaID, nwp...]
///   target:        (T_D, N3) normalized truth, NaN where missing
struct Sample {
  Tensor encoder_input;
  Tensor decoder_input;
  Tensor target;
  Index date_idx = 0;
  Index station = 0;
};

}  // namespace duq
