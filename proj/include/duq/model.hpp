// SPDX-License-Identifier: Apache-2.0
//
// GRU sequence-to-sequence forecaster with a dual head. The encoder runs
// over the observed history; its final hidden state per layer seeds the
// matching decoder layer. Each decoder step reads station and time
// embeddings plus the numerical forecast channels (never the targets) and
// the head emits a mean and a softplus-positive variance per target.

#pragma once

#include "duq/autodiff.hpp"
#include "duq/rng.hpp"
#include "duq/sample.hpp"
#include "duq/tensor.hpp"

#include <vector>

namespace duq {

struct ModelConfig {
  std::vector<Index> hidden_sizes{32, 32};
  Index embed_dim_station = 2;
  Index embed_dim_time = 2;
  Index num_stations = 1;
  Index n1 = 1;        // observed channels per encoder step
  Index n2_nwp = 0;    // numerical forecast channels per decoder step
  Index n3 = 1;        // target channels
  Index t_e = 1;       // encoder steps
  Index t_d = 1;       // decoder steps
  double min_variance = 1e-6;
  std::uint64_t seed = 0;

  /// Decoder input width: two id columns plus the forecast channels.
  Index n2() const { return 2 + n2_nwp; }
};

void validate(const ModelConfig& config);

/// One GRU layer, gates fused side by side in order [update | reset | new].
struct GruLayerParams {
  Parameter w;  // (input, 3H)
  Parameter u;  // (H, 3H)
  Parameter b;  // (1, 3H)
};

struct ModelParams {
  ModelConfig config;
  std::vector<GruLayerParams> encoder;
  std::vector<GruLayerParams> decoder;
  Parameter station_embed;  // (num_stations, embed_dim_station)
  Parameter time_embed;     // (T_D, embed_dim_time)
  Parameter head_w;         // (H_top, 2*N3)
  Parameter head_b;         // (1, 2*N3)
};

/// Parameters in a fixed traversal order (encoder layers, decoder layers,
/// embeddings, head). Initialization, optimizer state, and checkpoints all
/// rely on this order being stable.
std::vector<Parameter*> ordered_params(ModelParams& params);
std::vector<const Parameter*> ordered_params(const ModelParams& params);

/// Total scalar count implied by the config alone.
Index param_count(const ModelConfig& config);

/// Weights Glorot-uniform, biases zero, embeddings uniform in ±0.05.
/// Identical seeds give bitwise-identical parameters.
ModelParams init_params(const ModelConfig& config, Rng& rng);

struct ForecastDistribution {
  Tensor mean;      // (T_D, N3), normalized space
  Tensor variance;  // (T_D, N3), ≥ min_variance
};

/// One GRU step over a batch of row vectors: x (rows, input), h_prev
/// (rows, H) -> (rows, H).
Tensor gru_step(const GruLayerParams& layer, const Tensor& x, const Tensor& h_prev);

/// Final hidden state of every encoder layer after consuming E (T_E, N1).
std::vector<Tensor> encode(const ModelParams& params, const Tensor& e);

/// Runs the decoder from the per-layer context over D (T_D, 2+nwp).
ForecastDistribution decode(const ModelParams& params, const std::vector<Tensor>& context,
                            const Tensor& d);

/// decode(encode(E), D); pure in (params, sample); never reads the target.
ForecastDistribution forward(const ModelParams& params, const Sample& sample);

/// Tape-recorded batched forward. mean/variance are stacked step-major:
/// row t*B + i holds step t of batch element i, shape (T_D*B, N3).
struct GraphOutputs {
  Var mean;
  Var variance;
  Index batch = 0;
};
GraphOutputs forward_graph(Tape& tape, const ModelParams& params,
                           const std::vector<const Sample*>& batch);

/// Targets stacked in the same step-major layout as forward_graph output.
Tensor stack_targets(const std::vector<const Sample*>& batch);

}  // namespace duq
