// SPDX-License-Identifier: Apache-2.0
//
// On-disk formats: a small binary tensor container, a dataset directory
// (three tensors plus a JSON sidecar with date labels and normalization
// ranges), and a model checkpoint holding the config and every named
// parameter. All writers go through an atomic replace so readers never
// observe partial files.

#pragma once

#include "duq/data.hpp"
#include "duq/model.hpp"
#include "duq/tensor.hpp"

#include <string>

namespace duq {

/// Writes bytes to a sibling temp file, then renames over the target.
void atomic_write_file(const std::string& path, const std::string& bytes);

void save_tensor(const Tensor& tensor, const std::string& path);
Tensor load_tensor(const std::string& path);

/// Lays out encoder.duqt, decoder.duqt, targets.duqt, and meta.json under
/// dir (created if absent).
void save_dataset(const DatasetTensors& dataset, const std::string& dir);
DatasetTensors load_dataset(const std::string& dir);

void save_checkpoint(const ModelParams& params, const std::string& path);
ModelParams load_checkpoint(const std::string& path);

}  // namespace duq
