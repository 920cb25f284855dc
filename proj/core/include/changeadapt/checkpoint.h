// Copyright 2026 The changeadapt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>

#include "changeadapt/config.h"
#include "changeadapt/model.h"

namespace changeadapt {

// Checkpoint container, little-endian:
//
//   bytes 0..7   magic "CACKPT01"
//   bytes 8..15  uint64 header length N
//   N bytes      UTF-8 JSON header:
//                  {"format": 1, "step": int, "val_iou": float|null,
//                   "config": <run config>,
//                   "tensors": [{"name", "shape", "offset", "numel"}, ...]}
//   payload      float32 tensor data; `offset` counts bytes from payload start
//
// Tensors cover every parameter and buffer of the model by qualified name.

struct CheckpointInfo {
  RunConfig config;
  int64_t step = 0;
  double val_iou = -1.0;
};

void save_checkpoint(const std::filesystem::path& path, ChangeDetectorImpl& model,
                     const RunConfig& config, int64_t step, double val_iou);

/// Rebuilds the model from the stored config and loads every tensor.
ChangeDetector load_checkpoint(const std::filesystem::path& path, CheckpointInfo* info = nullptr);

/// Copies stored tensors into an existing model with matching names and shapes.
void load_weights(const std::filesystem::path& path, ChangeDetectorImpl& model);

}  // namespace changeadapt
