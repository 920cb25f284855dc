// Copyright 2026 The changeadapt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "changeadapt/data.h"
#include "changeadapt/model.h"

namespace changeadapt {

struct OptimizerConfig {
  double lr = 3e-4;
  double weight_decay = 0.01;
};

/// Where training and validation pairs come from. With an empty `root` the
/// pairs are synthesised; equal train/val seeds and counts give a val set
/// identical to the training set.
struct DataConfig {
  std::string root;
  std::string train_split = "train";
  std::string val_split = "val";
  SynthSpec synthetic;
  int64_t train_pairs = 64;
  int64_t val_pairs = 64;
  uint64_t train_seed = 0;
  uint64_t val_seed = 1000000;
  AugmentOptions augment;
};

struct EvalConfig {
  /// 0 runs whole-image inference.
  int64_t window = 0;
  /// 0 selects window / 2.
  int64_t stride = 0;
  int64_t batch_size = 16;
};

struct RunConfig {
  ModelConfig model;
  OptimizerConfig optimizer;
  int64_t batch_size = 8;
  int64_t warmup_steps = 100;
  int64_t max_steps = 2000;
  int64_t eval_interval = 100;
  int64_t log_interval = 10;
  uint64_t seed = 0;
  /// Stop as soon as a validation pass reaches this IoU.
  std::optional<double> stop_at_val_iou;
  DataConfig data;
  EvalConfig eval;
  std::string output_dir;

  void validate() const;
};

nlohmann::json to_json(const RunConfig& config);
/// Missing keys take their defaults; unknown keys are rejected.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const std::filesystem::path& path, const RunConfig& config);

/// Toy defaults: plain ViT (depth 8, width 64, patch 8) with LoRA and MFCE on 64x64 pairs.
RunConfig toy_vit_lora_config();
/// Toy hierarchical encoder (stages 1,1,2,1) with Adapters and the FPN/ResBlock decoder.
RunConfig toy_hierarchical_adapter_config();

}  // namespace changeadapt
