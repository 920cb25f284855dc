// Copyright 2026 The changeadapt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "changeadapt/config.h"
#include "changeadapt/data.h"
#include "changeadapt/metrics.h"
#include "changeadapt/model.h"

namespace changeadapt {

/// Sum of the cross-entropies of both branches against one mask [B, H, W].
torch::Tensor change_loss(const ChangeLogits& a, const ChangeLogits& b, const torch::Tensor& mask);

/// Linear warmup from 0 at step 0 to lr at `warmup_steps`, constant afterwards.
double lr_at(int64_t step, double lr, int64_t warmup_steps);

struct EvalResult {
  ConfusionCounts counts;
  MetricReport metrics;
};

/// Fused argmax prediction over every sample. window > 0 switches to
/// sliding-window inference with the given stride (0 selects window / 2).
EvalResult evaluate(ChangeDetectorImpl& model, const std::vector<BiTemporalSample>& samples,
                    const EvalConfig& eval = {});

struct SplitData {
  std::vector<BiTemporalSample> train;
  std::vector<BiTemporalSample> val;
};

/// Synthesised pairs when data.root is empty, PNG folders otherwise.
SplitData load_data(const DataConfig& data);

struct LogRecord {
  int64_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
  std::optional<double> val_iou;
};

struct TrainState {
  int64_t steps = 0;
  int64_t best_step = -1;
  double best_val_iou = -1.0;
  double final_loss = 0.0;
  double seconds = 0.0;
  uint64_t base_checksum_before = 0;
  uint64_t base_checksum_after = 0;
  uint64_t peft_checksum_before = 0;
  uint64_t peft_checksum_after = 0;
  std::vector<LogRecord> log;
};

struct TrainResult {
  /// Holds the weights of the best validation pass.
  ChangeDetector model{nullptr};
  TrainState state;
};

/// Called after every logged or evaluated step.
using TrainCallback = std::function<void(const LogRecord&)>;

/// AdamW over the PEFT and decoder parameters with warmup. Validation runs
/// every eval_interval steps and after the last one; the best pass is written
/// to output_dir/best.ckpt when output_dir is set. Throws if any base encoder
/// weight changed.
TrainResult train(const RunConfig& config, const TrainCallback& callback = {});
TrainResult train(const RunConfig& config, const SplitData& data,
                  const TrainCallback& callback = {});

}  // namespace changeadapt
