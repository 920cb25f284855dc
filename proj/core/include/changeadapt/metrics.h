// Copyright 2026 The changeadapt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <torch/torch.h>

#include <nlohmann/json.hpp>

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "changeadapt/data.h"

namespace changeadapt {

/// Binary confusion counts for the change class.
struct ConfusionCounts {
  int64_t tp = 0;
  int64_t tn = 0;
  int64_t fp = 0;
  int64_t fn = 0;

  int64_t total() const { return tp + tn + fp + fn; }
  ConfusionCounts& operator+=(const ConfusionCounts& other);
  friend ConfusionCounts operator+(ConfusionCounts a, const ConfusionCounts& b) { return a += b; }
  bool operator==(const ConfusionCounts&) const = default;
};

/// Adds one prediction/ground-truth pair of any matching shape. Both must be
/// integral or boolean tensors holding only 0 and 1.
ConfusionCounts accumulate(const torch::Tensor& prediction, const torch::Tensor& ground_truth,
                           ConfusionCounts counts = {});

struct MetricReport {
  double oa = 0.0;
  double iou = 0.0;
  double f1 = 0.0;
  double recall = 0.0;
  double precision = 0.0;
};

/// Ratios with a zero denominator report 0, except that a prediction with
/// no positives and no errors reports 1 for every metric.
MetricReport report(const ConfusionCounts& counts);

nlohmann::json to_json(const MetricReport& metrics, const ConfusionCounts& counts);
/// Fixed-width table, percentages with two decimals.
std::string format_table(const MetricReport& metrics, const ConfusionCounts& counts);

/// Window origins along one axis: stride steps, then one clamped to the edge.
std::vector<int64_t> window_offsets(int64_t length, int64_t window, int64_t stride);

/// Maps an image pair [B, 3, h, w] to fused probabilities [B, 2, h, w].
using FusedPredictor = std::function<torch::Tensor(const torch::Tensor&, const torch::Tensor&)>;

struct SlidingWindowResult {
  torch::Tensor probabilities;  // [B, 2, H, W], overlap-averaged
  torch::Tensor coverage;       // [H, W] windows per pixel
  int64_t windows = 0;
};

SlidingWindowResult sliding_window_infer(const FusedPredictor& predictor,
                                         const torch::Tensor& image_a, const torch::Tensor& image_b,
                                         int64_t window, int64_t stride);

/// floor(H / size) * floor(W / size) non-overlapping patches, row-major.
std::vector<BiTemporalSample> tile(const BiTemporalSample& sample, int64_t size);
int64_t tile_count(int64_t height, int64_t width, int64_t size);

/// RGB overlay [H, W, 3] uint8: TP white, TN black, FP green, FN red.
torch::Tensor render_overlay(const torch::Tensor& prediction, const torch::Tensor& ground_truth);

}  // namespace changeadapt
