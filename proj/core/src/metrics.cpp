// Copyright 2026 The changeadapt Authors
// SPDX-License-Identifier: Apache-2.0

#include "changeadapt/metrics.h"

#include <cstdio>
#include <sstream>

#include "changeadapt/errors.h"

namespace changeadapt {

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& other) {
  tp += other.tp;
  tn += other.tn;
  fp += other.fp;
  fn += other.fn;
  return *this;
}

namespace {

torch::Tensor as_binary(const torch::Tensor& t, const char* what) {
  if (t.is_floating_point() || t.is_complex()) {
    throw DataError(std::string(what) + " must be an integral or boolean map");
  }
  auto v = t.to(torch::kInt64);
  if (((v != 0) & (v != 1)).any().item<bool>()) {
    throw DataError(std::string(what) + " holds values other than 0 and 1");
  }
  return v.to(torch::kBool);
}

double ratio(int64_t num, int64_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

ConfusionCounts accumulate(const torch::Tensor& prediction, const torch::Tensor& ground_truth,
                           ConfusionCounts counts) {
  if (prediction.sizes() != ground_truth.sizes()) {
    throw ShapeError("prediction and ground truth shapes differ");
  }
  auto p = as_binary(prediction, "prediction");
  auto g = as_binary(ground_truth, "ground truth");
  counts.tp += (p & g).sum().item<int64_t>();
  counts.fp += (p & ~g).sum().item<int64_t>();
  counts.fn += (~p & g).sum().item<int64_t>();
  counts.tn += (~p & ~g).sum().item<int64_t>();
  return counts;
}

MetricReport report(const ConfusionCounts& c) {
  if (c.total() <= 0) throw DataError("cannot report metrics over zero pixels");
  MetricReport r;
  r.oa = ratio(c.tp + c.tn, c.total());
  if (c.tp + c.fp + c.fn == 0) {
    r.iou = r.f1 = r.recall = r.precision = 1.0;
    return r;
  }
  r.iou = ratio(c.tp, c.tp + c.fn + c.fp);
  r.recall = ratio(c.tp, c.tp + c.fn);
  r.precision = ratio(c.tp, c.tp + c.fp);
  r.f1 = r.precision + r.recall > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

nlohmann::json to_json(const MetricReport& m, const ConfusionCounts& c) {
  return {{"OA", m.oa},
          {"IoU", m.iou},
          {"F1", m.f1},
          {"Rec", m.recall},
          {"Prec", m.precision},
          {"counts", {{"TP", c.tp}, {"TN", c.tn}, {"FP", c.fp}, {"FN", c.fn}}},
          {"convention", "empty denominators report 0; error-free all-negative maps report 1"}};
}

std::string format_table(const MetricReport& m, const ConfusionCounts& c) {
  std::ostringstream os;
  char line[128];
  std::snprintf(line, sizeof(line), "%-8s%-8s%-8s%-8s%-8s\n", "OA", "IoU", "F1", "Rec", "Prec");
  os << line;
  std::snprintf(line, sizeof(line), "%-8.2f%-8.2f%-8.2f%-8.2f%-8.2f\n", 100 * m.oa, 100 * m.iou,
                100 * m.f1, 100 * m.recall, 100 * m.precision);
  os << line;
  std::snprintf(line, sizeof(line), "TP=%lld TN=%lld FP=%lld FN=%lld\n",
                static_cast<long long>(c.tp), static_cast<long long>(c.tn),
                static_cast<long long>(c.fp), static_cast<long long>(c.fn));
  os << line;
  return os.str();
}

std::vector<int64_t> window_offsets(int64_t length, int64_t window, int64_t stride) {
  if (stride <= 0) throw ConfigError("sliding-window stride must be positive");
  if (window <= 0 || window > length) {
    throw ShapeError("window " + std::to_string(window) + " does not fit length " +
                     std::to_string(length));
  }
  if (stride > window) throw ConfigError("sliding-window stride must not exceed the window");
  std::vector<int64_t> offsets;
  for (int64_t o = 0; o + window < length; o += stride) offsets.push_back(o);
  offsets.push_back(length - window);
  return offsets;
}

SlidingWindowResult sliding_window_infer(const FusedPredictor& predictor,
                                         const torch::Tensor& image_a, const torch::Tensor& image_b,
                                         int64_t window, int64_t stride) {
  if (image_a.sizes() != image_b.sizes() || image_a.dim() != 4) {
    throw ShapeError("sliding-window inference needs two [B, 3, H, W] images of equal shape");
  }
  const int64_t h = image_a.size(2);
  const int64_t w = image_a.size(3);
  const auto rows = window_offsets(h, window, stride);
  const auto cols = window_offsets(w, window, stride);

  SlidingWindowResult out;
  if (rows.size() == 1 && cols.size() == 1) {
    out.probabilities = predictor(image_a, image_b);
    out.coverage = torch::ones({h, w}, torch::kInt64);
    out.windows = 1;
    return out;
  }
  auto sum = torch::zeros({image_a.size(0), 2, h, w}, image_a.options());
  out.coverage = torch::zeros({h, w}, torch::kInt64);
  for (int64_t top : rows) {
    for (int64_t left : cols) {
      auto crop = [&](const torch::Tensor& t) {
        return t.narrow(2, top, window).narrow(3, left, window);
      };
      auto probs = predictor(crop(image_a), crop(image_b));
      crop(sum).add_(probs);
      out.coverage.narrow(0, top, window).narrow(1, left, window).add_(1);
      ++out.windows;
    }
  }
  out.probabilities = sum / out.coverage.to(sum.scalar_type());
  return out;
}

int64_t tile_count(int64_t height, int64_t width, int64_t size) {
  if (size <= 0) throw ConfigError("tile size must be positive");
  return (height / size) * (width / size);
}

std::vector<BiTemporalSample> tile(const BiTemporalSample& sample, int64_t size) {
  if (size <= 0 || size > sample.height() || size > sample.width()) {
    throw ShapeError("tile size " + std::to_string(size) + " exceeds image " +
                     std::to_string(sample.height()) + "x" + std::to_string(sample.width()));
  }
  std::vector<BiTemporalSample> out;
  const int64_t rows = sample.height() / size;
  const int64_t cols = sample.width() / size;
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t c = 0; c < cols; ++c) {
      auto cut = [&](const torch::Tensor& t) {
        return t.narrow(-2, r * size, size).narrow(-1, c * size, size).contiguous();
      };
      out.push_back({cut(sample.img_a), cut(sample.img_b), cut(sample.mask),
                     sample.id + "_r" + std::to_string(r) + "_c" + std::to_string(c)});
    }
  }
  return out;
}

torch::Tensor render_overlay(const torch::Tensor& prediction, const torch::Tensor& ground_truth) {
  if (prediction.dim() != 2 || prediction.sizes() != ground_truth.sizes()) {
    throw ShapeError("overlay needs two [H, W] maps of equal shape");
  }
  auto p = as_binary(prediction, "prediction");
  auto g = as_binary(ground_truth, "ground truth");
  auto out = torch::zeros({prediction.size(0), prediction.size(1), 3}, torch::kUInt8);
  auto tp = (p & g).unsqueeze(2);
  auto fp = (p & ~g);
  auto fn = (~p & g);
  out.masked_fill_(tp.expand({-1, -1, 3}), 255);
  out.select(2, 1).masked_fill_(fp, 255);
  out.select(2, 0).masked_fill_(fn, 255);
  return out;
}

}  // namespace changeadapt
