// Copyright 2026 The changeadapt Authors
// SPDX-License-Identifier: Apache-2.0

#include "changeadapt/siamese.h"

#include <set>

#include "changeadapt/errors.h"

namespace F = torch::nn::functional;

namespace changeadapt {

torch::Tensor resize_bilinear(const torch::Tensor& x, int64_t height, int64_t width) {
  if (x.size(2) == height && x.size(3) == width) return x;
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .size(std::vector<int64_t>{height, width})
                               .mode(torch::kBilinear)
                               .align_corners(false));
}

void ExchangeSpec::validate(size_t levels) const {
  std::set<int64_t> seen;
  for (int64_t i : swap_indices) {
    if (i < 0 || i >= static_cast<int64_t>(levels)) {
      throw ConfigError("exchange index " + std::to_string(i) + " is outside a " +
                        std::to_string(levels) + "-level stack");
    }
    if (!seen.insert(i).second) {
      throw ConfigError("exchange index " + std::to_string(i) + " is listed twice");
    }
  }
}

std::pair<FeatureStack, FeatureStack> exchange(const FeatureStack& a, const FeatureStack& b,
                                               const ExchangeSpec& spec) {
  if (a.size() != b.size()) {
    throw ShapeError("exchange needs stacks of equal length (" + std::to_string(a.size()) +
                     " vs " + std::to_string(b.size()) + ")");
  }
  for (size_t i = 0; i < a.size(); ++i) {
    if (a.features[i].sizes() != b.features[i].sizes()) {
      throw ShapeError("exchange level " + std::to_string(i) + " has mismatched shapes");
    }
  }
  spec.validate(a.size());
  FeatureStack out_a = a;
  FeatureStack out_b = b;
  for (int64_t i : spec.swap_indices) {
    std::swap(out_a.features[i], out_b.features[i]);
  }
  return {std::move(out_a), std::move(out_b)};
}

FusedChange fuse_predictions(const ChangeLogits& a, const ChangeLogits& b) {
  if (a.logits.sizes() != b.logits.sizes()) {
    throw ShapeError("fuse_predictions needs branch logits of equal shape");
  }
  return {(a.probabilities() + b.probabilities()) * 0.5};
}

FpnImpl::FpnImpl(const std::vector<int64_t>& in_channels, int64_t out_channels)
    : out_channels_(out_channels) {
  for (size_t i = 0; i < in_channels.size(); ++i) {
    lateral_.push_back(register_module(
        "lateral" + std::to_string(i),
        torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels[i], out_channels, 1))));
    smooth_.push_back(register_module(
        "smooth" + std::to_string(i),
        torch::nn::Conv2d(torch::nn::Conv2dOptions(out_channels, out_channels, 3).padding(1))));
  }
}

FeatureStack FpnImpl::forward(const FeatureStack& stack) {
  if (stack.size() != lateral_.size()) {
    throw ShapeError("FPN built for " + std::to_string(lateral_.size()) + " levels, got " +
                     std::to_string(stack.size()));
  }
  if (stack.size() > 1 && !stack.strictly_decreasing()) {
    throw ShapeError(
        "FPN needs strictly decreasing spatial sizes; single-scale stacks go to the MFCE decoder");
  }
  const size_t n = stack.size();
  std::vector<torch::Tensor> merged(n);
  merged[n - 1] = lateral_[n - 1](stack.features[n - 1]);
  for (size_t i = n - 1; i-- > 0;) {
    const auto& f = stack.features[i];
    merged[i] = lateral_[i](f) + resize_bilinear(merged[i + 1], f.size(2), f.size(3));
  }
  FeatureStack out;
  out.strides = stack.strides;
  out.layer_ids = stack.layer_ids;
  for (size_t i = 0; i < n; ++i) out.features.push_back(smooth_[i](merged[i]));
  return out;
}

ResBlockImpl::ResBlockImpl(int64_t channels) {
  auto conv = [&](const char* name) {
    return register_module(
        name, torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, channels, 3).padding(1).bias(false)));
  };
  conv1 = conv("conv1");
  bn1 = register_module("bn1", torch::nn::BatchNorm2d(channels));
  conv2 = conv("conv2");
  bn2 = register_module("bn2", torch::nn::BatchNorm2d(channels));
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x) {
  return x + bn2(conv2(torch::relu(bn1(conv1(x)))));
}

ResDecoderImpl::ResDecoderImpl(int64_t channels, int64_t levels, int64_t head_channels) {
  for (int64_t i = 0; i < levels; ++i) {
    blocks_.push_back(register_module("res" + std::to_string(i), ResBlock(channels)));
  }
  reduce_ = register_module(
      "reduce",
      torch::nn::Sequential(
          torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, head_channels, 1).bias(false)),
          torch::nn::BatchNorm2d(head_channels), torch::nn::ReLU()));
  refine_ = register_module(
      "refine",
      torch::nn::Sequential(
          torch::nn::Conv2d(
              torch::nn::Conv2dOptions(head_channels, head_channels, 3).padding(1).bias(false)),
          torch::nn::BatchNorm2d(head_channels), torch::nn::ReLU(),
          torch::nn::Conv2d(torch::nn::Conv2dOptions(head_channels, 2, 1))));
}

torch::Tensor ResDecoderImpl::forward(const FeatureStack& stack, int64_t out_height,
                                      int64_t out_width) {
  if (stack.size() != blocks_.size()) {
    throw ShapeError("ResDecoder built for " + std::to_string(blocks_.size()) + " levels, got " +
                     std::to_string(stack.size()));
  }
  const size_t n = stack.size();
  auto x = blocks_[n - 1](stack.features[n - 1]);
  for (size_t i = n - 1; i-- > 0;) {
    const auto& finer = stack.features[i];
    x = blocks_[i](resize_bilinear(x, finer.size(2), finer.size(3)) + finer);
  }
  x = resize_bilinear(reduce_->forward(x), out_height, out_width);
  return refine_->forward(x);
}

}  // namespace changeadapt
