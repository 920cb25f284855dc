// Copyright 2026 The changeadapt Authors
// SPDX-License-Identifier: Apache-2.0

#include "changeadapt/mfce.h"

#include <algorithm>

#include "changeadapt/errors.h"
#include "changeadapt/siamese.h"

namespace F = torch::nn::functional;

namespace changeadapt {

void MfceOptions::validate() const {
  if (c_mid <= 0) throw ConfigError("mfce c_mid must be positive");
  if (aspp_rates.empty()) throw ConfigError("ASPP needs at least one dilation rate");
  for (int64_t r : aspp_rates) {
    if (r <= 0) throw ConfigError("ASPP rates must be positive");
  }
  if (stage_factors.empty() || stage_factors.size() != stage_channels.size()) {
    throw ConfigError("mfce stage_factors and stage_channels must be non-empty and equally long");
  }
  for (size_t i = 0; i < stage_factors.size(); ++i) {
    if (stage_factors[i] <= 0 || stage_channels[i] <= 0) {
      throw ConfigError("mfce stage factors and widths must be positive");
    }
  }
}

FusionResult attention_fuse(const std::vector<torch::Tensor>& layers,
                            const std::vector<torch::Tensor>& scores) {
  if (layers.empty()) throw ShapeError("attention_fuse needs at least one layer");
  if (layers.size() != scores.size()) {
    throw ShapeError("attention_fuse needs one score map per layer");
  }
  for (size_t i = 1; i < layers.size(); ++i) {
    if (layers[i].sizes() != layers[0].sizes()) {
      throw ShapeError("attention_fuse layers must share one shape");
    }
  }
  auto weights = torch::softmax(torch::cat(scores, 1), 1);
  auto fused = layers[0] * weights.narrow(1, 0, 1);
  for (size_t i = 1; i < layers.size(); ++i) {
    fused = fused + layers[i] * weights.narrow(1, static_cast<int64_t>(i), 1);
  }
  return {fused, weights};
}

int64_t clamp_dilation(int64_t rate, int64_t size) {
  return std::max<int64_t>(1, std::min(rate, (size - 1) / 2));
}

SeparableConvImpl::SeparableConvImpl(int64_t in_channels, int64_t out_channels) {
  depthwise = register_module(
      "depthwise",
      torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels, in_channels, 3).groups(in_channels).bias(false)));
  pointwise = register_module(
      "pointwise", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels, out_channels, 1).bias(false)));
  norm = register_module("norm", torch::nn::BatchNorm2d(out_channels));
}

torch::Tensor SeparableConvImpl::forward(const torch::Tensor& x, int64_t dilation) {
  auto y = F::conv2d(x, depthwise->weight, F::Conv2dFuncOptions()
                                               .padding(dilation)
                                               .dilation(dilation)
                                               .groups(x.size(1)));
  return torch::relu(norm(pointwise(y)));
}

AsppImpl::AsppImpl(int64_t channels, std::vector<int64_t> rates, bool image_pool)
    : rates_(std::move(rates)) {
  for (size_t i = 0; i < rates_.size(); ++i) {
    branches_.push_back(
        register_module("branch" + std::to_string(i), SeparableConv(channels, channels)));
  }
  if (image_pool) {
    pool_proj_ = register_module("pool_proj",
                                 torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, channels, 1)));
  }
  const auto branches = static_cast<int64_t>(rates_.size()) + (image_pool ? 1 : 0);
  project_ = register_module(
      "project",
      torch::nn::Sequential(
          torch::nn::Conv2d(torch::nn::Conv2dOptions(branches * channels, channels, 1).bias(false)),
          torch::nn::BatchNorm2d(channels), torch::nn::ReLU()));
}

std::vector<int64_t> AsppImpl::effective_rates(const torch::Tensor& x) const {
  const int64_t side = std::min(x.size(2), x.size(3));
  std::vector<int64_t> out;
  for (int64_t r : rates_) out.push_back(clamp_dilation(r, side));
  return out;
}

torch::Tensor AsppImpl::forward(const torch::Tensor& x) {
  const auto rates = effective_rates(x);
  std::vector<torch::Tensor> outs;
  for (size_t i = 0; i < branches_.size(); ++i) outs.push_back(branches_[i](x, rates[i]));
  if (pool_proj_) {
    auto pooled = torch::relu(pool_proj_(x.mean({2, 3}, /*keepdim=*/true)));
    outs.push_back(pooled.expand_as(x));
  }
  return project_->forward(torch::cat(outs, 1));
}

ProgressiveUpsamplerImpl::ProgressiveUpsamplerImpl(int64_t in_channels,
                                                   std::vector<int64_t> stage_channels,
                                                   std::vector<int64_t> stage_factors)
    : factors_(std::move(stage_factors)) {
  int64_t width = in_channels;
  for (size_t i = 0; i < stage_channels.size(); ++i) {
    stages_.push_back(
        register_module("stage" + std::to_string(i), SeparableConv(width, stage_channels[i])));
    width = stage_channels[i];
  }
  head_ = register_module("head", torch::nn::Conv2d(torch::nn::Conv2dOptions(width, 2, 1)));
}

torch::Tensor ProgressiveUpsamplerImpl::forward(const torch::Tensor& x, int64_t target_height,
                                                int64_t target_width) {
  int64_t total = 1;
  for (int64_t f : factors_) total *= f;
  if (target_height % total != 0 || target_width % total != 0) {
    throw ShapeError("target " + std::to_string(target_height) + "x" + std::to_string(target_width) +
                     " is not a multiple of the upsampling factor " + std::to_string(total));
  }
  if (x.size(2) * total != target_height || x.size(3) * total != target_width) {
    throw ShapeError("feature grid " + std::to_string(x.size(2)) + "x" + std::to_string(x.size(3)) +
                     " is not 1/" + std::to_string(total) + " of the target");
  }
  auto y = x;
  for (size_t i = 0; i < stages_.size(); ++i) {
    y = stages_[i](resize_bilinear(y, y.size(2) * factors_[i], y.size(3) * factors_[i]));
  }
  return head_(y);
}

MfceDecoderImpl::MfceDecoderImpl(const std::vector<int64_t>& in_channels, MfceOptions options)
    : options_(std::move(options)) {
  options_.validate();
  if (in_channels.empty()) throw ConfigError("MFCE decoder needs at least one input layer");
  for (size_t i = 0; i < in_channels.size(); ++i) {
    projections_.push_back(register_module(
        "project" + std::to_string(i),
        torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels[i], options_.c_mid, 1))));
    scorers_.push_back(register_module(
        "score" + std::to_string(i),
        torch::nn::Conv2d(torch::nn::Conv2dOptions(options_.c_mid, 1, 1))));
  }
  aspp_ = register_module("aspp", Aspp(options_.c_mid, options_.aspp_rates, options_.image_pool));
  upsampler_ = register_module(
      "upsample",
      ProgressiveUpsampler(options_.c_mid, options_.stage_channels, options_.stage_factors));
}

std::vector<torch::Tensor> MfceDecoderImpl::project(const FeatureStack& stack) {
  if (stack.size() != projections_.size()) {
    throw ShapeError("MFCE decoder built for " + std::to_string(projections_.size()) +
                     " layers, got " + std::to_string(stack.size()));
  }
  if (!stack.single_scale()) {
    throw ShapeError("MFCE decoder needs a same-scale stack; multi-scale stacks go to the FPN decoder");
  }
  std::vector<torch::Tensor> out;
  for (size_t i = 0; i < stack.size(); ++i) out.push_back(projections_[i](stack.features[i]));
  return out;
}

FusionResult MfceDecoderImpl::fuse(const std::vector<torch::Tensor>& projected) {
  if (projected.size() != scorers_.size()) {
    throw ShapeError("MFCE fusion expects " + std::to_string(scorers_.size()) + " layers");
  }
  std::vector<torch::Tensor> scores;
  for (size_t i = 0; i < projected.size(); ++i) scores.push_back(scorers_[i](projected[i]));
  return attention_fuse(projected, scores);
}

torch::Tensor MfceDecoderImpl::forward(const FeatureStack& stack, int64_t target_height,
                                       int64_t target_width) {
  auto fused = fuse(project(stack)).fused;
  return upsampler_(aspp_(fused), target_height, target_width);
}

}  // namespace changeadapt
