// Copyright 2026 The changeadapt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <vector>

#include "changeadapt/backbone.h"

namespace changeadapt {

// Multi-layer fusion and context enhancement decoder for single-scale ViT
// stacks: per-layer 1x1 projection, per-pixel softmax attention across
// layers, ASPP context, then progressive bilinear upsampling.

struct MfceOptions {
  int64_t c_mid = 128;
  std::vector<int64_t> aspp_rates{1, 6, 12, 18};
  bool image_pool = true;
  /// Upsampling factor of each stage; their product maps the token grid to the image.
  std::vector<int64_t> stage_factors{2, 2, 4};
  /// Output width of each stage.
  std::vector<int64_t> stage_channels{64, 32, 16};

  void validate() const;
};

struct FusionResult {
  torch::Tensor fused;    // [B, C, H, W]
  torch::Tensor weights;  // [B, N, H, W], sums to one over N
};

/// Softmax of the score maps across layers, then the per-pixel weighted sum.
/// `layers` are [B, C, H, W]; `scores` are [B, 1, H, W].
FusionResult attention_fuse(const std::vector<torch::Tensor>& layers,
                            const std::vector<torch::Tensor>& scores);

/// min(rate, floor((size - 1) / 2)), never below 1.
int64_t clamp_dilation(int64_t rate, int64_t size);

/// Depthwise 3x3 (dilation chosen per call) -> pointwise 1x1 -> BN -> ReLU.
class SeparableConvImpl : public torch::nn::Module {
 public:
  SeparableConvImpl(int64_t in_channels, int64_t out_channels);
  torch::Tensor forward(const torch::Tensor& x, int64_t dilation = 1);

  torch::nn::Conv2d depthwise{nullptr};
  torch::nn::Conv2d pointwise{nullptr};
  torch::nn::BatchNorm2d norm{nullptr};
};
TORCH_MODULE(SeparableConv);

class AsppImpl : public torch::nn::Module {
 public:
  AsppImpl(int64_t channels, std::vector<int64_t> rates, bool image_pool);
  torch::Tensor forward(const torch::Tensor& x);

  /// Rates after clamping to the spatial size of `x`.
  std::vector<int64_t> effective_rates(const torch::Tensor& x) const;
  SeparableConv& branch(size_t i) { return branches_[i]; }

 private:
  std::vector<int64_t> rates_;
  std::vector<SeparableConv> branches_;
  torch::nn::Conv2d pool_proj_{nullptr};
  torch::nn::Sequential project_{nullptr};
};
TORCH_MODULE(Aspp);

class ProgressiveUpsamplerImpl : public torch::nn::Module {
 public:
  ProgressiveUpsamplerImpl(int64_t in_channels, std::vector<int64_t> stage_channels,
                           std::vector<int64_t> stage_factors);
  /// x at 1/prod(factors) of the target -> logits [B, 2, target_h, target_w].
  torch::Tensor forward(const torch::Tensor& x, int64_t target_height, int64_t target_width);

 private:
  std::vector<int64_t> factors_;
  std::vector<SeparableConv> stages_;
  torch::nn::Conv2d head_{nullptr};
};
TORCH_MODULE(ProgressiveUpsampler);

class MfceDecoderImpl : public torch::nn::Module {
 public:
  MfceDecoderImpl(const std::vector<int64_t>& in_channels, MfceOptions options);

  std::vector<torch::Tensor> project(const FeatureStack& stack);
  /// Scores every projected layer with its own 1x1 scorer and fuses.
  FusionResult fuse(const std::vector<torch::Tensor>& projected);
  torch::Tensor forward(const FeatureStack& stack, int64_t target_height, int64_t target_width);

  const MfceOptions& options() const { return options_; }
  torch::nn::Conv2d& projection(size_t i) { return projections_[i]; }
  torch::nn::Conv2d& scorer(size_t i) { return scorers_[i]; }
  Aspp& aspp() { return aspp_; }
  ProgressiveUpsampler& upsampler() { return upsampler_; }

 private:
  MfceOptions options_;
  std::vector<torch::nn::Conv2d> projections_;
  std::vector<torch::nn::Conv2d> scorers_;
  Aspp aspp_{nullptr};
  ProgressiveUpsampler upsampler_{nullptr};
};
TORCH_MODULE(MfceDecoder);

}  // namespace changeadapt
