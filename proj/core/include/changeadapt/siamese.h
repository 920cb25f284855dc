// Copyright 2026 The changeadapt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <utility>
#include <vector>

#include "changeadapt/backbone.h"

namespace changeadapt {

/// Pyramid levels whose features are swapped between the two temporal streams.
struct ExchangeSpec {
  std::vector<int64_t> swap_indices{0, 2};

  void validate(size_t levels) const;
};

enum class Provenance { kBranchA, kBranchB, kFused };

/// Two-class logits [B, 2, H, W]; class 1 is "change".
struct ChangeLogits {
  torch::Tensor logits;
  Provenance provenance = Provenance::kBranchA;

  torch::Tensor probabilities() const { return torch::softmax(logits, 1); }
};

/// Averaged class probabilities [B, 2, H, W] of both branches.
struct FusedChange {
  torch::Tensor probabilities;

  /// Per-pixel argmax [B, H, W] as int64.
  torch::Tensor prediction() const { return probabilities.argmax(1); }
};

/// Swaps the listed levels. Tensors are moved between stacks, never modified.
std::pair<FeatureStack, FeatureStack> exchange(const FeatureStack& a, const FeatureStack& b,
                                               const ExchangeSpec& spec);

FusedChange fuse_predictions(const ChangeLogits& a, const ChangeLogits& b);

/// Top-down FPN: lateral 1x1, upsample-add from the coarser level, 3x3 smoothing.
class FpnImpl : public torch::nn::Module {
 public:
  FpnImpl(const std::vector<int64_t>& in_channels, int64_t out_channels);
  FeatureStack forward(const FeatureStack& stack);

 private:
  std::vector<torch::nn::Conv2d> lateral_;
  std::vector<torch::nn::Conv2d> smooth_;
  int64_t out_channels_;
};
TORCH_MODULE(Fpn);

/// x + BN(conv3x3(ReLU(BN(conv3x3(x))))). No activation after the sum.
class ResBlockImpl : public torch::nn::Module {
 public:
  explicit ResBlockImpl(int64_t channels);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Conv2d conv1{nullptr};
  torch::nn::BatchNorm2d bn1{nullptr};
  torch::nn::Conv2d conv2{nullptr};
  torch::nn::BatchNorm2d bn2{nullptr};
};
TORCH_MODULE(ResBlock);

/// Coarse-to-fine decoder over an FPN stack. Each level runs a ResBlock,
/// the result is upsampled x2 and added to the next finer map. The head
/// reduces channels at the finest level, upsamples to the input size and
/// refines before emitting two-class logits.
class ResDecoderImpl : public torch::nn::Module {
 public:
  ResDecoderImpl(int64_t channels, int64_t levels, int64_t head_channels);
  torch::Tensor forward(const FeatureStack& stack, int64_t out_height, int64_t out_width);

 private:
  std::vector<ResBlock> blocks_;
  torch::nn::Sequential reduce_{nullptr};
  torch::nn::Sequential refine_{nullptr};
};
TORCH_MODULE(ResDecoder);

/// Bilinear resize used throughout the decoders (align_corners = false).
torch::Tensor resize_bilinear(const torch::Tensor& x, int64_t height, int64_t width);

}  // namespace changeadapt
