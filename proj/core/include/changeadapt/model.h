// Copyright 2026 The changeadapt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "changeadapt/backbone.h"
#include "changeadapt/mfce.h"
#include "changeadapt/peft.h"
#include "changeadapt/siamese.h"

namespace changeadapt {

enum class DecoderKind { kFpnRes, kMfce };

std::string to_string(DecoderKind kind);
DecoderKind decoder_kind_from_string(const std::string& name);

struct DecoderConfig {
  DecoderKind kind = DecoderKind::kMfce;
  int64_t fpn_channels = 128;
  int64_t head_channels = 16;
  MfceOptions mfce;
  /// Decode the channel-concatenated streams once instead of each stream separately.
  bool mfce_joint = false;
};

struct ModelConfig {
  BackboneSpec backbone;
  PeftConfig peft;
  DecoderConfig decoder;
  ExchangeSpec exchange;

  /// fpn_res needs a hierarchical backbone and mfce a plain ViT.
  void validate() const;
};

/// Weight-shared bi-temporal change detector: one encoder, layer exchange,
/// and one decoder applied to both mixed streams.
class ChangeDetectorImpl : public torch::nn::Module {
 public:
  explicit ChangeDetectorImpl(ModelConfig config);

  /// Logits of both branches at input resolution.
  std::pair<ChangeLogits, ChangeLogits> forward(const torch::Tensor& image_a,
                                                const torch::Tensor& image_b);
  /// Branch probabilities averaged pixel-wise.
  FusedChange predict(const torch::Tensor& image_a, const torch::Tensor& image_b);

  /// Decodes one (already exchanged) stream.
  torch::Tensor decode(const FeatureStack& stack, int64_t height, int64_t width);

  const ModelConfig& config() const { return config_; }
  Encoder& encoder() { return encoder_; }
  /// Every parameter outside the encoder.
  std::vector<torch::Tensor> decoder_parameters();
  MfceDecoder& mfce() { return mfce_; }
  Fpn& fpn() { return fpn_; }
  ResDecoder& res_decoder() { return res_decoder_; }

 private:
  ModelConfig config_;
  Encoder encoder_{nullptr};
  Fpn fpn_{nullptr};
  ResDecoder res_decoder_{nullptr};
  MfceDecoder mfce_{nullptr};
};
TORCH_MODULE(ChangeDetector);

}  // namespace changeadapt
