// Copyright 2026 The changeadapt Authors
// SPDX-License-Identifier: Apache-2.0

#include "changeadapt/model.h"

#include <unordered_set>

#include "changeadapt/errors.h"

namespace changeadapt {

std::string to_string(DecoderKind kind) { return kind == DecoderKind::kMfce ? "mfce" : "fpn_res"; }

DecoderKind decoder_kind_from_string(const std::string& name) {
  if (name == "mfce") return DecoderKind::kMfce;
  if (name == "fpn_res") return DecoderKind::kFpnRes;
  throw ConfigError("unknown decoder '" + name + "'");
}

void ModelConfig::validate() const {
  backbone.validate();
  peft.validate();
  if (decoder.kind == DecoderKind::kFpnRes && backbone.kind != BackboneKind::kHierarchical) {
    throw ConfigError("decoder fpn_res requires a hierarchical backbone");
  }
  if (decoder.kind == DecoderKind::kMfce && backbone.kind != BackboneKind::kPlainVit) {
    throw ConfigError("decoder mfce requires a plain_vit backbone");
  }
  if (decoder.kind == DecoderKind::kMfce) {
    decoder.mfce.validate();
    int64_t total = 1;
    for (int64_t f : decoder.mfce.stage_factors) total *= f;
    if (total != backbone.patch_size) {
      throw ConfigError("mfce stage factors multiply to " + std::to_string(total) +
                        " but the patch size is " + std::to_string(backbone.patch_size));
    }
  } else if (decoder.fpn_channels <= 0 || decoder.head_channels <= 0) {
    throw ConfigError("fpn_channels and head_channels must be positive");
  }
  exchange.validate(backbone.resolved_taps().size());
}

ChangeDetectorImpl::ChangeDetectorImpl(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  encoder_ = register_module("encoder", Encoder(config_.backbone));
  std::vector<int64_t> widths;
  for (int64_t layer : config_.backbone.resolved_taps()) {
    widths.push_back(config_.backbone.width_of_layer(layer));
  }
  if (config_.decoder.kind == DecoderKind::kFpnRes) {
    fpn_ = register_module("fpn", Fpn(widths, config_.decoder.fpn_channels));
    res_decoder_ = register_module(
        "res_decoder", ResDecoder(config_.decoder.fpn_channels, static_cast<int64_t>(widths.size()),
                                  config_.decoder.head_channels));
  } else {
    if (config_.decoder.mfce_joint) {
      for (auto& w : widths) w *= 2;
    }
    mfce_ = register_module("mfce", MfceDecoder(widths, config_.decoder.mfce));
  }
  inject(*encoder_, config_.peft);
}

torch::Tensor ChangeDetectorImpl::decode(const FeatureStack& stack, int64_t height, int64_t width) {
  if (config_.decoder.kind == DecoderKind::kFpnRes) {
    return res_decoder_->forward(fpn_->forward(stack), height, width);
  }
  return mfce_->forward(stack, height, width);
}

std::pair<ChangeLogits, ChangeLogits> ChangeDetectorImpl::forward(const torch::Tensor& image_a,
                                                                  const torch::Tensor& image_b) {
  if (image_a.sizes() != image_b.sizes()) {
    throw ShapeError("bi-temporal images must share one shape");
  }
  const int64_t height = image_a.size(2);
  const int64_t width = image_a.size(3);
  auto [mixed_a, mixed_b] =
      exchange(encoder_->forward(image_a), encoder_->forward(image_b), config_.exchange);
  if (config_.decoder.kind == DecoderKind::kMfce && config_.decoder.mfce_joint) {
    FeatureStack joint = mixed_a;
    for (size_t i = 0; i < joint.size(); ++i) {
      joint.features[i] = torch::cat({mixed_a.features[i], mixed_b.features[i]}, 1);
    }
    auto logits = decode(joint, height, width);
    return {ChangeLogits{logits, Provenance::kBranchA}, ChangeLogits{logits, Provenance::kBranchB}};
  }
  return {ChangeLogits{decode(mixed_a, height, width), Provenance::kBranchA},
          ChangeLogits{decode(mixed_b, height, width), Provenance::kBranchB}};
}

FusedChange ChangeDetectorImpl::predict(const torch::Tensor& image_a,
                                        const torch::Tensor& image_b) {
  auto [a, b] = forward(image_a, image_b);
  return fuse_predictions(a, b);
}

std::vector<torch::Tensor> ChangeDetectorImpl::decoder_parameters() {
  std::unordered_set<const void*> encoder_params;
  for (const auto& t : encoder_->parameters()) encoder_params.insert(t.unsafeGetTensorImpl());
  std::vector<torch::Tensor> out;
  for (const auto& t : parameters()) {
    if (!encoder_params.count(t.unsafeGetTensorImpl())) out.push_back(t);
  }
  return out;
}

}  // namespace changeadapt
