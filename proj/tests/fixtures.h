// Copyright 2026 The changeadapt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <ATen/CPUGeneratorImpl.h>
#include <torch/torch.h>

#include <random>

#include "changeadapt/config.h"
#include "changeadapt/model.h"

namespace fixtures {

/// Small plain ViT + LoRA + MFCE, fast enough for unit tests.
inline changeadapt::ModelConfig tiny_vit(changeadapt::PeftStrategy peft = changeadapt::PeftStrategy::kLora) {
  changeadapt::ModelConfig m;
  m.backbone.kind = changeadapt::BackboneKind::kPlainVit;
  m.backbone.patch_size = 8;
  m.backbone.embed_dim = 32;
  m.backbone.depth = 4;
  m.backbone.heads = 2;
  m.peft.strategy = peft;
  m.decoder.kind = changeadapt::DecoderKind::kMfce;
  m.decoder.mfce.c_mid = 16;
  m.decoder.mfce.stage_factors = {2, 2, 2};
  m.decoder.mfce.stage_channels = {16, 8, 8};
  return m;
}

/// Small hierarchical encoder + Adapter + FPN/ResBlock decoder.
inline changeadapt::ModelConfig tiny_hierarchical(
    changeadapt::PeftStrategy peft = changeadapt::PeftStrategy::kAdapter) {
  changeadapt::ModelConfig m;
  m.backbone.kind = changeadapt::BackboneKind::kHierarchical;
  m.backbone.embed_dim = 16;
  m.backbone.heads = 1;
  m.backbone.stage_depths = {1, 1, 1, 1};
  m.peft.strategy = peft;
  m.peft.bottleneck_dim = 8;
  m.decoder.kind = changeadapt::DecoderKind::kFpnRes;
  m.decoder.fpn_channels = 16;
  m.decoder.head_channels = 8;
  return m;
}

inline changeadapt::RunConfig tiny_run(const changeadapt::ModelConfig& model, int64_t steps) {
  changeadapt::RunConfig c;
  c.model = model;
  c.batch_size = 4;
  c.warmup_steps = 2;
  c.max_steps = steps;
  c.eval_interval = 2;
  c.log_interval = 1;
  c.data.train_pairs = 8;
  c.data.val_pairs = 4;
  c.data.augment.flips = false;
  c.data.augment.rotations = false;
  return c;
}

/// Random 4-level stack; `pyramid` halves the side per level.
inline changeadapt::FeatureStack random_stack(std::mt19937_64& rng, bool pyramid, int64_t channels = 3) {
  std::uniform_int_distribution<int64_t> side(2, 6);
  changeadapt::FeatureStack s;
  int64_t h = pyramid ? 16 : side(rng);
  int64_t w = pyramid ? 16 : side(rng);
  for (int64_t i = 0; i < 4; ++i) {
    auto gen = at::make_generator<at::CPUGeneratorImpl>(rng());
    s.features.push_back(torch::randn({2, channels, h, w}, gen, torch::TensorOptions()));
    s.strides.push_back(pyramid ? (4 << i) : 16);
    s.layer_ids.push_back(i);
    if (pyramid) {
      h /= 2;
      w /= 2;
    }
  }
  return s;
}

}  // namespace fixtures
