// Copyright 2026 The changeadapt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <torch/torch.h>

#include <filesystem>

namespace changeadapt {

/// 8-bit PNG -> uint8 tensor [H, W, C] with C = 1 (gray) or 3 (RGB).
/// Alpha is dropped; palettes and 16-bit inputs are converted.
torch::Tensor read_png(const std::filesystem::path& path, int channels);

/// uint8 tensor [H, W] or [H, W, 3] -> 8-bit PNG.
void write_png(const std::filesystem::path& path, const torch::Tensor& image);

/// float [3, H, W] in [0, 1] <-> uint8 [H, W, 3].
torch::Tensor to_rgb8(const torch::Tensor& chw);
torch::Tensor from_rgb8(const torch::Tensor& hwc);

}  // namespace changeadapt
