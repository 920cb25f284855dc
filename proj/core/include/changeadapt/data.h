// Copyright 2026 The changeadapt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace changeadapt {

/// img_a, img_b: float [3, H, W] in [0, 1]; mask: int64 [H, W] in {0, 1}.
struct BiTemporalSample {
  torch::Tensor img_a;
  torch::Tensor img_b;
  torch::Tensor mask;
  std::string id;

  int64_t height() const { return mask.size(0); }
  int64_t width() const { return mask.size(1); }
};

/// Checks the shape and value contract of a sample; throws on violation.
void validate_sample(const BiTemporalSample& sample);

struct SynthSpec {
  int64_t canvas = 64;
  int64_t min_objects = 2;
  int64_t max_objects = 5;
  int64_t min_object_size = 10;
  int64_t max_object_size = 24;
  /// Probability that an object is removed, moved, or joined by a new one in img_b.
  double change_fraction = 0.5;
  /// Magnitude of the global gain/offset shift applied to img_b.
  double pseudo_change = 0.1;
  uint64_t seed = 0;

  void validate() const;
};

enum class ShapeKind { kRectangle, kDisc, kBar };

struct SceneObject {
  ShapeKind kind = ShapeKind::kRectangle;
  int64_t top = 0;
  int64_t left = 0;
  int64_t height = 1;
  /// Ignored for discs, whose diameter is `height`.
  int64_t width = 1;
  std::array<float, 3> color{1.0F, 1.0F, 1.0F};
  /// Distinct per structural state; a moved object gets a new id.
  int64_t id = 1;
};

/// Per-channel gain and a shared offset applied to every pixel of img_b.
struct PhotometricShift {
  std::array<float, 3> gain{1.0F, 1.0F, 1.0F};
  float offset = 0.0F;
};

/// Paints both object lists over one background [3, H, W]. The mask marks
/// pixels whose top-most object id differs between the two scenes.
BiTemporalSample compose_pair(const torch::Tensor& background,
                              const std::vector<SceneObject>& before,
                              const std::vector<SceneObject>& after,
                              const PhotometricShift& shift);

/// Scene of noise background plus rectangles, discs and bars. img_b applies
/// structural edits (these define the mask) and a global photometric shift
/// (which never touches the mask). Bit-identical for a fixed spec.
BiTemporalSample generate(const SynthSpec& spec);

/// `count` samples with seeds first_seed, first_seed + 1, ...
std::vector<BiTemporalSample> generate_set(SynthSpec spec, uint64_t first_seed, int64_t count);

struct AugmentOptions {
  bool flips = true;
  bool rotations = true;
  /// Random square crop side; 0 disables cropping.
  int64_t crop = 0;
};

/// One random joint transform of img_a, img_b and mask, fixed by `seed`.
BiTemporalSample augment(const BiTemporalSample& sample, uint64_t seed,
                         const AugmentOptions& options = {});

/// Geometric primitives, applied to [..., H, W] tensors.
torch::Tensor flip_horizontal(const torch::Tensor& x);
torch::Tensor flip_vertical(const torch::Tensor& x);
torch::Tensor rotate90(const torch::Tensor& x, int64_t quarter_turns);

/// Reads root/split/{A,B,label}/*.png matched by file name, sorted by id.
/// Labels are binarised at > 127.
std::vector<BiTemporalSample> load_dataset(const std::filesystem::path& root,
                                           const std::string& split);

/// Writes the sample as root/split/{A,B,label}/<id>.png.
void save_sample(const std::filesystem::path& root, const std::string& split,
                 const BiTemporalSample& sample);

/// Stacks samples into batched tensors: images [B, 3, H, W], masks [B, H, W].
struct Batch {
  torch::Tensor img_a;
  torch::Tensor img_b;
  torch::Tensor mask;
};
Batch collate(const std::vector<BiTemporalSample>& samples);

}  // namespace changeadapt
