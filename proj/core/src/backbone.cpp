// Copyright 2026 The changeadapt Authors
// SPDX-License-Identifier: Apache-2.0

#include "changeadapt/backbone.h"

#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "changeadapt/errors.h"

namespace F = torch::nn::functional;

namespace changeadapt {

std::string to_string(BackboneKind kind) {
  return kind == BackboneKind::kPlainVit ? "plain_vit" : "hierarchical";
}

BackboneKind backbone_kind_from_string(const std::string& name) {
  if (name == "plain_vit") return BackboneKind::kPlainVit;
  if (name == "hierarchical") return BackboneKind::kHierarchical;
  throw ConfigError("unknown backbone kind '" + name + "'");
}

std::vector<int64_t> quartile_taps(int64_t depth) {
  if (depth < 4) throw ConfigError("quartile taps need depth >= 4");
  std::vector<int64_t> taps;
  for (int64_t k = 1; k <= 4; ++k) taps.push_back(depth * k / 4 - 1);
  return taps;
}

int64_t BackboneSpec::total_depth() const {
  if (kind == BackboneKind::kPlainVit) return depth;
  return std::accumulate(stage_depths.begin(), stage_depths.end(), int64_t{0});
}

int64_t BackboneSpec::stem_stride() const {
  return kind == BackboneKind::kPlainVit ? patch_size : 4;
}

namespace {

int64_t stage_of_layer(const BackboneSpec& spec, int64_t layer) {
  if (spec.kind == BackboneKind::kPlainVit) return 0;
  int64_t end = 0;
  for (size_t s = 0; s < spec.stage_depths.size(); ++s) {
    end += spec.stage_depths[s];
    if (layer < end) return static_cast<int64_t>(s);
  }
  throw ConfigError("layer " + std::to_string(layer) + " is beyond the encoder depth");
}

}  // namespace

std::vector<int64_t> BackboneSpec::resolved_taps() const {
  if (!tap_layers.empty()) return tap_layers;
  if (kind == BackboneKind::kPlainVit) return quartile_taps(depth);
  std::vector<int64_t> taps;
  int64_t end = 0;
  for (int64_t d : stage_depths) {
    end += d;
    taps.push_back(end - 1);
  }
  return taps;
}

int64_t BackboneSpec::stride_of_layer(int64_t layer) const {
  return stem_stride() << stage_of_layer(*this, layer);
}

int64_t BackboneSpec::width_of_layer(int64_t layer) const {
  return embed_dim << stage_of_layer(*this, layer);
}

int64_t BackboneSpec::required_divisor() const {
  if (kind == BackboneKind::kPlainVit) return patch_size;
  return int64_t{4} << (static_cast<int64_t>(stage_depths.size()) - 1);
}

void BackboneSpec::validate() const {
  if (embed_dim <= 0 || heads <= 0 || mlp_ratio <= 0) {
    throw ConfigError("embed_dim, heads and mlp_ratio must be positive");
  }
  if (embed_dim % heads != 0) {
    throw ConfigError("embed_dim " + std::to_string(embed_dim) +
                      " is not divisible by heads " + std::to_string(heads));
  }
  if (kind == BackboneKind::kPlainVit) {
    if (patch_size <= 0) throw ConfigError("patch_size must be positive");
    if (depth <= 0) throw ConfigError("depth must be positive");
  } else {
    if (stage_depths.empty()) throw ConfigError("hierarchical backbone needs stage_depths");
    for (int64_t d : stage_depths) {
      if (d <= 0) throw ConfigError("stage depths must be positive");
    }
  }
  if (grid_image_size % required_divisor() != 0) {
    throw ConfigError("grid_image_size " + std::to_string(grid_image_size) +
                      " is not divisible by " + std::to_string(required_divisor()));
  }
  const auto taps = resolved_taps();
  if (taps.empty()) throw ConfigError("at least one tap layer is required");
  const int64_t total = total_depth();
  for (size_t i = 0; i < taps.size(); ++i) {
    if (taps[i] < 0 || taps[i] >= total) {
      throw ConfigError("tap layer " + std::to_string(taps[i]) + " is outside depth " +
                        std::to_string(total));
    }
    if (i > 0 && taps[i] <= taps[i - 1]) {
      throw ConfigError("tap layers must be strictly increasing");
    }
    if (kind == BackboneKind::kHierarchical && i > 0 &&
        stage_of_layer(*this, taps[i]) == stage_of_layer(*this, taps[i - 1])) {
      throw ConfigError("hierarchical taps must come from distinct stages");
    }
  }
}

bool FeatureStack::single_scale() const {
  for (const auto& f : features) {
    if (f.size(2) != features.front().size(2) || f.size(3) != features.front().size(3)) {
      return false;
    }
  }
  return !features.empty();
}

bool FeatureStack::strictly_decreasing() const {
  for (size_t i = 1; i < features.size(); ++i) {
    if (features[i].size(2) >= features[i - 1].size(2) ||
        features[i].size(3) >= features[i - 1].size(3)) {
      return false;
    }
  }
  return !features.empty();
}

LinearProjectionImpl::LinearProjectionImpl(int64_t in_features, int64_t out_features) {
  torch::nn::Linear init(in_features, out_features);
  weight = register_parameter("weight", init->weight.detach().clone());
  bias = register_parameter("bias", init->bias.detach().clone());
}

torch::Tensor LinearProjectionImpl::forward(const torch::Tensor& tokens) {
  return F::linear(tokens, weight, bias);
}

SelfAttentionImpl::SelfAttentionImpl(int64_t dim, int64_t heads) : dim_(dim), heads_(heads) {
  qkv_ = register_module("qkv", std::make_shared<LinearProjectionImpl>(dim, 3 * dim));
  proj_ = register_module("proj", torch::nn::Linear(dim, dim));
}

void SelfAttentionImpl::set_qkv(std::shared_ptr<TokenMapImpl> site) {
  qkv_ = replace_module("qkv", std::move(site));
}

torch::Tensor SelfAttentionImpl::forward(const torch::Tensor& tokens) {
  if (tokens.size(-1) != dim_) {
    throw ShapeError("attention expects token width " + std::to_string(dim_) + ", got " +
                     std::to_string(tokens.size(-1)));
  }
  const int64_t batch = tokens.size(0);
  const int64_t count = tokens.size(1);
  auto qkv = qkv_->forward(tokens)
                 .reshape({batch, count, 3, heads_, dim_ / heads_})
                 .permute({2, 0, 3, 1, 4});
  auto mixed = at::scaled_dot_product_attention(qkv[0], qkv[1], qkv[2]);
  return proj_(mixed.transpose(1, 2).reshape({batch, count, dim_}));
}

TransformerBlockImpl::TransformerBlockImpl(int64_t dim, int64_t heads, int64_t mlp_ratio)
    : dim_(dim) {
  norm1_ = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  attn_ = register_module("attn", SelfAttention(dim, heads));
  norm2_ = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  fc1_ = register_module("fc1", torch::nn::Linear(dim, dim * mlp_ratio));
  fc2_ = register_module("fc2", torch::nn::Linear(dim * mlp_ratio, dim));
}

void TransformerBlockImpl::set_pre_block(std::shared_ptr<TokenMapImpl> site) {
  if (pre_block_) {
    pre_block_ = replace_module("pre_block", std::move(site));
  } else {
    pre_block_ = register_module("pre_block", std::move(site));
  }
}

torch::Tensor TransformerBlockImpl::forward(torch::Tensor tokens) {
  if (pre_block_) tokens = pre_block_->forward(tokens);
  tokens = tokens + attn_(norm1_(tokens));
  return tokens + fc2_(F::gelu(fc1_(norm2_(tokens))));
}

PatchMergingImpl::PatchMergingImpl(int64_t dim) {
  norm_ = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({4 * dim})));
  reduce_ = register_module("reduce",
                            torch::nn::Linear(torch::nn::LinearOptions(4 * dim, 2 * dim).bias(false)));
}

torch::Tensor PatchMergingImpl::forward(const torch::Tensor& grid) {
  using torch::indexing::None;
  using torch::indexing::Slice;
  auto cat = torch::cat({grid.index({Slice(), Slice(), Slice(0, None, 2), Slice(0, None, 2)}),
                         grid.index({Slice(), Slice(), Slice(1, None, 2), Slice(0, None, 2)}),
                         grid.index({Slice(), Slice(), Slice(0, None, 2), Slice(1, None, 2)}),
                         grid.index({Slice(), Slice(), Slice(1, None, 2), Slice(1, None, 2)})},
                        1)
                 .permute({0, 2, 3, 1});
  return reduce_(norm_(cat)).permute({0, 3, 1, 2}).contiguous();
}

EncoderImpl::EncoderImpl(BackboneSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  taps_ = spec_.resolved_taps();
  const int64_t stride = spec_.stem_stride();
  stem_ = register_module(
      "stem", torch::nn::Conv2d(torch::nn::Conv2dOptions(3, spec_.embed_dim, stride).stride(stride)));
  const int64_t grid = spec_.grid_image_size / stride;
  pos_embed_ = register_parameter("pos_embed",
                                  torch::randn({1, spec_.embed_dim, grid, grid}) * 0.02);

  auto block_list = register_module("blocks", torch::nn::ModuleList());
  const int64_t stages =
      spec_.kind == BackboneKind::kPlainVit ? 1 : static_cast<int64_t>(spec_.stage_depths.size());
  for (int64_t s = 0; s < stages; ++s) {
    const int64_t count = spec_.kind == BackboneKind::kPlainVit ? spec_.depth : spec_.stage_depths[s];
    const int64_t dim = spec_.embed_dim << s;
    const int64_t heads = spec_.heads << s;
    if (s > 0) {
      merges_.push_back(register_module("merge" + std::to_string(s - 1), PatchMerging(dim / 2)));
    }
    for (int64_t b = 0; b < count; ++b) {
      blocks_.emplace_back(dim, heads, spec_.mlp_ratio);
      block_list->push_back(blocks_.back());
      block_stage_.push_back(s);
    }
  }
}

void EncoderImpl::check_input(const torch::Tensor& images) const {
  if (images.dim() != 4 || images.size(1) != 3) {
    throw ShapeError("encoder expects images shaped [B, 3, H, W]");
  }
  const int64_t divisor = spec_.required_divisor();
  const char* what = spec_.kind == BackboneKind::kPlainVit ? "patch size" : "total stride";
  if (images.size(2) % divisor != 0) {
    throw ShapeError("image height " + std::to_string(images.size(2)) + " is not divisible by " +
                     what + " " + std::to_string(divisor));
  }
  if (images.size(3) % divisor != 0) {
    throw ShapeError("image width " + std::to_string(images.size(3)) + " is not divisible by " +
                     what + " " + std::to_string(divisor));
  }
}

torch::Tensor EncoderImpl::patch_embed(const torch::Tensor& images) {
  check_input(images);
  return stem_(images);
}

torch::Tensor EncoderImpl::positional(int64_t height, int64_t width) const {
  if (pos_embed_.size(2) == height && pos_embed_.size(3) == width) return pos_embed_;
  return F::interpolate(pos_embed_, F::InterpolateFuncOptions()
                                        .size(std::vector<int64_t>{height, width})
                                        .mode(torch::kBilinear)
                                        .align_corners(false));
}

FeatureStack EncoderImpl::forward(const torch::Tensor& images) {
  auto grid = patch_embed(images);
  grid = grid + positional(grid.size(2), grid.size(3));

  FeatureStack stack;
  size_t next_tap = 0;
  int64_t stage = 0;
  for (int64_t index = 0; index < num_blocks(); ++index) {
    if (block_stage_[index] != stage) {
      grid = merges_[stage]->forward(grid);
      stage = block_stage_[index];
    }
    const int64_t batch = grid.size(0);
    const int64_t channels = grid.size(1);
    const int64_t height = grid.size(2);
    const int64_t width = grid.size(3);
    auto tokens = blocks_[index]->forward(grid.flatten(2).transpose(1, 2));
    grid = tokens.transpose(1, 2).reshape({batch, channels, height, width});
    if (next_tap < taps_.size() && taps_[next_tap] == index) {
      stack.features.push_back(grid);
      stack.strides.push_back(spec_.stride_of_layer(index));
      stack.layer_ids.push_back(index);
      ++next_tap;
    }
  }
  return stack;
}

std::vector<InjectionSite> EncoderImpl::injection_sites() const {
  std::vector<InjectionSite> sites;
  for (int64_t index = 0; index < num_blocks(); ++index) {
    const int64_t dim = blocks_[index]->dim();
    const std::string prefix = "blocks." + std::to_string(index);
    sites.push_back({prefix + ".attn.qkv", SiteKind::kQkvProjection, index, dim, 3 * dim});
    sites.push_back({prefix + ".pre_block", SiteKind::kBlockInput, index, dim, dim});
  }
  return sites;
}

TransformerBlock& EncoderImpl::block(int64_t index) {
  if (index < 0 || index >= num_blocks()) {
    throw ConfigError("block index " + std::to_string(index) + " out of range");
  }
  return blocks_[index];
}

}  // namespace changeadapt
