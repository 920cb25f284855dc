// Copyright 2026 The changeadapt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace changeadapt {

// Toy vision encoders with the structural contracts of the two foundation
// backbones: a plain ViT running on one token grid, and a four-stage
// hierarchical encoder with strides 4/8/16/32. Both expose named injection
// sites (the fused qkv projection and the block input) for PEFT modules.

enum class BackboneKind { kPlainVit, kHierarchical };

std::string to_string(BackboneKind kind);
BackboneKind backbone_kind_from_string(const std::string& name);

struct BackboneSpec {
  BackboneKind kind = BackboneKind::kPlainVit;
  /// Patch size of the plain ViT. The hierarchical stem always uses 4.
  int64_t patch_size = 8;
  /// Token width. For the hierarchical encoder this is the stage-1 width,
  /// doubled at every patch-merging step.
  int64_t embed_dim = 64;
  /// Block count of the plain ViT.
  int64_t depth = 8;
  /// Attention heads (stage-1 heads for the hierarchical encoder, doubled per stage).
  int64_t heads = 4;
  int64_t mlp_ratio = 4;
  /// Blocks per stage, hierarchical only.
  std::vector<int64_t> stage_depths;
  /// Global block indices whose outputs are exposed. Empty selects the default
  /// rule: quartile taps for the plain ViT, last block of each stage otherwise.
  std::vector<int64_t> tap_layers;
  /// Image side the learned positional embedding is sized for.
  int64_t grid_image_size = 64;

  int64_t total_depth() const;
  int64_t stem_stride() const;
  std::vector<int64_t> resolved_taps() const;
  /// Stride of the feature produced by block `layer`.
  int64_t stride_of_layer(int64_t layer) const;
  /// Channel width at block `layer`.
  int64_t width_of_layer(int64_t layer) const;
  /// Overall divisibility an input side must satisfy.
  int64_t required_divisor() const;
  void validate() const;
};

/// Taps at floor(depth*k/4)-1 for k = 1..4.
std::vector<int64_t> quartile_taps(int64_t depth);

/// Ordered per-layer feature maps, each [B, C, H, W].
struct FeatureStack {
  std::vector<torch::Tensor> features;
  std::vector<int64_t> strides;
  std::vector<int64_t> layer_ids;

  size_t size() const { return features.size(); }
  bool single_scale() const;
  bool strictly_decreasing() const;
};

/// Token-to-token map occupying an injection site. Tokens are [B, N, D].
class TokenMapImpl : public torch::nn::Module {
 public:
  virtual torch::Tensor forward(const torch::Tensor& tokens) = 0;
};

/// Plain affine projection; the default occupant of a qkv site.
class LinearProjectionImpl : public TokenMapImpl {
 public:
  LinearProjectionImpl(int64_t in_features, int64_t out_features);
  torch::Tensor forward(const torch::Tensor& tokens) override;

  torch::Tensor weight;
  torch::Tensor bias;
};

class SelfAttentionImpl : public torch::nn::Module {
 public:
  SelfAttentionImpl(int64_t dim, int64_t heads);
  torch::Tensor forward(const torch::Tensor& tokens);

  std::shared_ptr<TokenMapImpl> qkv() const { return qkv_; }
  void set_qkv(std::shared_ptr<TokenMapImpl> site);
  int64_t dim() const { return dim_; }

 private:
  int64_t dim_;
  int64_t heads_;
  std::shared_ptr<TokenMapImpl> qkv_;
  torch::nn::Linear proj_{nullptr};
};
TORCH_MODULE(SelfAttention);

/// Pre-norm transformer block with an optional pre-block token map.
class TransformerBlockImpl : public torch::nn::Module {
 public:
  TransformerBlockImpl(int64_t dim, int64_t heads, int64_t mlp_ratio);
  torch::Tensor forward(torch::Tensor tokens);

  SelfAttention& attention() { return attn_; }
  std::shared_ptr<TokenMapImpl> pre_block() const { return pre_block_; }
  void set_pre_block(std::shared_ptr<TokenMapImpl> site);
  int64_t dim() const { return dim_; }

 private:
  int64_t dim_;
  std::shared_ptr<TokenMapImpl> pre_block_;
  torch::nn::LayerNorm norm1_{nullptr};
  SelfAttention attn_{nullptr};
  torch::nn::LayerNorm norm2_{nullptr};
  torch::nn::Linear fc1_{nullptr};
  torch::nn::Linear fc2_{nullptr};
};
TORCH_MODULE(TransformerBlock);

/// 2x2 neighbourhood concat, LayerNorm, linear 4C -> 2C.
class PatchMergingImpl : public torch::nn::Module {
 public:
  explicit PatchMergingImpl(int64_t dim);
  torch::Tensor forward(const torch::Tensor& grid);

 private:
  torch::nn::LayerNorm norm_{nullptr};
  torch::nn::Linear reduce_{nullptr};
};
TORCH_MODULE(PatchMerging);

enum class SiteKind { kQkvProjection, kBlockInput };

struct InjectionSite {
  std::string name;
  SiteKind kind;
  int64_t block;
  int64_t in_features;
  int64_t out_features;
};

class EncoderImpl : public torch::nn::Module {
 public:
  explicit EncoderImpl(BackboneSpec spec);

  /// images [B, 3, H, W] -> token grid [B, D, H/p, W/p] (no positional term).
  torch::Tensor patch_embed(const torch::Tensor& images);
  FeatureStack forward(const torch::Tensor& images);

  const BackboneSpec& spec() const { return spec_; }
  std::vector<InjectionSite> injection_sites() const;
  int64_t num_blocks() const { return static_cast<int64_t>(blocks_.size()); }
  TransformerBlock& block(int64_t index);

 private:
  void check_input(const torch::Tensor& images) const;
  torch::Tensor positional(int64_t height, int64_t width) const;

  BackboneSpec spec_;
  std::vector<int64_t> taps_;
  torch::nn::Conv2d stem_{nullptr};
  torch::Tensor pos_embed_;
  std::vector<TransformerBlock> blocks_;
  std::vector<PatchMerging> merges_;
  /// Stage index of each block.
  std::vector<int64_t> block_stage_;
};
TORCH_MODULE(Encoder);

}  // namespace changeadapt
