// Copyright 2026 The changeadapt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "changeadapt/backbone.h"

namespace changeadapt {

enum class PeftStrategy { kNone, kLora, kAdapter };

std::string to_string(PeftStrategy strategy);
PeftStrategy peft_strategy_from_string(const std::string& name);

struct PeftConfig {
  PeftStrategy strategy = PeftStrategy::kLora;
  int64_t rank = 8;
  double alpha = 32.0;
  double dropout = 0.1;
  int64_t bottleneck_dim = 32;
  /// "all", or a comma separated list of block indices such as "0,3,5".
  std::string targets = "all";

  void validate() const;
};

/// Frozen projection W0 (with its bias) plus the trainable low-rank pair.
/// h = W0 x + b0 + (alpha / rank) B A drop(x).
struct LoraState {
  torch::Tensor base_weight;  // [d, k], frozen
  torch::Tensor base_bias;    // [d] or undefined, frozen
  torch::Tensor a;            // [r, k]
  torch::Tensor b;            // [d, r]
  double alpha = 32.0;
  int64_t rank = 8;
  double dropout = 0.0;

  double scaling() const { return alpha / static_cast<double>(rank); }
};

/// A ~ N(0, 1/r), B = 0, so the delta starts at exactly zero.
LoraState make_lora_state(torch::Tensor base_weight, torch::Tensor base_bias, int64_t rank,
                          double alpha, double dropout);

/// Dropout only touches the input of the low-rank path.
torch::Tensor lora_forward(const torch::Tensor& x, const LoraState& state, bool training);

/// W0 + (alpha / rank) B A.
torch::Tensor merge_lora(const LoraState& state);

/// Bottleneck MLP on the residual stream: h = W_up gelu(W_down x + b_down) + b_up + x.
struct AdapterState {
  torch::Tensor down_weight;  // [m, d]
  torch::Tensor down_bias;    // [m]
  torch::Tensor up_weight;    // [d, m], zero at init
  torch::Tensor up_bias;      // [d], zero at init
};

AdapterState make_adapter_state(int64_t dim, int64_t bottleneck_dim);

/// Uses the exact erf form of GELU.
torch::Tensor adapter_forward(const torch::Tensor& x, const AdapterState& state);

class LoraLinearImpl : public TokenMapImpl {
 public:
  LoraLinearImpl(const LinearProjectionImpl& base, int64_t rank, double alpha, double dropout);
  torch::Tensor forward(const torch::Tensor& tokens) override;

  const LoraState& state() const { return state_; }
  std::vector<torch::Tensor> trainable() const { return {state_.a, state_.b}; }

 private:
  LoraState state_;
};

class AdapterImpl : public TokenMapImpl {
 public:
  AdapterImpl(int64_t dim, int64_t bottleneck_dim);
  torch::Tensor forward(const torch::Tensor& tokens) override;

  const AdapterState& state() const { return state_; }
  std::vector<torch::Tensor> trainable() const;

 private:
  AdapterState state_;
};

struct InjectionReport {
  std::vector<std::string> sites;
  int64_t parameter_count = 0;
};

/// Wraps every targeted qkv site with LoRA, or places an Adapter at the input
/// of every targeted block, then freezes the base. Injecting into an encoder
/// that already carries PEFT modules is an error.
InjectionReport inject(EncoderImpl& encoder, const PeftConfig& config);

/// Marks every encoder parameter frozen except the injected PEFT parameters.
void freeze_base(EncoderImpl& encoder);

bool has_peft(EncoderImpl& encoder);
std::vector<torch::Tensor> peft_parameters(EncoderImpl& encoder);
/// Encoder parameters that are not PEFT parameters, in registration order.
std::vector<torch::Tensor> base_parameters(EncoderImpl& encoder);
std::vector<LoraLinearImpl*> lora_sites(EncoderImpl& encoder);

struct ParamCount {
  int64_t trainable = 0;
  int64_t total = 0;

  double trainable_fraction() const {
    return total == 0 ? 0.0 : static_cast<double>(trainable) / static_cast<double>(total);
  }
};

ParamCount count_params(const torch::nn::Module& module);

/// Closed forms: LoRA r (k + d_out) per site; Adapter 2 d m + m + d per block.
int64_t lora_site_params(int64_t in_features, int64_t out_features, int64_t rank);
int64_t adapter_block_params(int64_t dim, int64_t bottleneck_dim);

/// 64-bit FNV-1a over the raw bytes of the tensors, in order.
uint64_t checksum(const std::vector<torch::Tensor>& tensors);

}  // namespace changeadapt
