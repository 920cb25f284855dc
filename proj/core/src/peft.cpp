// Copyright 2026 The changeadapt Authors
// SPDX-License-Identifier: Apache-2.0

#include "changeadapt/peft.h"

#include <cmath>
#include <set>
#include <sstream>
#include <unordered_set>

#include "changeadapt/errors.h"

namespace F = torch::nn::functional;

namespace changeadapt {

std::string to_string(PeftStrategy strategy) {
  switch (strategy) {
    case PeftStrategy::kNone:
      return "none";
    case PeftStrategy::kLora:
      return "lora";
    case PeftStrategy::kAdapter:
      return "adapter";
  }
  return "none";
}

PeftStrategy peft_strategy_from_string(const std::string& name) {
  if (name == "none") return PeftStrategy::kNone;
  if (name == "lora") return PeftStrategy::kLora;
  if (name == "adapter") return PeftStrategy::kAdapter;
  throw ConfigError("unknown PEFT strategy '" + name + "'");
}

void PeftConfig::validate() const {
  if (strategy == PeftStrategy::kLora) {
    if (rank <= 0) throw ConfigError("LoRA rank must be positive");
    if (!(alpha > 0.0)) throw ConfigError("LoRA alpha must be positive");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("LoRA dropout must be in [0, 1)");
  }
  if (strategy == PeftStrategy::kAdapter && bottleneck_dim <= 0) {
    throw ConfigError("adapter bottleneck_dim must be positive");
  }
}

namespace {

std::vector<int64_t> parse_targets(const std::string& selector, int64_t blocks) {
  std::vector<int64_t> out;
  if (selector == "all") {
    for (int64_t i = 0; i < blocks; ++i) out.push_back(i);
    return out;
  }
  std::set<int64_t> seen;
  std::stringstream ss(selector);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    size_t used = 0;
    int64_t index = -1;
    try {
      index = std::stoll(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (item.empty() || used != item.size()) {
      throw ConfigError("unknown target selector '" + selector + "'");
    }
    if (index < 0 || index >= blocks) {
      throw ConfigError("target block " + item + " is outside the encoder (" +
                        std::to_string(blocks) + " blocks)");
    }
    if (seen.insert(index).second) out.push_back(index);
  }
  if (out.empty()) throw ConfigError("unknown target selector '" + selector + "'");
  return out;
}

void require_width(const torch::Tensor& x, int64_t width, const char* what) {
  if (x.dim() < 1 || x.size(-1) != width) {
    throw ShapeError(std::string(what) + " expects input width " + std::to_string(width) +
                     ", got " + (x.dim() < 1 ? std::string("a scalar") : std::to_string(x.size(-1))));
  }
}

}  // namespace

LoraState make_lora_state(torch::Tensor base_weight, torch::Tensor base_bias, int64_t rank,
                          double alpha, double dropout) {
  const int64_t out_features = base_weight.size(0);
  const int64_t in_features = base_weight.size(1);
  if (rank <= 0 || rank >= std::min(out_features, in_features)) {
    throw ConfigError("LoRA rank " + std::to_string(rank) + " must satisfy 0 < r < min(d, k) = " +
                      std::to_string(std::min(out_features, in_features)));
  }
  LoraState state;
  state.base_weight = std::move(base_weight);
  state.base_bias = std::move(base_bias);
  auto opts = state.base_weight.options();
  state.a = torch::randn({rank, in_features}, opts) / std::sqrt(static_cast<double>(rank));
  state.b = torch::zeros({out_features, rank}, opts);
  state.alpha = alpha;
  state.rank = rank;
  state.dropout = dropout;
  return state;
}

torch::Tensor lora_forward(const torch::Tensor& x, const LoraState& state, bool training) {
  require_width(x, state.base_weight.size(1), "lora_forward");
  auto frozen = F::linear(x, state.base_weight, state.base_bias);
  auto path = x;
  if (training && state.dropout > 0.0) {
    path = F::dropout(x, F::DropoutFuncOptions().p(state.dropout).training(true));
  }
  auto delta = F::linear(F::linear(path, state.a), state.b);
  return frozen + delta * state.scaling();
}

torch::Tensor merge_lora(const LoraState& state) {
  return state.base_weight + torch::matmul(state.b, state.a) * state.scaling();
}

AdapterState make_adapter_state(int64_t dim, int64_t bottleneck_dim) {
  torch::nn::Linear down(dim, bottleneck_dim);
  AdapterState state;
  state.down_weight = down->weight.detach().clone();
  state.down_bias = down->bias.detach().clone();
  state.up_weight = torch::zeros({dim, bottleneck_dim});
  state.up_bias = torch::zeros({dim});
  return state;
}

torch::Tensor adapter_forward(const torch::Tensor& x, const AdapterState& state) {
  require_width(x, state.down_weight.size(1), "adapter_forward");
  auto hidden = F::gelu(F::linear(x, state.down_weight, state.down_bias));
  return F::linear(hidden, state.up_weight, state.up_bias) + x;
}

LoraLinearImpl::LoraLinearImpl(const LinearProjectionImpl& base, int64_t rank, double alpha,
                               double dropout) {
  state_ = make_lora_state(base.weight.detach(), base.bias.detach(), rank, alpha, dropout);
  state_.base_weight = register_parameter("weight", state_.base_weight, /*requires_grad=*/false);
  state_.base_bias = register_parameter("bias", state_.base_bias, /*requires_grad=*/false);
  state_.a = register_parameter("lora_a", state_.a);
  state_.b = register_parameter("lora_b", state_.b);
}

torch::Tensor LoraLinearImpl::forward(const torch::Tensor& tokens) {
  return lora_forward(tokens, state_, is_training());
}

AdapterImpl::AdapterImpl(int64_t dim, int64_t bottleneck_dim) {
  state_ = make_adapter_state(dim, bottleneck_dim);
  state_.down_weight = register_parameter("down_weight", state_.down_weight);
  state_.down_bias = register_parameter("down_bias", state_.down_bias);
  state_.up_weight = register_parameter("up_weight", state_.up_weight);
  state_.up_bias = register_parameter("up_bias", state_.up_bias);
}

torch::Tensor AdapterImpl::forward(const torch::Tensor& tokens) {
  return adapter_forward(tokens, state_);
}

std::vector<torch::Tensor> AdapterImpl::trainable() const {
  return {state_.down_weight, state_.down_bias, state_.up_weight, state_.up_bias};
}

bool has_peft(EncoderImpl& encoder) {
  for (int64_t i = 0; i < encoder.num_blocks(); ++i) {
    auto& block = encoder.block(i);
    if (block->pre_block()) return true;
    if (std::dynamic_pointer_cast<LoraLinearImpl>(block->attention()->qkv())) return true;
  }
  return false;
}

InjectionReport inject(EncoderImpl& encoder, const PeftConfig& config) {
  config.validate();
  if (has_peft(encoder)) {
    throw ConfigError("encoder already carries PEFT modules; refusing to inject twice");
  }
  InjectionReport report;
  if (config.strategy == PeftStrategy::kNone) {
    freeze_base(encoder);
    return report;
  }
  for (int64_t index : parse_targets(config.targets, encoder.num_blocks())) {
    auto& block = encoder.block(index);
    const std::string prefix = "blocks." + std::to_string(index);
    if (config.strategy == PeftStrategy::kLora) {
      auto base = std::dynamic_pointer_cast<LinearProjectionImpl>(block->attention()->qkv());
      if (!base) throw ConfigError(prefix + ".attn.qkv is not a plain projection");
      auto lora = std::make_shared<LoraLinearImpl>(*base, config.rank, config.alpha, config.dropout);
      lora->train(encoder.is_training());
      block->attention()->set_qkv(lora);
      report.sites.push_back(prefix + ".attn.qkv");
      report.parameter_count += lora_site_params(lora->state().a.size(1),
                                                 lora->state().b.size(0), config.rank);
    } else {
      auto adapter = std::make_shared<AdapterImpl>(block->dim(), config.bottleneck_dim);
      adapter->train(encoder.is_training());
      block->set_pre_block(adapter);
      report.sites.push_back(prefix + ".pre_block");
      report.parameter_count += adapter_block_params(block->dim(), config.bottleneck_dim);
    }
  }
  freeze_base(encoder);
  return report;
}

std::vector<LoraLinearImpl*> lora_sites(EncoderImpl& encoder) {
  std::vector<LoraLinearImpl*> sites;
  for (int64_t i = 0; i < encoder.num_blocks(); ++i) {
    auto qkv = encoder.block(i)->attention()->qkv();
    if (auto* lora = dynamic_cast<LoraLinearImpl*>(qkv.get())) sites.push_back(lora);
  }
  return sites;
}

std::vector<torch::Tensor> peft_parameters(EncoderImpl& encoder) {
  std::vector<torch::Tensor> params;
  for (int64_t i = 0; i < encoder.num_blocks(); ++i) {
    auto& block = encoder.block(i);
    if (auto* adapter = dynamic_cast<AdapterImpl*>(block->pre_block().get())) {
      for (auto& t : adapter->trainable()) params.push_back(t);
    }
    if (auto* lora = dynamic_cast<LoraLinearImpl*>(block->attention()->qkv().get())) {
      for (auto& t : lora->trainable()) params.push_back(t);
    }
  }
  return params;
}

std::vector<torch::Tensor> base_parameters(EncoderImpl& encoder) {
  std::unordered_set<const void*> peft;
  for (const auto& t : peft_parameters(encoder)) peft.insert(t.unsafeGetTensorImpl());
  std::vector<torch::Tensor> base;
  for (const auto& t : encoder.parameters()) {
    if (!peft.count(t.unsafeGetTensorImpl())) base.push_back(t);
  }
  return base;
}

void freeze_base(EncoderImpl& encoder) {
  for (auto& t : encoder.parameters()) t.set_requires_grad(false);
  for (auto& t : peft_parameters(encoder)) t.set_requires_grad(true);
}

ParamCount count_params(const torch::nn::Module& module) {
  ParamCount count;
  for (const auto& t : module.parameters()) {
    count.total += t.numel();
    if (t.requires_grad()) count.trainable += t.numel();
  }
  return count;
}

int64_t lora_site_params(int64_t in_features, int64_t out_features, int64_t rank) {
  return rank * (in_features + out_features);
}

int64_t adapter_block_params(int64_t dim, int64_t bottleneck_dim) {
  return 2 * dim * bottleneck_dim + bottleneck_dim + dim;
}

uint64_t checksum(const std::vector<torch::Tensor>& tensors) {
  uint64_t hash = 1469598103934665603ULL;
  for (const auto& t : tensors) {
    auto c = t.detach().contiguous().cpu();
    const auto* bytes = static_cast<const unsigned char*>(c.data_ptr());
    const size_t n = c.numel() * c.element_size();
    for (size_t i = 0; i < n; ++i) {
      hash ^= bytes[i];
      hash *= 1099511628211ULL;
    }
  }
  return hash;
}

}  // namespace changeadapt
