// Copyright 2026 The changeadapt Authors
// SPDX-License-Identifier: Apache-2.0

#include "changeadapt/config.h"

#include <fstream>
#include <initializer_list>

#include "changeadapt/errors.h"

using nlohmann::json;

namespace changeadapt {

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (const char* a : allowed) known = known || key == a;
    if (!known) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) {
    try {
      out = j.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
    }
  }
}

json backbone_json(const BackboneSpec& b) {
  return {{"kind", to_string(b.kind)},       {"patch_size", b.patch_size},
          {"embed_dim", b.embed_dim},        {"depth", b.depth},
          {"heads", b.heads},                {"mlp_ratio", b.mlp_ratio},
          {"stage_depths", b.stage_depths},  {"tap_layers", b.tap_layers},
          {"grid_image_size", b.grid_image_size}};
}

BackboneSpec backbone_from(const json& j) {
  check_keys(j, {"kind", "patch_size", "embed_dim", "depth", "heads", "mlp_ratio", "stage_depths",
                 "tap_layers", "grid_image_size"},
             "model.backbone");
  BackboneSpec b;
  std::string kind = to_string(b.kind);
  read(j, "kind", kind);
  b.kind = backbone_kind_from_string(kind);
  read(j, "patch_size", b.patch_size);
  read(j, "embed_dim", b.embed_dim);
  read(j, "depth", b.depth);
  read(j, "heads", b.heads);
  read(j, "mlp_ratio", b.mlp_ratio);
  read(j, "stage_depths", b.stage_depths);
  read(j, "tap_layers", b.tap_layers);
  read(j, "grid_image_size", b.grid_image_size);
  return b;
}

json peft_json(const PeftConfig& p) {
  return {{"strategy", to_string(p.strategy)}, {"rank", p.rank},
          {"alpha", p.alpha},                  {"dropout", p.dropout},
          {"bottleneck_dim", p.bottleneck_dim}, {"targets", p.targets}};
}

PeftConfig peft_from(const json& j) {
  check_keys(j, {"strategy", "rank", "alpha", "dropout", "bottleneck_dim", "targets"}, "model.peft");
  PeftConfig p;
  std::string strategy = to_string(p.strategy);
  read(j, "strategy", strategy);
  p.strategy = peft_strategy_from_string(strategy);
  read(j, "rank", p.rank);
  read(j, "alpha", p.alpha);
  read(j, "dropout", p.dropout);
  read(j, "bottleneck_dim", p.bottleneck_dim);
  read(j, "targets", p.targets);
  return p;
}

json decoder_json(const DecoderConfig& d) {
  return {{"kind", to_string(d.kind)},
          {"fpn_channels", d.fpn_channels},
          {"head_channels", d.head_channels},
          {"mfce_joint", d.mfce_joint},
          {"mfce",
           {{"c_mid", d.mfce.c_mid},
            {"aspp_rates", d.mfce.aspp_rates},
            {"image_pool", d.mfce.image_pool},
            {"stage_factors", d.mfce.stage_factors},
            {"stage_channels", d.mfce.stage_channels}}}};
}

DecoderConfig decoder_from(const json& j) {
  check_keys(j, {"kind", "fpn_channels", "head_channels", "mfce_joint", "mfce"}, "model.decoder");
  DecoderConfig d;
  std::string kind = to_string(d.kind);
  read(j, "kind", kind);
  d.kind = decoder_kind_from_string(kind);
  read(j, "fpn_channels", d.fpn_channels);
  read(j, "head_channels", d.head_channels);
  read(j, "mfce_joint", d.mfce_joint);
  if (j.contains("mfce")) {
    const auto& m = j.at("mfce");
    check_keys(m, {"c_mid", "aspp_rates", "image_pool", "stage_factors", "stage_channels"},
               "model.decoder.mfce");
    read(m, "c_mid", d.mfce.c_mid);
    read(m, "aspp_rates", d.mfce.aspp_rates);
    read(m, "image_pool", d.mfce.image_pool);
    read(m, "stage_factors", d.mfce.stage_factors);
    read(m, "stage_channels", d.mfce.stage_channels);
  }
  return d;
}

json synth_json(const SynthSpec& s) {
  return {{"canvas", s.canvas},
          {"min_objects", s.min_objects},
          {"max_objects", s.max_objects},
          {"min_object_size", s.min_object_size},
          {"max_object_size", s.max_object_size},
          {"change_fraction", s.change_fraction},
          {"pseudo_change", s.pseudo_change}};
}

SynthSpec synth_from(const json& j) {
  check_keys(j, {"canvas", "min_objects", "max_objects", "min_object_size", "max_object_size",
                 "change_fraction", "pseudo_change"},
             "data.synthetic");
  SynthSpec s;
  read(j, "canvas", s.canvas);
  read(j, "min_objects", s.min_objects);
  read(j, "max_objects", s.max_objects);
  read(j, "min_object_size", s.min_object_size);
  read(j, "max_object_size", s.max_object_size);
  read(j, "change_fraction", s.change_fraction);
  read(j, "pseudo_change", s.pseudo_change);
  return s;
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  if (!(optimizer.lr > 0.0)) throw ConfigError("optimizer.lr must be positive");
  if (optimizer.weight_decay < 0.0) throw ConfigError("optimizer.weight_decay must be >= 0");
  if (batch_size <= 0) throw ConfigError("batch_size must be positive");
  if (warmup_steps < 0) throw ConfigError("warmup_steps must be >= 0");
  if (max_steps < 0) throw ConfigError("max_steps must be >= 0");
  if (eval_interval <= 0) throw ConfigError("eval_interval must be positive");
  if (log_interval <= 0) throw ConfigError("log_interval must be positive");
  if (eval.window < 0 || eval.stride < 0) throw ConfigError("eval window/stride must be >= 0");
  if (eval.batch_size <= 0) throw ConfigError("eval.batch_size must be positive");
  if (data.root.empty()) {
    data.synthetic.validate();
    if (data.train_pairs <= 0 || data.val_pairs <= 0) {
      throw ConfigError("synthetic train_pairs and val_pairs must be positive");
    }
    if (data.synthetic.canvas % model.backbone.required_divisor() != 0) {
      throw ConfigError("synthetic canvas " + std::to_string(data.synthetic.canvas) +
                        " is not divisible by the backbone stride " +
                        std::to_string(model.backbone.required_divisor()));
    }
  }
  if (data.augment.crop < 0) throw ConfigError("data.augment.crop must be >= 0");
}

json to_json(const RunConfig& c) {
  json j = {
      {"model",
       {{"backbone", backbone_json(c.model.backbone)},
        {"peft", peft_json(c.model.peft)},
        {"decoder", decoder_json(c.model.decoder)},
        {"exchange", {{"swap_indices", c.model.exchange.swap_indices}}}}},
      {"optimizer", {{"lr", c.optimizer.lr}, {"weight_decay", c.optimizer.weight_decay}}},
      {"batch_size", c.batch_size},
      {"warmup_steps", c.warmup_steps},
      {"max_steps", c.max_steps},
      {"eval_interval", c.eval_interval},
      {"log_interval", c.log_interval},
      {"seed", c.seed},
      {"stop_at_val_iou", c.stop_at_val_iou ? json(*c.stop_at_val_iou) : json(nullptr)},
      {"data",
       {{"root", c.data.root},
        {"train_split", c.data.train_split},
        {"val_split", c.data.val_split},
        {"synthetic", synth_json(c.data.synthetic)},
        {"train_pairs", c.data.train_pairs},
        {"val_pairs", c.data.val_pairs},
        {"train_seed", c.data.train_seed},
        {"val_seed", c.data.val_seed},
        {"augment",
         {{"flips", c.data.augment.flips},
          {"rotations", c.data.augment.rotations},
          {"crop", c.data.augment.crop}}}}},
      {"eval",
       {{"window", c.eval.window}, {"stride", c.eval.stride}, {"batch_size", c.eval.batch_size}}},
      {"output_dir", c.output_dir}};
  return j;
}

RunConfig run_config_from_json(const json& j) {
  check_keys(j, {"model", "optimizer", "batch_size", "warmup_steps", "max_steps", "eval_interval",
                 "log_interval", "seed", "stop_at_val_iou", "data", "eval", "output_dir"},
             "run config");
  RunConfig c;
  if (j.contains("model")) {
    const auto& m = j.at("model");
    check_keys(m, {"backbone", "peft", "decoder", "exchange"}, "model");
    if (m.contains("backbone")) c.model.backbone = backbone_from(m.at("backbone"));
    if (m.contains("peft")) c.model.peft = peft_from(m.at("peft"));
    if (m.contains("decoder")) c.model.decoder = decoder_from(m.at("decoder"));
    if (m.contains("exchange")) {
      check_keys(m.at("exchange"), {"swap_indices"}, "model.exchange");
      read(m.at("exchange"), "swap_indices", c.model.exchange.swap_indices);
    }
  }
  if (j.contains("optimizer")) {
    check_keys(j.at("optimizer"), {"lr", "weight_decay"}, "optimizer");
    read(j.at("optimizer"), "lr", c.optimizer.lr);
    read(j.at("optimizer"), "weight_decay", c.optimizer.weight_decay);
  }
  read(j, "batch_size", c.batch_size);
  read(j, "warmup_steps", c.warmup_steps);
  read(j, "max_steps", c.max_steps);
  read(j, "eval_interval", c.eval_interval);
  read(j, "log_interval", c.log_interval);
  read(j, "seed", c.seed);
  if (j.contains("stop_at_val_iou") && !j.at("stop_at_val_iou").is_null()) {
    c.stop_at_val_iou = j.at("stop_at_val_iou").get<double>();
  }
  if (j.contains("data")) {
    const auto& d = j.at("data");
    check_keys(d, {"root", "train_split", "val_split", "synthetic", "train_pairs", "val_pairs",
                   "train_seed", "val_seed", "augment"},
               "data");
    read(d, "root", c.data.root);
    read(d, "train_split", c.data.train_split);
    read(d, "val_split", c.data.val_split);
    if (d.contains("synthetic")) c.data.synthetic = synth_from(d.at("synthetic"));
    read(d, "train_pairs", c.data.train_pairs);
    read(d, "val_pairs", c.data.val_pairs);
    read(d, "train_seed", c.data.train_seed);
    read(d, "val_seed", c.data.val_seed);
    if (d.contains("augment")) {
      const auto& a = d.at("augment");
      check_keys(a, {"flips", "rotations", "crop"}, "data.augment");
      read(a, "flips", c.data.augment.flips);
      read(a, "rotations", c.data.augment.rotations);
      read(a, "crop", c.data.augment.crop);
    }
  }
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    check_keys(e, {"window", "stride", "batch_size"}, "eval");
    read(e, "window", c.eval.window);
    read(e, "stride", c.eval.stride);
    read(e, "batch_size", c.eval.batch_size);
  }
  read(j, "output_dir", c.output_dir);
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError("cannot parse config " + path.string() + ": " + e.what());
  }
  auto config = run_config_from_json(j);
  config.validate();
  return config;
}

void save_run_config(const std::filesystem::path& path, const RunConfig& config) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write config " + path.string());
  out << to_json(config).dump(2) << "\n";
}

RunConfig toy_vit_lora_config() {
  RunConfig c;
  auto& b = c.model.backbone;
  b.kind = BackboneKind::kPlainVit;
  b.patch_size = 8;
  b.embed_dim = 64;
  b.depth = 8;
  b.heads = 4;
  b.grid_image_size = 64;
  c.model.peft.strategy = PeftStrategy::kLora;
  auto& d = c.model.decoder;
  d.kind = DecoderKind::kMfce;
  d.mfce.c_mid = 32;
  d.mfce.stage_factors = {2, 2, 2};
  d.mfce.stage_channels = {32, 16, 16};
  c.optimizer.lr = 2e-3;
  return c;
}

RunConfig toy_hierarchical_adapter_config() {
  RunConfig c;
  auto& b = c.model.backbone;
  b.kind = BackboneKind::kHierarchical;
  b.embed_dim = 32;
  b.heads = 1;
  b.stage_depths = {1, 1, 2, 1};
  b.grid_image_size = 64;
  c.model.peft.strategy = PeftStrategy::kAdapter;
  auto& d = c.model.decoder;
  d.kind = DecoderKind::kFpnRes;
  d.fpn_channels = 64;
  d.head_channels = 16;
  c.optimizer.lr = 1e-3;
  return c;
}

}  // namespace changeadapt
