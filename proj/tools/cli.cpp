// Copyright 2026 The changeadapt Authors
// SPDX-License-Identifier: Apache-2.0

#include "cli.h"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <optional>

#include "changeadapt/checkpoint.h"
#include "changeadapt/config.h"
#include "changeadapt/errors.h"
#include "changeadapt/harness.h"
#include "changeadapt/image_io.h"
#include "changeadapt/metrics.h"
#include "changeadapt/peft.h"

namespace changeadapt::cli {

namespace {

struct Options {
  std::string config;
  std::string checkpoint;
  std::string output_dir;
  std::optional<int64_t> max_steps;
  std::string split = "val";
  std::string format = "both";
  int64_t window = 0;
  int64_t stride = 0;
  std::string image_a;
  std::string image_b;
  std::string out;
  std::string label;
  std::string overlay;
  std::string preset;
};

int do_train(const Options& o, std::ostream& out) {
  auto cfg = load_run_config(o.config);
  if (!o.output_dir.empty()) cfg.output_dir = o.output_dir;
  if (o.max_steps) cfg.max_steps = *o.max_steps;
  auto result = train(cfg, [&out](const LogRecord& r) {
    char line[160];
    if (r.val_iou) {
      std::snprintf(line, sizeof(line), "step %6lld  lr %.3e  loss %.4f  val_iou %.4f\n",
                    static_cast<long long>(r.step), r.lr, r.loss, *r.val_iou);
    } else {
      std::snprintf(line, sizeof(line), "step %6lld  lr %.3e  loss %.4f\n",
                    static_cast<long long>(r.step), r.lr, r.loss);
    }
    out << line << std::flush;
  });
  const auto& st = result.state;
  out << "best val_iou " << st.best_val_iou << " at step " << st.best_step << " (" << st.steps
      << " steps, " << st.seconds << " s)\n";
  if (!cfg.output_dir.empty()) {
    out << "checkpoint " << (std::filesystem::path(cfg.output_dir) / "best.ckpt").string() << '\n';
  }
  return 0;
}

int do_eval(const Options& o, std::ostream& out) {
  auto cfg = load_run_config(o.config);
  auto model = load_checkpoint(o.checkpoint);
  auto data = load_data(cfg.data);
  EvalConfig eval = cfg.eval;
  if (o.window > 0) eval.window = o.window;
  if (o.stride > 0) eval.stride = o.stride;
  const auto& samples = o.split == "train" ? data.train : data.val;
  auto result = evaluate(*model, samples, eval);
  if (o.format != "table") out << to_json(result.metrics, result.counts).dump(2) << '\n';
  if (o.format != "json") out << format_table(result.metrics, result.counts);
  return 0;
}

torch::Tensor load_image(const std::string& path) {
  return from_rgb8(read_png(path, 3)).unsqueeze(0);
}

int do_infer(const Options& o, std::ostream& out) {
  auto model = load_checkpoint(o.checkpoint);
  model->eval();
  torch::NoGradGuard guard;
  auto a = load_image(o.image_a);
  auto b = load_image(o.image_b);
  if (a.sizes() != b.sizes()) throw ShapeError("images " + o.image_a + " and " + o.image_b + " differ in size");

  FusedPredictor predictor = [&model](const torch::Tensor& x, const torch::Tensor& y) {
    return model->predict(x, y).probabilities;
  };
  torch::Tensor probs;
  if (o.window > 0) {
    const int64_t stride = o.stride > 0 ? o.stride : std::max<int64_t>(1, o.window / 2);
    probs = sliding_window_infer(predictor, a, b, o.window, stride).probabilities;
  } else {
    probs = predictor(a, b);
  }
  auto pred = probs.argmax(1)[0];
  write_png(o.out, (pred * 255).to(torch::kUInt8));
  out << "wrote " << o.out << '\n';

  if (!o.label.empty()) {
    auto gt = (read_png(o.label, 1).select(2, 0) > 127).to(torch::kInt64);
    auto overlay_path = o.overlay;
    if (overlay_path.empty()) {
      std::filesystem::path p(o.out);
      overlay_path = (p.parent_path() / (p.stem().string() + "_overlay.png")).string();
    }
    write_png(overlay_path, render_overlay(pred, gt));
    out << "wrote " << overlay_path << '\n';
    auto counts = accumulate(pred, gt);
    out << format_table(report(counts), counts);
  }
  return 0;
}

int do_params(const Options& o, std::ostream& out) {
  auto cfg = load_run_config(o.config);
  ChangeDetector model(cfg.model);
  const auto all = count_params(*model);
  const auto enc = count_params(*model->encoder());
  int64_t decoder = 0;
  for (const auto& p : model->decoder_parameters()) decoder += p.numel();
  char line[200];
  std::snprintf(line, sizeof(line),
                "trainable=%lld (encoder deltas %lld + decoder %lld) total=%lld percent=%.2f%%\n",
                static_cast<long long>(all.trainable), static_cast<long long>(enc.trainable),
                static_cast<long long>(decoder), static_cast<long long>(all.total),
                100.0 * all.trainable_fraction());
  out << line;
  std::snprintf(line, sizeof(line), "encoder-only deltas percent=%.2f%%\n",
                100.0 * static_cast<double>(enc.trainable) / static_cast<double>(all.total));
  out << line;
  return 0;
}

int do_config(const Options& o, std::ostream& out) {
  const auto cfg = o.preset == "vit-lora" ? toy_vit_lora_config() : toy_hierarchical_adapter_config();
  out << to_json(cfg).dump(2) << '\n';
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Parameter-efficient bi-temporal change detection", "changeadapt"};
  app.require_subcommand(1);
  Options o;

  auto* train_cmd = app.add_subcommand("train", "train a model from a run config");
  train_cmd->add_option("--config", o.config, "run config JSON")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--output", o.output_dir, "override output_dir");
  train_cmd->add_option("--max-steps", o.max_steps, "override max_steps");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the configured split");
  eval_cmd->add_option("--config", o.config, "run config JSON")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--checkpoint", o.checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--window", o.window, "sliding-window size")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--stride", o.stride, "sliding-window stride")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--split", o.split, "train or val")->check(CLI::IsMember({"train", "val"}));
  eval_cmd->add_option("--format", o.format, "json, table or both")
      ->check(CLI::IsMember({"json", "table", "both"}));

  auto* infer_cmd = app.add_subcommand("infer", "predict a change map for one image pair");
  infer_cmd->add_option("--checkpoint", o.checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  infer_cmd->add_option("--a", o.image_a, "pre-change PNG")->required()->check(CLI::ExistingFile);
  infer_cmd->add_option("--b", o.image_b, "post-change PNG")->required()->check(CLI::ExistingFile);
  infer_cmd->add_option("--out", o.out, "binary change PNG to write")->required();
  infer_cmd->add_option("--label", o.label, "ground-truth PNG; enables the overlay")->check(CLI::ExistingFile);
  infer_cmd->add_option("--overlay", o.overlay, "overlay PNG path (default <out>_overlay.png)");
  infer_cmd->add_option("--window", o.window, "sliding-window size")->check(CLI::PositiveNumber);
  infer_cmd->add_option("--stride", o.stride, "sliding-window stride")->check(CLI::PositiveNumber);

  auto* params_cmd = app.add_subcommand("params", "print trainable and total parameter counts");
  params_cmd->add_option("--config", o.config, "run config JSON")->required()->check(CLI::ExistingFile);

  auto* config_cmd = app.add_subcommand("config", "print a built-in run config as JSON");
  config_cmd->add_option("--preset", o.preset, "vit-lora or hier-adapter")
      ->required()
      ->check(CLI::IsMember({"vit-lora", "hier-adapter"}));

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return e.get_exit_code() == 0 ? 2 : e.get_exit_code();
  }

  try {
    if (*train_cmd) return do_train(o, out);
    if (*eval_cmd) return do_eval(o, out);
    if (*infer_cmd) return do_infer(o, out);
    if (*params_cmd) return do_params(o, out);
    if (*config_cmd) return do_config(o, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace changeadapt::cli
