// Copyright 2026 The changeadapt Authors
// SPDX-License-Identifier: Apache-2.0

#include <gmock/gmock.h>
#include <gtest/gtest.h>
#include <torch/torch.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "changeadapt/checkpoint.h"
#include "changeadapt/config.h"
#include "changeadapt/errors.h"
#include "changeadapt/harness.h"
#include "changeadapt/image_io.h"
#include "changeadapt/peft.h"
#include "cli.h"
#include "fixtures.h"

namespace fs = std::filesystem;
using ::testing::HasSubstr;

namespace changeadapt {
namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("changeadapt_harness_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

TEST(Loss, UniformLogits) {
  ChangeLogits a{torch::zeros({2, 2, 4, 4}), Provenance::kBranchA};
  ChangeLogits b{torch::zeros({2, 2, 4, 4}), Provenance::kBranchB};
  auto mask = torch::randint(0, 2, {2, 4, 4}, torch::kInt64);
  EXPECT_NEAR(change_loss(a, b, mask).item<double>(), 2 * std::log(2.0), 1e-6);
}

TEST(Loss, ConfidentCorrectLogitsVanish) {
  auto mask = torch::randint(0, 2, {1, 5, 5}, torch::kInt64);
  auto onehot = torch::one_hot(mask, 2).permute({0, 3, 1, 2}).to(torch::kFloat);
  ChangeLogits a{(onehot * 2 - 1) * 50, Provenance::kBranchA};
  EXPECT_LT(change_loss(a, a, mask).item<double>(), 1e-12);
}

TEST(Loss, BranchOrderDoesNotMatter) {
  ChangeLogits a{torch::randn({1, 2, 3, 3}), Provenance::kBranchA};
  ChangeLogits b{torch::randn({1, 2, 3, 3}), Provenance::kBranchB};
  auto mask = torch::randint(0, 2, {1, 3, 3}, torch::kInt64);
  EXPECT_NEAR(change_loss(a, b, mask).item<double>(), change_loss(b, a, mask).item<double>(), 1e-6);
}

TEST(Loss, RejectsBadMasks) {
  ChangeLogits a{torch::zeros({1, 2, 2, 2}), Provenance::kBranchA};
  EXPECT_THROW(change_loss(a, a, torch::full({1, 2, 2}, 2, torch::kInt64)), DataError);
  EXPECT_THROW(change_loss(a, a, torch::zeros({1, 2, 2})), ShapeError);
  EXPECT_THROW(change_loss(a, a, torch::zeros({2, 2}, torch::kInt64)), ShapeError);
}

TEST(Schedule, LinearWarmup) {
  EXPECT_EQ(lr_at(0, 3e-4, 100), 0.0);
  EXPECT_DOUBLE_EQ(lr_at(50, 3e-4, 100), 1.5e-4);
  EXPECT_DOUBLE_EQ(lr_at(100, 3e-4, 100), 3e-4);
  EXPECT_DOUBLE_EQ(lr_at(5000, 3e-4, 100), 3e-4);
  EXPECT_DOUBLE_EQ(lr_at(0, 1e-3, 0), 1e-3);
  EXPECT_THROW(lr_at(-1, 1e-3, 10), ConfigError);
  double prev = 0;
  for (int64_t s = 0; s <= 120; ++s) {
    const double v = lr_at(s, 1.0, 100);
    EXPECT_GE(v, prev);
    EXPECT_LE(v - prev, 0.01 + 1e-12);
    prev = v;
  }
}

TEST(Config, JsonRoundTrip) {
  auto c = toy_hierarchical_adapter_config();
  c.stop_at_val_iou = 0.5;
  c.data.synthetic.pseudo_change = 0.25;
  c.eval.window = 32;
  auto back = run_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  auto dir = scratch("config");
  save_run_config(dir / "c.json", c);
  EXPECT_EQ(to_json(load_run_config(dir / "c.json")), to_json(c));
  fs::remove_all(dir);
}

TEST(Config, UnknownKeysAndBadValuesAreRejected) {
  auto j = to_json(toy_vit_lora_config());
  j["learning_rate"] = 1.0;
  EXPECT_THROW(run_config_from_json(j), ConfigError);
  auto k = to_json(toy_vit_lora_config());
  k["batch_size"] = 0;
  EXPECT_THROW(run_config_from_json(k), ConfigError);
  EXPECT_THROW(load_run_config("/nonexistent/run.json"), ConfigError);
}

TEST(Config, ToyConfigsValidate) {
  EXPECT_NO_THROW(toy_vit_lora_config().validate());
  EXPECT_NO_THROW(toy_hierarchical_adapter_config().validate());
  EXPECT_EQ(toy_vit_lora_config().model.backbone.depth, 8);
  EXPECT_EQ(toy_vit_lora_config().model.backbone.embed_dim, 64);
}

TEST(Checkpoint, RoundTripAndCorruption) {
  auto dir = scratch("ckpt");
  auto cfg = fixtures::tiny_run(fixtures::tiny_vit(), 0);
  torch::manual_seed(11);
  ChangeDetector model(cfg.model);
  {
    torch::NoGradGuard guard;
    for (auto& p : model->parameters()) p.add_(torch::randn_like(p));
  }
  save_checkpoint(dir / "m.ckpt", *model, cfg, 7, 0.5);
  CheckpointInfo info;
  auto loaded = load_checkpoint(dir / "m.ckpt", &info);
  EXPECT_EQ(info.step, 7);
  EXPECT_EQ(info.val_iou, 0.5);
  EXPECT_EQ(to_json(info.config), to_json(cfg));
  auto p = model->named_parameters();
  auto q = loaded->named_parameters();
  ASSERT_EQ(p.size(), q.size());
  for (const auto& item : p) EXPECT_TRUE(torch::equal(item.value(), q[item.key()])) << item.key();

  // Truncated file.
  {
    std::ifstream in(dir / "m.ckpt", std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::ofstream(dir / "short.ckpt", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
  }
  EXPECT_THROW(load_checkpoint(dir / "short.ckpt"), DataError);
  std::ofstream(dir / "junk.ckpt") << "not a checkpoint";
  EXPECT_THROW(load_checkpoint(dir / "junk.ckpt"), DataError);
  // Weights from one architecture do not load into another.
  ChangeDetector other(fixtures::tiny_hierarchical());
  EXPECT_THROW(load_weights(dir / "m.ckpt", *other), DataError);
  fs::remove_all(dir);
}

TEST(Train, ZeroStepsEvaluatesInitialModel) {
  auto dir = scratch("zero");
  auto cfg = fixtures::tiny_run(fixtures::tiny_vit(), 0);
  cfg.output_dir = dir.string();
  auto r = train(cfg);
  ASSERT_EQ(r.state.log.size(), 1u);
  ASSERT_TRUE(r.state.log[0].val_iou.has_value());
  EXPECT_EQ(r.state.best_step, 0);
  EXPECT_EQ(r.state.peft_checksum_before, r.state.peft_checksum_after);
  torch::manual_seed(cfg.seed);
  ChangeDetector fresh(cfg.model);
  auto saved = load_checkpoint(dir / "best.ckpt");
  auto p = fresh->named_parameters();
  for (const auto& item : saved->named_parameters()) EXPECT_TRUE(torch::equal(item.value(), p[item.key()]));
  EXPECT_TRUE(fs::exists(dir / "config.json"));
  EXPECT_TRUE(fs::exists(dir / "train_log.jsonl"));
  fs::remove_all(dir);
}

TEST(Train, SeededRunsAgree) {
  auto cfg = fixtures::tiny_run(fixtures::tiny_hierarchical(), 4);
  cfg.data.augment.flips = true;
  auto first = train(cfg);
  auto second = train(cfg);
  ASSERT_EQ(first.state.log.size(), second.state.log.size());
  for (size_t i = 0; i < first.state.log.size(); ++i) {
    EXPECT_EQ(first.state.log[i].loss, second.state.log[i].loss);
  }
  EXPECT_EQ(first.state.peft_checksum_after, second.state.peft_checksum_after);
}

TEST(Train, KeepsBestEvaluation) {
  auto dir = scratch("best");
  auto cfg = fixtures::tiny_run(fixtures::tiny_vit(), 6);
  cfg.output_dir = dir.string();
  std::vector<LogRecord> seen;
  auto r = train(cfg, [&](const LogRecord& rec) { seen.push_back(rec); });
  EXPECT_EQ(seen.size(), r.state.log.size());
  double best = -1;
  int64_t best_step = -1;
  for (const auto& rec : r.state.log) {
    if (rec.val_iou && *rec.val_iou > best) {
      best = *rec.val_iou;
      best_step = rec.step;
    }
  }
  EXPECT_EQ(r.state.best_val_iou, best);
  EXPECT_EQ(r.state.best_step, best_step);
  CheckpointInfo info;
  load_checkpoint(dir / "best.ckpt", &info);
  EXPECT_EQ(info.step, best_step);
  // The returned model is the best one.
  auto data = load_data(cfg.data);
  EXPECT_DOUBLE_EQ(evaluate(*r.model, data.val, cfg.eval).metrics.iou, best);
  fs::remove_all(dir);
}

TEST(Train, FrozenAudit) {
  auto r = train(fixtures::tiny_run(fixtures::tiny_vit(), 5));
  EXPECT_EQ(r.state.base_checksum_before, r.state.base_checksum_after);
  EXPECT_NE(r.state.peft_checksum_before, r.state.peft_checksum_after);
}

TEST(Train, EarlyStop) {
  auto cfg = fixtures::tiny_run(fixtures::tiny_vit(), 10);
  cfg.stop_at_val_iou = -0.5;  // any evaluation satisfies it
  auto r = train(cfg);
  EXPECT_EQ(r.state.steps, cfg.eval_interval);
}

TEST(Evaluate, WindowedMatchesDirectForFullWindow) {
  torch::manual_seed(12);
  ChangeDetector model(fixtures::tiny_vit());
  model->eval();
  auto samples = generate_set(SynthSpec{}, 0, 3);
  auto direct = evaluate(*model, samples);
  EvalConfig ec;
  ec.window = 64;
  ec.stride = 64;
  EXPECT_EQ(evaluate(*model, samples, ec).counts, direct.counts);
  EXPECT_EQ(direct.counts.total(), 3 * 64 * 64);
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override { dir_ = scratch("cli"); }
  void TearDown() override { fs::remove_all(dir_); }

  int run(const std::vector<std::string>& args) {
    out_.str("");
    err_.str("");
    return cli::run(args, out_, err_);
  }

  fs::path write_config(const RunConfig& c) {
    auto p = dir_ / "run.json";
    save_run_config(p, c);
    return p;
  }

  fs::path dir_;
  std::ostringstream out_;
  std::ostringstream err_;
};

TEST_F(Cli, ParamsReportsCounts) {
  auto cfg = toy_vit_lora_config();
  ASSERT_EQ(run({"params", "--config", write_config(cfg).string()}), 0) << err_.str();
  ChangeDetector model(cfg.model);
  auto counts = count_params(*model);
  EXPECT_THAT(out_.str(), HasSubstr("trainable=" + std::to_string(counts.trainable)));
  EXPECT_THAT(out_.str(), HasSubstr("encoder deltas 16384"));
  EXPECT_THAT(out_.str(), HasSubstr("total=" + std::to_string(counts.total)));
}

TEST_F(Cli, ConfigPresetRoundTrips) {
  ASSERT_EQ(run({"config", "--preset", "vit-lora"}), 0) << err_.str();
  auto parsed = run_config_from_json(nlohmann::json::parse(out_.str()));
  EXPECT_EQ(to_json(parsed), to_json(toy_vit_lora_config()));
  EXPECT_NE(run({"config", "--preset", "resnet"}), 0);
}

TEST_F(Cli, BadArgumentsPrintUsage) {
  EXPECT_NE(run({"params", "--bogus"}), 0);
  EXPECT_THAT(err_.str(), HasSubstr("error:"));
  EXPECT_THAT(err_.str(), HasSubstr("Usage"));
  EXPECT_NE(run({}), 0);
  EXPECT_NE(run({"params", "--config", (dir_ / "absent.json").string()}), 0);
}

TEST_F(Cli, TrainEvalInfer) {
  auto cfg = fixtures::tiny_run(fixtures::tiny_vit(), 2);
  auto config = write_config(cfg).string();
  auto out_dir = (dir_ / "out").string();
  ASSERT_EQ(run({"train", "--config", config, "--output", out_dir}), 0) << err_.str();
  EXPECT_THAT(out_.str(), HasSubstr("val_iou"));
  auto ckpt = (fs::path(out_dir) / "best.ckpt").string();
  ASSERT_TRUE(fs::exists(ckpt));

  ASSERT_EQ(run({"eval", "--config", config, "--checkpoint", ckpt, "--format", "json"}), 0) << err_.str();
  auto j = nlohmann::json::parse(out_.str());
  for (const char* key : {"OA", "IoU", "F1", "Rec", "Prec"}) EXPECT_TRUE(j.contains(key)) << key;

  auto s = generate(SynthSpec{});
  save_sample(dir_ / "pair", "test", s);
  const auto base = dir_ / "pair" / "test";
  const auto name = s.id + ".png";
  auto pred = (dir_ / "pred.png").string();
  ASSERT_EQ(run({"infer", "--checkpoint", ckpt, "--a", (base / "A" / name).string(), "--b",
                 (base / "B" / name).string(), "--out", pred, "--label", (base / "label" / name).string()}),
            0)
      << err_.str();
  auto written = read_png(pred, 1);
  EXPECT_EQ(written.sizes(), (c10::IntArrayRef{64, 64, 1}));
  EXPECT_TRUE(torch::all((written == 0) | (written == 255)).item<bool>());
  EXPECT_TRUE(fs::exists(dir_ / "pred_overlay.png"));
  EXPECT_THAT(out_.str(), HasSubstr("IoU"));

  auto windowed = (dir_ / "pred_w.png").string();
  ASSERT_EQ(run({"infer", "--checkpoint", ckpt, "--a", (base / "A" / name).string(), "--b",
                 (base / "B" / name).string(), "--out", windowed, "--window", "32", "--stride", "16"}),
            0)
      << err_.str();
  EXPECT_TRUE(fs::exists(windowed));
}

}  // namespace
}  // namespace changeadapt
