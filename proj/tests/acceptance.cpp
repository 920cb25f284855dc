// Copyright 2026 The changeadapt Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails.

#include <ATen/CPUGeneratorImpl.h>
#include <torch/torch.h>

#include <chrono>
#include <cstdio>
#include <random>
#include <string>

#include "changeadapt/config.h"
#include "changeadapt/harness.h"
#include "changeadapt/mfce.h"
#include "changeadapt/metrics.h"
#include "changeadapt/model.h"
#include "changeadapt/peft.h"
#include "changeadapt/siamese.h"
#include "oracles.h"

namespace ca = changeadapt;

namespace {

int failures = 0;
std::FILE* report_file = nullptr;  // verdict lines are mirrored here

void verdict(int id, const std::string& name, bool ok, const std::string& detail) {
  for (std::FILE* f : {stdout, report_file}) {
    if (f == nullptr) continue;
    std::fprintf(f, "%s  [%2d] %s: %s\n", ok ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
    std::fflush(f);
  }
  if (!ok) ++failures;
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), f, a, b, c, d);
  return buf;
}

std::vector<torch::Tensor> outputs(ca::ChangeDetectorImpl& model, const std::vector<torch::Tensor>& inputs) {
  std::vector<torch::Tensor> out;
  torch::NoGradGuard guard;
  for (size_t i = 0; i + 1 < inputs.size(); i += 2) {
    auto [a, b] = model.forward(inputs[i], inputs[i + 1]);
    out.push_back(a.logits);
    out.push_back(b.logits);
  }
  return out;
}

void zero_init_equivalence() {
  bool ok = true;
  int compared = 0;
  for (auto strategy : {ca::PeftStrategy::kLora, ca::PeftStrategy::kAdapter}) {
    for (auto base : {ca::toy_vit_lora_config().model, ca::toy_hierarchical_adapter_config().model}) {
      base.peft.strategy = ca::PeftStrategy::kNone;
      torch::manual_seed(100);
      ca::ChangeDetector model(base);
      model->eval();
      std::vector<torch::Tensor> inputs;
      for (int i = 0; i < 20; ++i) inputs.push_back(torch::rand({1, 3, 64, 64}));
      auto before = outputs(*model, inputs);
      ca::PeftConfig peft = base.peft;
      peft.strategy = strategy;
      ca::inject(*model->encoder(), peft);
      ca::freeze_base(*model->encoder());
      auto after = outputs(*model, inputs);
      for (size_t i = 0; i < before.size(); ++i) {
        ok = ok && torch::equal(before[i], after[i]);
        ++compared;
      }
    }
  }
  verdict(1, "zero-init equivalence", ok,
          fmt("%.0f branch outputs (10 input pairs x LoRA/Adapter x 2 backbones) bitwise equal, dropout off",
              compared));
}

void merge_equivalence() {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int64_t> dim(4, 64);
  double worst = 0;
  for (int site = 0; site < 20; ++site) {
    const int64_t d = dim(rng), k = dim(rng);
    const int64_t r = std::uniform_int_distribution<int64_t>(1, std::min(d, k) - 1)(rng);
    torch::manual_seed(site);
    auto state = ca::make_lora_state(torch::randn({d, k}), torch::randn({d}), r, 32.0, 0.0);
    state.b = torch::randn({d, r});
    auto x = torch::randn({5, k});
    auto unmerged = ca::lora_forward(x, state, false);
    auto merged = torch::nn::functional::linear(x, ca::merge_lora(state), state.base_bias);
    worst = std::max(worst, oracle::rel_error(merged, unmerged));
  }
  verdict(2, "merge equivalence", worst < 1e-5, fmt("20 random sites, max rel err %.2e < 1e-5", worst));
}

bool same_parameters(const std::vector<torch::Tensor>& a, const std::vector<torch::Tensor>& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i) {
    if (!torch::equal(a[i], b[i])) return false;
  }
  return true;
}

void frozen_contract() {
  bool ok = true;
  std::string detail;
  for (auto cfg : {ca::toy_vit_lora_config(), ca::toy_hierarchical_adapter_config()}) {
    cfg.max_steps = 200;
    cfg.eval_interval = 200;
    cfg.log_interval = cfg.max_steps;
    cfg.data.train_pairs = 16;
    cfg.data.val_pairs = 8;
    auto result = ca::train(cfg);
    // The harness seeds before construction, so a fresh model is the initialization.
    torch::manual_seed(cfg.seed);
    ca::ChangeDetector init(cfg.model);
    const bool base_same = same_parameters(ca::base_parameters(*init->encoder()),
                                           ca::base_parameters(*result.model->encoder()));
    const bool peft_moved = !same_parameters(ca::peft_parameters(*init->encoder()),
                                             ca::peft_parameters(*result.model->encoder()));
    ok = ok && base_same && peft_moved && result.state.steps == 200;
    detail += std::string(detail.empty() ? "" : "; ") + ca::to_string(cfg.model.peft.strategy) +
              (base_same ? " base bit-identical" : " base CHANGED") +
              (peft_moved ? ", deltas updated" : ", deltas UNCHANGED");
  }
  verdict(3, "frozen contract after 200 steps", ok, detail);
}

void gradient_checks() {
  auto opts = torch::TensorOptions().dtype(torch::kDouble);
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int64_t> dim(3, 6);
  double lora_err = 0, adapter_err = 0, fuse_err = 0;
  for (int trial = 0; trial < 5; ++trial) {
    torch::manual_seed(40 + trial);
    const int64_t d = dim(rng), k = dim(rng), r = 2, tokens = 3;

    ca::LoraState base;
    base.base_weight = torch::randn({d, k}, opts);
    base.base_bias = torch::randn({d}, opts);
    base.rank = r;
    base.alpha = 4.0;
    auto a0 = torch::randn({r, k}, opts), b0 = torch::randn({d, r}, opts);
    auto x = torch::randn({tokens, k}, opts), probe = torch::randn({tokens, d}, opts);
    auto lora_loss = [&](const torch::Tensor& a, const torch::Tensor& b) {
      ca::LoraState s = base;
      s.a = a;
      s.b = b;
      return (ca::lora_forward(x, s, false) * probe).sum();
    };
    auto a = a0.clone().requires_grad_(true), b = b0.clone().requires_grad_(true);
    lora_loss(a, b).backward();
    lora_err = std::max(lora_err, oracle::rel_error(a.grad(), oracle::numeric_grad(
        [&](const torch::Tensor& t) { return lora_loss(t, b0).item<double>(); }, a0)));
    lora_err = std::max(lora_err, oracle::rel_error(b.grad(), oracle::numeric_grad(
        [&](const torch::Tensor& t) { return lora_loss(a0, t).item<double>(); }, b0)));

    const int64_t m = 3;
    auto down0 = torch::randn({m, k}, opts), up0 = torch::randn({k, m}, opts);
    auto db = torch::randn({m}, opts), ub = torch::randn({k}, opts);
    auto probe_k = torch::randn({tokens, k}, opts);
    auto adapter_loss = [&](const torch::Tensor& down, const torch::Tensor& up) {
      return (ca::adapter_forward(x, ca::AdapterState{down, db, up, ub}) * probe_k).sum();
    };
    auto down = down0.clone().requires_grad_(true), up = up0.clone().requires_grad_(true);
    adapter_loss(down, up).backward();
    adapter_err = std::max(adapter_err, oracle::rel_error(down.grad(), oracle::numeric_grad(
        [&](const torch::Tensor& t) { return adapter_loss(t, up0).item<double>(); }, down0)));
    adapter_err = std::max(adapter_err, oracle::rel_error(up.grad(), oracle::numeric_grad(
        [&](const torch::Tensor& t) { return adapter_loss(down0, t).item<double>(); }, up0)));

    const int64_t n = 2 + trial % 3;
    auto f0 = torch::randn({n, 1, 2, 3, 3}, opts), s0 = torch::randn({n, 1, 1, 3, 3}, opts);
    auto probe_f = torch::randn({1, 2, 3, 3}, opts);
    auto fuse_loss = [&](const torch::Tensor& f, const torch::Tensor& s) {
      std::vector<torch::Tensor> layers, scores;
      for (int64_t i = 0; i < n; ++i) {
        layers.push_back(f[i]);
        scores.push_back(s[i]);
      }
      return (ca::attention_fuse(layers, scores).fused * probe_f).sum();
    };
    auto f = f0.clone().requires_grad_(true), s = s0.clone().requires_grad_(true);
    fuse_loss(f, s).backward();
    fuse_err = std::max(fuse_err, oracle::rel_error(f.grad(), oracle::numeric_grad(
        [&](const torch::Tensor& t) { return fuse_loss(t, s0).item<double>(); }, f0)));
    fuse_err = std::max(fuse_err, oracle::rel_error(s.grad(), oracle::numeric_grad(
        [&](const torch::Tensor& t) { return fuse_loss(f0, t).item<double>(); }, s0)));
  }
  const bool ok = lora_err < 1e-4 && adapter_err < 1e-4 && fuse_err < 1e-4;
  verdict(4, "finite-difference gradients", ok,
          fmt("eps 1e-3, max rel err lora %.1e, adapter %.1e, attention_fuse %.1e (< 1e-4)", lora_err,
              adapter_err, fuse_err));
}

void fusion_normalization() {
  std::mt19937_64 rng(5);
  double worst_sum = 0, worst_bound = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int64_t n = 1 + trial % 4;
    torch::manual_seed(500 + trial);
    std::vector<torch::Tensor> layers, scores;
    for (int64_t i = 0; i < n; ++i) {
      layers.push_back(torch::randn({2, 4, 5, 6}) * 3);
      scores.push_back(torch::randn({2, 1, 5, 6}) * 5);
    }
    auto r = ca::attention_fuse(layers, scores);
    worst_sum = std::max(worst_sum, (r.weights.sum(1) - 1).abs().max().item<double>());
    auto stacked = torch::stack(layers);
    auto lo = std::get<0>(stacked.min(0)), hi = std::get<0>(stacked.max(0));
    const double below = (lo - r.fused).clamp_min(0).max().item<double>();
    const double above = (r.fused - hi).clamp_min(0).max().item<double>();
    worst_bound = std::max({worst_bound, below, above});
  }
  const bool ok = worst_sum < 1e-6 && worst_bound < 1e-6;
  verdict(5, "fusion normalization", ok,
          fmt("100 trials, max |sum A - 1| %.1e (< 1e-6), max convexity violation %.1e (< 1e-6)", worst_sum,
              worst_bound));
}

void exchange_algebra() {
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<int64_t> side(1, 8), levels(1, 5), chans(1, 4);
  int passed = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int64_t n = levels(rng);
    ca::FeatureStack a, b;
    for (int64_t i = 0; i < n; ++i) {
      const int64_t c = chans(rng), h = side(rng), w = side(rng);
      auto gen = at::make_generator<at::CPUGeneratorImpl>(rng());
      a.features.push_back(torch::randn({2, c, h, w}, gen, torch::TensorOptions()));
      b.features.push_back(torch::randn({2, c, h, w}, gen, torch::TensorOptions()));
      a.strides.push_back(16);
      b.strides.push_back(16);
    }
    ca::ExchangeSpec spec;
    spec.swap_indices.clear();
    for (int64_t i = 0; i < n; ++i) {
      if (rng() % 2) spec.swap_indices.push_back(i);
    }
    auto [x, y] = ca::exchange(a, b, spec);
    auto [u, v] = ca::exchange(x, y, spec);
    auto [p, q] = ca::exchange(a, a, spec);
    bool ok = true;
    for (int64_t i = 0; i < n; ++i) {
      ok = ok && torch::equal(u.features[i], a.features[i]) && torch::equal(v.features[i], b.features[i]) &&
           torch::equal(p.features[i], a.features[i]) && torch::equal(q.features[i], a.features[i]);
    }
    passed += ok;
  }
  verdict(6, "exchange algebra", passed == 100, fmt("%.0f/100 random stacks: involution and fixpoint", passed));
}

void metrics_oracle() {
  std::mt19937_64 rng(7);
  int exact = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::bernoulli_distribution coin(0.1 + 0.8 * (trial % 10) / 9.0);
    std::vector<int> p(64), g(64);
    for (int i = 0; i < 64; ++i) {
      p[i] = coin(rng);
      g[i] = coin(rng);
    }
    auto ref = oracle::count(p, g);
    auto counts = ca::accumulate(torch::tensor(std::vector<int64_t>(p.begin(), p.end())).view({8, 8}),
                                 torch::tensor(std::vector<int64_t>(g.begin(), g.end())).view({8, 8}));
    auto m = ca::report(counts);
    const double tp = ref.tp, fp = ref.fp, fn = ref.fn, tn = ref.tn;
    const bool empty = ref.tp + ref.fp + ref.fn == 0;
    const double prec = empty ? 1.0 : (tp + fp > 0 ? tp / (tp + fp) : 0.0);
    const double rec = empty ? 1.0 : (tp + fn > 0 ? tp / (tp + fn) : 0.0);
    const double f1 = empty ? 1.0 : (prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0);
    const double iou = empty ? 1.0 : tp / (tp + fp + fn);
    const bool ok = counts.tp == ref.tp && counts.fp == ref.fp && counts.fn == ref.fn && counts.tn == ref.tn &&
                    m.oa == (tp + tn) / 64.0 && m.iou == iou && m.precision == prec && m.recall == rec &&
                    m.f1 == f1;
    exact += ok;
  }
  auto hand = ca::report(ca::ConfusionCounts{3, 5, 1, 1});
  const bool hand_ok = std::abs(hand.iou - 0.6) < 1e-12 && std::abs(hand.f1 - 0.75) < 1e-12 &&
                       std::abs(hand.oa - 0.8) < 1e-12;
  verdict(7, "metrics oracle", exact == 100 && hand_ok,
          fmt("%.0f/100 random 8x8 pairs exact; hand case IoU %.4f F1 %.4f OA %.4f", exact, hand.iou, hand.f1,
              hand.oa));
}

void sliding_window_identity() {
  torch::manual_seed(8);
  ca::ChangeDetector model(ca::toy_vit_lora_config().model);
  {
    torch::NoGradGuard guard;
    for (auto& p : ca::peft_parameters(*model->encoder())) p.add_(torch::randn_like(p) * 0.05);
  }
  model->eval();
  torch::NoGradGuard guard;
  ca::FusedPredictor predictor = [&](const torch::Tensor& a, const torch::Tensor& b) {
    return model->predict(a, b).probabilities;
  };
  auto a = torch::rand({2, 3, 64, 64}), b = torch::rand({2, 3, 64, 64});
  auto whole = ca::sliding_window_infer(predictor, a, b, 64, 64);
  const bool identical = torch::equal(whole.probabilities, predictor(a, b));
  auto big_a = torch::rand({1, 3, 112, 112}), big_b = torch::rand({1, 3, 112, 112});
  auto overlap = ca::sliding_window_infer(predictor, big_a, big_b, 64, 32);
  const double dev = (overlap.probabilities.sum(1) - 1).abs().max().item<double>();
  const int64_t max_cov = overlap.coverage.max().item<int64_t>();
  verdict(8, "sliding-window identity", identical && dev < 1e-6 && max_cov > 1,
          std::string(identical ? "window=stride=image bitwise equal; " : "window=stride=image DIFFERS; ") +
              fmt("112px window 64 stride 32 (%.0f windows, max coverage %.0f) max |sum-1| %.1e < 1e-6",
                  static_cast<double>(overlap.windows), static_cast<double>(max_cov), dev));
}

void parameter_accounting() {
  auto cfg = ca::toy_vit_lora_config().model;
  ca::ChangeDetector model(cfg);
  int64_t enumerated = 0;
  for (auto* site : ca::lora_sites(*model->encoder())) {
    enumerated += site->state().a.numel() + site->state().b.numel();
  }
  const int64_t d = cfg.backbone.embed_dim, r = cfg.peft.rank;
  const int64_t closed = cfg.backbone.depth * r * (d + 3 * d);
  const auto all = ca::count_params(*model);
  const auto enc = ca::count_params(*model->encoder());
  const double frac = all.trainable_fraction();
  const double enc_frac = static_cast<double>(enc.trainable) / static_cast<double>(all.total);
  const bool ok = enumerated == 16384 && closed == 16384 && enc.trainable == enumerated && frac < 0.15 &&
                  enc_frac < 0.05;
  verdict(9, "parameter accounting", ok,
          fmt("deltas enumerated %.0f = closed form %.0f; trainable %.2f%% (< 15%%), encoder-only %.2f%% (< 5%%)",
              enumerated, closed, 100 * frac, 100 * enc_frac));
}

void progress(const ca::LogRecord& rec) {
  if (!rec.val_iou) return;
  std::printf("       step %5lld  loss %.4f  val IoU %.4f\n", static_cast<long long>(rec.step), rec.loss,
              *rec.val_iou);
  std::fflush(stdout);
}

ca::RunConfig overfit_config(ca::RunConfig cfg) {
  cfg.data.synthetic.canvas = 64;
  cfg.data.synthetic.change_fraction = 0.5;
  cfg.data.synthetic.pseudo_change = 0.1;
  cfg.data.train_pairs = 64;
  // Overfit run: the validation split is the training split, unaugmented.
  cfg.data.val_pairs = 64;
  cfg.data.val_seed = cfg.data.train_seed;
  cfg.data.augment.flips = false;
  cfg.data.augment.rotations = false;
  cfg.max_steps = 2000;
  cfg.eval_interval = 100;
  cfg.log_interval = 100;
  return cfg;
}

void desk_scale_overfit() {
  bool ok = true;
  std::string detail;
  for (const auto& base : {ca::toy_hierarchical_adapter_config(), ca::toy_vit_lora_config()}) {
    auto cfg = overfit_config(base);
    const auto t0 = std::chrono::steady_clock::now();
    auto result = ca::train(cfg, progress);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool good = result.state.best_val_iou >= 0.90 && result.state.best_step <= 2000 && seconds < 900;
    ok = ok && good;
    char buf[200];
    std::snprintf(buf, sizeof(buf), "%s%s+%s+%s IoU %.4f at step %lld in %.0f s", detail.empty() ? "" : "; ",
                  ca::to_string(cfg.model.backbone.kind).c_str(), ca::to_string(cfg.model.decoder.kind).c_str(),
                  ca::to_string(cfg.model.peft.strategy).c_str(), result.state.best_val_iou,
                  static_cast<long long>(result.state.best_step), seconds);
    detail += buf;
  }
  verdict(10, "desk-scale overfit (IoU >= 0.90, <= 2000 steps, < 900 s each)", ok, detail);
}

// The presets as shipped: augmented training on one split, model selection on
// another, then false positives counted on fresh pairs with no real change.
void pseudo_change_suppression() {
  ca::SynthSpec spec;
  spec.change_fraction = 0.0;
  spec.pseudo_change = 0.1;
  auto unchanged = ca::generate_set(spec, 5000000, 64);
  bool ok = true;
  std::string detail;
  for (const auto& cfg : {ca::toy_hierarchical_adapter_config(), ca::toy_vit_lora_config()}) {
    auto result = ca::train(cfg, progress);
    auto ev = ca::evaluate(*result.model, unchanged, cfg.eval);
    const double fp_rate = static_cast<double>(ev.counts.fp) / static_cast<double>(ev.counts.total());
    ok = ok && fp_rate < 0.02;
    char buf[200];
    std::snprintf(buf, sizeof(buf), "%s%s FP rate %.3f%% (held-out val IoU %.4f)", detail.empty() ? "" : "; ",
                  ca::to_string(cfg.model.backbone.kind).c_str(), 100 * fp_rate, result.state.best_val_iou);
    detail += buf;
  }
  verdict(11, "pseudo-change suppression (FP rate < 2% on 64 unchanged pairs)", ok, detail);
}

}  // namespace

int main(int argc, char** argv) {
  torch::set_num_threads(1);
  if (argc > 1) report_file = std::fopen(argv[1], "w");
  zero_init_equivalence();
  merge_equivalence();
  frozen_contract();
  gradient_checks();
  fusion_normalization();
  exchange_algebra();
  metrics_oracle();
  sliding_window_identity();
  parameter_accounting();
  desk_scale_overfit();
  pseudo_change_suppression();
  std::printf("%d criteria failed\n", failures);
  if (report_file != nullptr) {
    std::fprintf(report_file, "%d criteria failed\n", failures);
    std::fclose(report_file);
  }
  return failures == 0 ? 0 : 1;
}
