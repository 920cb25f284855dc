// Copyright 2026 The changeadapt Authors
// SPDX-License-Identifier: Apache-2.0

#include "changeadapt/harness.h"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <numeric>
#include <random>

#include "changeadapt/checkpoint.h"
#include "changeadapt/errors.h"
#include "changeadapt/peft.h"

namespace changeadapt {

torch::Tensor change_loss(const ChangeLogits& a, const ChangeLogits& b, const torch::Tensor& mask) {
  if (mask.dim() != 3 || mask.is_floating_point()) {
    throw ShapeError("loss mask must be an integral [B, H, W] tensor");
  }
  if (((mask != 0) & (mask != 1)).any().item<bool>()) {
    throw DataError("loss mask holds values other than 0 and 1");
  }
  auto target = mask.to(torch::kInt64);
  return torch::nn::functional::cross_entropy(a.logits, target) +
         torch::nn::functional::cross_entropy(b.logits, target);
}

double lr_at(int64_t step, double lr, int64_t warmup_steps) {
  if (step < 0) throw ConfigError("learning-rate step must be non-negative");
  if (warmup_steps <= 0 || step >= warmup_steps) return lr;
  return lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
}

EvalResult evaluate(ChangeDetectorImpl& model, const std::vector<BiTemporalSample>& samples,
                    const EvalConfig& eval) {
  if (samples.empty()) throw DataError("evaluation set is empty");
  const bool was_training = model.is_training();
  model.eval();
  torch::NoGradGuard guard;

  FusedPredictor predictor = [&model](const torch::Tensor& a, const torch::Tensor& b) {
    return model.predict(a, b).probabilities;
  };
  const int64_t batch = std::max<int64_t>(1, eval.batch_size);
  EvalResult out;
  for (size_t start = 0; start < samples.size(); start += batch) {
    const size_t stop = std::min(samples.size(), start + static_cast<size_t>(batch));
    std::vector<BiTemporalSample> group(samples.begin() + start, samples.begin() + stop);
    // Mixed image sizes cannot share a batch.
    const bool uniform = std::all_of(group.begin(), group.end(), [&](const auto& s) {
      return s.mask.sizes() == group.front().mask.sizes();
    });
    std::vector<std::vector<BiTemporalSample>> chunks;
    if (uniform) {
      chunks.push_back(std::move(group));
    } else {
      for (auto& s : group) chunks.push_back({s});
    }
    for (const auto& chunk : chunks) {
      auto b = collate(chunk);
      torch::Tensor probs;
      if (eval.window > 0) {
        const int64_t stride = eval.stride > 0 ? eval.stride : std::max<int64_t>(1, eval.window / 2);
        probs = sliding_window_infer(predictor, b.img_a, b.img_b, eval.window, stride).probabilities;
      } else {
        probs = predictor(b.img_a, b.img_b);
      }
      out.counts = accumulate(probs.argmax(1), b.mask, out.counts);
    }
  }
  out.metrics = report(out.counts);
  model.train(was_training);
  return out;
}

SplitData load_data(const DataConfig& data) {
  SplitData out;
  if (data.root.empty()) {
    out.train = generate_set(data.synthetic, data.train_seed, data.train_pairs);
    out.val = generate_set(data.synthetic, data.val_seed, data.val_pairs);
  } else {
    out.train = load_dataset(data.root, data.train_split);
    out.val = load_dataset(data.root, data.val_split);
  }
  if (out.train.empty()) throw DataError("training set is empty");
  if (out.val.empty()) throw DataError("validation set is empty");
  return out;
}

TrainResult train(const RunConfig& config, const TrainCallback& callback) {
  config.validate();
  return train(config, load_data(config.data), callback);
}

namespace {

std::vector<torch::Tensor> trainable_parameters(ChangeDetectorImpl& model) {
  std::vector<torch::Tensor> out;
  for (const auto& p : model.parameters()) {
    if (p.requires_grad()) out.push_back(p);
  }
  return out;
}

void append_log(const std::filesystem::path& path, const LogRecord& r) {
  nlohmann::json j = {{"step", r.step}, {"lr", r.lr}, {"loss", r.loss}};
  j["val_iou"] = r.val_iou ? nlohmann::json(*r.val_iou) : nlohmann::json(nullptr);
  std::ofstream out(path, std::ios::app);
  out << j.dump() << '\n';
}

}  // namespace

TrainResult train(const RunConfig& config, const SplitData& data, const TrainCallback& callback) {
  config.validate();
  if (data.train.empty() || data.val.empty()) throw DataError("training and validation sets must be non-empty");
  torch::manual_seed(config.seed);
  TrainResult result;
  result.model = ChangeDetector(config.model);
  auto& model = *result.model;
  auto& st = result.state;

  const auto base = base_parameters(*model.encoder());
  auto peft = peft_parameters(*model.encoder());
  st.base_checksum_before = checksum(base);
  st.peft_checksum_before = checksum(peft);

  auto params = trainable_parameters(model);
  if (params.empty()) throw ConfigError("model has no trainable parameters");
  torch::optim::AdamW optimizer(
      params, torch::optim::AdamWOptions(config.optimizer.lr).weight_decay(config.optimizer.weight_decay));

  std::filesystem::path out_dir = config.output_dir;
  std::filesystem::path log_path;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    save_run_config(out_dir / "config.json", config);
    log_path = out_dir / "train_log.jsonl";
    std::ofstream(log_path, std::ios::trunc);
  }

  std::mt19937_64 rng(config.seed);
  std::vector<size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), 0);
  size_t cursor = order.size();
  const size_t batch = static_cast<size_t>(config.batch_size);
  const bool augmenting = config.data.augment.flips || config.data.augment.rotations ||
                          config.data.augment.crop > 0;

  const auto t0 = std::chrono::steady_clock::now();
  auto run_eval = [&](int64_t step, LogRecord& rec) {
    auto ev = evaluate(model, data.val, config.eval);
    rec.val_iou = ev.metrics.iou;
    if (ev.metrics.iou > st.best_val_iou) {
      st.best_val_iou = ev.metrics.iou;
      st.best_step = step;
      if (!out_dir.empty()) save_checkpoint(out_dir / "best.ckpt", model, config, step, ev.metrics.iou);
    }
  };
  auto emit = [&](const LogRecord& rec) {
    st.log.push_back(rec);
    if (!log_path.empty()) append_log(log_path, rec);
    if (callback) callback(rec);
  };

  // Best weights stay in memory so no output directory is required.
  std::vector<torch::Tensor> best_state;
  auto snapshot = [&] {
    best_state.clear();
    for (const auto& t : model.parameters()) best_state.push_back(t.detach().clone());
    for (const auto& t : model.buffers()) best_state.push_back(t.detach().clone());
  };

  model.train();
  if (config.max_steps == 0) {
    LogRecord rec;
    run_eval(0, rec);
    snapshot();
    emit(rec);
  }
  for (int64_t step = 0; step < config.max_steps; ++step) {
    std::vector<BiTemporalSample> picked;
    picked.reserve(batch);
    while (picked.size() < batch) {
      if (cursor >= order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const auto& s = data.train[order[cursor++]];
      picked.push_back(augmenting ? augment(s, rng(), config.data.augment) : s);
    }
    auto b = collate(picked);

    const double lr = lr_at(step, config.optimizer.lr, config.warmup_steps);
    for (auto& group : optimizer.param_groups()) group.options().set_lr(lr);
    optimizer.zero_grad();
    auto [la, lb] = model.forward(b.img_a, b.img_b);
    auto loss = change_loss(la, lb, b.mask);
    loss.backward();
    optimizer.step();

    st.steps = step + 1;
    st.final_loss = loss.item<double>();
    const bool last = step + 1 == config.max_steps;
    const bool do_eval = last || (config.eval_interval > 0 && (step + 1) % config.eval_interval == 0);
    const bool do_log = do_eval || (config.log_interval > 0 && (step + 1) % config.log_interval == 0);
    if (!do_log) continue;
    LogRecord rec{step + 1, lr, st.final_loss, std::nullopt};
    if (do_eval) {
      const double before = st.best_val_iou;
      run_eval(step + 1, rec);
      if (st.best_val_iou > before) snapshot();
    }
    emit(rec);
    if (do_eval && config.stop_at_val_iou && *rec.val_iou >= *config.stop_at_val_iou) break;
  }
  st.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  st.base_checksum_after = checksum(base);
  st.peft_checksum_after = checksum(peft);
  if (st.base_checksum_after != st.base_checksum_before) {
    throw std::logic_error("frozen encoder weights changed during training");
  }

  if (!best_state.empty()) {
    torch::NoGradGuard guard;
    size_t i = 0;
    for (auto& t : model.parameters()) t.copy_(best_state[i++]);
    for (auto& t : model.buffers()) t.copy_(best_state[i++]);
  }
  model.eval();
  return result;
}

}  // namespace changeadapt
