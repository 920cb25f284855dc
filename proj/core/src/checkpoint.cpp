// Copyright 2026 The changeadapt Authors
// SPDX-License-Identifier: Apache-2.0

#include "changeadapt/checkpoint.h"

#include <array>
#include <cstring>
#include <fstream>
#include <map>

#include "changeadapt/errors.h"

using nlohmann::json;

namespace changeadapt {

namespace {

constexpr std::array<char, 8> kMagic{'C', 'A', 'C', 'K', 'P', 'T', '0', '1'};

std::vector<std::pair<std::string, torch::Tensor>> named_state(ChangeDetectorImpl& model) {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& item : model.named_parameters()) out.emplace_back(item.key(), item.value());
  for (const auto& item : model.named_buffers()) out.emplace_back(item.key(), item.value());
  return out;
}

void write_u64(std::ostream& os, uint64_t v) {
  std::array<unsigned char, 8> bytes{};
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(bytes.data()), 8);
}

uint64_t read_u64(std::istream& is) {
  std::array<unsigned char, 8> bytes{};
  is.read(reinterpret_cast<char*>(bytes.data()), 8);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(bytes[i]) << (8 * i);
  return v;
}

struct Parsed {
  json header;
  std::vector<char> payload;
};

Parsed parse(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::array<char, 8> magic{};
  in.read(magic.data(), 8);
  if (!in || magic != kMagic) throw DataError(path.string() + " is not a checkpoint");
  const uint64_t header_len = read_u64(in);
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw DataError("truncated checkpoint header in " + path.string());
  Parsed p;
  p.header = json::parse(header);
  p.payload.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  return p;
}

void copy_into(const Parsed& p, ChangeDetectorImpl& model, const std::string& source) {
  std::map<std::string, torch::Tensor> targets;
  for (auto& [name, tensor] : named_state(model)) targets[name] = tensor;
  torch::NoGradGuard guard;
  size_t loaded = 0;
  for (const auto& entry : p.header.at("tensors")) {
    const auto name = entry.at("name").get<std::string>();
    const auto shape = entry.at("shape").get<std::vector<int64_t>>();
    const auto offset = entry.at("offset").get<uint64_t>();
    const auto numel = entry.at("numel").get<int64_t>();
    auto it = targets.find(name);
    if (it == targets.end()) throw DataError(source + ": unexpected tensor " + name);
    if (it->second.sizes() != c10::IntArrayRef(shape)) {
      throw DataError(source + ": shape mismatch for " + name);
    }
    if (offset + numel * sizeof(float) > p.payload.size()) {
      throw DataError(source + ": truncated payload for " + name);
    }
    auto host = torch::empty(shape, torch::kFloat32);
    std::memcpy(host.data_ptr<float>(), p.payload.data() + offset, numel * sizeof(float));
    it->second.copy_(host.to(it->second.scalar_type()));
    ++loaded;
  }
  if (loaded != targets.size()) {
    throw DataError(source + ": checkpoint holds " + std::to_string(loaded) + " of " +
                    std::to_string(targets.size()) + " model tensors");
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, ChangeDetectorImpl& model,
                     const RunConfig& config, int64_t step, double val_iou) {
  json tensors = json::array();
  std::vector<torch::Tensor> data;
  uint64_t offset = 0;
  for (auto& [name, tensor] : named_state(model)) {
    auto host = tensor.detach().to(torch::kCPU, torch::kFloat32).contiguous();
    tensors.push_back({{"name", name},
                       {"shape", host.sizes().vec()},
                       {"offset", offset},
                       {"numel", host.numel()}});
    offset += host.numel() * sizeof(float);
    data.push_back(host);
  }
  json header = {{"format", 1},
                 {"step", step},
                 {"val_iou", val_iou >= 0.0 ? json(val_iou) : json(nullptr)},
                 {"config", to_json(config)},
                 {"tensors", tensors}};
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint " + tmp.string());
    out.write(kMagic.data(), kMagic.size());
    write_u64(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& t : data) {
      out.write(static_cast<const char*>(t.data_ptr()),
                static_cast<std::streamsize>(t.numel() * sizeof(float)));
    }
    if (!out) throw DataError("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

ChangeDetector load_checkpoint(const std::filesystem::path& path, CheckpointInfo* info) {
  auto parsed = parse(path);
  auto config = run_config_from_json(parsed.header.at("config"));
  ChangeDetector model(config.model);
  copy_into(parsed, *model, path.string());
  if (info != nullptr) {
    info->config = config;
    info->step = parsed.header.at("step").get<int64_t>();
    const auto& v = parsed.header.at("val_iou");
    info->val_iou = v.is_null() ? -1.0 : v.get<double>();
  }
  return model;
}

void load_weights(const std::filesystem::path& path, ChangeDetectorImpl& model) {
  copy_into(parse(path), model, path.string());
}

}  // namespace changeadapt
