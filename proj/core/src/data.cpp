// Copyright 2026 The changeadapt Authors
// SPDX-License-Identifier: Apache-2.0

#include "changeadapt/data.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "changeadapt/errors.h"
#include "changeadapt/image_io.h"

namespace fs = std::filesystem;

namespace changeadapt {

void validate_sample(const BiTemporalSample& sample) {
  if (sample.mask.dim() != 2) throw ShapeError("mask must be [H, W]");
  const int64_t h = sample.mask.size(0);
  const int64_t w = sample.mask.size(1);
  for (const auto* img : {&sample.img_a, &sample.img_b}) {
    if (img->dim() != 3 || img->size(0) != 3 || img->size(1) != h || img->size(2) != w) {
      throw ShapeError("sample '" + sample.id + "' images must be [3, " + std::to_string(h) + ", " +
                       std::to_string(w) + "]");
    }
  }
  if (((sample.mask != 0) & (sample.mask != 1)).any().item<bool>()) {
    throw DataError("sample '" + sample.id + "' mask is not binary");
  }
}

void SynthSpec::validate() const {
  if (canvas <= 0) throw ConfigError("synthetic canvas must be positive");
  if (min_objects < 0 || max_objects < min_objects) throw ConfigError("invalid object count range");
  if (min_object_size <= 0 || max_object_size < min_object_size || max_object_size > canvas) {
    throw ConfigError("invalid object size range for canvas " + std::to_string(canvas));
  }
  if (change_fraction < 0.0 || change_fraction > 1.0) {
    throw ConfigError("change_fraction must be in [0, 1]");
  }
  if (pseudo_change < 0.0) throw ConfigError("pseudo_change must be non-negative");
}

namespace {

bool covers(const SceneObject& o, int64_t y, int64_t x) {
  if (o.kind == ShapeKind::kDisc) {
    const double radius = o.height / 2.0;
    const double cy = o.top + radius - 0.5;
    const double cx = o.left + radius - 0.5;
    return (y - cy) * (y - cy) + (x - cx) * (x - cx) <= radius * radius;
  }
  return y >= o.top && y < o.top + o.height && x >= o.left && x < o.left + o.width;
}

struct Render {
  torch::Tensor image;  // [3, H, W] float
  std::vector<int64_t> ids;
};

Render render(const torch::Tensor& background, const std::vector<SceneObject>& objects) {
  Render out;
  out.image = background.clone().contiguous();
  const int64_t h = background.size(1);
  const int64_t w = background.size(2);
  out.ids.assign(h * w, 0);
  auto px = out.image.accessor<float, 3>();
  for (const auto& o : objects) {
    const int64_t extent_w = o.kind == ShapeKind::kDisc ? o.height : o.width;
    const int64_t y0 = std::max<int64_t>(0, o.top);
    const int64_t y1 = std::min<int64_t>(h, o.top + o.height);
    const int64_t x0 = std::max<int64_t>(0, o.left);
    const int64_t x1 = std::min<int64_t>(w, o.left + extent_w);
    for (int64_t y = y0; y < y1; ++y) {
      for (int64_t x = x0; x < x1; ++x) {
        if (!covers(o, y, x)) continue;
        for (int c = 0; c < 3; ++c) px[c][y][x] = o.color[c];
        out.ids[y * w + x] = o.id;
      }
    }
  }
  return out;
}

/// Sum of bilinearly upsampled random lattices at three octaves, in [0, 1].
torch::Tensor value_noise(std::mt19937_64& rng, int64_t n) {
  std::uniform_real_distribution<float> unit(0.0F, 1.0F);
  std::vector<float> acc(n * n, 0.0F);
  float norm = 0.0F;
  for (int octave = 0; octave < 3; ++octave) {
    const int64_t cells = int64_t{4} << octave;
    std::vector<float> lattice((cells + 1) * (cells + 1));
    for (auto& v : lattice) v = unit(rng);
    const float weight = 1.0F / static_cast<float>(1 << octave);
    norm += weight;
    for (int64_t y = 0; y < n; ++y) {
      const double fy = n > 1 ? static_cast<double>(y) * cells / (n - 1) : 0.0;
      const int64_t iy = std::min<int64_t>(static_cast<int64_t>(fy), cells - 1);
      const double ty = fy - iy;
      for (int64_t x = 0; x < n; ++x) {
        const double fx = n > 1 ? static_cast<double>(x) * cells / (n - 1) : 0.0;
        const int64_t ix = std::min<int64_t>(static_cast<int64_t>(fx), cells - 1);
        const double tx = fx - ix;
        auto at = [&](int64_t yy, int64_t xx) { return lattice[yy * (cells + 1) + xx]; };
        const double v = (1 - ty) * ((1 - tx) * at(iy, ix) + tx * at(iy, ix + 1)) +
                         ty * ((1 - tx) * at(iy + 1, ix) + tx * at(iy + 1, ix + 1));
        acc[y * n + x] += weight * static_cast<float>(v);
      }
    }
  }
  auto out = torch::from_blob(acc.data(), {n, n}, torch::kFloat32).clone();
  return out / norm;
}

int64_t uniform_int(std::mt19937_64& rng, int64_t lo, int64_t hi) {
  return std::uniform_int_distribution<int64_t>(lo, hi)(rng);
}

}  // namespace

BiTemporalSample compose_pair(const torch::Tensor& background,
                              const std::vector<SceneObject>& before,
                              const std::vector<SceneObject>& after,
                              const PhotometricShift& shift) {
  if (background.dim() != 3 || background.size(0) != 3) {
    throw ShapeError("background must be [3, H, W]");
  }
  auto bg = background.to(torch::kFloat32).contiguous();
  auto a = render(bg, before);
  auto b = render(bg, after);
  const int64_t h = bg.size(1);
  const int64_t w = bg.size(2);
  BiTemporalSample sample;
  sample.img_a = a.image.clamp(0.0, 1.0);
  auto gain = torch::tensor({shift.gain[0], shift.gain[1], shift.gain[2]}).view({3, 1, 1});
  sample.img_b = (b.image * gain + shift.offset).clamp(0.0, 1.0);
  sample.mask = torch::zeros({h, w}, torch::kInt64);
  auto m = sample.mask.accessor<int64_t, 2>();
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) m[y][x] = a.ids[y * w + x] != b.ids[y * w + x] ? 1 : 0;
  }
  return sample;
}

BiTemporalSample generate(const SynthSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<float> unit(0.0F, 1.0F);
  const int64_t n = spec.canvas;

  std::array<float, 3> tint{};
  for (auto& t : tint) t = 0.25F + 0.5F * unit(rng);
  auto noise = value_noise(rng, n);
  auto background = noise.unsqueeze(0) * torch::tensor({tint[0], tint[1], tint[2]}).view({3, 1, 1});

  int64_t next_id = 1;
  auto make_object = [&]() {
    SceneObject o;
    const int64_t kind = uniform_int(rng, 0, 2);
    o.kind = static_cast<ShapeKind>(kind);
    if (o.kind == ShapeKind::kBar) {
      const int64_t thick = uniform_int(rng, 3, std::max<int64_t>(3, spec.min_object_size / 2));
      const int64_t length = uniform_int(rng, spec.min_object_size, std::min(n, 2 * spec.max_object_size));
      const bool horizontal = uniform_int(rng, 0, 1) == 1;
      o.height = horizontal ? thick : length;
      o.width = horizontal ? length : thick;
    } else {
      o.height = uniform_int(rng, spec.min_object_size, spec.max_object_size);
      o.width = o.kind == ShapeKind::kDisc ? o.height
                                           : uniform_int(rng, spec.min_object_size, spec.max_object_size);
    }
    o.top = uniform_int(rng, 0, n - o.height);
    o.left = uniform_int(rng, 0, n - o.width);
    // Keep objects visibly distinct from the mean background colour.
    for (int attempt = 0; attempt < 16; ++attempt) {
      for (auto& c : o.color) c = unit(rng);
      float dist = 0.0F;
      for (int c = 0; c < 3; ++c) dist += std::abs(o.color[c] - 0.5F * tint[c]);
      if (dist >= 0.6F) break;
    }
    o.id = next_id++;
    return o;
  };

  std::vector<SceneObject> before;
  const int64_t count = uniform_int(rng, spec.min_objects, spec.max_objects);
  for (int64_t i = 0; i < count; ++i) before.push_back(make_object());

  std::vector<SceneObject> after;
  for (const auto& o : before) {
    if (unit(rng) >= spec.change_fraction) {
      after.push_back(o);
      continue;
    }
    switch (uniform_int(rng, 0, 2)) {
      case 0:  // removed
        break;
      case 1:  // a new object appears
        after.push_back(o);
        after.push_back(make_object());
        break;
      default: {  // moved
        SceneObject moved = o;
        const int64_t extent_w = o.kind == ShapeKind::kDisc ? o.height : o.width;
        moved.top = uniform_int(rng, 0, n - o.height);
        moved.left = uniform_int(rng, 0, n - extent_w);
        moved.id = next_id++;
        after.push_back(moved);
        break;
      }
    }
  }

  PhotometricShift shift;
  const auto magnitude = static_cast<float>(spec.pseudo_change);
  for (auto& g : shift.gain) g = 1.0F + magnitude * (2.0F * unit(rng) - 1.0F);
  shift.offset = magnitude * (2.0F * unit(rng) - 1.0F);

  auto sample = compose_pair(background, before, after, shift);
  sample.id = "synth_" + std::to_string(spec.seed);
  return sample;
}

std::vector<BiTemporalSample> generate_set(SynthSpec spec, uint64_t first_seed, int64_t count) {
  std::vector<BiTemporalSample> out;
  out.reserve(count);
  for (int64_t i = 0; i < count; ++i) {
    spec.seed = first_seed + static_cast<uint64_t>(i);
    out.push_back(generate(spec));
  }
  return out;
}

torch::Tensor flip_horizontal(const torch::Tensor& x) { return x.flip({-1}); }
torch::Tensor flip_vertical(const torch::Tensor& x) { return x.flip({-2}); }
torch::Tensor rotate90(const torch::Tensor& x, int64_t quarter_turns) {
  return torch::rot90(x, quarter_turns, {-2, -1}).contiguous();
}

BiTemporalSample augment(const BiTemporalSample& sample, uint64_t seed,
                         const AugmentOptions& options) {
  std::mt19937_64 rng(seed);
  BiTemporalSample out = sample;
  if (options.crop > 0) {
    if (options.crop > sample.height() || options.crop > sample.width()) {
      throw ShapeError("crop " + std::to_string(options.crop) + " exceeds image " +
                       std::to_string(sample.height()) + "x" + std::to_string(sample.width()));
    }
    const int64_t top = uniform_int(rng, 0, sample.height() - options.crop);
    const int64_t left = uniform_int(rng, 0, sample.width() - options.crop);
    auto cut = [&](const torch::Tensor& t) {
      return t.narrow(-2, top, options.crop).narrow(-1, left, options.crop).contiguous();
    };
    out.img_a = cut(out.img_a);
    out.img_b = cut(out.img_b);
    out.mask = cut(out.mask);
  }
  auto apply = [&](auto&& fn) {
    out.img_a = fn(out.img_a);
    out.img_b = fn(out.img_b);
    out.mask = fn(out.mask);
  };
  if (options.flips) {
    if (uniform_int(rng, 0, 1) == 1) apply(flip_horizontal);
    if (uniform_int(rng, 0, 1) == 1) apply(flip_vertical);
  }
  if (options.rotations) {
    const int64_t turns = uniform_int(rng, 0, 3);
    if (turns != 0) apply([&](const torch::Tensor& t) { return rotate90(t, turns); });
  }
  return out;
}

std::vector<BiTemporalSample> load_dataset(const fs::path& root, const std::string& split) {
  const fs::path base = root / split;
  const fs::path dir_a = base / "A";
  if (!fs::is_directory(dir_a)) throw DataError("missing directory " + dir_a.string());
  std::vector<fs::path> names;
  for (const auto& entry : fs::directory_iterator(dir_a)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") {
      names.push_back(entry.path().filename());
    }
  }
  std::sort(names.begin(), names.end());
  std::vector<BiTemporalSample> out;
  for (const auto& name : names) {
    const fs::path pa = dir_a / name;
    const fs::path pb = base / "B" / name;
    const fs::path pl = base / "label" / name;
    for (const auto& p : {pb, pl}) {
      if (!fs::exists(p)) throw DataError("missing counterpart file " + p.string());
    }
    BiTemporalSample s;
    s.id = name.stem().string();
    s.img_a = from_rgb8(read_png(pa, 3));
    s.img_b = from_rgb8(read_png(pb, 3));
    auto label = read_png(pl, 1).squeeze(2);
    if (s.img_a.sizes() != s.img_b.sizes() || label.size(0) != s.img_a.size(1) ||
        label.size(1) != s.img_a.size(2)) {
      throw DataError("size mismatch within triplet " + s.id);
    }
    s.mask = (label > 127).to(torch::kInt64);
    out.push_back(std::move(s));
  }
  return out;
}

void save_sample(const fs::path& root, const std::string& split, const BiTemporalSample& sample) {
  validate_sample(sample);
  const fs::path base = root / split;
  const std::string file = sample.id + ".png";
  write_png(base / "A" / file, to_rgb8(sample.img_a));
  write_png(base / "B" / file, to_rgb8(sample.img_b));
  write_png(base / "label" / file, (sample.mask * 255).to(torch::kUInt8).contiguous());
}

Batch collate(const std::vector<BiTemporalSample>& samples) {
  if (samples.empty()) throw DataError("cannot collate an empty batch");
  std::vector<torch::Tensor> a;
  std::vector<torch::Tensor> b;
  std::vector<torch::Tensor> m;
  for (const auto& s : samples) {
    a.push_back(s.img_a);
    b.push_back(s.img_b);
    m.push_back(s.mask);
  }
  return {torch::stack(a), torch::stack(b), torch::stack(m)};
}

}  // namespace changeadapt
