// Copyright 2026 The changeadapt Authors
// SPDX-License-Identifier: Apache-2.0

#include "changeadapt/image_io.h"

#include <png.h>

#include <cstring>

#include "changeadapt/errors.h"

namespace changeadapt {

torch::Tensor read_png(const std::filesystem::path& path, int channels) {
  if (channels != 1 && channels != 3) throw DataError("read_png supports 1 or 3 channels");
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw DataError("cannot read PNG " + path.string() + ": " + image.message);
  }
  image.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  auto out = torch::empty({static_cast<int64_t>(image.height), static_cast<int64_t>(image.width),
                           channels},
                          torch::kUInt8);
  if (!png_image_finish_read(&image, nullptr, out.data_ptr<uint8_t>(), 0, nullptr)) {
    std::string message = image.message;
    png_image_free(&image);
    throw DataError("cannot decode PNG " + path.string() + ": " + message);
  }
  return out;
}

void write_png(const std::filesystem::path& path, const torch::Tensor& image) {
  if (image.scalar_type() != torch::kUInt8) throw DataError("write_png expects uint8 pixels");
  if (image.dim() != 2 && !(image.dim() == 3 && (image.size(2) == 1 || image.size(2) == 3))) {
    throw ShapeError("write_png expects [H, W] or [H, W, 3]");
  }
  auto pixels = image.contiguous();
  const bool gray = image.dim() == 2 || image.size(2) == 1;
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.size(1));
  png.height = static_cast<png_uint_32>(image.size(0));
  png.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!png_image_write_to_file(&png, path.c_str(), 0, pixels.data_ptr<uint8_t>(), 0, nullptr)) {
    throw DataError("cannot write PNG " + path.string() + ": " + png.message);
  }
}

torch::Tensor to_rgb8(const torch::Tensor& chw) {
  return (chw.clamp(0.0, 1.0) * 255.0).round().to(torch::kUInt8).permute({1, 2, 0}).contiguous();
}

torch::Tensor from_rgb8(const torch::Tensor& hwc) {
  return hwc.permute({2, 0, 1}).to(torch::kFloat32).div(255.0).contiguous();
}

}  // namespace changeadapt
