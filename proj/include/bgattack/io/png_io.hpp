#pragma once

#include <png.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "bgattack/errors.hpp"
#include "bgattack/io/file.hpp"
#include "bgattack/tensor.hpp"

namespace bgattack::io {

/// round(v * 255), halves away from zero.
inline std::uint8_t quantize_u8(double v) {
  return static_cast<std::uint8_t>(std::round(v * 255.0));
}

inline void write_png(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 3 || image.channels() != 3) {
    throw FormatError("PNG output needs an (H, W, 3) image, got " + shape_string(image.dims()), 0);
  }
  std::vector<std::uint8_t> bytes(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) {
    if (!(image[i] >= 0.0 && image[i] <= 1.0)) {
      throw ContractError("PNG values must lie in [0, 1] (element " + std::to_string(i) + ")");
    }
    bytes[i] = quantize_u8(image[i]);
  }
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width());
  img.height = static_cast<png_uint_32>(image.height());
  img.format = PNG_FORMAT_RGB;

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = temp_sibling(path);
  if (!png_image_write_to_file(&img, tmp.c_str(), 0, bytes.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw Error("PNG write failed for " + path.string() + ": " + msg);
  }
  std::filesystem::rename(tmp, path);
}

inline Tensor read_png(const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw FormatError("cannot read PNG " + path.string() + ": " + img.message, 0);
  }
  img.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> bytes(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, bytes.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw FormatError("cannot decode PNG " + path.string() + ": " + msg, 0);
  }
  Tensor out({img.height, img.width, 3});
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = bytes[i] / 255.0;
  return out;
}

/// (H, W, 1) mask -> white-on-black RGB image.
inline Tensor mask_to_rgb(const Tensor& mask) { return broadcast_channels(mask, 3); }

}  // namespace bgattack::io
