#pragma once

#include <png.h>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ganforge/tensor.hpp"

namespace ganforge {

/// 8-bit single-channel image, row-major.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;
};

namespace detail {

struct PngImage {
  png_image image{};
  PngImage() {
    image.version = PNG_IMAGE_VERSION;
  }
  ~PngImage() { png_image_free(&image); }
  PngImage(const PngImage&) = delete;
  PngImage& operator=(const PngImage&) = delete;
};

}  // namespace detail

/// Reads an 8-bit grayscale PNG. Colour, alpha or 16-bit files are rejected
/// rather than converted.
inline GrayImage read_png_gray8(const std::filesystem::path& path) {
  detail::PngImage png;
  if (!png_image_begin_read_from_file(&png.image, path.c_str())) {
    throw Error("cannot read PNG " + path.string() + ": " + png.image.message);
  }
  const auto fmt = png.image.format;
  if (fmt & (PNG_FORMAT_FLAG_COLOR | PNG_FORMAT_FLAG_ALPHA)) {
    throw Error("PNG " + path.string() + " is not single-channel grayscale");
  }
  if (fmt & PNG_FORMAT_FLAG_LINEAR) throw Error("PNG " + path.string() + " is not 8-bit");
  png.image.format = PNG_FORMAT_GRAY;
  GrayImage img;
  img.width = static_cast<int>(png.image.width);
  img.height = static_cast<int>(png.image.height);
  img.pixels.resize(PNG_IMAGE_SIZE(png.image));
  if (!png_image_finish_read(&png.image, nullptr, img.pixels.data(), 0, nullptr)) {
    throw Error("corrupt PNG " + path.string() + ": " + png.image.message);
  }
  return img;
}

inline void write_png_gray8(const std::filesystem::path& path, const GrayImage& img) {
  if (static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height) != img.pixels.size()) {
    throw Error("write_png_gray8: pixel buffer does not match " + std::to_string(img.width) + "x" +
                std::to_string(img.height));
  }
  detail::PngImage png;
  png.image.width = static_cast<png_uint_32>(img.width);
  png.image.height = static_cast<png_uint_32>(img.height);
  png.image.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&png.image, path.c_str(), 0, img.pixels.data(), 0, nullptr)) {
    throw Error("cannot write PNG " + path.string() + ": " + png.image.message);
  }
}

}  // namespace ganforge
