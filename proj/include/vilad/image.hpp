#pragma once

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "vilad/binary_io.hpp"
#include "vilad/costmap.hpp"
#include "vilad/errors.hpp"

namespace vilad {

/// Interleaved 8-bit RGB buffer.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  RgbImage() = default;
  RgbImage(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, 0) {
    if (w < 1 || h < 1) throw DimensionError("image must be at least 1x1");
  }

  [[nodiscard]] std::size_t index(int x, int y) const {
    return (static_cast<std::size_t>(y) * width + static_cast<std::size_t>(x)) * 3;
  }
  void set(int x, int y, std::array<std::uint8_t, 3> c) {
    const auto k = index(x, y);
    rgb[k] = c[0];
    rgb[k + 1] = c[1];
    rgb[k + 2] = c[2];
  }
  [[nodiscard]] std::array<std::uint8_t, 3> get(int x, int y) const {
    const auto k = index(x, y);
    return {rgb[k], rgb[k + 1], rgb[k + 2]};
  }

  friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

/// A camera frame: pixels plus capture time and a sequence id.
struct ImageFrame {
  RgbImage image;
  double timestamp = 0.0;
  std::uint64_t sequence_id = 0;

  [[nodiscard]] int width() const { return image.width; }
  [[nodiscard]] int height() const { return image.height; }

  void validate() const {
    if (image.width < 1 || image.height < 1) throw DimensionError("frame must be at least 1x1");
    if (image.rgb.size() != static_cast<std::size_t>(image.width) * image.height * 3)
      throw DimensionError("frame buffer length must be 3 x width x height");
  }
};

// MATLAB-style jet: blue (0, 0, 0.5) at 0 through cyan, yellow to red (0.5, 0, 0) at 1.
inline std::array<double, 3> jet_color(double x) {
  x = std::clamp(x, 0.0, 1.0);
  auto ch = [x](double center) { return std::clamp(1.5 - std::abs(4.0 * x - center), 0.0, 1.0); };
  return {ch(3.0), ch(2.0), ch(1.0)};
}

inline std::array<std::uint8_t, 3> jet_rgb8(double x) {
  const auto c = jet_color(x);
  return {static_cast<std::uint8_t>(std::lround(255.0 * c[0])), static_cast<std::uint8_t>(std::lround(255.0 * c[1])),
          static_cast<std::uint8_t>(std::lround(255.0 * c[2]))};
}

/// One pixel per cell, colored with the jet colormap.
inline RgbImage render_jet(const AttentionMap& map) {
  RgbImage img(static_cast<int>(map.width()), static_cast<int>(map.height()));
  for (std::size_t i = 0; i < map.height(); ++i)
    for (std::size_t j = 0; j < map.width(); ++j)
      img.set(static_cast<int>(j), static_cast<int>(i), jet_rgb8(map.at(i, j)));
  return img;
}

/// Nearest-neighbour enlargement, for viewing small maps.
inline RgbImage upscale(const RgbImage& src, int factor) {
  if (factor < 1) throw ValidationError("upscale factor must be positive");
  RgbImage out(src.width * factor, src.height * factor);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) out.set(x, y, src.get(x / factor, y / factor));
  return out;
}

inline std::vector<std::uint8_t> encode_png(const RgbImage& img) {
  png_image desc{};
  desc.version = PNG_IMAGE_VERSION;
  desc.width = static_cast<png_uint_32>(img.width);
  desc.height = static_cast<png_uint_32>(img.height);
  desc.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&desc, nullptr, &size, 0, img.rgb.data(), 0, nullptr))
    throw std::runtime_error(std::string("png sizing failed: ") + desc.message);
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&desc, out.data(), &size, 0, img.rgb.data(), 0, nullptr))
    throw std::runtime_error(std::string("png encoding failed: ") + desc.message);
  out.resize(size);
  return out;
}

inline RgbImage decode_png(std::span<const std::uint8_t> bytes) {
  png_image desc{};
  desc.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&desc, bytes.data(), bytes.size()))
    throw FormatError(std::string("not a readable PNG: ") + desc.message, 0);
  desc.format = PNG_FORMAT_RGB;
  RgbImage img(static_cast<int>(desc.width), static_cast<int>(desc.height));
  if (!png_image_finish_read(&desc, nullptr, img.rgb.data(), 0, nullptr)) {
    png_image_free(&desc);
    throw FormatError(std::string("PNG decode failed: ") + desc.message, 0);
  }
  return img;
}

inline void write_png(const RgbImage& img, const std::filesystem::path& path) {
  binary::write_file(path, encode_png(img));
}

inline RgbImage read_png(const std::filesystem::path& path) { return decode_png(binary::read_file(path)); }

}  // namespace vilad
