#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "caer/errors.hpp"

namespace caer {

/// Axis-aligned pixel rectangle, origin top-left.
struct Rect {
  std::int64_t x = 0, y = 0, w = 0, h = 0;

  bool empty() const { return w <= 0 || h <= 0; }
  Rect clamped(std::int64_t img_h, std::int64_t img_w) const;
  bool operator==(const Rect&) const = default;
};

/// 8-bit RGB image, interleaved row-major.
struct Image {
  std::int64_t h = 0, w = 0;
  std::vector<std::uint8_t> rgb;

  static Image filled(std::int64_t h, std::int64_t w, std::uint8_t r, std::uint8_t g,
                      std::uint8_t b);
  std::uint8_t* px(std::int64_t y, std::int64_t x) { return rgb.data() + (y * w + x) * 3; }
  const std::uint8_t* px(std::int64_t y, std::int64_t x) const {
    return rgb.data() + (y * w + x) * 3;
  }
};

/// Planar float image (3, h, w), values conventionally in [0, 1].
struct FloatImage {
  std::int64_t h = 0, w = 0;
  std::vector<float> data;

  float& at(int ch, std::int64_t y, std::int64_t x) {
    return data[static_cast<std::size_t>((ch * h + y) * w + x)];
  }
  float at(int ch, std::int64_t y, std::int64_t x) const {
    return data[static_cast<std::size_t>((ch * h + y) * w + x)];
  }
};

Image read_ppm(const std::filesystem::path& path);
void write_ppm(const Image& img, const std::filesystem::path& path);

FloatImage to_float(const Image& img);       // scales to [0, 1]
Image to_u8(const FloatImage& img);          // clamps then scales to [0, 255]

/// Bilinear resampling with half-pixel centers.
FloatImage resize_bilinear(const FloatImage& src, std::int64_t out_h, std::int64_t out_w);

FloatImage crop(const FloatImage& src, std::int64_t y0, std::int64_t x0, std::int64_t out_h,
                std::int64_t out_w);

void zero_rect(Image& img, const Rect& r);
void zero_rect(FloatImage& img, const Rect& r);

/// Maps a rectangle through a resize; the result covers every destination
/// pixel whose source footprint touches the rectangle.
Rect map_rect(const Rect& r, std::int64_t src_h, std::int64_t src_w, std::int64_t dst_h,
              std::int64_t dst_w);

}  // namespace caer
