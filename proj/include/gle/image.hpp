// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "gle/annotation.hpp"
#include "gle/tensor.hpp"

namespace gle {

/// 8-bit interleaved RGB raster.
struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // width * height * 3

  RgbImage() = default;
  RgbImage(std::size_t w, std::size_t h) : width(w), height(h), pixels(w * h * 3, 0) {}

  std::uint8_t* at(std::size_t x, std::size_t y) { return &pixels[(y * width + x) * 3]; }
  const std::uint8_t* at(std::size_t x, std::size_t y) const { return &pixels[(y * width + x) * 3]; }
  bool operator==(const RgbImage&) const = default;
};

std::string encode_ppm(const RgbImage& image);
RgbImage decode_ppm(const std::string& bytes, const std::string& source);
void write_ppm(const std::string& path, const RgbImage& image);
RgbImage read_ppm(const std::string& path);

/// Binary PGM (P5) of values in [0,1], clamped and scaled to 0..255.
void write_pgm(const std::string& path, std::size_t width, std::size_t height,
               const double* values);

/// Axis-aligned map from original pixel coordinates to resized ones.
struct CoordinateTransform {
  double scale_x = 1.0, scale_y = 1.0;
  double offset_x = 0.0, offset_y = 0.0;

  Point apply(Point p) const { return {p.x * scale_x + offset_x, p.y * scale_y + offset_y}; }
  Point invert(Point p) const { return {(p.x - offset_x) / scale_x, (p.y - offset_y) / scale_y}; }
};

struct ResizedImage {
  Tensor image;  // [3,S,S] in [0,1]
  CoordinateTransform transform;
};

/// Crops to bbox and bilinearly resamples to size x size. Output pixel (u,v)
/// samples the source at (x0 + u/scale_x, y0 + v/scale_y), clamped to the
/// image edge.
ResizedImage crop_and_resize(const RgbImage& image, const BBox& bbox, std::size_t size);

inline BBox full_image_bbox(const RgbImage& image) {
  return {0.0, 0.0, static_cast<double>(image.width), static_cast<double>(image.height)};
}

}  // namespace gle
