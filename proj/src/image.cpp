// SPDX-License-Identifier: Apache-2.0
#include "gle/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "gle/error.hpp"
#include "gle/tensor_io.hpp"

namespace gle {
namespace {

// Reads the next whitespace-delimited header token, skipping '#' comments.
std::string header_token(const std::string& bytes, std::size_t& pos, const std::string& source) {
  while (pos < bytes.size()) {
    const char c = bytes[pos];
    if (c == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      ++pos;
    } else {
      break;
    }
  }
  const std::size_t start = pos;
  while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
  if (start == pos) fail(ErrorKind::format, source + ": truncated PPM header");
  return bytes.substr(start, pos - start);
}

std::size_t header_number(const std::string& bytes, std::size_t& pos, const std::string& source) {
  const std::string tok = header_token(bytes, pos, source);
  if (!std::all_of(tok.begin(), tok.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
    fail(ErrorKind::format, source + ": bad PPM header field '" + tok + "'");
  }
  return std::stoul(tok);
}

}  // namespace

std::string encode_ppm(const RgbImage& image) {
  std::string out = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(image.pixels.data()), image.pixels.size());
  return out;
}

RgbImage decode_ppm(const std::string& bytes, const std::string& source) {
  std::size_t pos = 0;
  if (header_token(bytes, pos, source) != "P6") fail(ErrorKind::format, source + ": not a binary PPM (P6)");
  const std::size_t w = header_number(bytes, pos, source);
  const std::size_t h = header_number(bytes, pos, source);
  const std::size_t maxval = header_number(bytes, pos, source);
  if (maxval != 255) fail(ErrorKind::format, source + ": only maxval 255 is supported");
  if (w == 0 || h == 0) fail(ErrorKind::format, source + ": empty image");
  ++pos;  // single whitespace byte before the raster
  if (bytes.size() < pos || bytes.size() - pos != w * h * 3) {
    fail(ErrorKind::format, source + ": raster size does not match " + std::to_string(w) + "x" + std::to_string(h));
  }
  RgbImage img(w, h);
  std::copy(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end(), img.pixels.begin());
  return img;
}

void write_ppm(const std::string& path, const RgbImage& image) { write_file(path, encode_ppm(image)); }

RgbImage read_ppm(const std::string& path) { return decode_ppm(read_file(path), path); }

void write_pgm(const std::string& path, std::size_t width, std::size_t height, const double* values) {
  std::string out = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  for (std::size_t i = 0; i < width * height; ++i) {
    const double v = std::clamp(values[i], 0.0, 1.0);
    out.push_back(static_cast<char>(static_cast<std::uint8_t>(std::lround(v * 255.0))));
  }
  write_file(path, out);
}

ResizedImage crop_and_resize(const RgbImage& image, const BBox& bbox, std::size_t size) {
  if (size == 0) fail(ErrorKind::precondition, "crop_and_resize: target size must be positive");
  if (!(bbox.width() > 0.0) || !(bbox.height() > 0.0)) {
    fail(ErrorKind::precondition, "crop_and_resize: degenerate bbox");
  }
  const double w = static_cast<double>(image.width), h = static_cast<double>(image.height);
  if (bbox.x1 <= 0.0 || bbox.y1 <= 0.0 || bbox.x0 >= w || bbox.y0 >= h) {
    fail(ErrorKind::precondition, "crop_and_resize: bbox does not intersect the image");
  }
  const double s = static_cast<double>(size);
  CoordinateTransform t{s / bbox.width(), s / bbox.height(), 0.0, 0.0};
  t.offset_x = -bbox.x0 * t.scale_x;
  t.offset_y = -bbox.y0 * t.scale_y;

  Tensor out({3, size, size});
  const std::size_t plane = size * size;
  for (std::size_t v = 0; v < size; ++v) {
    const double sy = std::clamp(bbox.y0 + static_cast<double>(v) / t.scale_y, 0.0, h - 1.0);
    const std::size_t y0 = static_cast<std::size_t>(sy);
    const std::size_t y1 = std::min(y0 + 1, image.height - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t u = 0; u < size; ++u) {
      const double sx = std::clamp(bbox.x0 + static_cast<double>(u) / t.scale_x, 0.0, w - 1.0);
      const std::size_t x0 = static_cast<std::size_t>(sx);
      const std::size_t x1 = std::min(x0 + 1, image.width - 1);
      const double fx = sx - static_cast<double>(x0);
      for (std::size_t c = 0; c < 3; ++c) {
        const double a = image.at(x0, y0)[c], b = image.at(x1, y0)[c];
        const double d = image.at(x0, y1)[c], e = image.at(x1, y1)[c];
        const double top = a + (b - a) * fx;
        const double bottom = d + (e - d) * fx;
        out[c * plane + v * size + u] = (top + (bottom - top) * fy) / 255.0;
      }
    }
  }
  return {std::move(out), t};
}

}  // namespace gle
