// SPDX-License-Identifier: Apache-2.0
#include "gle/annotation.hpp"

#include <cmath>
#include <sstream>

#include "gle/error.hpp"
#include "gle/keyvalue.hpp"
#include "gle/tensor_io.hpp"

namespace gle {
namespace {

constexpr std::size_t kFieldsPerRecord = 6 + 3 * kNumLandmarks;

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

std::string column_header() {
  std::string h = "# image_id,category,x0,y0,x1,y1";
  for (auto name : kSlotNames) {
    const std::string n(name);
    h += "," + n + ".x," + n + ".y," + n + ".v";
  }
  return h + "  (v: 0 visible, 1 occluded, 2 absent)";
}

}  // namespace

std::string_view to_string(Category c) {
  switch (c) {
    case Category::full_body: return "full_body";
    case Category::upper: return "upper";
    case Category::lower: return "lower";
  }
  return "?";
}

Category parse_category(std::string_view text) {
  if (text == "full_body") return Category::full_body;
  if (text == "upper") return Category::upper;
  if (text == "lower") return Category::lower;
  fail(ErrorKind::format, "unknown category '" + std::string(text) + "'");
}

bool slot_present(Category c, std::size_t slot) {
  const auto s = static_cast<Slot>(slot);
  const bool waist = s == Slot::left_waistline || s == Slot::right_waistline;
  const bool hem = s == Slot::left_hem || s == Slot::right_hem;
  switch (c) {
    case Category::full_body: return true;
    case Category::upper: return !waist;
    case Category::lower: return waist || hem;
  }
  return false;
}

std::size_t landmarks_for(Category c) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < kNumLandmarks; ++i) n += slot_present(c, i) ? 1 : 0;
  return n;
}

void validate_annotation(const LandmarkAnnotation& a, const std::string& where) {
  if (a.image_id.empty()) fail(ErrorKind::format, where + ": empty image_id");
  if (!(a.bbox.width() > 0.0) || !(a.bbox.height() > 0.0)) {
    fail(ErrorKind::format, where + ": degenerate bbox");
  }
  for (std::size_t i = 0; i < kNumLandmarks; ++i) {
    const Landmark& l = a.landmarks[i];
    const bool absent = l.visibility == Visibility::absent;
    if (slot_present(a.category, i) && absent) {
      fail(ErrorKind::format, where + ": slot " + std::string(kSlotNames[i]) +
                                  " is required for category " + std::string(to_string(a.category)));
    }
    if (!slot_present(a.category, i) && !absent) {
      fail(ErrorKind::format, where + ": slot " + std::string(kSlotNames[i]) +
                                  " must be absent for category " + std::string(to_string(a.category)));
    }
    if (!std::isfinite(l.position.x) || !std::isfinite(l.position.y)) {
      fail(ErrorKind::format, where + ": slot " + std::string(kSlotNames[i]) + " has a non-finite coordinate");
    }
  }
}

void validate_bounds(const LandmarkAnnotation& a, std::size_t width, std::size_t height,
                     const std::string& where) {
  for (std::size_t i = 0; i < kNumLandmarks; ++i) {
    const Landmark& l = a.landmarks[i];
    if (l.visibility != Visibility::visible) continue;
    if (l.position.x < 0.0 || l.position.y < 0.0 || l.position.x > static_cast<double>(width - 1) ||
        l.position.y > static_cast<double>(height - 1)) {
      fail(ErrorKind::format, where + ": visible slot " + std::string(kSlotNames[i]) +
                                  " lies outside the " + std::to_string(width) + "x" +
                                  std::to_string(height) + " image");
    }
  }
}

std::string format_annotations(const std::vector<LandmarkAnnotation>& list) {
  std::ostringstream os;
  os << kAnnotationHeader << '\n' << column_header() << '\n';
  for (const auto& a : list) {
    os << a.image_id << ',' << to_string(a.category) << ',' << format_double(a.bbox.x0) << ','
       << format_double(a.bbox.y0) << ',' << format_double(a.bbox.x1) << ','
       << format_double(a.bbox.y1);
    for (const auto& l : a.landmarks) {
      os << ',' << format_double(l.position.x) << ',' << format_double(l.position.y) << ','
         << static_cast<int>(l.visibility);
    }
    os << '\n';
  }
  return os.str();
}

std::vector<LandmarkAnnotation> parse_annotations(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  bool header_seen = false;
  std::vector<LandmarkAnnotation> out;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const std::string where = source + ":" + std::to_string(lineno);
    if (!header_seen) {
      if (line != kAnnotationHeader) {
        fail(ErrorKind::format, where + ": expected header '" + std::string(kAnnotationHeader) + "'");
      }
      header_seen = true;
      continue;
    }
    const auto f = split_csv(line);
    if (f.size() != kFieldsPerRecord) {
      fail(ErrorKind::format, where + ": expected " + std::to_string(kFieldsPerRecord) +
                                  " fields, got " + std::to_string(f.size()));
    }
    LandmarkAnnotation a;
    a.image_id = f[0];
    try {
      a.category = parse_category(f[1]);
    } catch (const Error& e) {
      fail(ErrorKind::format, where + ": " + e.what());
    }
    a.bbox = {parse_double(f[2], where + " x0"), parse_double(f[3], where + " y0"),
              parse_double(f[4], where + " x1"), parse_double(f[5], where + " y1")};
    for (std::size_t i = 0; i < kNumLandmarks; ++i) {
      const std::string slot = where + " " + std::string(kSlotNames[i]);
      Landmark& l = a.landmarks[i];
      l.position.x = parse_double(f[6 + 3 * i], slot + ".x");
      l.position.y = parse_double(f[7 + 3 * i], slot + ".y");
      const auto v = parse_int(f[8 + 3 * i], slot + ".v");
      if (v < 0 || v > 2) fail(ErrorKind::format, slot + ": visibility code must be 0, 1 or 2");
      l.visibility = static_cast<Visibility>(v);
    }
    validate_annotation(a, where);
    out.push_back(std::move(a));
  }
  if (!header_seen) fail(ErrorKind::format, source + ": missing '" + std::string(kAnnotationHeader) + "' header");
  return out;
}

void save_annotations(const std::string& path, const std::vector<LandmarkAnnotation>& list) {
  write_file(path, format_annotations(list));
}

std::vector<LandmarkAnnotation> load_annotations(const std::string& path) {
  return parse_annotations(read_file(path), path);
}

}  // namespace gle
