// SPDX-License-Identifier: Apache-2.0
//
// Landmark schema and the `glefmt v1` annotation list format.
//
// One record per line after the `glefmt v1` header:
//   image_id,category,x0,y0,x1,y1,(x,y,v) x 8
// with v = 0 visible, 1 occluded, 2 absent. Lines starting with '#' are
// comments.
#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace gle {

inline constexpr std::size_t kNumLandmarks = 8;

/// Canonical slot order; also the report column order.
enum class Slot : std::size_t {
  left_collar,
  right_collar,
  left_sleeve,
  right_sleeve,
  left_waistline,
  right_waistline,
  left_hem,
  right_hem,
};

inline constexpr std::array<std::string_view, kNumLandmarks> kSlotNames = {
    "L.Collar", "R.Collar", "L.Sleeve", "R.Sleeve", "L.Waistline", "R.Waistline", "L.Hem", "R.Hem"};

inline bool is_left_slot(std::size_t slot) { return slot % 2 == 0; }

enum class Category { full_body, upper, lower };

std::string_view to_string(Category c);
Category parse_category(std::string_view text);

enum class Visibility { visible = 0, occluded = 1, absent = 2 };

/// Which slots a garment category annotates: full body all 8, upper drops
/// the waistlines, lower keeps only waistlines and hems.
bool slot_present(Category c, std::size_t slot);
std::size_t landmarks_for(Category c);

struct Point {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point&) const = default;
};

struct Landmark {
  Point position;
  Visibility visibility = Visibility::absent;
  bool operator==(const Landmark&) const = default;
};

struct BBox {
  double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;
  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  bool operator==(const BBox&) const = default;
};

struct LandmarkAnnotation {
  std::string image_id;
  Category category = Category::full_body;
  BBox bbox;
  std::array<Landmark, kNumLandmarks> landmarks{};
  bool operator==(const LandmarkAnnotation&) const = default;
};

/// Checks the category/absence pattern and the bounding box. `where`
/// prefixes error messages.
void validate_annotation(const LandmarkAnnotation& a, const std::string& where);

/// Checks that visible landmarks lie inside a width x height image.
void validate_bounds(const LandmarkAnnotation& a, std::size_t width, std::size_t height,
                     const std::string& where);

inline constexpr std::string_view kAnnotationHeader = "glefmt v1";

std::string format_annotations(const std::vector<LandmarkAnnotation>& list);
std::vector<LandmarkAnnotation> parse_annotations(const std::string& text, const std::string& source);

void save_annotations(const std::string& path, const std::vector<LandmarkAnnotation>& list);
std::vector<LandmarkAnnotation> load_annotations(const std::string& path);

}  // namespace gle
