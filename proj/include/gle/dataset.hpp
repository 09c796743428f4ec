// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "gle/annotation.hpp"
#include "gle/image.hpp"

namespace gle {

struct HeatmapSet {
  Tensor maps;  // [8,S,S]
};

using LandmarkMask = std::array<bool, kNumLandmarks>;
using LandmarkCoords = std::array<Point, kNumLandmarks>;

struct TargetSet {
  HeatmapSet heatmaps;
  LandmarkMask mask{};       // true only for visible slots
  LandmarkCoords gt_coords{};  // transformed coordinates (zero for absent slots)
};

/// Peak-normalized Gaussians centered on the rounded transformed landmark of
/// every visible slot; other channels stay zero and are masked out.
TargetSet render_target_heatmaps(const LandmarkAnnotation& annotation,
                                 const CoordinateTransform& transform, std::size_t size,
                                 double sigma);

inline double default_sigma(std::size_t size) { return static_cast<double>(size) / 32.0; }

struct Sample {
  std::string image_id;
  Category category = Category::full_body;
  Tensor image;  // [3,S,S]
  HeatmapSet target;
  LandmarkMask mask{};
  LandmarkCoords gt_coords{};
};

enum class CropMode { full_image, bbox };

std::string_view to_string(CropMode mode);
CropMode parse_crop_mode(const std::string& text);

Sample make_sample(const RgbImage& image, const LandmarkAnnotation& annotation, std::size_t size,
                   double sigma, CropMode crop);

struct CategoryMix {
  double full_body = 1.0 / 3.0;
  double upper = 1.0 / 3.0;
  double lower = 1.0 / 3.0;
};

struct SyntheticItem {
  RgbImage image;
  LandmarkAnnotation annotation;
};

struct SyntheticOptions {
  /// Probability that a present landmark is marked occluded.
  double occlusion_rate = 0.0;
};

inline constexpr std::size_t kMinSyntheticSize = 32;

/// Renders parametric garments (torso polygon, sleeve strokes, hem line)
/// under a random similarity pose with noisy backgrounds. Categories are
/// assigned by largest-remainder stratification, then shuffled.
std::vector<SyntheticItem> generate_synthetic_dataset(std::size_t n, std::size_t image_size,
                                                      std::uint64_t seed, const CategoryMix& mix,
                                                      const SyntheticOptions& options = {});

/// Per-category counts for n items under mix.
std::array<std::size_t, 3> stratified_counts(std::size_t n, const CategoryMix& mix);

inline constexpr const char* kAnnotationFileName = "annotations.txt";

struct Dataset {
  std::string root;
  std::vector<RgbImage> images;
  std::vector<LandmarkAnnotation> annotations;
};

/// Writes <dir>/annotations.txt and one <image_id>.ppm per item.
void write_dataset(const std::string& dir, const std::vector<SyntheticItem>& items);
Dataset load_dataset(const std::string& dir);

std::vector<Sample> prepare_samples(const Dataset& dataset, std::size_t size, double sigma,
                                    CropMode crop);

}  // namespace gle
