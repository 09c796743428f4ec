// SPDX-License-Identifier: Apache-2.0
#include "gle/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "gle/error.hpp"

namespace gle {

TargetSet render_target_heatmaps(const LandmarkAnnotation& annotation,
                                 const CoordinateTransform& transform, std::size_t size,
                                 double sigma) {
  if (!(sigma > 0.0)) fail(ErrorKind::precondition, "render_target_heatmaps: sigma must be positive");
  if (size == 0) fail(ErrorKind::precondition, "render_target_heatmaps: size must be positive");
  TargetSet t;
  t.heatmaps.maps = Tensor::zeros({kNumLandmarks, size, size});
  const double denom = 2.0 * sigma * sigma;
  const double last = static_cast<double>(size - 1);
  for (std::size_t i = 0; i < kNumLandmarks; ++i) {
    const Landmark& l = annotation.landmarks[i];
    if (l.visibility == Visibility::absent) continue;
    t.gt_coords[i] = transform.apply(l.position);
    if (l.visibility != Visibility::visible) continue;
    t.mask[i] = true;
    const double cx = std::clamp(std::floor(t.gt_coords[i].x + 0.5), 0.0, last);
    const double cy = std::clamp(std::floor(t.gt_coords[i].y + 0.5), 0.0, last);
    double* plane = t.heatmaps.maps.mutable_ptr() + i * size * size;
    for (std::size_t v = 0; v < size; ++v) {
      const double dy = static_cast<double>(v) - cy;
      for (std::size_t u = 0; u < size; ++u) {
        const double dx = static_cast<double>(u) - cx;
        plane[v * size + u] = std::exp(-(dx * dx + dy * dy) / denom);
      }
    }
  }
  return t;
}

std::string_view to_string(CropMode mode) { return mode == CropMode::bbox ? "bbox" : "full_image"; }

CropMode parse_crop_mode(const std::string& text) {
  if (text == "bbox") return CropMode::bbox;
  if (text == "full_image") return CropMode::full_image;
  fail(ErrorKind::config, "unknown crop mode '" + text + "' (expected full_image or bbox)");
}

Sample make_sample(const RgbImage& image, const LandmarkAnnotation& annotation, std::size_t size,
                   double sigma, CropMode crop) {
  const BBox box = crop == CropMode::bbox ? annotation.bbox : full_image_bbox(image);
  ResizedImage resized = crop_and_resize(image, box, size);
  TargetSet target = render_target_heatmaps(annotation, resized.transform, size, sigma);
  return Sample{annotation.image_id, annotation.category, std::move(resized.image),
                std::move(target.heatmaps), target.mask, target.gt_coords};
}

void write_dataset(const std::string& dir, const std::vector<SyntheticItem>& items) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::io, "cannot create directory " + dir + ": " + ec.message());
  std::vector<LandmarkAnnotation> annotations;
  annotations.reserve(items.size());
  for (const auto& item : items) {
    write_ppm((fs::path(dir) / (item.annotation.image_id + ".ppm")).string(), item.image);
    annotations.push_back(item.annotation);
  }
  save_annotations((fs::path(dir) / kAnnotationFileName).string(), annotations);
}

Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  Dataset d;
  d.root = dir;
  d.annotations = load_annotations((fs::path(dir) / kAnnotationFileName).string());
  d.images.reserve(d.annotations.size());
  for (const auto& a : d.annotations) {
    const std::string path = (fs::path(dir) / (a.image_id + ".ppm")).string();
    d.images.push_back(read_ppm(path));
    validate_bounds(a, d.images.back().width, d.images.back().height, path);
  }
  return d;
}

std::vector<Sample> prepare_samples(const Dataset& dataset, std::size_t size, double sigma,
                                    CropMode crop) {
  std::vector<Sample> samples;
  samples.reserve(dataset.annotations.size());
  for (std::size_t i = 0; i < dataset.annotations.size(); ++i) {
    samples.push_back(make_sample(dataset.images[i], dataset.annotations[i], size, sigma, crop));
  }
  return samples;
}

}  // namespace gle
