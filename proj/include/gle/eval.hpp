// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gle/dataset.hpp"
#include "gle/network.hpp"

namespace gle {

/// Per channel, the (x = column, y = row) of the maximum; ties go to the
/// lowest row-major index. heatmaps: [N,8,S,S].
std::vector<LandmarkCoords> decode_heatmaps(const Tensor& heatmaps);

/// Distance in the unit square: sqrt((dx/width)^2 + (dy/height)^2).
double normalized_error(Point pred, Point gt, double width, double height);

/// ||pred - gt|| / (width * height), kept for auditing the alternative reading
/// of the metric's denominator.
double normalized_error_area(Point pred, Point gt, double width, double height);

enum class NeNormalization { per_axis, area };

std::string_view to_string(NeNormalization n);

/// Correctly rounded sum (Shewchuk partials). Makes aggregates independent
/// of summation order.
class ExactSum {
 public:
  void add(double x);
  double value() const;

 private:
  std::vector<double> partials_;
};

struct EvalReport {
  std::string dataset_id;
  std::string config_hash;
  NeNormalization normalization = NeNormalization::per_axis;
  std::size_t num_samples = 0;
  std::array<std::optional<double>, kNumLandmarks> slot_ne{};  // nullopt: no visible instance
  std::array<std::size_t, kNumLandmarks> counts{};
  std::optional<double> average;

  /// Fixed-width table, one column per canonical slot then Avg.; absent
  /// columns print "-".
  std::string table() const;
  /// `key = value` lines with round-trip precision.
  std::string key_values() const;
};

/// Per-slot mean NE over visible slots (sample mask), and the count-weighted
/// average. Coordinates are in the samples' resized pixel space.
EvalReport aggregate_errors(std::span<const LandmarkCoords> predictions,
                            std::span<const Sample> samples, NeNormalization normalization);

struct EvalOptions {
  std::size_t batch_size = 16;
  NeNormalization normalization = NeNormalization::per_axis;
  std::string dataset_id;
};

/// Stacks [3,S,S] sample images into [N,3,S,S].
Tensor stack_images(std::span<const Sample* const> samples);

/// Eval-mode forward over the samples, decode, aggregate.
EvalReport evaluate(LandmarkNet& net, std::span<const Sample> samples, const EvalOptions& options);

/// Predicted coordinates for every sample (eval mode).
std::vector<LandmarkCoords> predict_coordinates(LandmarkNet& net, std::span<const Sample> samples,
                                                std::size_t batch_size);

std::string config_hash(const NetworkConfig& config);

}  // namespace gle
