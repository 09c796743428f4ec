// SPDX-License-Identifier: Apache-2.0
//
// The `gle` command line: gen-data, train, eval, predict, gradcheck.
#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "gle/dataset.hpp"
#include "gle/keyvalue.hpp"
#include "gle/network.hpp"
#include "gle/train.hpp"

namespace gle::cli {

/// Settings after merging the config file with flag overrides.
struct RunConfig {
  NetworkConfig network;
  OptimizerConfig optimizer;
  std::string data_path;
  double sigma = 0.0;
  CropMode crop = CropMode::full_image;
  std::string out_dir;
  std::size_t checkpoint_every = 100;
  std::size_t max_steps = 0;

  static RunConfig resolve(const KeyValues& merged);
  /// Every resolved setting, in the config file format.
  KeyValues to_key_values() const;
};

inline constexpr const char* kResolvedConfigName = "config.cfg";
inline constexpr const char* kLossLogName = "loss.log";
inline constexpr const char* kCheckpointName = "checkpoint.bin";
inline constexpr const char* kWeightsName = "weights.bin";

inline constexpr std::array<std::uint8_t, 3> kLeftColor = {255, 255, 0};
inline constexpr std::array<std::uint8_t, 3> kRightColor = {255, 0, 0};

/// Copy of image with a 5x5 marker per unmasked slot; left slots yellow,
/// right slots red.
RgbImage draw_overlay(const RgbImage& image, const LandmarkCoords& coords, const LandmarkMask& mask);

/// Runs one command line (args excludes the program name). Returns the
/// process exit code: 0 on success, 1 on a library error, 2 on bad usage.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace gle::cli
