// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "gle/gle.hpp"
#include "gle/keyvalue.hpp"

namespace gle {

enum class BackboneKind {
  paper_vgg,  // VGG-16 conv1_1 .. conv4_3 (conv + ReLU)
  toy,        // three conv-BN-ReLU + pool stages, then a conv4-equivalent conv-BN-ReLU
};

std::string to_string(BackboneKind kind);
BackboneKind parse_backbone(const std::string& text);

struct NetworkConfig {
  std::size_t input_size = 224;
  BackboneKind backbone = BackboneKind::toy;
  double width_multiplier = 1.0;
  std::size_t k = 2;
  std::size_t num_landmarks = 8;
  std::size_t decoder_stages = 3;

  /// Channel width of a VGG stage of the given full-width channel count.
  std::size_t scaled(std::size_t full_width) const;
  std::size_t feature_channels() const { return scaled(512); }
  std::size_t feature_size() const { return input_size >> kDownsampleStages; }

  /// Throws Error(config) naming the violated constraint.
  void validate() const;

  /// Writes keys under "network." into kv.
  void store(KeyValues& kv) const;
  static NetworkConfig from(const KeyValues& kv, const NetworkConfig& defaults);
  static NetworkConfig from(const KeyValues& kv) { return from(kv, NetworkConfig{}); }

  static constexpr std::size_t kDownsampleStages = 3;
};

struct ConvRelu {
  Conv2dLayer conv;
};

struct MaxPool {};

using BackboneLayer = std::variant<ConvRelu, ConvBnRelu, MaxPool>;

/// Feature extractor -> GLE stack -> transposed-conv decoder -> 1x1 head.
class LandmarkNet {
 public:
  /// Conv weights are He-uniform and biases zero; the non-local w weights and
  /// the head weights start at zero.
  static LandmarkNet build(const NetworkConfig& config, std::uint64_t seed);

  /// images [N,3,S,S] -> linear heatmaps [N,num_landmarks,S,S]
  Var forward(Tape& tape, Var images, Mode mode);
  /// Eval-mode forward on a non-recording tape.
  Tensor infer(const Tensor& images);
  /// Backbone output (the conv4_3-equivalent feature), eval mode.
  Tensor features(const Tensor& images);

  const NetworkConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }

  ParameterRefs refs();
  std::vector<Parameter*> parameters() { return refs().params; }
  std::size_t parameter_count();
  Parameter* find_parameter(const std::string& name);
  void zero_grad();

  /// Parameters then buffers, in construction order.
  std::vector<std::pair<std::string, const Tensor*>> named_tensors();
  /// Replaces values by name; every named tensor must be present with a
  /// matching shape.
  void load_named_tensors(const std::vector<std::pair<std::string, Tensor>>& tensors,
                          const std::string& source);

  void export_weights(const std::string& path);
  void import_weights(const std::string& path);

  GLEStack& gle() { return gle_; }
  std::vector<ConvTranspose2dLayer>& decoder() { return decoder_; }
  Conv2dLayer& head() { return head_; }
  std::vector<std::size_t> decoder_sizes() const;

 private:
  NetworkConfig config_;
  std::uint64_t seed_ = 0;
  std::vector<BackboneLayer> backbone_;
  GLEStack gle_;
  std::vector<ConvTranspose2dLayer> decoder_;
  std::vector<BatchNormLayer> decoder_bn_;
  Conv2dLayer head_;
};

}  // namespace gle
