// SPDX-License-Identifier: Apache-2.0
#include "gle/network.hpp"

#include <algorithm>
#include <cmath>

#include "gle/tensor_io.hpp"

namespace gle {

std::string to_string(BackboneKind kind) {
  return kind == BackboneKind::paper_vgg ? "paper_vgg" : "toy";
}

BackboneKind parse_backbone(const std::string& text) {
  if (text == "paper_vgg") return BackboneKind::paper_vgg;
  if (text == "toy") return BackboneKind::toy;
  fail(ErrorKind::config, "unknown backbone '" + text + "' (expected paper_vgg or toy)");
}

std::size_t NetworkConfig::scaled(std::size_t full_width) const {
  const double w = std::round(static_cast<double>(full_width) * width_multiplier);
  return static_cast<std::size_t>(std::max(1.0, w));
}

void NetworkConfig::validate() const {
  if (!(width_multiplier > 0.0) || !std::isfinite(width_multiplier)) {
    fail(ErrorKind::config, "width_multiplier must be positive");
  }
  if (input_size < (std::size_t{1} << kDownsampleStages) ||
      input_size % (std::size_t{1} << kDownsampleStages) != 0) {
    fail(ErrorKind::config, "input_size " + std::to_string(input_size) +
                                " must be a positive multiple of 8 (three 2x downsampling stages)");
  }
  if (decoder_stages != kDownsampleStages) {
    fail(ErrorKind::config, "decoder_stages must be 3 so the decoder output size equals input_size");
  }
  if (num_landmarks != 8) fail(ErrorKind::config, "num_landmarks must be 8 (canonical landmark layout)");
  if (k < 1) fail(ErrorKind::config, "GLE stack depth k must be at least 1");
  if (feature_channels() < 2 || feature_channels() % 2 != 0) {
    fail(ErrorKind::config, "feature channels (512 x width_multiplier = " +
                                std::to_string(feature_channels()) +
                                ") must be even for the non-local embedding");
  }
  if (feature_size() * feature_size() > kMaxNonLocalPositions) {
    fail(ErrorKind::config, "feature map " + std::to_string(feature_size()) + "x" +
                                std::to_string(feature_size()) +
                                " exceeds the non-local position limit");
  }
}

void NetworkConfig::store(KeyValues& kv) const {
  kv.set("network.input_size", std::to_string(input_size));
  kv.set("network.backbone", to_string(backbone));
  kv.set("network.width_multiplier", format_double(width_multiplier));
  kv.set("network.k", std::to_string(k));
  kv.set("network.num_landmarks", std::to_string(num_landmarks));
  kv.set("network.decoder_stages", std::to_string(decoder_stages));
}

NetworkConfig NetworkConfig::from(const KeyValues& kv, const NetworkConfig& defaults) {
  NetworkConfig c = defaults;
  auto count = [&](const char* key, std::size_t fallback) {
    const auto v = kv.get_int(key, static_cast<std::int64_t>(fallback));
    if (v < 0) fail(ErrorKind::config, std::string(key) + " must be non-negative");
    return static_cast<std::size_t>(v);
  };
  c.input_size = count("network.input_size", c.input_size);
  c.backbone = parse_backbone(kv.get_or("network.backbone", to_string(c.backbone)));
  c.width_multiplier = kv.get_double("network.width_multiplier", c.width_multiplier);
  c.k = count("network.k", c.k);
  c.num_landmarks = count("network.num_landmarks", c.num_landmarks);
  c.decoder_stages = count("network.decoder_stages", c.decoder_stages);
  return c;
}

LandmarkNet LandmarkNet::build(const NetworkConfig& config, std::uint64_t seed) {
  config.validate();
  LandmarkNet net;
  net.config_ = config;
  net.seed_ = seed;

  const std::size_t c1 = config.scaled(64), c2 = config.scaled(128), c3 = config.scaled(256);
  const std::size_t c4 = config.feature_channels();
  if (config.backbone == BackboneKind::paper_vgg) {
    struct Spec { const char* name; std::size_t in, out; };
    const std::vector<std::vector<Spec>> blocks = {
        {{"conv1_1", 3, c1}, {"conv1_2", c1, c1}},
        {{"conv2_1", c1, c2}, {"conv2_2", c2, c2}},
        {{"conv3_1", c2, c3}, {"conv3_2", c3, c3}, {"conv3_3", c3, c3}},
        {{"conv4_1", c3, c4}, {"conv4_2", c4, c4}, {"conv4_3", c4, c4}},
    };
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      for (const auto& s : blocks[b]) {
        net.backbone_.emplace_back(ConvRelu{Conv2dLayer::create(
            std::string("backbone.") + s.name, s.in, s.out, 3, 1, 1, seed)});
      }
      if (b + 1 < blocks.size()) net.backbone_.emplace_back(MaxPool{});
    }
  } else {
    const std::size_t widths[] = {3, c1, c2, c3};
    for (std::size_t s = 0; s < 3; ++s) {
      net.backbone_.emplace_back(ConvBnRelu::create("backbone.stage" + std::to_string(s + 1),
                                                    widths[s], widths[s + 1], 3, 1, seed));
      net.backbone_.emplace_back(MaxPool{});
    }
    net.backbone_.emplace_back(ConvBnRelu::create("backbone.conv4", c3, c4, 3, 1, seed));
  }

  net.gle_ = GLEStack::create("gle", c4, config.k, seed);

  std::size_t in = c4;
  for (std::size_t i = 0; i < config.decoder_stages; ++i) {
    const std::size_t out = std::max(c4 >> (i + 1), 2 * config.num_landmarks);
    const std::string name = "decoder." + std::to_string(i);
    net.decoder_.push_back(ConvTranspose2dLayer::create(name + ".deconv", in, out, 4, 2, 1, seed, false));
    net.decoder_bn_.push_back(BatchNormLayer::create(name + ".bn", out));
    in = out;
  }
  net.head_ = Conv2dLayer::create("head", in, config.num_landmarks, 1, 1, 0, seed);
  net.head_.weight.value.fill(0.0);

  // Resolution algebra: S -> S/8 through the backbone, then doubled per stage.
  std::size_t size = config.input_size;
  for (const auto& layer : net.backbone_) {
    if (std::holds_alternative<MaxPool>(layer)) size /= 2;
  }
  if (size != config.feature_size()) fail(ErrorKind::config, "backbone does not reach 1/8 resolution");
  for (std::size_t i = 0; i < config.decoder_stages; ++i) size = (size - 1) * 2 - 2 + 4;
  if (size != config.input_size) fail(ErrorKind::config, "decoder output size differs from input_size");
  return net;
}

std::vector<std::size_t> LandmarkNet::decoder_sizes() const {
  std::vector<std::size_t> sizes{config_.feature_size()};
  for (const auto& d : decoder_) {
    sizes.push_back((sizes.back() - 1) * d.stride + d.weight.value.dim(2) - 2 * d.padding);
  }
  return sizes;
}

Var LandmarkNet::forward(Tape& tape, Var images, Mode mode) {
  const Shape& s = images.shape();
  const std::size_t size = config_.input_size;
  if (s.size() != 4 || s[1] != 3) {
    fail(ErrorKind::shape, "forward: images must be [N,3,S,S], got " + shape_string(s));
  }
  if (s[2] != size || s[3] != size) {
    fail(ErrorKind::shape, "forward: spatial size " + std::to_string(s[2]) + "x" +
                               std::to_string(s[3]) + " differs from input_size " +
                               std::to_string(size));
  }
  Var x = images;
  for (auto& layer : backbone_) {
    if (auto* cr = std::get_if<ConvRelu>(&layer)) {
      x = ops::relu(cr->conv.forward(tape, x));
    } else if (auto* cbr = std::get_if<ConvBnRelu>(&layer)) {
      x = cbr->forward(tape, x, mode);
    } else {
      x = ops::max_pool2d(x, 2, 2);
    }
  }
  x = gle_.forward(tape, x, mode);
  for (std::size_t i = 0; i < decoder_.size(); ++i) {
    x = ops::relu(decoder_bn_[i].forward(tape, decoder_[i].forward(tape, x), mode));
  }
  return head_.forward(tape, x);
}

Tensor LandmarkNet::infer(const Tensor& images) {
  Tape tape(false);
  return forward(tape, tape.constant(images), Mode::eval).value();
}

Tensor LandmarkNet::features(const Tensor& images) {
  Tape tape(false);
  Var x = tape.constant(images);
  for (auto& layer : backbone_) {
    if (auto* cr = std::get_if<ConvRelu>(&layer)) {
      x = ops::relu(cr->conv.forward(tape, x));
    } else if (auto* cbr = std::get_if<ConvBnRelu>(&layer)) {
      x = cbr->forward(tape, x, Mode::eval);
    } else {
      x = ops::max_pool2d(x, 2, 2);
    }
  }
  return x.value();
}

ParameterRefs LandmarkNet::refs() {
  ParameterRefs r;
  for (auto& layer : backbone_) {
    if (auto* cr = std::get_if<ConvRelu>(&layer)) {
      cr->conv.collect(r);
    } else if (auto* cbr = std::get_if<ConvBnRelu>(&layer)) {
      cbr->collect(r);
    }
  }
  gle_.collect(r);
  for (std::size_t i = 0; i < decoder_.size(); ++i) {
    decoder_[i].collect(r);
    decoder_bn_[i].collect(r);
  }
  head_.collect(r);
  return r;
}

std::size_t LandmarkNet::parameter_count() {
  std::size_t total = 0;
  for (const Parameter* p : parameters()) total += p->value.numel();
  return total;
}

Parameter* LandmarkNet::find_parameter(const std::string& name) {
  for (Parameter* p : parameters()) {
    if (p->name == name) return p;
  }
  return nullptr;
}

void LandmarkNet::zero_grad() {
  for (Parameter* p : parameters()) p->zero_grad();
}

std::vector<std::pair<std::string, const Tensor*>> LandmarkNet::named_tensors() {
  std::vector<std::pair<std::string, const Tensor*>> out;
  ParameterRefs r = refs();
  for (const Parameter* p : r.params) out.emplace_back(p->name, &p->value);
  for (const auto& b : r.buffers) out.emplace_back(b.name, b.tensor);
  return out;
}

void LandmarkNet::load_named_tensors(const std::vector<std::pair<std::string, Tensor>>& tensors,
                                     const std::string& source) {
  std::vector<std::pair<std::string, Tensor*>> targets;
  ParameterRefs r = refs();
  for (Parameter* p : r.params) targets.emplace_back(p->name, &p->value);
  for (const auto& b : r.buffers) targets.emplace_back(b.name, b.tensor);
  for (auto& [name, dst] : targets) {
    auto it = std::find_if(tensors.begin(), tensors.end(),
                           [&](const auto& e) { return e.first == name; });
    if (it == tensors.end()) fail(ErrorKind::format, source + ": missing tensor '" + name + "'");
    if (!it->second.same_shape(*dst)) {
      fail(ErrorKind::shape, source + ": tensor '" + name + "' has shape " +
                                 shape_string(it->second.shape()) + ", network expects " +
                                 shape_string(dst->shape()));
    }
    *dst = it->second;
  }
  for (Parameter* p : r.params) p->zero_grad();
}

void LandmarkNet::export_weights(const std::string& path) { save_weights(path, named_tensors()); }

void LandmarkNet::import_weights(const std::string& path) {
  load_named_tensors(load_weights(path), path);
}

}  // namespace gle
