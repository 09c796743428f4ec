// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "gle/dataset.hpp"
#include "gle/network.hpp"

namespace gle {

/// Mean squared error over the elements of unmasked channels only.
/// pred and target are [N,8,S,S]; mask holds one entry per (sample, slot).
/// Throws when every channel is masked.
Var masked_mse_loss(Var pred, const Tensor& target, std::span<const LandmarkMask> mask);

enum class OptimizerKind { adam, sgd_momentum };

std::string to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(const std::string& text);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 1e-3;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double weight_decay = 0.0;
  std::size_t epochs = 1;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;

  void validate() const;
  void store(KeyValues& kv) const;
  static OptimizerConfig from(const KeyValues& kv, const OptimizerConfig& defaults);
  static OptimizerConfig from(const KeyValues& kv) { return from(kv, OptimizerConfig{}); }
};

/// Adam or SGD with momentum; L2 weight decay is folded into the gradient.
class Optimizer {
 public:
  Optimizer() = default;
  Optimizer(const OptimizerConfig& config, std::span<Parameter* const> params);

  void step(std::span<Parameter* const> params);
  std::uint64_t steps_taken() const { return t_; }

  std::vector<std::pair<std::string, const Tensor*>> named_state() const;
  void load_state(const std::vector<std::pair<std::string, Tensor>>& tensors, std::uint64_t steps,
                  const std::string& source);

 private:
  OptimizerConfig config_;
  std::vector<std::string> names_;
  std::vector<Tensor> first_;   // Adam m or SGD velocity
  std::vector<Tensor> second_;  // Adam v
  std::uint64_t t_ = 0;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Owns the network, optimizer and data order. Every step is deterministic
/// given the seed and the sample list.
class Trainer {
 public:
  Trainer(const NetworkConfig& net_config, const OptimizerConfig& opt_config);

  /// forward, masked loss, backward, update, zero grads. Returns the loss.
  double train_step(std::span<const Sample* const> batch);

  /// Takes the next batch from the current epoch order (reshuffling at each
  /// epoch start) and trains on it.
  double step(std::span<const Sample> samples);

  /// Steps until `epochs` epochs are complete or max_steps (0 = unlimited)
  /// total steps are reached. on_step receives (global step, loss).
  void run(std::span<const Sample> samples, std::size_t max_steps,
           const std::function<void(std::uint64_t, double)>& on_step = {});

  bool finished() const { return epoch_ >= opt_config_.epochs; }

  std::string serialize_checkpoint();
  void save_checkpoint(const std::string& path);
  static Trainer load_checkpoint(const std::string& path);
  static Trainer from_checkpoint_bytes(const std::string& bytes, const std::string& source);

  LandmarkNet& net() { return net_; }
  const OptimizerConfig& optimizer_config() const { return opt_config_; }
  std::uint64_t epoch() const { return epoch_; }
  std::uint64_t global_step() const { return step_; }

 private:
  Trainer() = default;

  LandmarkNet net_;
  OptimizerConfig opt_config_;
  Optimizer optimizer_;
  std::uint64_t epoch_ = 0;
  std::uint64_t step_ = 0;
  std::uint64_t cursor_ = 0;
  std::vector<std::uint64_t> order_;
  std::mt19937_64 rng_;
};

}  // namespace gle
