// SPDX-License-Identifier: Apache-2.0
#include "gle/train.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <cstring>
#include <sstream>

#include "gle/error.hpp"
#include "gle/eval.hpp"
#include "gle/tensor_io.hpp"

namespace gle {
namespace {

constexpr std::uint32_t kCheckpointMagic = 0x43454c47;  // "GLEC"

std::uint32_t crc32_of(const char* data, std::size_t size) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (size > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(size, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(data), chunk);
    data += chunk;
    size -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

Var masked_mse_loss(Var pred, const Tensor& target, std::span<const LandmarkMask> mask) {
  const Tensor& p = pred.value();
  if (!p.same_shape(target)) {
    fail(ErrorKind::shape, "masked_mse_loss: prediction " + shape_string(p.shape()) +
                               " vs target " + shape_string(target.shape()));
  }
  if (p.rank() != 4 || p.dim(1) != kNumLandmarks) {
    fail(ErrorKind::shape, "masked_mse_loss: expected [N,8,S,S], got " + shape_string(p.shape()));
  }
  const std::size_t n = p.dim(0), plane = p.dim(2) * p.dim(3);
  if (mask.size() != n) fail(ErrorKind::shape, "masked_mse_loss: mask has " + std::to_string(mask.size()) + " rows for batch of " + std::to_string(n));
  std::size_t active = 0;
  for (const auto& m : mask) active += static_cast<std::size_t>(std::count(m.begin(), m.end(), true));
  if (active == 0) fail(ErrorKind::precondition, "masked_mse_loss: every landmark in the batch is masked");

  const double denom = static_cast<double>(active * plane);
  double total = 0.0;
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t c = 0; c < kNumLandmarks; ++c) {
      if (!mask[b][c]) continue;
      const std::size_t off = (b * kNumLandmarks + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double d = p[off + i] - target[off + i];
        total += d * d;
      }
    }
  }
  std::vector<LandmarkMask> saved(mask.begin(), mask.end());
  return pred.tape->emit("masked_mse_loss", Tensor::scalar(total / denom), {pred},
                         [target, saved = std::move(saved), denom, plane](const BackwardPass& bp) {
    Tensor* g = bp.in_grad(0);
    if (!g) return;
    const Tensor& p = bp.input(0);
    const double scale = 2.0 * bp.out_grad()[0] / denom;
    for (std::size_t b = 0; b < saved.size(); ++b) {
      for (std::size_t c = 0; c < kNumLandmarks; ++c) {
        if (!saved[b][c]) continue;
        const std::size_t off = (b * kNumLandmarks + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) (*g)[off + i] += scale * (p[off + i] - target[off + i]);
      }
    }
  });
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::adam ? "adam" : "sgd_momentum"; }

OptimizerKind parse_optimizer(const std::string& text) {
  if (text == "adam") return OptimizerKind::adam;
  if (text == "sgd_momentum" || text == "sgd") return OptimizerKind::sgd_momentum;
  fail(ErrorKind::config, "unknown optimizer '" + text + "' (expected adam or sgd_momentum)");
}

void OptimizerConfig::validate() const {
  if (!(learning_rate >= 0.0)) fail(ErrorKind::config, "learning_rate must be non-negative");
  if (batch_size < 1) fail(ErrorKind::config, "batch_size must be at least 1");
  if (!(weight_decay >= 0.0)) fail(ErrorKind::config, "weight_decay must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    fail(ErrorKind::config, "Adam betas must lie in [0, 1)");
  }
  if (!(adam_epsilon > 0.0)) fail(ErrorKind::config, "adam_epsilon must be positive");
}

void OptimizerConfig::store(KeyValues& kv) const {
  kv.set("optimizer.kind", to_string(kind));
  kv.set("optimizer.learning_rate", format_double(learning_rate));
  kv.set("optimizer.momentum", format_double(momentum));
  kv.set("optimizer.beta1", format_double(beta1));
  kv.set("optimizer.beta2", format_double(beta2));
  kv.set("optimizer.adam_epsilon", format_double(adam_epsilon));
  kv.set("optimizer.weight_decay", format_double(weight_decay));
  kv.set("optimizer.epochs", std::to_string(epochs));
  kv.set("optimizer.batch_size", std::to_string(batch_size));
  kv.set("optimizer.seed", std::to_string(seed));
}

OptimizerConfig OptimizerConfig::from(const KeyValues& kv, const OptimizerConfig& d) {
  OptimizerConfig c = d;
  auto count = [&](const char* key, std::uint64_t fallback) {
    const auto v = kv.get_int(key, static_cast<std::int64_t>(fallback));
    if (v < 0) fail(ErrorKind::config, std::string(key) + " must be non-negative");
    return static_cast<std::uint64_t>(v);
  };
  c.kind = parse_optimizer(kv.get_or("optimizer.kind", to_string(c.kind)));
  c.learning_rate = kv.get_double("optimizer.learning_rate", c.learning_rate);
  c.momentum = kv.get_double("optimizer.momentum", c.momentum);
  c.beta1 = kv.get_double("optimizer.beta1", c.beta1);
  c.beta2 = kv.get_double("optimizer.beta2", c.beta2);
  c.adam_epsilon = kv.get_double("optimizer.adam_epsilon", c.adam_epsilon);
  c.weight_decay = kv.get_double("optimizer.weight_decay", c.weight_decay);
  c.epochs = count("optimizer.epochs", c.epochs);
  c.batch_size = count("optimizer.batch_size", c.batch_size);
  c.seed = count("optimizer.seed", c.seed);
  return c;
}

Optimizer::Optimizer(const OptimizerConfig& config, std::span<Parameter* const> params) : config_(config) {
  for (const Parameter* p : params) {
    names_.push_back(p->name);
    first_.push_back(Tensor::zeros(p->value.shape()));
    if (config.kind == OptimizerKind::adam) second_.push_back(Tensor::zeros(p->value.shape()));
  }
}

void Optimizer::step(std::span<Parameter* const> params) {
  if (params.size() != names_.size()) fail(ErrorKind::precondition, "optimizer: parameter list changed");
  ++t_;
  const double lr = config_.learning_rate;
  const double wd = config_.weight_decay;
  if (config_.kind == OptimizerKind::adam) {
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      Parameter& p = *params[k];
      Tensor& m = first_[k];
      Tensor& v = second_[k];
      for (std::size_t i = 0; i < p.value.numel(); ++i) {
        const double g = p.grad[i] + wd * p.value[i];
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
        p.value[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.adam_epsilon);
      }
    }
  } else {
    for (std::size_t k = 0; k < params.size(); ++k) {
      Parameter& p = *params[k];
      Tensor& vel = first_[k];
      for (std::size_t i = 0; i < p.value.numel(); ++i) {
        const double g = p.grad[i] + wd * p.value[i];
        vel[i] = config_.momentum * vel[i] + g;
        p.value[i] -= lr * vel[i];
      }
    }
  }
}

std::vector<std::pair<std::string, const Tensor*>> Optimizer::named_state() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  const char* first = config_.kind == OptimizerKind::adam ? "optim.m." : "optim.velocity.";
  for (std::size_t k = 0; k < names_.size(); ++k) out.emplace_back(first + names_[k], &first_[k]);
  for (std::size_t k = 0; k < second_.size(); ++k) out.emplace_back("optim.v." + names_[k], &second_[k]);
  return out;
}

void Optimizer::load_state(const std::vector<std::pair<std::string, Tensor>>& tensors,
                           std::uint64_t steps, const std::string& source) {
  auto lookup = [&](const std::string& name, Tensor& dst) {
    auto it = std::find_if(tensors.begin(), tensors.end(), [&](const auto& e) { return e.first == name; });
    if (it == tensors.end()) fail(ErrorKind::format, source + ": missing optimizer tensor '" + name + "'");
    if (!it->second.same_shape(dst)) fail(ErrorKind::shape, source + ": optimizer tensor '" + name + "' has wrong shape");
    dst = it->second;
  };
  const char* first = config_.kind == OptimizerKind::adam ? "optim.m." : "optim.velocity.";
  for (std::size_t k = 0; k < names_.size(); ++k) lookup(first + names_[k], first_[k]);
  for (std::size_t k = 0; k < second_.size(); ++k) lookup("optim.v." + names_[k], second_[k]);
  t_ = steps;
}

Trainer::Trainer(const NetworkConfig& net_config, const OptimizerConfig& opt_config)
    : net_(LandmarkNet::build(net_config, opt_config.seed)), opt_config_(opt_config) {
  opt_config.validate();
  optimizer_ = Optimizer(opt_config_, net_.parameters());
  std::seed_seq seq{static_cast<std::uint32_t>(opt_config.seed),
                    static_cast<std::uint32_t>(opt_config.seed >> 32), 0xda7aU};
  rng_.seed(seq);
}

double Trainer::train_step(std::span<const Sample* const> batch) {
  if (batch.empty()) fail(ErrorKind::precondition, "train_step: empty batch");
  ParameterRefs refs = net_.refs();
  std::vector<Tensor> saved_buffers;
  for (const auto& b : refs.buffers) saved_buffers.push_back(*b.tensor);

  const std::size_t s = net_.config().input_size;
  Tensor target({batch.size(), kNumLandmarks, s, s});
  std::vector<LandmarkMask> mask;
  const std::size_t per = kNumLandmarks * s * s;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch[i]->target.maps.numel() != per) fail(ErrorKind::shape, "train_step: target size does not match the network input size");
    std::copy(batch[i]->target.maps.ptr(), batch[i]->target.maps.ptr() + per, target.mutable_ptr() + i * per);
    mask.push_back(batch[i]->mask);
  }

  double loss_value = 0.0;
  try {
    Tape tape;
    Var pred = net_.forward(tape, tape.constant(stack_images(batch)), Mode::train);
    Var loss = masked_mse_loss(pred, target, mask);
    loss_value = loss.value().item();
    tape.backward(loss);
  } catch (const Error& e) {
    for (std::size_t i = 0; i < refs.buffers.size(); ++i) *refs.buffers[i].tensor = saved_buffers[i];
    net_.zero_grad();
    if (e.kind() == ErrorKind::numeric) {
      fail(ErrorKind::numeric, "step " + std::to_string(step_) + ": non-finite loss (" + e.what() + ")");
    }
    throw;
  }
  optimizer_.step(refs.params);
  net_.zero_grad();
  ++step_;
  return loss_value;
}

double Trainer::step(std::span<const Sample> samples) {
  if (samples.empty()) fail(ErrorKind::precondition, "training set is empty");
  if (order_.empty() || cursor_ >= order_.size()) {
    order_.resize(samples.size());
    std::iota(order_.begin(), order_.end(), std::uint64_t{0});
    std::shuffle(order_.begin(), order_.end(), rng_);
    cursor_ = 0;
  }
  if (order_.size() != samples.size()) {
    fail(ErrorKind::precondition, "training set size " + std::to_string(samples.size()) +
                                      " differs from the checkpointed epoch order (" +
                                      std::to_string(order_.size()) + ")");
  }
  const std::size_t end = std::min<std::size_t>(order_.size(), cursor_ + opt_config_.batch_size);
  std::vector<const Sample*> batch;
  for (std::size_t i = cursor_; i < end; ++i) batch.push_back(&samples[order_[i]]);
  const double loss = train_step(batch);
  cursor_ = end;
  if (cursor_ >= order_.size()) ++epoch_;
  return loss;
}

void Trainer::run(std::span<const Sample> samples, std::size_t max_steps,
                  const std::function<void(std::uint64_t, double)>& on_step) {
  while (!finished() && (max_steps == 0 || step_ < max_steps)) {
    const double loss = step(samples);
    if (on_step) on_step(step_, loss);
  }
}

std::string Trainer::serialize_checkpoint() {
  KeyValues config;
  net_.config().store(config);
  opt_config_.store(config);

  ByteWriter w;
  w.u32(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.string(config.to_string());
  w.u64(epoch_);
  w.u64(step_);
  w.u64(optimizer_.steps_taken());
  w.u64(cursor_);
  std::ostringstream rng_text;
  rng_text << rng_;
  w.string(rng_text.str());
  w.u64(order_.size());
  for (auto v : order_) w.u64(v);
  auto tensors = net_.named_tensors();
  for (const auto& e : optimizer_.named_state()) tensors.push_back(e);
  w.table(tensors);
  std::string bytes = w.buffer();
  const std::uint32_t crc = crc32_of(bytes.data(), bytes.size());
  bytes.append(reinterpret_cast<const char*>(&crc), 4);
  return bytes;
}

void Trainer::save_checkpoint(const std::string& path) { write_file(path, serialize_checkpoint()); }

Trainer Trainer::load_checkpoint(const std::string& path) {
  return from_checkpoint_bytes(read_file(path), path);
}

Trainer Trainer::from_checkpoint_bytes(const std::string& bytes, const std::string& source) {
  if (bytes.size() < 12) fail(ErrorKind::format, source + ": truncated checkpoint");
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - 4, 4);
  if (crc32_of(bytes.data(), bytes.size() - 4) != stored) {
    fail(ErrorKind::checksum, source + ": checksum mismatch (file truncated or corrupted)");
  }
  const std::string body = bytes.substr(0, bytes.size() - 4);
  ByteReader r(body, source);
  if (r.u32() != kCheckpointMagic) fail(ErrorKind::format, source + ": not a checkpoint file");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    fail(ErrorKind::format, source + ": checkpoint version " + std::to_string(version) +
                                " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  const KeyValues config = KeyValues::parse(r.string(), source + " config");
  Trainer t(NetworkConfig::from(config), OptimizerConfig::from(config));
  t.epoch_ = r.u64();
  t.step_ = r.u64();
  const std::uint64_t optimizer_steps = r.u64();
  t.cursor_ = r.u64();
  std::istringstream rng_text(r.string());
  rng_text >> t.rng_;
  if (!rng_text) fail(ErrorKind::format, source + ": bad rng state");
  t.order_.resize(r.u64());
  for (auto& v : t.order_) v = r.u64();
  const auto tensors = r.table();
  if (!r.at_end()) fail(ErrorKind::format, source + ": trailing bytes in checkpoint");
  t.net_.load_named_tensors(tensors, source);
  t.optimizer_.load_state(tensors, optimizer_steps, source);
  return t;
}

}  // namespace gle
