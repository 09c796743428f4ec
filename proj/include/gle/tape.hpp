// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gle/tensor.hpp"

namespace gle {

/// A trainable tensor with its accumulated gradient.
struct Parameter {
  Parameter() = default;
  Parameter(std::string name, Tensor value)
      : name(std::move(name)), value(std::move(value)), grad(Tensor::zeros(this->value.shape())) {}

  std::string name;
  Tensor value;
  Tensor grad;

  void zero_grad() { grad.fill(0.0); }
};

class Tape;

/// Handle to a value recorded on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Handed to a backward function when the tape is replayed.
class BackwardPass {
 public:
  BackwardPass(const Tape& tape, std::span<const std::size_t> inputs, std::size_t output,
               const Tensor& out_grad, std::span<Tensor* const> in_grads)
      : tape_(tape), inputs_(inputs), output_(output), out_grad_(out_grad), in_grads_(in_grads) {}

  const Tensor& input(std::size_t i) const;
  const Tensor& output() const;
  const Tensor& out_grad() const { return out_grad_; }
  /// Accumulator for input i, or nullptr when that input needs no gradient.
  Tensor* in_grad(std::size_t i) const { return in_grads_[i]; }

 private:
  const Tape& tape_;
  std::span<const std::size_t> inputs_;
  std::size_t output_;
  const Tensor& out_grad_;
  std::span<Tensor* const> in_grads_;
};

using BackwardFn = std::function<void(const BackwardPass&)>;

/// Define-by-run record of differentiable operations. Backward replays the
/// recorded operations in exact reverse order and accumulates gradients into
/// bound Parameters.
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var input(Tensor value);
  Var param(Parameter& p);

  /// Records an operation. The output is checked for non-finite values.
  Var emit(const char* op, Tensor output, std::initializer_list<Var> inputs, BackwardFn backward);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  /// Gradient of the last backward() w.r.t. v; zeros if v was unreachable.
  Tensor grad(Var v) const;

  void backward(Var loss);

  bool recording() const noexcept { return recording_; }
  std::size_t num_ops() const noexcept { return ops_.size(); }
  std::size_t num_values() const noexcept { return nodes_.size(); }
  /// Operation names in execution order.
  std::vector<std::string> op_names() const;

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    Parameter* param = nullptr;
  };
  struct OpRecord {
    const char* name;
    std::vector<std::size_t> inputs;
    std::size_t output;
    BackwardFn backward;
  };

  Var add_node(Tensor value, bool requires_grad, Parameter* param);
  Tensor* grad_slot(std::size_t id);

  bool recording_;
  std::deque<Node> nodes_;
  std::vector<OpRecord> ops_;
};

void check_same_tape(Var a, Var b);

}  // namespace gle
