// SPDX-License-Identifier: Apache-2.0
#include "gle/tape.hpp"

#include <algorithm>

namespace gle {

const Tensor& Var::value() const { return tape->value(*this); }

const Tensor& BackwardPass::input(std::size_t i) const {
  return tape_.value(Var{const_cast<Tape*>(&tape_), inputs_[i]});
}

const Tensor& BackwardPass::output() const {
  return tape_.value(Var{const_cast<Tape*>(&tape_), output_});
}

void check_same_tape(Var a, Var b) {
  if (a.tape != b.tape || a.tape == nullptr) {
    fail(ErrorKind::precondition, "operands belong to different tapes");
  }
}

Var Tape::add_node(Tensor value, bool requires_grad, Parameter* param) {
  nodes_.push_back(Node{std::move(value), Tensor(), false, requires_grad, param});
  return Var{this, nodes_.size() - 1};
}

Var Tape::constant(Tensor value) { return add_node(std::move(value), false, nullptr); }

Var Tape::input(Tensor value) { return add_node(std::move(value), recording_, nullptr); }

Var Tape::param(Parameter& p) {
  if (!p.grad.same_shape(p.value)) {
    fail(ErrorKind::shape, "parameter " + p.name + " grad shape differs from value shape");
  }
  return add_node(p.value, recording_, &p);
}

Var Tape::emit(const char* op, Tensor output, std::initializer_list<Var> inputs,
               BackwardFn backward) {
  if (!output.all_finite()) {
    fail(ErrorKind::numeric, std::string(op) + ": non-finite value in output " +
                                 shape_string(output.shape()));
  }
  bool needs_grad = false;
  std::vector<std::size_t> ids;
  ids.reserve(inputs.size());
  for (const Var& v : inputs) {
    if (v.tape != this) fail(ErrorKind::precondition, std::string(op) + ": input from another tape");
    ids.push_back(v.id);
    needs_grad = needs_grad || nodes_[v.id].requires_grad;
  }
  needs_grad = needs_grad && recording_;
  Var out = add_node(std::move(output), needs_grad, nullptr);
  if (needs_grad) ops_.push_back(OpRecord{op, std::move(ids), out.id, std::move(backward)});
  return out;
}

Tensor* Tape::grad_slot(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return nullptr;
  if (!n.has_grad) {
    n.grad = Tensor::zeros(n.value.shape());
    n.has_grad = true;
  }
  return &n.grad;
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_[v.id];
  return n.has_grad ? n.grad : Tensor::zeros(n.value.shape());
}

void Tape::backward(Var loss) {
  if (loss.tape != this) fail(ErrorKind::precondition, "backward: loss from another tape");
  if (value(loss).numel() != 1) {
    fail(ErrorKind::shape, "backward: loss must be a single element, got " +
                               shape_string(value(loss).shape()));
  }
  for (Node& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor();
  }
  Tensor* seed = grad_slot(loss.id);
  if (seed == nullptr) return;
  seed->fill(1.0);

  std::vector<Tensor*> in_grads;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
    Node& out = nodes_[it->output];
    if (!out.has_grad) continue;
    in_grads.clear();
    for (std::size_t id : it->inputs) in_grads.push_back(grad_slot(id));
    it->backward(BackwardPass(*this, it->inputs, it->output, out.grad, in_grads));
  }

  for (Node& n : nodes_) {
    if (n.param != nullptr && n.has_grad) n.param->grad.add_inplace(n.grad);
  }
}

std::vector<std::string> Tape::op_names() const {
  std::vector<std::string> names;
  names.reserve(ops_.size());
  for (const auto& op : ops_) names.emplace_back(op.name);
  return names;
}

}  // namespace gle
