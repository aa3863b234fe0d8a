#include "spacy/autodiff/tape.hpp"

#include <stdexcept>

namespace spacy::ad {

void Tape::check_owner(Var v) const {
  if (v.tape_ != this || v.id_ >= nodes_.size())
    throw std::invalid_argument("variable does not belong to this tape");
}

Var Tape::leaf(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  n.is_leaf = true;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.is_leaf = true;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  n.inputs.reserve(inputs.size());
  for (const auto& in : inputs) {
    check_owner(in);
    n.inputs.push_back(in.id_);
    n.requires_grad = n.requires_grad || nodes_[in.id_].requires_grad;
  }
  if (n.requires_grad) n.fn = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

void Tape::backward(Var output) {
  check_owner(output);
  Node& out = nodes_[output.id_];
  if (out.value.size() != 1)
    throw ShapeError("backward() requires a scalar output, got shape " +
                     shape_str(out.value.shape()));
  for (auto& n : nodes_) {
    n.has_grad = false;
    if (!n.is_leaf) n.grad = Tensor();
  }
  out.grad = Tensor::like(out.value, 1.0);
  out.has_grad = true;

  std::vector<const Tensor*> in_values;
  std::vector<Tensor*> in_grads;
  for (std::size_t i = output.id_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.fn) continue;
    in_values.clear();
    in_grads.clear();
    for (auto id : n.inputs) {
      Node& in = nodes_[id];
      in_values.push_back(&in.value);
      if (in.requires_grad) {
        if (!in.has_grad) {
          in.grad = Tensor::like(in.value, 0.0);
          in.has_grad = true;
        }
        in_grads.push_back(&in.grad);
      } else {
        in_grads.push_back(nullptr);
      }
    }
    n.fn(BackwardArgs{n.value, n.grad, in_values, in_grads});
    if (!n.is_leaf && i != output.id_) n.grad = Tensor();
  }
}

Tensor Tape::grad(Var v) const {
  check_owner(v);
  const Node& n = nodes_[v.id_];
  if (n.has_grad && n.grad.same_shape(n.value)) return n.grad;
  return Tensor::like(n.value, 0.0);
}

}  // namespace spacy::ad
