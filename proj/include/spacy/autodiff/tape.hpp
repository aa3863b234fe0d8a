#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "spacy/autodiff/tensor.hpp"

namespace spacy::ad {

class Tape;

// Handle to a node recorded on a Tape. Cheap to copy; valid as long as the
// owning tape is alive.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  std::uint32_t id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

struct BackwardArgs {
  const Tensor& out_value;
  const Tensor& out_grad;
  std::span<const Tensor* const> in_values;
  // nullptr where the corresponding input does not need a gradient.
  std::span<Tensor* const> in_grads;
};

using BackwardFn = std::function<void(const BackwardArgs&)>;

// Append-only record of primitive operations. Node inputs always reference
// earlier nodes, so reverse insertion order is a valid topological order.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Differentiable input (parameter or reparameterized noise input).
  Var leaf(Tensor value);
  // Input that never receives a gradient.
  Var constant(Tensor value);
  // Result of an operation; `fn` accumulates into the input gradients.
  Var record(Tensor value, std::vector<Var> inputs, BackwardFn fn);

  // Reverse sweep from a one-element output. Leaf adjoints are retained;
  // intermediate adjoints are released once propagated.
  void backward(Var output);

  const Tensor& value(Var v) const { return nodes_[v.id_].value; }
  bool requires_grad(Var v) const { return nodes_[v.id_].requires_grad; }
  // Adjoint of `v` after backward(); zeros when `v` was not reached.
  Tensor grad(Var v) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    std::vector<std::uint32_t> inputs;
    BackwardFn fn;
    bool requires_grad = false;
    bool is_leaf = false;
    bool has_grad = false;
    Tensor grad;
  };

  void check_owner(Var v) const;

  std::deque<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(*this); }

}  // namespace spacy::ad
