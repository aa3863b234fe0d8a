#pragma once

#include <vector>

#include "spacy/autodiff/tape.hpp"

// Differentiable primitives. Binary element-wise ops broadcast with trailing
// dimension alignment; the gradient of a broadcast input is summed over the
// broadcast axes.
namespace spacy::ad {

Shape broadcast_shapes(const Shape& a, const Shape& b);
// Sum `grad` down to `target` (inverse of broadcasting).
Tensor reduce_to(const Tensor& grad, const Shape& target);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);

Var neg(Var x);
Var scale(Var x, double c);
Var add_scalar(Var x, double c);

Var exp(Var x);
// Throws DomainError on non-positive entries.
Var log(Var x);
// Throws DomainError on non-positive entries.
Var sqrt(Var x);
Var square(Var x);
Var sigmoid(Var x);
Var softplus(Var x);
Var tanh(Var x);
inline constexpr double kLeakySlope = 0.01;
Var leaky_relu(Var x, double slope = kLeakySlope);

Var sum(Var x);
Var sum(Var x, std::size_t axis, bool keepdim = false);
Var mean(Var x);
Var mean(Var x, std::size_t axis, bool keepdim = false);

// (M,K) x (K,N) -> (M,N).
Var matmul(Var a, Var b);
// (B,M,K) x (B,K,N) -> (B,M,N); a 2-D right operand is shared over the batch.
Var batched_matmul(Var a, Var b);
Var transpose(Var x);  // 2-D only
Var permute(Var x, const std::vector<std::size_t>& axes);

Var concat(const std::vector<Var>& parts, std::size_t axis);
Var slice(Var x, std::size_t axis, std::size_t begin, std::size_t end);
Var reshape(Var x, Shape shape);
Var broadcast_to(Var x, Shape shape);
// Element-wise select: mask != 0 picks `a`, otherwise `b`. `mask` broadcasts.
Var where(const Tensor& mask, Var a, Var b);
Var stop_gradient(Var x);

// Along the last axis.
Var softmax(Var x);
Var cumsum(Var x);
// out[..., 0] = x[..., index[...]]; index has shape x.shape[:-1].
Var gather_last(Var x, const std::vector<std::size_t>& index);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator-(Var a) { return neg(a); }
inline Var operator*(Var a, double c) { return scale(a, c); }
inline Var operator*(double c, Var a) { return scale(a, c); }
inline Var operator+(Var a, double c) { return add_scalar(a, c); }
inline Var operator+(double c, Var a) { return add_scalar(a, c); }
inline Var operator-(Var a, double c) { return add_scalar(a, -c); }
inline Var operator-(double c, Var a) { return add_scalar(neg(a), c); }

}  // namespace spacy::ad
