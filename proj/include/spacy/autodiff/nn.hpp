#pragma once

#include <string>

#include "spacy/autodiff/ops.hpp"
#include "spacy/autodiff/params.hpp"
#include "spacy/random.hpp"

namespace spacy::ad {

// Fully connected network: `depth` hidden layers of width `hidden` with
// leaky-relu, optional layer normalization before each activation and
// residual connections between equal-width hidden layers.
struct MlpShape {
  std::size_t in = 1;
  std::size_t out = 1;
  std::size_t hidden = 64;
  std::size_t depth = 2;
  bool layer_norm = false;
  bool residual = false;
};

// Registers `<prefix>.l<i>.w` (in,out) and `<prefix>.l<i>.b` (1,out).
void init_mlp(ParamSet& params, const std::string& prefix, ParamGroup group, const MlpShape& shape, Rng& rng);

// x: (rows, in) -> (rows, out).
Var mlp_forward(const BoundParams& p, const std::string& prefix, const MlpShape& shape, Var x);

// Continues a forward pass from the first layer's pre-activation (any rank,
// last axis = hidden width). Returns (..., out) with the leading axes kept.
Var mlp_forward_from(const BoundParams& p, const std::string& prefix, const MlpShape& shape, Var pre0);

// Normalizes over the last axis (no affine part).
Var layer_norm(Var x, double eps = 1e-5);

}  // namespace spacy::ad
