#include "spacy/autodiff/nn.hpp"

#include <cmath>

namespace spacy::ad {

void init_mlp(ParamSet& params, const std::string& prefix, ParamGroup group, const MlpShape& shape, Rng& rng) {
  std::size_t fan_in = shape.in;
  for (std::size_t i = 0; i <= shape.depth; ++i) {
    const std::size_t fan_out = i == shape.depth ? shape.out : shape.hidden;
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    const std::string layer = prefix + ".l" + std::to_string(i);
    params.add(layer + ".w", group, uniform_tensor({fan_in, fan_out}, rng, -bound, bound));
    params.add(layer + ".b", group, uniform_tensor({1, fan_out}, rng, -bound, bound));
    fan_in = fan_out;
  }
}

Var layer_norm(Var x, double eps) {
  const std::size_t last = x.value().rank() - 1;
  Var centered = x - mean(x, last, true);
  Var var = mean(square(centered), last, true);
  return centered / sqrt(var + eps);
}

Var mlp_forward(const BoundParams& p, const std::string& prefix, const MlpShape& shape, Var x) {
  return mlp_forward_from(p, prefix, shape, matmul(x, p[prefix + ".l0.w"]) + p[prefix + ".l0.b"]);
}

Var mlp_forward_from(const BoundParams& p, const std::string& prefix, const MlpShape& shape, Var pre0) {
  if (shape.depth == 0) return pre0;
  Shape lead = pre0.shape();
  lead.pop_back();
  const std::size_t rows = shape_numel(lead);
  Var z = reshape(pre0, {rows, shape.hidden});
  Var h = z;
  for (std::size_t i = 0;; ++i) {
    if (i > 0) {
      const std::string layer = prefix + ".l" + std::to_string(i);
      z = matmul(h, p[layer + ".w"]) + p[layer + ".b"];
      if (i == shape.depth) break;
    }
    if (shape.layer_norm) z = layer_norm(z);
    z = leaky_relu(z);
    h = (shape.residual && i > 0) ? z + h : z;
  }
  lead.push_back(shape.out);
  return reshape(z, lead);
}

}  // namespace spacy::ad
