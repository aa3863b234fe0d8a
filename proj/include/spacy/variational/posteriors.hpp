#pragma once

#include <vector>

#include "spacy/autodiff/nn.hpp"
#include "spacy/spatial/kernels.hpp"

namespace spacy::variational {

inline constexpr double kGumbelTemperature = 0.5;

// Ones everywhere except the diagonal of the instantaneous slice.
ad::Tensor edge_mask(std::size_t nodes, std::size_t lags);

// Relaxed Bernoulli sample sigmoid((logits + logistic noise) / temperature).
// With `hard`, the forward value is the {0,1} rounding and the backward pass
// uses the relaxed gradient. `mask` (same shape, optional) zeroes entries.
ad::Var sample_graph(ad::Var logits, Rng& rng, bool hard = true, double temperature = kGumbelTemperature,
                     const ad::Tensor* mask = nullptr);

// Sum of Bernoulli entropies of sigmoid(logits), over entries where mask != 0.
ad::Var graph_entropy(ad::Var logits, const ad::Tensor* mask = nullptr);

// Parameter keys: factor.center_mean (D,2), factor.center_logvar (D),
// factor.scale_mean (D), factor.scale_logvar (D); the anisotropic family adds
// point estimates factor.aniso_a (D,2,2) and factor.aniso_b (D,2).
struct FactorInit {
  std::vector<spatial::Point> centers;  // in [0,1]^2, squashed domain
  double log_scale = -3.0;
  double center_logvar = -4.0;
  double scale_logvar = -4.0;
};
void init_factor_posterior(ad::ParamSet& params, std::size_t nodes, spatial::KernelFamily family, const FactorInit& init,
                           Rng& rng);

struct FactorSample {
  ad::Var factor;      // (L, D)
  ad::Var center_raw;  // (D, 2), before the sigmoid
  ad::Var log_scale;   // (D)
};

// Reparameterized draw rho = mu + exp(v/2) eps, gamma likewise.
FactorSample sample_factors(const ad::BoundParams& p, const spatial::GridSpec& grid, spatial::KernelFamily family, Rng& rng);

// Factor at the posterior means, without noise.
ad::Var mean_factor(const ad::BoundParams& p, const spatial::GridSpec& grid, spatial::KernelFamily family);

// KL(q(gamma) || N(0,1)) summed over nodes.
ad::Var scale_kl(const ad::BoundParams& p);
// Entropy of q(rho): K/2 (v + log 2 pi e) per node.
ad::Var center_entropy(const ad::BoundParams& p);
// scale_kl - center_entropy.
ad::Var factor_kl(const ad::BoundParams& p);

// Encoder nets encoder.v<i>.mu / encoder.v<i>.logvar: L -> 64 -> 64 -> D_v.
ad::MlpShape encoder_shape(std::size_t grid_size, std::size_t nodes);
void init_encoder(ad::ParamSet& params, std::size_t grid_size, const std::vector<std::size_t>& variate_nodes, Rng& rng);

struct LatentSample {
  ad::Var z;       // (B, T, D)
  ad::Var mean;    // (B, T, D)
  ad::Var logvar;  // (B, T, D)
};

// x: (B, V, L, T) observations. Each timestep of each variate is encoded
// independently; variate blocks are concatenated along the node axis.
LatentSample encode_latents(const ad::BoundParams& p, ad::Var x, const std::vector<std::size_t>& variate_nodes, Rng& rng);

// Sum of 1/2 (logvar + log 2 pi e).
ad::Var gaussian_entropy(ad::Var logvar);

}  // namespace spacy::variational
