#pragma once

#include <optional>
#include <vector>

#include "spacy/scm/model.hpp"
#include "spacy/spatial/kernels.hpp"
#include "spacy/variational/posteriors.hpp"

namespace spacy::trainer {

// Static description of a SPACY model instance.
struct ModelSpec {
  std::vector<std::size_t> variate_nodes{5};  // D_v per variate; D = sum
  std::size_t lags = 2;
  spatial::GridSpec grid = spatial::GridSpec::euclidean(1, 1);
  spatial::KernelFamily kernel = spatial::KernelFamily::kRbf;
  scm::ScmKind scm = scm::ScmKind::kLinear;
  bool linear_decoder = true;
  std::size_t scm_embed = 64;
  std::size_t decoder_embed = 32;
  bool per_point_noise = false;
  double init_log_scale = -3.0;  // log(0.05)

  std::size_t nodes() const;
  std::size_t variates() const { return variate_nodes.size(); }
  std::size_t variate_offset(std::size_t v) const;
  scm::ScmShape scm_shape() const { return {nodes(), lags, scm_embed, 64}; }
  ad::MlpShape decoder_shape() const { return {1 + decoder_embed, 1, 64, 2, false, false}; }
  void validate() const;
};

// Greedy peaks of per-point observation variance, one per node of each
// variate. x: (N, V, L, T). Returns centers in [0,1]^2 (Euclidean grids) or
// the squashed-domain equivalent of lat/lon for spherical grids.
std::vector<spatial::Point> hotspot_centers(const ad::Tensor& x, const ModelSpec& spec);

// Registers every learnable tensor. `x_train` seeds the factor centers.
ad::ParamSet init_model(const ModelSpec& spec, const ad::Tensor& x_train, Rng& rng);

// z: (B, T, D); factor: (L, D) with variate blocks in column order. Returns
// (B, V, L, T). `points`, when set, restricts decoding to those grid indices
// and the result is (B, V, P, T).
ad::Var decode(const ad::BoundParams& p, const ModelSpec& spec, ad::Var z, ad::Var factor,
               const std::vector<std::size_t>* points = nullptr);

// Gaussian log-density of x given the reconstruction, with the decoder's
// observation log-variance. x and recon share shape (B, V, L', T).
ad::Var reconstruction_loglik(const ad::BoundParams& p, const ModelSpec& spec, const ad::Tensor& x, ad::Var recon,
                              const std::vector<std::size_t>* points = nullptr);

struct ElboOptions {
  double sparsity_alpha = 10.0;
  bool include_graph_terms = true;  // false while the SCM is frozen
  double sample_weight = 1.0;       // N_train / B for minibatches
  std::size_t decoder_points = 0;   // nonlinear decoder: 0 means all points
  bool hard_graph = true;           // straight-through samples; soft ones are differentiable in value
  const scm::ResidualScale* residual_scale = nullptr;
};

struct ElboTerms {
  ad::Var total;
  ad::Var graph_sample;  // (lags+1, D, D)
  ad::Var latent_mean;   // (B, T, D)
  ad::Var residuals;     // (B, T-lags, D)
  double recon = 0, latent = 0, entropy_z = 0, entropy_g = 0, prior = 0, kl_f = 0;
};

// One-sample ELBO estimate for x: (B, V, L, T).
ElboTerms elbo(const ad::BoundParams& p, const ModelSpec& spec, const ad::Tensor& x, Rng& rng, const ElboOptions& opt);

// h(sigmoid(logits^0) with the diagonal removed) on the tape.
ad::Var graph_acyclicity(const ad::BoundParams& p, const ModelSpec& spec);

}  // namespace spacy::trainer
