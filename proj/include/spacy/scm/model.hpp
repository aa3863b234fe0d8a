#pragma once

#include <string_view>
#include <vector>

#include "spacy/autodiff/nn.hpp"
#include "spacy/scm/spline.hpp"

namespace spacy::scm {

enum class ScmKind { kLinear, kNonlinear };
ScmKind scm_from_name(std::string_view name);
std::string_view scm_name(ScmKind kind);

struct ScmShape {
  std::size_t nodes = 1;
  std::size_t lags = 1;
  std::size_t embed = 64;
  std::size_t hidden = 64;

  ad::MlpShape message() const { return {1 + 2 * embed, embed, hidden, 2, true, true}; }
  ad::MlpShape readout(std::size_t out) const { return {embed, out, hidden, 2, true, true}; }
};

// Parameter keys. Linear: scm.weight (lags+1, D, D), scm.noise_logvar (D).
// Nonlinear: scm.embed / scm.noise_embed (lags+1, D, embed) plus the message
// and readout nets scm.lambda_f, scm.xi_f, scm.lambda_eta, scm.xi_eta.
void init_scm(ad::ParamSet& params, ScmKind kind, const ScmShape& shape, Rng& rng);

// z: (B, T, D); g and w: (lags+1, D, D). Row t of the result is the mean of
// Z at time t + lags: f_d = sum_k sum_j (G o W)^k_{j,d} Z^{t-k}_j.
ad::Var linear_mean(ad::Var z, ad::Var g, ad::Var w);

// xi_f(sum_k sum_j G^k_{j,d} lambda_f([Z^{t-k}_j, E^k_j, E^0_d])): (B, T-lags, D).
ad::Var nonlinear_mean(const ad::BoundParams& p, const ScmShape& shape, ad::Var z, ad::Var g);

// Raw spline parameters per residual, conditioned on lagged parents only:
// (B, T-lags, D, kSplineParams).
ad::Var noise_spline_raw(const ad::BoundParams& p, const ScmShape& shape, ad::Var z, ad::Var g);

// u = Z^t - f(Pa(<=t)) for t in [lags, T): (B, T-lags, D).
ad::Var residuals(ScmKind kind, const ad::BoundParams& p, const ScmShape& shape, ad::Var z, ad::Var g);

// Per-node affine standardization applied to residuals before the spline.
struct ResidualScale {
  std::vector<double> mean;
  std::vector<double> scale;
  static ResidualScale unit(std::size_t nodes) { return {std::vector<double>(nodes, 0.0), std::vector<double>(nodes, 1.0)}; }
};

// Sum of log p(Z^t_d | parents) over batch, t in [lags, T) and nodes. Linear:
// Gaussian residuals with per-node log-variance. Nonlinear: spline-flow noise
// with a standard normal base. `scale` is ignored for the linear variant.
// `residuals_out`, when given, receives u for running-statistics updates.
ad::Var latent_loglik(ScmKind kind, const ad::BoundParams& p, const ScmShape& shape, ad::Var z, ad::Var g,
                      const ResidualScale* scale = nullptr, ad::Var* residuals_out = nullptr);

// -alpha * sum(G^2) - sigma_pen * h(G^0).
ad::Var graph_prior_logp(ad::Var g, double alpha, double sigma_pen);

}  // namespace spacy::scm
