#include "spacy/variational/posteriors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace spacy::variational {
namespace {

using ad::Tensor;
using ad::Var;

const double kLog2PiE = std::log(2 * std::numbers::pi * std::numbers::e);

}  // namespace

Tensor edge_mask(std::size_t nodes, std::size_t lags) {
  Tensor m({lags + 1, nodes, nodes}, 1.0);
  for (std::size_t d = 0; d < nodes; ++d) m[d * nodes + d] = 0.0;
  return m;
}

Var sample_graph(Var logits, Rng& rng, bool hard, double temperature, const Tensor* mask) {
  if (!(temperature > 0)) throw std::invalid_argument("gumbel temperature must be positive");
  ad::Tape& tape = *logits.tape();
  Tensor noise = Tensor::like(logits.value());
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (double& v : noise.data()) {
    const double u = std::clamp(unif(rng), 1e-12, 1 - 1e-12);
    v = std::log(u) - std::log1p(-u);
  }
  Var soft = ad::sigmoid(ad::scale(ad::add(logits, tape.constant(std::move(noise))), 1.0 / temperature));
  Var out = soft;
  if (hard) {
    Tensor shift = Tensor::like(soft.value());
    for (std::size_t i = 0; i < shift.size(); ++i) {
      const double s = soft.value()[i];
      shift[i] = (s > 0.5 ? 1.0 : 0.0) - s;
    }
    out = ad::add(soft, tape.constant(std::move(shift)));
  }
  if (mask) {
    if (mask->shape() != logits.shape()) throw std::invalid_argument("mask shape differs from logits");
    out = ad::mul(out, tape.constant(*mask));
  }
  return out;
}

Var graph_entropy(Var logits, const Tensor* mask) {
  // H(sigmoid(x)) = softplus(x) - x sigmoid(x).
  Var h = ad::sub(ad::softplus(logits), ad::mul(logits, ad::sigmoid(logits)));
  if (mask) {
    if (mask->shape() != logits.shape()) throw std::invalid_argument("mask shape differs from logits");
    h = ad::mul(h, logits.tape()->constant(*mask));
  }
  return ad::sum(h);
}

void init_factor_posterior(ad::ParamSet& params, std::size_t nodes, spatial::KernelFamily family, const FactorInit& init,
                           Rng& rng) {
  const auto group = ad::ParamGroup::kFactor;
  Tensor mu({nodes, 2});
  std::uniform_real_distribution<double> unif(0.1, 0.9);
  for (std::size_t d = 0; d < nodes; ++d)
    for (std::size_t k = 0; k < 2; ++k) {
      double c = d < init.centers.size() ? init.centers[d][k] : unif(rng);
      c = std::clamp(c, 0.02, 0.98);
      mu[2 * d + k] = std::log(c / (1 - c));
    }
  params.add("factor.center_mean", group, std::move(mu));
  params.add("factor.center_logvar", group, Tensor({nodes}, init.center_logvar));
  params.add("factor.scale_mean", group, Tensor({nodes}, init.log_scale));
  params.add("factor.scale_logvar", group, Tensor({nodes}, init.scale_logvar));
  if (family == spatial::KernelFamily::kRbfAnisotropic) {
    params.add("factor.aniso_a", group, normal_tensor({nodes, 2, 2}, rng, 0.0, 0.05));
    // Sigma = diag(exp(b)) matches the isotropic scale exp(gamma) = 2 exp(b).
    params.add("factor.aniso_b", group, Tensor({nodes, 2}, init.log_scale - std::log(2.0)));
  }
}

FactorSample sample_factors(const ad::BoundParams& p, const spatial::GridSpec& grid, spatial::KernelFamily family, Rng& rng) {
  ad::Tape& tape = p.tape();
  Var mu_c = p["factor.center_mean"];
  const std::size_t d = mu_c.shape()[0];
  Var sd_c = ad::reshape(ad::exp(ad::scale(p["factor.center_logvar"], 0.5)), {d, 1});
  Var rho = mu_c + ad::mul(sd_c, tape.constant(normal_tensor({d, 2}, rng)));
  Var gamma = p["factor.scale_mean"] + ad::mul(ad::exp(ad::scale(p["factor.scale_logvar"], 0.5)), tape.constant(normal_tensor({d}, rng)));
  spatial::FactorInputs in{rho, gamma, {}, {}};
  if (family == spatial::KernelFamily::kRbfAnisotropic) {
    in.aniso_a = p["factor.aniso_a"];
    in.aniso_b = p["factor.aniso_b"];
  }
  return {spatial::differentiable_factor(grid, family, in), rho, gamma};
}

Var mean_factor(const ad::BoundParams& p, const spatial::GridSpec& grid, spatial::KernelFamily family) {
  spatial::FactorInputs in{p["factor.center_mean"], p["factor.scale_mean"], {}, {}};
  if (family == spatial::KernelFamily::kRbfAnisotropic) {
    in.aniso_a = p["factor.aniso_a"];
    in.aniso_b = p["factor.aniso_b"];
  }
  return spatial::differentiable_factor(grid, family, in);
}

Var scale_kl(const ad::BoundParams& p) {
  Var mu = p["factor.scale_mean"], v = p["factor.scale_logvar"];
  return ad::scale(ad::sum(ad::exp(v) + ad::square(mu) - v) - static_cast<double>(mu.size()), 0.5);
}

Var center_entropy(const ad::BoundParams& p) {
  Var v = p["factor.center_logvar"];
  const double k = static_cast<double>(p["factor.center_mean"].shape()[1]);
  return ad::scale(ad::sum(v) + static_cast<double>(v.size()) * kLog2PiE, 0.5 * k);
}

Var factor_kl(const ad::BoundParams& p) { return scale_kl(p) - center_entropy(p); }

ad::MlpShape encoder_shape(std::size_t grid_size, std::size_t nodes) { return {grid_size, nodes, 64, 2, false, false}; }

void init_encoder(ad::ParamSet& params, std::size_t grid_size, const std::vector<std::size_t>& variate_nodes, Rng& rng) {
  for (std::size_t v = 0; v < variate_nodes.size(); ++v) {
    const std::string prefix = "encoder.v" + std::to_string(v);
    ad::init_mlp(params, prefix + ".mu", ad::ParamGroup::kEncoder, encoder_shape(grid_size, variate_nodes[v]), rng);
    ad::init_mlp(params, prefix + ".logvar", ad::ParamGroup::kEncoder, encoder_shape(grid_size, variate_nodes[v]), rng);
  }
}

LatentSample encode_latents(const ad::BoundParams& p, Var x, const std::vector<std::size_t>& variate_nodes, Rng& rng) {
  if (x.value().rank() != 4 || x.shape()[1] != variate_nodes.size())
    throw std::invalid_argument("observations must be (B, V, L, T) with V matching the variate partition");
  const std::size_t b = x.shape()[0], l = x.shape()[2], t = x.shape()[3];
  std::vector<Var> means, logvars;
  for (std::size_t v = 0; v < variate_nodes.size(); ++v) {
    const std::string prefix = "encoder.v" + std::to_string(v);
    const ad::MlpShape shape = encoder_shape(l, variate_nodes[v]);
    if (p[prefix + ".mu.l0.w"].shape()[0] != l) throw std::invalid_argument("encoder input width differs from grid size");
    Var snap = ad::reshape(ad::permute(ad::reshape(ad::slice(x, 1, v, v + 1), {b, l, t}), {0, 2, 1}), {b * t, l});
    means.push_back(ad::reshape(ad::mlp_forward(p, prefix + ".mu", shape, snap), {b, t, variate_nodes[v]}));
    logvars.push_back(ad::reshape(ad::mlp_forward(p, prefix + ".logvar", shape, snap), {b, t, variate_nodes[v]}));
  }
  Var mean = means.size() == 1 ? means[0] : ad::concat(means, 2);
  Var logvar = logvars.size() == 1 ? logvars[0] : ad::concat(logvars, 2);
  Var eps = p.tape().constant(normal_tensor(mean.shape(), rng));
  return {mean + ad::mul(ad::exp(ad::scale(logvar, 0.5)), eps), mean, logvar};
}

Var gaussian_entropy(Var logvar) {
  return ad::scale(ad::sum(logvar) + static_cast<double>(logvar.size()) * kLog2PiE, 0.5);
}

}  // namespace spacy::variational
