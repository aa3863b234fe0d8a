#include "spacy/scm/model.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "spacy/scm/acyclicity.hpp"

namespace spacy::scm {
namespace {

using ad::Shape;
using ad::Tensor;
using ad::Var;

const double kLog2Pi = std::log(2 * std::numbers::pi);

void check_inputs(Var z, Var g) {
  if (z.value().rank() != 3 || g.value().rank() != 3) throw std::invalid_argument("z must be (B,T,D) and g (lags+1,D,D)");
  const std::size_t d = z.shape()[2];
  if (g.shape()[1] != d || g.shape()[2] != d) throw std::invalid_argument("graph and latent node counts differ");
  if (z.shape()[1] <= g.shape()[0] - 1) throw std::invalid_argument("series shorter than the lag window");
}

// Z^{t-k} aligned with targets t in [lags, T): (B, T-lags, D).
Var lag_view(Var z, std::size_t lags, std::size_t k) {
  const std::size_t t = z.shape()[1];
  return ad::slice(z, 1, lags - k, t - k);
}

// Edge messages aggregated per target node over lags [first_lag, lags]:
// (B, T-lags, D, embed).
Var aggregate(const ad::BoundParams& p, const ScmShape& shape, const std::string& net, const std::string& embed, Var z,
              Var g, std::size_t first_lag) {
  const std::size_t b = z.shape()[0], lags = g.shape()[0] - 1, t = z.shape()[1] - lags;
  const std::size_t d = shape.nodes, e = shape.embed, h = shape.hidden;
  const std::size_t kn = lags + 1 - first_lag;

  std::vector<Var> views;
  for (std::size_t k = first_lag; k <= lags; ++k) views.push_back(ad::reshape(lag_view(z, lags, k), {b, t, 1, d}));
  Var hist = ad::reshape(views.size() == 1 ? views[0] : ad::concat(views, 2), {b, t, kn, d, 1, 1});

  Var w0 = p[net + ".l0.w"];
  Var w_z = ad::reshape(ad::slice(w0, 0, 0, 1), {h});
  Var w_src = ad::slice(w0, 0, 1, 1 + e);
  Var w_dst = ad::slice(w0, 0, 1 + e, 1 + 2 * e);
  Var emb = p[embed];
  Var src = ad::matmul(ad::reshape(ad::slice(emb, 0, first_lag, lags + 1), {kn * d, e}), w_src);
  Var dst = ad::matmul(ad::reshape(ad::slice(emb, 0, 0, 1), {d, e}), w_dst);
  Var pre = ad::mul(hist, w_z) + ad::reshape(src, {1, 1, kn, d, 1, h}) + ad::reshape(dst, {1, 1, 1, 1, d, h}) +
            ad::reshape(p[net + ".l0.b"], {h});
  Var msg = ad::mlp_forward_from(p, net, shape.message(), pre);  // (B,T,kn,D,D,e)
  Var mask = ad::reshape(ad::slice(g, 0, first_lag, lags + 1), {1, 1, kn, d, d, 1});
  return ad::sum(ad::sum(ad::mul(msg, mask), 2), 2);
}

Var readout(const ad::BoundParams& p, const ScmShape& shape, const std::string& net, Var agg, std::size_t out) {
  const Shape s = agg.shape();
  Var y = ad::mlp_forward(p, net, shape.readout(out), ad::reshape(agg, {s[0] * s[1] * s[2], s[3]}));
  return ad::reshape(y, {s[0], s[1], s[2], out});
}

}  // namespace

ScmKind scm_from_name(std::string_view name) {
  if (name == "linear") return ScmKind::kLinear;
  if (name == "nonlinear") return ScmKind::kNonlinear;
  throw std::invalid_argument("unknown scm kind '" + std::string(name) + "'");
}

std::string_view scm_name(ScmKind kind) { return kind == ScmKind::kLinear ? "linear" : "nonlinear"; }

void init_scm(ad::ParamSet& params, ScmKind kind, const ScmShape& shape, Rng& rng) {
  const std::size_t k = shape.lags + 1, d = shape.nodes;
  const auto group = ad::ParamGroup::kScm;
  if (kind == ScmKind::kLinear) {
    params.add("scm.weight", group, Tensor({k, d, d}));
    params.add("scm.noise_logvar", group, Tensor({d}));
    return;
  }
  params.add("scm.embed", group, normal_tensor({k, d, shape.embed}, rng, 0.0, 0.1));
  ad::init_mlp(params, "scm.lambda_f", group, shape.message(), rng);
  ad::init_mlp(params, "scm.xi_f", group, shape.readout(1), rng);
  params.add("scm.noise_embed", group, normal_tensor({k, d, shape.embed}, rng, 0.0, 0.1));
  ad::init_mlp(params, "scm.lambda_eta", group, shape.message(), rng);
  ad::init_mlp(params, "scm.xi_eta", group, shape.readout(kSplineParams), rng);
  // Start the noise flow at the identity spline.
  const std::string last = "scm.xi_eta.l" + std::to_string(shape.readout(kSplineParams).depth);
  params[last + ".w"].fill(0.0);
  Tensor& bias = params[last + ".b"];
  const SplineParams id = SplineParams::identity();
  for (std::size_t i = 0; i < kSplineParams; ++i) bias[i] = id.raw[i];
}

Var linear_mean(Var z, Var g, Var w) {
  check_inputs(z, g);
  if (w.shape() != g.shape()) throw std::invalid_argument("weight and graph shapes differ");
  const std::size_t lags = g.shape()[0] - 1, d = g.shape()[1];
  Var gw = ad::mul(g, w);
  Var out;
  for (std::size_t k = 0; k <= lags; ++k) {
    Var term = ad::batched_matmul(lag_view(z, lags, k), ad::reshape(ad::slice(gw, 0, k, k + 1), {d, d}));
    out = k == 0 ? term : out + term;
  }
  return out;
}

Var nonlinear_mean(const ad::BoundParams& p, const ScmShape& shape, Var z, Var g) {
  check_inputs(z, g);
  Var agg = aggregate(p, shape, "scm.lambda_f", "scm.embed", z, g, 0);
  const Shape s = agg.shape();
  return ad::reshape(readout(p, shape, "scm.xi_f", agg, 1), {s[0], s[1], s[2]});
}

Var noise_spline_raw(const ad::BoundParams& p, const ScmShape& shape, Var z, Var g) {
  check_inputs(z, g);
  Var agg = aggregate(p, shape, "scm.lambda_eta", "scm.noise_embed", z, g, 1);
  return readout(p, shape, "scm.xi_eta", agg, kSplineParams);
}

Var residuals(ScmKind kind, const ad::BoundParams& p, const ScmShape& shape, Var z, Var g) {
  check_inputs(z, g);
  const std::size_t lags = g.shape()[0] - 1;
  Var target = lag_view(z, lags, 0);
  if (kind == ScmKind::kLinear) return target - linear_mean(z, g, p["scm.weight"]);
  return target - nonlinear_mean(p, shape, z, g);
}

Var latent_loglik(ScmKind kind, const ad::BoundParams& p, const ScmShape& shape, Var z, Var g, const ResidualScale* scale,
                  Var* residuals_out) {
  Var u = residuals(kind, p, shape, z, g);
  if (residuals_out) *residuals_out = u;
  const Shape s = u.shape();
  const std::size_t d = s[2];
  const double count = static_cast<double>(s[0] * s[1]);
  if (kind == ScmKind::kLinear) {
    Var lv = p["scm.noise_logvar"];
    Var quad = ad::sum(ad::mul(ad::square(u), ad::exp(ad::neg(lv))));
    return -0.5 * (quad + count * ad::sum(lv) + count * static_cast<double>(d) * kLog2Pi);
  }
  const ResidualScale unit = ResidualScale::unit(d);
  const ResidualScale& rs = scale ? *scale : unit;
  if (rs.mean.size() != d || rs.scale.size() != d) throw std::invalid_argument("residual scale size mismatch");
  Tensor shift({d}), inv({d});
  double log_scale = 0;
  for (std::size_t i = 0; i < d; ++i) {
    if (!(rs.scale[i] > 0)) throw std::invalid_argument("residual scale must be positive");
    shift[i] = -rs.mean[i];
    inv[i] = 1.0 / rs.scale[i];
    log_scale += std::log(rs.scale[i]);
  }
  ad::Tape& tape = *z.tape();
  Var std_u = ad::mul(ad::add(u, tape.constant(shift)), tape.constant(inv));
  const std::size_t n = s[0] * s[1] * d;
  Var raw = ad::reshape(noise_spline_raw(p, shape, z, g), {n, kSplineParams});
  SplineVars flow = spline_inverse(ad::reshape(std_u, {n}), raw);
  Var base = -0.5 * ad::sum(ad::square(flow.value));
  return base + ad::sum(flow.log_det) - (0.5 * static_cast<double>(n) * kLog2Pi + count * log_scale);
}

Var graph_prior_logp(Var g, double alpha, double sigma_pen) {
  if (alpha < 0 || sigma_pen < 0) throw std::invalid_argument("prior weights must be non-negative");
  if (g.value().rank() != 3 || g.shape()[1] != g.shape()[2]) throw std::invalid_argument("graph must be (lags+1,D,D)");
  const std::size_t d = g.shape()[1];
  Var sparsity = -alpha * ad::sum(ad::square(g));
  if (sigma_pen == 0) return sparsity;
  return sparsity - sigma_pen * acyclicity(ad::reshape(ad::slice(g, 0, 0, 1), {d, d}));
}

}  // namespace spacy::scm
