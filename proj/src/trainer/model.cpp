#include "spacy/trainer/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>

#include "spacy/scm/acyclicity.hpp"

namespace spacy::trainer {
namespace {

using ad::Shape;
using ad::Tensor;
using ad::Var;

const double kLog2Pi = std::log(2 * std::numbers::pi);

// (P, L) row selector so that S F picks rows `points` of F.
Tensor selector(const std::vector<std::size_t>& points, std::size_t l) {
  Tensor s({points.size(), l});
  for (std::size_t i = 0; i < points.size(); ++i) s[i * l + points[i]] = 1.0;
  return s;
}

// x restricted to grid points along axis 2 of (B, V, L, T).
Tensor gather_points(const Tensor& x, const std::vector<std::size_t>& points) {
  const std::size_t b = x.dim(0), v = x.dim(1), l = x.dim(2), t = x.dim(3);
  Tensor out({b, v, points.size(), t});
  for (std::size_t i = 0; i < b * v; ++i)
    for (std::size_t j = 0; j < points.size(); ++j)
      std::copy_n(x.data().data() + (i * l + points[j]) * t, t, out.data().data() + (i * points.size() + j) * t);
  return out;
}

std::vector<std::size_t> sample_points(std::size_t l, std::size_t count, Rng& rng) {
  std::vector<std::size_t> idx(l);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, l - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

std::size_t ModelSpec::nodes() const { return std::accumulate(variate_nodes.begin(), variate_nodes.end(), std::size_t{0}); }

std::size_t ModelSpec::variate_offset(std::size_t v) const {
  return std::accumulate(variate_nodes.begin(), variate_nodes.begin() + static_cast<std::ptrdiff_t>(v), std::size_t{0});
}

void ModelSpec::validate() const {
  if (variate_nodes.empty()) throw std::invalid_argument("model needs at least one variate");
  for (auto d : variate_nodes)
    if (d == 0) throw std::invalid_argument("every variate needs at least one node");
  if (lags == 0) throw std::invalid_argument("lags must be at least 1");
  if (kernel == spatial::KernelFamily::kRbfAnisotropic && grid.metric.kind != spatial::MetricKind::kEuclidean)
    throw std::invalid_argument("anisotropic kernel requires a euclidean grid");
  grid.validate();
}

std::vector<spatial::Point> hotspot_centers(const Tensor& x, const ModelSpec& spec) {
  const std::size_t n = x.dim(0), vars = x.dim(1), l = x.dim(2), t = x.dim(3);
  if (vars != spec.variates() || l != spec.grid.size()) throw std::invalid_argument("observations do not match the model");
  std::vector<spatial::Point> centers;
  const double width = std::exp(spec.init_log_scale);
  for (std::size_t v = 0; v < vars; ++v) {
    std::vector<double> res(l, 0.0);
    for (std::size_t p = 0; p < l; ++p) {
      double s = 0, s2 = 0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < t; ++k) {
          const double val = x[((i * vars + v) * l + p) * t + k];
          s += val;
          s2 += val * val;
        }
      const double m = s / static_cast<double>(n * t);
      res[p] = s2 / static_cast<double>(n * t) - m * m;
    }
    for (std::size_t d = 0; d < spec.variate_nodes[v]; ++d) {
      const std::size_t best = static_cast<std::size_t>(std::max_element(res.begin(), res.end()) - res.begin());
      const spatial::Point c = spec.grid.point(best);
      for (std::size_t p = 0; p < l; ++p) {
        const double r = spatial::distance(spec.grid.point(p), c, spec.grid.metric);
        const double f = std::exp(-r * r / width);
        res[p] *= (1 - f) * (1 - f);
      }
      if (spec.grid.metric.kind == spatial::MetricKind::kEuclidean)
        centers.push_back(c);
      else
        centers.push_back({c[0] / std::numbers::pi + 0.5, c[1] / (2 * std::numbers::pi) + 0.5});
    }
  }
  return centers;
}

ad::ParamSet init_model(const ModelSpec& spec, const Tensor& x_train, Rng& rng) {
  spec.validate();
  const std::size_t d = spec.nodes(), l = spec.grid.size(), v = spec.variates();
  ad::ParamSet ps;
  ps.add("graph.logits", ad::ParamGroup::kGraph, Tensor({spec.lags + 1, d, d}));
  scm::init_scm(ps, spec.scm, spec.scm_shape(), rng);
  variational::init_encoder(ps, l, spec.variate_nodes, rng);
  variational::FactorInit fi;
  fi.centers = hotspot_centers(x_train, spec);
  fi.log_scale = spec.init_log_scale;
  variational::init_factor_posterior(ps, d, spec.kernel, fi, rng);
  ps.add("decoder.obs_logvar", ad::ParamGroup::kDecoder, spec.per_point_noise ? Tensor({v, l}) : Tensor({v}));
  if (!spec.linear_decoder) {
    ps.add("decoder.embed", ad::ParamGroup::kDecoder, normal_tensor({v, l, spec.decoder_embed}, rng, 0.0, 0.1));
    ad::init_mlp(ps, "decoder.xi", ad::ParamGroup::kDecoder, spec.decoder_shape(), rng);
  }
  return ps;
}

Var decode(const ad::BoundParams& p, const ModelSpec& spec, Var z, Var factor, const std::vector<std::size_t>* points) {
  const std::size_t d = spec.nodes(), l = spec.grid.size();
  if (z.value().rank() != 3 || z.shape()[2] != d) throw std::invalid_argument("latent node count differs from the variate partition");
  if (factor.shape() != Shape{l, d}) throw std::invalid_argument("factor matrix must be (L, D)");
  const std::size_t b = z.shape()[0], t = z.shape()[1];
  ad::Tape& tape = p.tape();
  std::optional<Var> sel;
  if (points) sel = tape.constant(selector(*points, l));
  const std::size_t lp = points ? points->size() : l;
  std::vector<Var> blocks;
  for (std::size_t v = 0; v < spec.variates(); ++v) {
    const std::size_t off = spec.variate_offset(v), dv = spec.variate_nodes[v];
    Var fv = ad::slice(factor, 1, off, off + dv);
    if (sel) fv = ad::matmul(*sel, fv);
    Var zv = ad::slice(z, 2, off, off + dv);
    Var m = ad::batched_matmul(zv, ad::transpose(fv));  // (B, T, L')
    if (!spec.linear_decoder) {
      const ad::MlpShape shape = spec.decoder_shape();
      Var w0 = p["decoder.xi.l0.w"];
      Var emb = ad::reshape(ad::slice(p["decoder.embed"], 0, v, v + 1), {l, spec.decoder_embed});
      if (sel) emb = ad::matmul(*sel, emb);
      Var emb_proj = ad::matmul(emb, ad::slice(w0, 0, 1, 1 + spec.decoder_embed));  // (L', H)
      Var pre = ad::mul(ad::reshape(m, {b, t, lp, 1}), ad::reshape(ad::slice(w0, 0, 0, 1), {shape.hidden})) +
                ad::reshape(emb_proj, {1, 1, lp, shape.hidden}) + ad::reshape(p["decoder.xi.l0.b"], {shape.hidden});
      m = ad::reshape(ad::mlp_forward_from(p, "decoder.xi", shape, pre), {b, t, lp});
    }
    blocks.push_back(ad::reshape(ad::permute(m, {0, 2, 1}), {b, 1, lp, t}));
  }
  return blocks.size() == 1 ? blocks[0] : ad::concat(blocks, 1);
}

Var reconstruction_loglik(const ad::BoundParams& p, const ModelSpec& spec, const Tensor& x, Var recon,
                          const std::vector<std::size_t>* points) {
  if (x.shape() != recon.shape()) throw std::invalid_argument("reconstruction shape differs from observations");
  const std::size_t v = spec.variates(), lp = x.dim(2);
  ad::Tape& tape = p.tape();
  Var lv = p["decoder.obs_logvar"];
  if (spec.per_point_noise) {
    if (points) lv = ad::transpose(ad::matmul(tape.constant(selector(*points, spec.grid.size())), ad::transpose(lv)));
    lv = ad::reshape(lv, {1, v, lp, 1});
  } else {
    lv = ad::reshape(lv, {1, v, 1, 1});
  }
  Var diff2 = ad::square(ad::sub(tape.constant(x), recon));
  Var quad = ad::sum(ad::mul(diff2, ad::exp(ad::neg(lv))));
  // Every log-variance entry is broadcast over the same number of cells.
  Var logdet = ad::scale(ad::sum(lv), static_cast<double>(x.size() / lv.value().size()));
  return -0.5 * (quad + logdet + static_cast<double>(x.size()) * kLog2Pi);
}

Var graph_acyclicity(const ad::BoundParams& p, const ModelSpec& spec) {
  const std::size_t d = spec.nodes();
  Tensor off({d, d}, 1.0);
  for (std::size_t i = 0; i < d; ++i) off[i * d + i] = 0.0;
  Var probs = ad::mul(ad::sigmoid(ad::reshape(ad::slice(p["graph.logits"], 0, 0, 1), {d, d})), p.tape().constant(off));
  return scm::acyclicity(probs);
}

ElboTerms elbo(const ad::BoundParams& p, const ModelSpec& spec, const Tensor& x, Rng& rng, const ElboOptions& opt) {
  if (x.rank() != 4 || x.dim(0) == 0) throw std::invalid_argument("observations must be a nonempty (B, V, L, T) batch");
  if (x.dim(1) != spec.variates() || x.dim(2) != spec.grid.size()) throw std::invalid_argument("observations do not match the model");
  ad::Tape& tape = p.tape();
  ElboTerms out;
  variational::LatentSample enc = variational::encode_latents(p, tape.constant(x), spec.variate_nodes, rng);
  variational::FactorSample fs = variational::sample_factors(p, spec.grid, spec.kernel, rng);

  const std::size_t l = spec.grid.size();
  const bool subset = !spec.linear_decoder && opt.decoder_points > 0 && opt.decoder_points < l;
  Var recon_ll;
  if (subset) {
    const auto pts = sample_points(l, opt.decoder_points, rng);
    Var recon = decode(p, spec, enc.z, fs.factor, &pts);
    recon_ll = ad::scale(reconstruction_loglik(p, spec, gather_points(x, pts), recon, &pts),
                         static_cast<double>(l) / static_cast<double>(pts.size()));
  } else {
    recon_ll = reconstruction_loglik(p, spec, x, decode(p, spec, enc.z, fs.factor));
  }

  const Tensor mask = variational::edge_mask(spec.nodes(), spec.lags);
  Var logits = p["graph.logits"];
  out.graph_sample = variational::sample_graph(logits, rng, opt.hard_graph, variational::kGumbelTemperature, &mask);
  Var latent = scm::latent_loglik(spec.scm, p, spec.scm_shape(), enc.z, out.graph_sample, opt.residual_scale, &out.residuals);
  Var ent_z = variational::gaussian_entropy(enc.logvar);
  Var kl_f = variational::factor_kl(p);

  out.recon = opt.sample_weight * recon_ll.value()[0];
  out.latent = opt.sample_weight * latent.value()[0];
  out.entropy_z = opt.sample_weight * ent_z.value()[0];
  out.kl_f = kl_f.value()[0];
  Var total = ad::scale(recon_ll + latent + ent_z, opt.sample_weight) - kl_f;
  if (opt.include_graph_terms) {
    Var ent_g = variational::graph_entropy(logits, &mask);
    Var prior = scm::graph_prior_logp(out.graph_sample, opt.sparsity_alpha, 0.0);
    out.entropy_g = ent_g.value()[0];
    out.prior = prior.value()[0];
    total = total + ent_g + prior;
  }
  out.total = total;
  out.latent_mean = enc.mean;
  return out;
}

}  // namespace spacy::trainer
