#include "spacy/trainer/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace spacy::trainer {
namespace {

using ad::Tensor;
using ad::Var;

constexpr double kResidualMomentum = 0.01;

Tensor gather_samples(const Tensor& x, const std::size_t* idx, std::size_t count) {
  ad::Shape s = x.shape();
  const std::size_t stride = x.size() / s[0];
  s[0] = count;
  Tensor out(s);
  for (std::size_t i = 0; i < count; ++i)
    std::copy_n(x.data().data() + idx[i] * stride, stride, out.data().data() + i * stride);
  return out;
}

std::size_t effective_batch(const RunState& st) { return std::min(st.config.batch_size, st.train_index.size()); }

std::vector<std::size_t> next_batch(RunState& st) {
  const std::size_t b = effective_batch(st);
  if (st.epoch_order.empty() || st.epoch_cursor + b > st.epoch_order.size()) {
    st.epoch_order = st.train_index;
    std::shuffle(st.epoch_order.begin(), st.epoch_order.end(), st.rng);
    st.epoch_cursor = 0;
  }
  std::vector<std::size_t> out(st.epoch_order.begin() + static_cast<std::ptrdiff_t>(st.epoch_cursor),
                               st.epoch_order.begin() + static_cast<std::ptrdiff_t>(st.epoch_cursor + b));
  st.epoch_cursor += b;
  return out;
}

bool trainable(ad::ParamGroup g, bool frozen) { return !frozen || (g != ad::ParamGroup::kGraph && g != ad::ParamGroup::kScm); }

void update_residual_scale(scm::ResidualScale& rs, const Tensor& u, bool first) {
  const std::size_t d = u.dim(2), n = u.size() / d;
  for (std::size_t j = 0; j < d; ++j) {
    double s = 0, s2 = 0;
    for (std::size_t i = 0; i < n; ++i) {
      s += u[i * d + j];
      s2 += u[i * d + j] * u[i * d + j];
    }
    const double m = s / static_cast<double>(n);
    const double sd = std::sqrt(std::max(s2 / static_cast<double>(n) - m * m, 1e-8));
    const double w = first ? 1.0 : kResidualMomentum;
    rs.mean[j] = (1 - w) * rs.mean[j] + w * m;
    rs.scale[j] = (1 - w) * rs.scale[j] + w * sd;
  }
}

double current_h(const RunState& st) {
  ad::Tape tape;
  ad::BoundParams p(tape, st.params, [](ad::ParamGroup) { return false; });
  return graph_acyclicity(p, st.spec).value()[0];
}

void finish_outer(RunState& st) {
  if (st.step > st.freeze_steps()) {
    const double h = current_h(st);
    if (h > 0.9 * st.h_prev)
      st.penalty_c *= 10;
    else
      st.lambda_al += st.penalty_c * h;
    st.h_prev = h;
  }
  ++st.outer;
  st.inner = 0;
  st.inner_best = -std::numeric_limits<double>::infinity();
  st.inner_best_step = st.step;
  if (st.outer >= st.config.outer_auglag) st.finished = true;
}

}  // namespace

void TrainConfig::validate() const {
  for (double r : {lr_matrix, lr_scm, lr_encoder, lr_factor, lr_decoder})
    if (!(r >= 0) || !std::isfinite(r)) throw std::invalid_argument("learning rates must be finite and non-negative");
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (outer_auglag == 0 || inner_auglag == 0) throw std::invalid_argument("auglag step counts must be positive");
  if (scm_embed == 0 || decoder_embed == 0) throw std::invalid_argument("embedding dims must be positive");
  if (!(sparsity_alpha >= 0)) throw std::invalid_argument("sparsity_alpha must be non-negative");
  if (spline != "quadratic") throw std::invalid_argument("spline must be \"quadratic\"");
  if (precision != "float64") throw std::invalid_argument("precision must be \"float64\"");
  if (nodes.empty()) throw std::invalid_argument("nodes must list at least one variate");
  for (auto d : nodes)
    if (d == 0) throw std::invalid_argument("node counts must be positive");
  if (lags == 0) throw std::invalid_argument("lags must be at least 1");
  spatial::kernel_from_name(kernel);
  scm::scm_from_name(scm);
  if (decoder != "linear" && decoder != "nonlinear") throw std::invalid_argument("decoder must be \"linear\" or \"nonlinear\"");
  if (!(validation_fraction >= 0 && validation_fraction < 1)) throw std::invalid_argument("validation_fraction must lie in [0,1)");
  if (!(plateau_tol >= 0)) throw std::invalid_argument("plateau_tol must be non-negative");
  if (!(threshold > 0 && threshold < 1)) throw std::invalid_argument("threshold must lie in (0,1)");
  if (!std::isfinite(init_log_scale)) throw std::invalid_argument("init_log_scale must be finite");
  if (freeze_epochs >= outer_auglag * inner_auglag) throw std::invalid_argument("freeze_epochs must be below the total step budget");
}

ModelSpec make_model_spec(const TrainConfig& cfg, const spatial::GridSpec& grid) {
  ModelSpec s;
  s.variate_nodes = cfg.nodes;
  s.lags = cfg.lags;
  s.grid = grid;
  s.kernel = spatial::kernel_from_name(cfg.kernel);
  s.scm = scm::scm_from_name(cfg.scm);
  s.linear_decoder = cfg.decoder == "linear";
  s.scm_embed = cfg.scm_embed;
  s.decoder_embed = cfg.decoder_embed;
  s.per_point_noise = cfg.per_point_noise;
  s.init_log_scale = cfg.init_log_scale;
  s.validate();
  return s;
}

void write_log_header(std::ostream& os) {
  os << "step,outer,frozen,elbo,recon,latent,entropy_z,entropy_g,prior,kl_f,h,c,lambda_al,val_elbo\n";
}

void write_log_row(std::ostream& os, const LogRow& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%zu,%zu,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,", r.step, r.outer,
                r.frozen ? 1 : 0, r.elbo, r.recon, r.latent, r.entropy_z, r.entropy_g, r.prior, r.kl_f, r.h, r.penalty_c,
                r.lambda_al);
  os << buf;
  if (!std::isnan(r.val_elbo)) {
    std::snprintf(buf, sizeof buf, "%.17g", r.val_elbo);
    os << buf;
  }
  os << '\n';
}

std::size_t RunState::freeze_steps() const {
  const std::size_t b = std::min(config.batch_size, train_index.size());
  const std::size_t per_epoch = std::max<std::size_t>(1, train_index.size() / std::max<std::size_t>(b, 1));
  return std::max(config.freeze_epochs * per_epoch, 2 * config.inner_auglag);
}

Adam make_optimizer(const TrainConfig& cfg) {
  return Adam({{ad::ParamGroup::kGraph, cfg.lr_matrix},
               {ad::ParamGroup::kScm, cfg.lr_scm},
               {ad::ParamGroup::kEncoder, cfg.lr_encoder},
               {ad::ParamGroup::kFactor, cfg.lr_factor},
               {ad::ParamGroup::kDecoder, cfg.lr_decoder}});
}

RunState init_run(const Dataset& data, const TrainConfig& cfg) {
  cfg.validate();
  const Tensor& x = data.observations;
  if (x.rank() != 4) throw std::invalid_argument("observations must be (N, V, L, T)");
  RunState st;
  st.config = cfg;
  st.spec = make_model_spec(cfg, data.grid);
  if (x.dim(1) != st.spec.variates()) throw std::invalid_argument("observation variates differ from the configured node partition");
  if (x.dim(2) != data.grid.size()) throw std::invalid_argument("observation grid size differs from the grid");
  if (x.dim(3) <= cfg.lags) throw std::invalid_argument("series length must exceed lags");

  const std::size_t n = x.dim(0);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng split = substream(cfg.seed, 1);
  std::shuffle(perm.begin(), perm.end(), split);
  std::size_t n_val = static_cast<std::size_t>(std::floor(cfg.validation_fraction * static_cast<double>(n)));
  if (n_val >= n) n_val = n - 1;
  st.train_index.assign(perm.begin(), perm.end() - static_cast<std::ptrdiff_t>(n_val));
  st.val_index.assign(perm.end() - static_cast<std::ptrdiff_t>(n_val), perm.end());
  std::sort(st.train_index.begin(), st.train_index.end());
  std::sort(st.val_index.begin(), st.val_index.end());

  Rng init = substream(cfg.seed, 2);
  st.params = init_model(st.spec, gather_samples(x, st.train_index.data(), st.train_index.size()), init);
  st.adam = make_optimizer(cfg);
  st.residual_scale = scm::ResidualScale::unit(st.spec.nodes());
  st.rng = substream(cfg.seed, 0);
  return st;
}

double validation_elbo(const RunState& st, const Dataset& data) {
  const std::vector<std::size_t>& idx = st.val_index.empty() ? st.train_index : st.val_index;
  Rng rng = substream(st.config.seed, 3);
  const std::size_t chunk = std::max<std::size_t>(1, std::min(st.config.batch_size, idx.size()));
  double per_sample = 0, global = 0;
  for (std::size_t off = 0; off < idx.size(); off += chunk) {
    const std::size_t count = std::min(chunk, idx.size() - off);
    ad::Tape tape;
    ad::BoundParams p(tape, st.params, [](ad::ParamGroup) { return false; });
    ElboOptions opt;
    opt.sparsity_alpha = st.config.sparsity_alpha;
    opt.decoder_points = st.config.decoder_points;
    opt.residual_scale = &st.residual_scale;
    ElboTerms t = elbo(p, st.spec, gather_samples(data.observations, idx.data() + off, count), rng, opt);
    per_sample += t.recon + t.latent + t.entropy_z;
    global = t.entropy_g + t.prior - t.kl_f;
  }
  return (per_sample + global) / static_cast<double>(idx.size());
}

void train(RunState& st, const Dataset& data, std::size_t steps, const TrainHooks& hooks) {
  const TrainConfig& cfg = st.config;
  const Tensor& x = data.observations;
  const double ntr = static_cast<double>(st.train_index.size());
  const double norm = 1.0 / (ntr * static_cast<double>(x.dim(1) * x.dim(2) * x.dim(3)));
  const std::size_t freeze = st.freeze_steps();
  std::size_t done = 0;
  while (!st.finished) {
    if (cfg.max_steps && st.step >= cfg.max_steps) {
      st.finished = true;
      break;
    }
    if (steps && done >= steps) break;
    const bool frozen = st.step < freeze;
    const std::vector<std::size_t> batch = next_batch(st);
    const Tensor xb = gather_samples(x, batch.data(), batch.size());

    ad::Tape tape;
    auto filter = [frozen](ad::ParamGroup g) { return trainable(g, frozen); };
    ad::BoundParams p(tape, st.params, filter);
    ElboOptions opt;
    opt.sparsity_alpha = cfg.sparsity_alpha;
    opt.include_graph_terms = !frozen;
    opt.sample_weight = ntr / static_cast<double>(batch.size());
    opt.decoder_points = cfg.decoder_points;
    opt.residual_scale = st.spec.scm == scm::ScmKind::kNonlinear ? &st.residual_scale : nullptr;
    ElboTerms terms = elbo(p, st.spec, xb, st.rng, opt);

    Var h = graph_acyclicity(p, st.spec);
    Var loss = -terms.total;
    if (!frozen) loss = loss + st.lambda_al * h + (0.5 * st.penalty_c) * ad::square(h);
    loss = ad::scale(loss, norm);
    const double elbo_value = terms.total.value()[0];
    if (!std::isfinite(loss.value()[0]))
      throw TrainingDiverged("non-finite objective at step " + std::to_string(st.step) + " (elbo " + std::to_string(elbo_value) +
                             ", recon " + std::to_string(terms.recon) + ", latent " + std::to_string(terms.latent) + ")");
    tape.backward(loss);
    std::vector<Tensor> grads = p.gradients();
    std::vector<bool> active(st.params.size());
    for (std::size_t i = 0; i < active.size(); ++i) {
      active[i] = filter(st.params.entries()[i].group);
      for (double g : grads[i].data())
        if (!std::isfinite(g))
          throw TrainingDiverged("non-finite gradient for '" + st.params.entries()[i].name + "' at step " + std::to_string(st.step));
    }
    st.adam.step(st.params, grads, active);
    if (st.spec.scm == scm::ScmKind::kNonlinear) update_residual_scale(st.residual_scale, terms.residuals.value(), st.step == 0);

    LogRow row{st.step, st.outer, frozen, elbo_value, terms.recon, terms.latent, terms.entropy_z, terms.entropy_g, terms.prior,
               terms.kl_f, h.value()[0], st.penalty_c, st.lambda_al};
    ++st.step;
    ++st.inner;
    ++done;
    bool plateau = false;
    if (!frozen && cfg.eval_every && st.step % cfg.eval_every == 0) {
      const double val = validation_elbo(st, data);
      row.val_elbo = val;
      if (val > st.best_val) {
        st.best_val = val;
        st.best_params = st.params;
      }
      if (!std::isfinite(st.inner_best) || val > st.inner_best + cfg.plateau_tol * std::abs(st.inner_best)) {
        st.inner_best = val;
        st.inner_best_step = st.step;
      } else if (st.step - st.inner_best_step >= cfg.plateau_steps) {
        plateau = true;
      }
    }
    st.log.push_back(row);
    if (hooks.on_step) hooks.on_step(row);
    if (plateau || st.inner >= cfg.inner_auglag) finish_outer(st);
  }
}

Tensor edge_probabilities(const ad::ParamSet& params) {
  const Tensor& logits = params["graph.logits"];
  Tensor p = Tensor::like(logits);
  const std::size_t d = logits.dim(1);
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = 1.0 / (1.0 + std::exp(-logits[i]));
  for (std::size_t j = 0; j < d; ++j) p[j * d + j] = 0.0;
  return p;
}

scm::TemporalGraph extract_graph(const Tensor& probs, double threshold) {
  if (!(threshold > 0 && threshold < 1)) throw std::invalid_argument("threshold must lie in (0,1)");
  if (probs.rank() != 3 || probs.dim(1) != probs.dim(2)) throw std::invalid_argument("probabilities must be (lags+1, D, D)");
  const std::size_t d = probs.dim(1);
  scm::TemporalGraph g(d, probs.dim(0) - 1);
  for (std::size_t k = 0; k < probs.dim(0); ++k)
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j)
        if (probs[(k * d + i) * d + j] > threshold && !(k == 0 && i == j)) g.set_edge(k, i, j);
  auto reaches = [&](std::size_t from, std::size_t to) {
    std::vector<char> seen(d, 0);
    std::vector<std::size_t> stack{from};
    while (!stack.empty()) {
      const std::size_t u = stack.back();
      stack.pop_back();
      if (u == to) return true;
      if (seen[u]) continue;
      seen[u] = 1;
      for (std::size_t w = 0; w < d; ++w)
        if (g.edge(0, u, w)) stack.push_back(w);
    }
    return false;
  };
  while (!g.instantaneous_acyclic()) {
    double lowest = 2.0;
    std::size_t bi = 0, bj = 0;
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j)
        if (g.edge(0, i, j) && probs[i * d + j] < lowest && reaches(j, i)) {
          lowest = probs[i * d + j];
          bi = i;
          bj = j;
        }
    g.set_edge(0, bi, bj, false);
  }
  return g;
}

scm::TemporalGraph extract_graph(const RunState& st, double threshold) { return extract_graph(edge_probabilities(st.params), threshold); }

Tensor infer_latents(const RunState& st, const Tensor& x, std::size_t chunk) {
  const std::size_t n = x.dim(0), t = x.dim(3), d = st.spec.nodes();
  Tensor out({n, t, d});
  Rng unused(0);
  for (std::size_t off = 0; off < n; off += chunk) {
    const std::size_t count = std::min(chunk, n - off);
    std::vector<std::size_t> idx(count);
    std::iota(idx.begin(), idx.end(), off);
    ad::Tape tape;
    ad::BoundParams p(tape, st.params, [](ad::ParamGroup) { return false; });
    auto enc = variational::encode_latents(p, tape.constant(gather_samples(x, idx.data(), count)), st.spec.variate_nodes, unused);
    std::copy_n(enc.mean.value().data().data(), count * t * d, out.data().data() + off * t * d);
  }
  return out;
}

}  // namespace spacy::trainer
