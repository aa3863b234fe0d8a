#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>

#include "doctest.h"
#include "param_fd.hpp"
#include "spacy/scm/acyclicity.hpp"
#include "spacy/synthgen/generator.hpp"
#include "spacy/trainer/train.hpp"
#include "spacy/variational/posteriors.hpp"

using namespace spacy;
using namespace spacy::trainer;
using ad::Tape;
using ad::Tensor;
using ad::Var;

namespace {

const double kLog2Pi = std::log(2 * std::numbers::pi);

Dataset toy_dataset(std::size_t nodes, std::size_t rows, std::size_t samples, std::size_t length, std::uint64_t seed) {
  synthgen::GenConfig g;
  g.variate_nodes = {nodes};
  g.lags = 1;
  g.rows = g.cols = rows;
  g.samples = samples;
  g.length = length;
  g.burn_in = 10;
  g.inst_edge_multiplier = 0.5;
  g.lag_edge_multiplier = 1;
  g.min_center_distance = 0.2;
  g.seed = seed;
  auto gt = synthgen::generate_dataset(g);
  return {gt.observations, gt.grid};
}

TrainConfig toy_config() {
  TrainConfig c;
  c.nodes = {2};
  c.lags = 1;
  c.batch_size = 3;
  c.inner_auglag = 5;
  c.outer_auglag = 4;
  c.freeze_epochs = 1;
  c.eval_every = 5;
  c.scm_embed = 8;
  c.decoder_embed = 4;
  return c;
}

bool same_bits(const ad::ParamSet& a, const ad::ParamSet& b, ad::ParamGroup group) {
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a.entries()[i].group != group) continue;
    const auto& x = a.entries()[i].value.data();
    const auto& y = b.entries()[i].value.data();
    if (x.size() != y.size() || std::memcmp(x.data(), y.data(), x.size() * sizeof(double)) != 0) return false;
  }
  return true;
}

ModelSpec spec_for(std::vector<std::size_t> nodes, std::size_t rows, bool linear_decoder) {
  ModelSpec s;
  s.variate_nodes = std::move(nodes);
  s.lags = 1;
  s.grid = spatial::GridSpec::euclidean(rows, rows);
  s.linear_decoder = linear_decoder;
  s.decoder_embed = 4;
  s.scm_embed = 8;
  return s;
}

}  // namespace

TEST_CASE("linear decode with a column of ones copies the series") {
  ModelSpec s = spec_for({1}, 2, true);
  ad::ParamSet ps;
  Tape tape;
  ad::BoundParams p(tape, ps);
  Tensor z({1, 3, 1}, std::vector<double>{0.5, -1.0, 2.0});
  Var out = decode(p, s, tape.constant(z), tape.constant(Tensor({4, 1}, 1.0)));
  CHECK(out.shape() == ad::Shape{1, 1, 4, 3});
  for (std::size_t l = 0; l < 4; ++l)
    for (std::size_t t = 0; t < 3; ++t) CHECK(out.value()[l * 3 + t] == z[t]);
}

TEST_CASE("linear decode matches an explicit loop per variate block") {
  ModelSpec s = spec_for({2, 1}, 2, true);
  Rng rng(3);
  const Tensor z = normal_tensor({2, 4, 3}, rng), f = normal_tensor({4, 3}, rng);
  ad::ParamSet ps;
  Tape tape;
  ad::BoundParams p(tape, ps);
  const Tensor out = decode(p, s, tape.constant(z), tape.constant(f)).value();
  const std::size_t blocks[2][2] = {{0, 2}, {2, 3}};
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t v = 0; v < 2; ++v)
      for (std::size_t l = 0; l < 4; ++l)
        for (std::size_t t = 0; t < 4; ++t) {
          double acc = 0;
          for (std::size_t d = blocks[v][0]; d < blocks[v][1]; ++d) acc += f[l * 3 + d] * z[(b * 4 + t) * 3 + d];
          CHECK(out[((b * 2 + v) * 4 + l) * 4 + t] == doctest::Approx(acc).epsilon(1e-14));
        }
}

TEST_CASE("nonlinear decode is shared across points with equal embeddings") {
  ModelSpec s = spec_for({2}, 2, false);
  Rng rng(5);
  ad::ParamSet ps = init_model(s, normal_tensor({3, 1, 4, 5}, rng), rng);
  Tensor& emb = ps["decoder.embed"];
  for (std::size_t k = 0; k < 4; ++k) emb[1 * 4 + k] = emb[k];  // point 1 copies point 0
  Tensor f = normal_tensor({4, 2}, rng);
  f[2] = f[0];
  f[3] = f[1];
  Tape tape;
  ad::BoundParams p(tape, ps);
  const Tensor out = decode(p, s, tape.constant(normal_tensor({1, 5, 2}, rng)), tape.constant(f)).value();
  for (std::size_t t = 0; t < 5; ++t) CHECK(out[t] == out[5 + t]);
  bool differs = false;
  for (std::size_t t = 0; t < 5; ++t) differs = differs || out[t] != out[10 + t];
  CHECK(differs);
}

TEST_CASE("perfect reconstruction with unit noise gives the Gaussian constant") {
  ModelSpec s = spec_for({1, 1}, 3, true);
  Rng rng(1);
  ad::ParamSet ps = init_model(s, normal_tensor({2, 2, 9, 4}, rng), rng);
  ps["decoder.obs_logvar"].fill(0.0);
  const Tensor x = normal_tensor({2, 2, 9, 4}, rng);
  Tape tape;
  ad::BoundParams p(tape, ps);
  const double ll = reconstruction_loglik(p, s, x, tape.constant(x)).value()[0];
  CHECK(ll == doctest::Approx(2 * -0.5 * 2 * 9 * 4 * kLog2Pi).epsilon(1e-12));
}

TEST_CASE("elbo terms agree with module-level closed forms") {
  ModelSpec s = spec_for({2}, 3, true);
  Rng rng(2);
  const Tensor x = normal_tensor({3, 1, 9, 6}, rng);
  ad::ParamSet ps = init_model(s, x, rng);
  ps["graph.logits"] = normal_tensor({2, 2, 2}, rng);
  Tape tape;
  ad::BoundParams p(tape, ps);
  ElboOptions opt;
  opt.sample_weight = 2.5;
  const ElboTerms t = elbo(p, s, x, rng, opt);
  const Tensor mask = variational::edge_mask(2, 1);
  CHECK(t.entropy_g == doctest::Approx(variational::graph_entropy(p["graph.logits"], &mask).value()[0]).epsilon(1e-14));
  CHECK(t.kl_f == doctest::Approx(variational::factor_kl(p).value()[0]).epsilon(1e-14));
  CHECK(t.prior == doctest::Approx(scm::graph_prior_logp(t.graph_sample, 10.0, 0.0).value()[0]).epsilon(1e-14));
  const double sum = t.recon + t.latent + t.entropy_z + t.entropy_g + t.prior - t.kl_f;
  CHECK(t.total.value()[0] == doctest::Approx(sum).epsilon(1e-12));
  for (double v : t.graph_sample.value().data()) CHECK((v == 0.0 || v == 1.0));

  Tape tape2;
  ad::BoundParams p2(tape2, ps);
  opt.include_graph_terms = false;
  const ElboTerms frozen = elbo(p2, s, x, rng, opt);
  CHECK(frozen.entropy_g == 0.0);
  CHECK(frozen.prior == 0.0);
}

TEST_CASE("full elbo gradient matches finite differences on a toy model") {
  struct Case {
    scm::ScmKind scm;
    bool linear_decoder;
  };
  for (Case c : {Case{scm::ScmKind::kLinear, true}, Case{scm::ScmKind::kNonlinear, false}}) {
    ModelSpec s = spec_for({2}, 4, c.linear_decoder);
    s.scm = c.scm;
    s.lags = 1;
    Rng rng(11);
    const Tensor x = normal_tensor({2, 1, 16, 6}, rng);
    ad::ParamSet ps = init_model(s, x, rng);
    ps["graph.logits"] = normal_tensor({2, 2, 2}, rng);
    for (auto& e : ps.entries())
      if (e.name.starts_with("scm.") && c.scm == scm::ScmKind::kLinear) e.value = normal_tensor(e.value.shape(), rng, 0.0, 0.3);
    const scm::ResidualScale rs{{0.1, -0.2}, {1.3, 0.8}};
    ElboOptions opt;
    opt.hard_graph = false;
    opt.sample_weight = 1.7;
    opt.residual_scale = &rs;
    std::vector<std::string> names;
    for (const auto& e : ps.entries()) names.push_back(e.name);
    // Elementwise central differences bottom out near eps*|elbo|/step ~ 1e-8
    // here, so small entries are compared through random directions.
    const double err = testing::param_fd_directional_error(ps, names, [&](Tape&, const ad::BoundParams& p) {
      Rng r(99);
      return elbo(p, s, x, r, opt).total;
    });
    CHECK(err < 1e-4);
  }
}

TEST_CASE("elbo stays below the log evidence of a one-node model") {
  // D=1, lags=1, T=2, F and G fixed: log p(X | F, G) is a 2-D Gaussian
  // integral over (z0, z1) with a flat prior on z0, done by quadrature.
  ModelSpec s = spec_for({1}, 1, true);
  s.grid = spatial::GridSpec::euclidean(1, 2);
  Rng rng(4);
  const Tensor x({1, 1, 2, 2}, std::vector<double>{0.3, -0.4, 0.1, 0.2});
  ad::ParamSet ps = init_model(s, x, rng);
  ps["graph.logits"] = Tensor({2, 1, 1}, std::vector<double>{0.0, 40.0});
  ps["scm.weight"] = Tensor({2, 1, 1}, std::vector<double>{0.0, 0.5});
  ps["scm.noise_logvar"].fill(std::log(0.5));
  ps["decoder.obs_logvar"].fill(std::log(0.2));
  ps["factor.center_logvar"].fill(-60);
  ps["factor.scale_logvar"].fill(-60);
  ps["factor.scale_mean"].fill(std::log(0.5));

  Tensor f;
  {
    Tape tape;
    ad::BoundParams p(tape, ps);
    f = variational::mean_factor(p, s.grid, s.kernel).value();
  }
  const double w = 0.5, q = 0.5, r = 0.2;
  auto log_lik = [&](double z0, double z1) {
    double acc = -0.5 * (z1 - w * z0) * (z1 - w * z0) / q - 0.5 * std::log(2 * std::numbers::pi * q);
    for (std::size_t l = 0; l < 2; ++l)
      for (std::size_t t = 0; t < 2; ++t) {
        const double e = x[l * 2 + t] - f[l] * (t == 0 ? z0 : z1);
        acc += -0.5 * e * e / r - 0.5 * std::log(2 * std::numbers::pi * r);
      }
    return acc;
  };
  const double lo = -40, hi = 40, h = 0.05;
  const int n = static_cast<int>((hi - lo) / h);
  double peak = -1e300;
  for (int i = 0; i <= n; ++i)
    for (int j = 0; j <= n; ++j) peak = std::max(peak, log_lik(lo + i * h, lo + j * h));
  double acc = 0;
  for (int i = 0; i <= n; ++i)
    for (int j = 0; j <= n; ++j) acc += std::exp(log_lik(lo + i * h, lo + j * h) - peak);
  const double log_evidence = peak + std::log(acc * h * h);

  std::vector<double> draws;
  for (int k = 0; k < 4000; ++k) {
    Tape tape;
    ad::BoundParams p(tape, ps);
    ElboOptions opt;
    opt.include_graph_terms = false;
    const ElboTerms t = elbo(p, s, x, rng, opt);
    draws.push_back(t.recon + t.latent + t.entropy_z);
  }
  double m = 0, v = 0;
  for (double d : draws) m += d;
  m /= static_cast<double>(draws.size());
  for (double d : draws) v += (d - m) * (d - m);
  const double se = std::sqrt(v / static_cast<double>(draws.size() - 1) / static_cast<double>(draws.size()));
  CHECK(m <= log_evidence + 3 * se);
}

TEST_CASE("zero learning rates leave every parameter unchanged") {
  Dataset d = toy_dataset(2, 3, 8, 6, 1);
  TrainConfig c = toy_config();
  c.lr_matrix = c.lr_scm = c.lr_encoder = c.lr_factor = c.lr_decoder = 0.0;
  RunState st = init_run(d, c);
  const ad::ParamSet before = st.params;
  train(st, d, 25);
  CHECK(st.step == 20);
  for (auto g : {ad::ParamGroup::kGraph, ad::ParamGroup::kScm, ad::ParamGroup::kEncoder, ad::ParamGroup::kFactor, ad::ParamGroup::kDecoder})
    CHECK(same_bits(before, st.params, g));
}

TEST_CASE("graph and scm parameters are bitwise constant during the freeze window") {
  Dataset d = toy_dataset(2, 3, 8, 6, 2);
  TrainConfig c = toy_config();
  c.freeze_epochs = 6;  // 6 epochs of 2 steps beats 2 outer steps of 5
  RunState st = init_run(d, c);
  CHECK(st.freeze_steps() == 12);
  const ad::ParamSet before = st.params;
  train(st, d, 12);
  CHECK(same_bits(before, st.params, ad::ParamGroup::kGraph));
  CHECK(same_bits(before, st.params, ad::ParamGroup::kScm));
  CHECK_FALSE(same_bits(before, st.params, ad::ParamGroup::kEncoder));
  for (const auto& row : st.log) CHECK(row.frozen);
  train(st, d, 1);
  CHECK_FALSE(st.log.back().frozen);
  CHECK_FALSE(same_bits(before, st.params, ad::ParamGroup::kGraph));
}

TEST_CASE("auglag penalty never decreases across outer steps") {
  Dataset d = toy_dataset(2, 3, 8, 6, 3);
  TrainConfig c = toy_config();
  c.outer_auglag = 8;
  c.lr_matrix = 0.05;
  RunState st = init_run(d, c);
  train(st, d);
  CHECK(st.finished);
  CHECK(st.outer == 8);
  for (std::size_t i = 1; i < st.log.size(); ++i) CHECK(st.log[i].penalty_c >= st.log[i - 1].penalty_c);
  CHECK(st.penalty_c > 0);
}

TEST_CASE("a fixed seed reproduces the training log bitwise") {
  Dataset d = toy_dataset(2, 3, 8, 6, 4);
  TrainConfig c = toy_config();
  c.scm = "nonlinear";
  RunState a = init_run(d, c), b = init_run(d, c);
  train(a, d, 30);
  train(b, d, 30);
  REQUIRE(a.log.size() == b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    CHECK(std::memcmp(&a.log[i].elbo, &b.log[i].elbo, sizeof(double)) == 0);
    CHECK(std::memcmp(&a.log[i].h, &b.log[i].h, sizeof(double)) == 0);
  }
  for (auto g : {ad::ParamGroup::kGraph, ad::ParamGroup::kScm, ad::ParamGroup::kEncoder, ad::ParamGroup::kFactor, ad::ParamGroup::kDecoder})
    CHECK(same_bits(a.params, b.params, g));
}

TEST_CASE("training is resumable in chunks") {
  Dataset d = toy_dataset(2, 3, 8, 6, 5);
  TrainConfig c = toy_config();
  RunState a = init_run(d, c), b = init_run(d, c);
  train(a, d, 18);
  for (int i = 0; i < 6; ++i) train(b, d, 3);
  CHECK(same_bits(a.params, b.params, ad::ParamGroup::kEncoder));
  CHECK(a.log.back().elbo == b.log.back().elbo);
}

TEST_CASE("training configuration validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.precision = "float32";
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.spline = "linear";
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.lr_factor = -1e-3;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.freeze_epochs = 60 * 6000;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.sparsity_alpha = -1;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("extract_graph examples") {
  Tensor logits({3, 4, 4}, -10.0);
  ad::ParamSet ps;
  ps.add("graph.logits", ad::ParamGroup::kGraph, logits);
  CHECK(extract_graph(edge_probabilities(ps), 0.5).edge_count() == 0);

  Tensor probs({1, 2, 2}, 0.0);
  probs[0 * 2 + 1] = 0.9;  // 0 -> 1
  probs[1 * 2 + 0] = 0.6;  // 1 -> 0
  const scm::TemporalGraph g = extract_graph(probs, 0.5);
  CHECK(g.edge(0, 0, 1));
  CHECK_FALSE(g.edge(0, 1, 0));
  CHECK_THROWS_AS(extract_graph(probs, 1.0), std::invalid_argument);
}

TEST_CASE("extract_graph always returns an instantaneous DAG") {
  Rng rng(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d = 2 + trial % 6;
    Tensor probs({3, d, d});
    for (double& v : probs.data()) v = u(rng);
    const scm::TemporalGraph g = extract_graph(probs, 0.3);
    CHECK(g.instantaneous_acyclic());
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<long>(d), static_cast<long>(d));
    for (std::size_t k = 0; k < 3; ++k)
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) {
          if (g.edge(k, i, j)) CHECK(probs[(k * d + i) * d + j] > 0.3);
          if (k > 0) CHECK(g.edge(k, i, j) == (probs[(k * d + i) * d + j] > 0.3));
          if (k == 0 && g.edge(0, i, j)) m(static_cast<long>(i), static_cast<long>(j)) = 1;
        }
    CHECK(scm::acyclicity(m) < 1e-8);
  }
}

TEST_CASE("infer_latents returns encoder means for every sample") {
  Dataset d = toy_dataset(2, 3, 5, 6, 6);
  RunState st = init_run(d, toy_config());
  const Tensor z = infer_latents(st, d.observations, 2);
  CHECK(z.shape() == ad::Shape{5, 6, 2});
  const Tensor z2 = infer_latents(st, d.observations, 5);
  CHECK(std::memcmp(z.data().data(), z2.data().data(), z.size() * sizeof(double)) == 0);
}

TEST_CASE("init_run rejects inconsistent data") {
  Dataset d = toy_dataset(2, 3, 5, 6, 7);
  TrainConfig c = toy_config();
  c.nodes = {1, 1};
  CHECK_THROWS_AS(init_run(d, c), std::invalid_argument);
  c = toy_config();
  c.lags = 6;
  CHECK_THROWS_AS(init_run(d, c), std::invalid_argument);
}
