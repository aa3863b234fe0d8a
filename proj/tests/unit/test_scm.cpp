#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "doctest.h"
#include "spacy/autodiff/grad_check.hpp"
#include "spacy/scm/acyclicity.hpp"
#include "spacy/scm/graph.hpp"
#include "spacy/scm/model.hpp"
#include "param_fd.hpp"

using namespace spacy;
using namespace spacy::scm;
using ad::Tape;
using ad::Tensor;
using ad::Var;

namespace {

const double kLog2Pi = std::log(2 * std::numbers::pi);

SplineParams random_spline(Rng& rng, double sd = 1.5) {
  SplineParams p;
  std::normal_distribution<double> n(0, sd);
  for (double& v : p.raw) v = n(rng);
  return p;
}

// Forward-map inverse by bisection on the monotone spline.
double bisect_inverse(double y, const SplineParams& p) {
  double lo = std::min(y, -p.bound) - 1, hi = std::max(y, p.bound) + 1;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (spline_forward(mid, p).value < y ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

ScmShape small_shape(std::size_t d, std::size_t lags) { return {d, lags, 4, 8}; }

Tensor random_graph(Rng& rng, std::size_t d, std::size_t lags, double p = 0.5) {
  Tensor g({lags + 1, d, d});
  std::bernoulli_distribution b(p);
  for (std::size_t k = 0; k <= lags; ++k)
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) g[(k * d + i) * d + j] = (k == 0 && i >= j) ? 0.0 : b(rng);
  return g;
}

}  // namespace

TEST_CASE("temporal graph bookkeeping") {
  TemporalGraph g(3, 2);
  g.set_edge(0, 0, 1);
  g.set_edge(0, 1, 2);
  g.set_edge(2, 2, 0);
  CHECK(g.edge_count() == 3);
  CHECK(g.edge_count(0) == 2);
  CHECK(g.instantaneous_acyclic());
  g.set_edge(0, 2, 0);
  CHECK_FALSE(g.instantaneous_acyclic());
  CHECK_THROWS_AS(g.validate(), std::invalid_argument);
  CHECK(TemporalGraph::from_tensor(g.to_tensor()) == g);
  Tensor bad({2, 3, 3});
  bad[4] = 0.5;
  CHECK_THROWS_AS(TemporalGraph::from_tensor(bad), std::invalid_argument);
  CHECK_THROWS_AS(g.edge(3, 0, 0), std::out_of_range);
}

TEST_CASE("topological order respects every edge") {
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d = 2 + trial % 7;
    std::vector<std::size_t> perm(d);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::uint8_t> adj(d * d, 0);
    std::bernoulli_distribution b(0.4);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = i + 1; j < d; ++j) adj[perm[i] * d + perm[j]] = b(rng);
    auto order = topological_order(adj, d);
    REQUIRE(order.has_value());
    std::vector<std::size_t> pos(d);
    for (std::size_t i = 0; i < d; ++i) pos[(*order)[i]] = i;
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j)
        if (adj[i * d + j]) CHECK(pos[i] < pos[j]);
  }
  CHECK_FALSE(is_dag({0, 1, 1, 0}, 2));
  CHECK_FALSE(is_dag({1}, 1));
}

TEST_CASE("linear_mean examples") {
  Tape tape;
  Var z = tape.constant(Tensor({1, 2, 1}, {2.0, 7.0}));
  Var g = tape.constant(Tensor({2, 1, 1}, {0.0, 1.0}));
  Var w = tape.constant(Tensor({2, 1, 1}, {3.0, 0.5}));
  CHECK(linear_mean(z, g, w).value()[0] == doctest::Approx(1.0));
  Var g0 = tape.constant(Tensor({2, 1, 1}));
  CHECK(linear_mean(z, g0, w).value()[0] == 0.0);
}

TEST_CASE("linear_mean matches explicit loops") {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t b = 2, t = 7, d = 2 + trial % 3, lags = 1 + trial % 3;
    Tensor zt = normal_tensor({b, t, d}, rng);
    Tensor gt = trial % 2 ? Tensor({lags + 1, d, d}, 1.0) : random_graph(rng, d, lags);
    Tensor wt = normal_tensor({lags + 1, d, d}, rng);
    Tape tape;
    Tensor f = linear_mean(tape.constant(zt), tape.constant(gt), tape.constant(wt)).value();
    REQUIRE(f.shape() == ad::Shape{b, t - lags, d});
    for (std::size_t n = 0; n < b; ++n)
      for (std::size_t s = lags; s < t; ++s)
        for (std::size_t j = 0; j < d; ++j) {
          double ref = 0;
          for (std::size_t k = 0; k <= lags; ++k)
            for (std::size_t i = 0; i < d; ++i)
              ref += gt[(k * d + i) * d + j] * wt[(k * d + i) * d + j] * zt[(n * t + s - k) * d + i];
          CHECK(f[(n * (t - lags) + s - lags) * d + j] == doctest::Approx(ref).epsilon(1e-12));
        }
  }
}

TEST_CASE("nonlinear_mean with an empty graph is constant") {
  Rng rng(3);
  const ScmShape shape = small_shape(3, 2);
  ad::ParamSet ps;
  init_scm(ps, ScmKind::kNonlinear, shape, rng);
  // Identical embeddings make every node identical too.
  ps["scm.embed"].fill(0.25);
  Tape tape;
  ad::BoundParams p(tape, ps);
  Var z = tape.constant(normal_tensor({2, 6, 3}, rng));
  Tensor f = nonlinear_mean(p, shape, z, tape.constant(Tensor({3, 3, 3}))).value();
  for (double v : f.data()) {
    CHECK(std::isfinite(v));
    CHECK(v == doctest::Approx(f[0]).epsilon(1e-14));
  }
}

TEST_CASE("nonlinear_mean is equivariant under node relabeling") {
  Rng rng(4);
  const std::size_t d = 3, lags = 1, b = 2, t = 5;
  const ScmShape shape = small_shape(d, lags);
  ad::ParamSet ps;
  init_scm(ps, ScmKind::kNonlinear, shape, rng);
  const std::vector<std::size_t> perm{2, 0, 1};  // new node i is old node perm[i]
  Tensor zt = normal_tensor({b, t, d}, rng);
  Tensor gt = random_graph(rng, d, lags, 0.7);
  ad::ParamSet pp = ps;
  Tensor zp = zt, gp = gt;
  Tensor& emb = pp["scm.embed"];
  const Tensor& emb0 = ps["scm.embed"];
  for (std::size_t k = 0; k <= lags; ++k)
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t c = 0; c < shape.embed; ++c) emb[(k * d + i) * shape.embed + c] = emb0[(k * d + perm[i]) * shape.embed + c];
      for (std::size_t j = 0; j < d; ++j) gp[(k * d + i) * d + j] = gt[(k * d + perm[i]) * d + perm[j]];
    }
  for (std::size_t n = 0; n < b * t; ++n)
    for (std::size_t i = 0; i < d; ++i) zp[n * d + i] = zt[n * d + perm[i]];
  Tape tape;
  ad::BoundParams p(tape, ps), q(tape, pp);
  Tensor f = nonlinear_mean(p, shape, tape.constant(zt), tape.constant(gt)).value();
  Tensor fp = nonlinear_mean(q, shape, tape.constant(zp), tape.constant(gp)).value();
  for (std::size_t n = 0; n < b * (t - lags); ++n)
    for (std::size_t i = 0; i < d; ++i) CHECK(fp[n * d + i] == doctest::Approx(f[n * d + perm[i]]).epsilon(1e-10));
}

TEST_CASE("nonlinear_mean gradient wrt embeddings matches finite differences") {
  Rng rng(5);
  const ScmShape shape = small_shape(2, 1);
  ad::ParamSet ps;
  init_scm(ps, ScmKind::kNonlinear, shape, rng);
  Tensor zt = normal_tensor({1, 4, 2}, rng);
  Tensor gt({2, 2, 2}, {0, 1, 0, 0, 1, 1, 0, 1});
  const double err = testing::param_fd_error(ps, {"scm.embed"}, [&](Tape& tape, const ad::BoundParams& p) {
    return ad::sum(ad::square(nonlinear_mean(p, shape, tape.constant(zt), tape.constant(gt))));
  });
  CHECK(err < 1e-4);
}

TEST_CASE("identity spline is the identity with zero log-det") {
  const SplineParams id = SplineParams::identity();
  for (double x = -6; x <= 6; x += 0.01) {
    const auto f = spline_forward(x, id);
    CHECK(f.value == doctest::Approx(x).epsilon(1e-12));
    CHECK(std::abs(f.log_det) < 1e-12);
    const auto g = spline_inverse(x, id);
    CHECK(g.value == doctest::Approx(x).epsilon(1e-12));
    CHECK(std::abs(g.log_det) < 1e-12);
  }
}

TEST_CASE("spline tails are the identity") {
  Rng rng(6);
  const SplineParams p = random_spline(rng);
  for (double x : {-9.0, -5.0, 5.0, 7.5}) {
    CHECK(spline_forward(x, p).value == x);
    CHECK(spline_forward(x, p).log_det == 0.0);
    CHECK(spline_inverse(x, p).value == x);
  }
}

TEST_CASE("spline round trip, log-det antisymmetry and bisection agreement") {
  Rng rng(7);
  std::uniform_real_distribution<double> u(-5.5, 5.5);
  double worst = 0;
  for (int i = 0; i < 10000; ++i) {
    const SplineParams p = random_spline(rng);
    const double x = u(rng);
    const auto f = spline_forward(x, p);
    const auto g = spline_inverse(f.value, p);
    worst = std::max(worst, std::abs(g.value - x));
    CHECK(std::abs(f.log_det + g.log_det) < 1e-8);
    if (i < 300) CHECK(std::abs(spline_inverse(f.value, p).value - bisect_inverse(f.value, p)) < 1e-6);
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("spline is strictly increasing and continuous") {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const SplineParams p = random_spline(rng, 2.5);
    double prev = spline_forward(-5.0, p).value;
    for (int i = 1; i <= 1000; ++i) {
      const double y = spline_forward(-5.0 + 10.0 * i / 1000, p).value;
      CHECK(y > prev);
      prev = y;
    }
    CHECK(spline_forward(5.0 - 1e-12, p).value == doctest::Approx(5.0).epsilon(1e-9));
  }
}

TEST_CASE("spline forward log-det matches finite differences") {
  Rng rng(9);
  std::uniform_real_distribution<double> u(-4.9, 4.9);
  for (int i = 0; i < 2000; ++i) {
    const SplineParams p = random_spline(rng);
    const double x = u(rng), h = 1e-6;
    const double fd = (spline_forward(x + h, p).value - spline_forward(x - h, p).value) / (2 * h);
    const double an = std::exp(spline_forward(x, p).log_det);
    CHECK(std::abs(fd - an) / an < 1e-4);
  }
}

TEST_CASE("spline rejects non-finite parameters") {
  SplineParams p = SplineParams::identity();
  p.raw[3] = std::nan("");
  CHECK_THROWS_AS(spline_forward(0.1, p), std::domain_error);
  CHECK_THROWS_AS(spline_inverse(std::numeric_limits<double>::infinity(), SplineParams::identity()), std::domain_error);
}

TEST_CASE("tape spline inverse matches scalar inverse") {
  Rng rng(10);
  const std::size_t n = 200;
  Tensor y({n}), raw({n, kSplineParams});
  std::uniform_real_distribution<double> u(-6, 6);
  std::vector<SplineParams> ps;
  for (std::size_t i = 0; i < n; ++i) {
    ps.push_back(random_spline(rng));
    y[i] = u(rng);
    for (std::size_t k = 0; k < kSplineParams; ++k) raw[i * kSplineParams + k] = ps.back().raw[k];
  }
  Tape tape;
  SplineVars out = spline_inverse(tape.constant(y), tape.constant(raw));
  for (std::size_t i = 0; i < n; ++i) {
    const auto ref = spline_inverse(y[i], ps[i]);
    CHECK(out.value.value()[i] == doctest::Approx(ref.value).epsilon(1e-10));
    CHECK(out.log_det.value()[i] == doctest::Approx(ref.log_det).epsilon(1e-9));
  }
}

TEST_CASE("tape spline inverse gradients match finite differences") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 6;
    Tensor y = uniform_tensor({n}, rng, -4.5, 4.5);
    if (trial % 4 == 0) y[0] = 5.7;  // one entry in the tail
    Tensor raw = normal_tensor({n, kSplineParams}, rng);
    Tensor w = uniform_tensor({n}, rng, 0.5, 1.5);
    auto fn = [&](Tape& tape, const std::vector<Var>& v) {
      SplineVars s = spline_inverse(v[0], v[1]);
      return ad::sum(ad::mul(s.value, tape.constant(w))) + ad::sum(s.log_det);
    };
    auto rep = ad::grad_check(fn, {y, raw});
    CHECK_MESSAGE(rep.passed, "max rel err " << rep.max_rel_error);
  }
}

TEST_CASE("acyclicity examples") {
  CHECK(acyclicity(Eigen::MatrixXd::Zero(4, 4)) == 0.0);
  Eigen::MatrixXd c(2, 2);
  c << 0, 1, 1, 0;
  // exp of an involution P: cosh(1) I + sinh(1) P.
  CHECK(acyclicity(c) == doctest::Approx(2 * std::cosh(1.0) - 2).epsilon(1e-12));
  CHECK(std::abs(acyclicity(c) - 1.086161) < 1e-6);
  double series = 0, term = 1;
  for (int k = 1; k < 30; ++k) {
    term /= k;
    if (k % 2 == 0) series += 2 * term;
  }
  CHECK(acyclicity(c) == doctest::Approx(series).epsilon(1e-12));
  Eigen::MatrixXd u = Eigen::MatrixXd::Zero(5, 5);
  for (int i = 0; i < 5; ++i)
    for (int j = i + 1; j < 5; ++j) u(i, j) = 0.3 * (i + j + 1);
  CHECK(std::abs(acyclicity(u)) < 1e-10);
}

TEST_CASE("expm agrees with Eigen's matrix exponential") {
  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const int d = 2 + trial % 10;
    Eigen::MatrixXd a(d, d);
    std::normal_distribution<double> n(0, trial < 25 ? 0.5 : 3.0);
    for (int i = 0; i < d * d; ++i) a.data()[i] = n(rng);
    const Eigen::MatrixXd ref = a.exp();
    CHECK((expm(a) - ref).norm() / ref.norm() < 1e-10);
  }
}

TEST_CASE("h vanishes on weighted DAGs and is positive on cycles") {
  Rng rng(13);
  std::uniform_real_distribution<double> wdist(0.1, 2.0);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d = 3 + trial % 6;
    std::vector<std::size_t> perm(d);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<int>(d), static_cast<int>(d));
    std::bernoulli_distribution b(0.5);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = i + 1; j < d; ++j)
        if (b(rng)) m(static_cast<int>(perm[i]), static_cast<int>(perm[j])) = wdist(rng);
    const double h = acyclicity(m);
    CHECK(std::abs(h) < 1e-10);
    std::vector<std::uint8_t> adj(d * d);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) adj[i * d + j] = m(static_cast<int>(i), static_cast<int>(j)) > 0.05;
    CHECK(is_dag(adj, d));
    m(static_cast<int>(perm[d - 1]), static_cast<int>(perm[0])) = 0.5;
    m(static_cast<int>(perm[0]), static_cast<int>(perm[d - 1])) = 0.5;
    CHECK(acyclicity(m) > 0);
  }
}

TEST_CASE("tape acyclicity value and gradient") {
  Rng rng(14);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t d = 2 + trial % 5;
    Tensor m = uniform_tensor({d, d}, rng, -1.0, 1.0);
    Tape tape;
    Var h = acyclicity(tape.leaf(m));
    Eigen::MatrixXd em(d, d);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) em(static_cast<int>(i), static_cast<int>(j)) = m[i * d + j];
    CHECK(h.value()[0] == doctest::Approx(acyclicity(em)).epsilon(1e-12));
    auto rep = ad::grad_check([](Tape&, const std::vector<Var>& v) { return acyclicity(v[0]); }, {m});
    CHECK_MESSAGE(rep.passed, "max rel err " << rep.max_rel_error);
  }
}

TEST_CASE("graph prior examples") {
  Tape tape;
  CHECK(graph_prior_logp(tape.constant(Tensor({2, 3, 3})), 10.0, 5.0).value()[0] == 0.0);
  Tensor one({2, 3, 3});
  one[9 + 1] = 1.0;
  CHECK(graph_prior_logp(tape.constant(one), 10.0, 0.0).value()[0] == doctest::Approx(-10.0));
  Tensor dag({2, 3, 3});
  dag[1] = dag[2] = dag[5] = 1.0;  // 0->1, 0->2, 1->2
  for (double sigma : {0.0, 1.0, 1e6})
    CHECK(graph_prior_logp(tape.constant(dag), 1.0, sigma).value()[0] == doctest::Approx(-3.0).epsilon(1e-12));
  Tensor cyc({1, 2, 2}, {0, 1, 1, 0});
  CHECK(graph_prior_logp(tape.constant(cyc), 0.0, 1.0).value()[0] == doctest::Approx(-(2 * std::cosh(1.0) - 2)));
  CHECK_THROWS_AS(graph_prior_logp(tape.constant(cyc), -1.0, 0.0), std::invalid_argument);
}

TEST_CASE("linear latent loglik: zero residual with unit variance") {
  Tape tape;
  ad::ParamSet ps;
  Rng rng(15);
  init_scm(ps, ScmKind::kLinear, {2, 1}, rng);
  ad::BoundParams p(tape, ps);
  Var z = tape.constant(Tensor({1, 4, 2}));
  Var g = tape.constant(Tensor({2, 2, 2}));
  const double ll = latent_loglik(ScmKind::kLinear, p, {2, 1}, z, g).value()[0];
  CHECK(ll / 6.0 == doctest::Approx(-0.5 * kLog2Pi).epsilon(1e-12));
  CHECK(ll / 6.0 == doctest::Approx(-0.918939).epsilon(1e-6));
}

TEST_CASE("linear latent loglik: D=1, T=3, lag 1 by hand") {
  Tape tape;
  ad::ParamSet ps;
  Rng rng(16);
  init_scm(ps, ScmKind::kLinear, {1, 1}, rng);
  ps["scm.weight"] = Tensor({2, 1, 1}, {0.0, 0.8});
  ps["scm.noise_logvar"] = Tensor({1}, {std::log(0.5)});
  ad::BoundParams p(tape, ps);
  Var z = tape.constant(Tensor({1, 3, 1}, {1.0, -0.5, 2.0}));
  Var g = tape.constant(Tensor({2, 1, 1}, {0.0, 1.0}));
  const double r1 = -0.5 - 0.8 * 1.0, r2 = 2.0 - 0.8 * -0.5;
  auto logn = [](double r, double var) { return -0.5 * (r * r / var + std::log(var) + std::log(2 * std::numbers::pi)); };
  CHECK(latent_loglik(ScmKind::kLinear, p, {1, 1}, z, g).value()[0] == doctest::Approx(logn(r1, 0.5) + logn(r2, 0.5)).epsilon(1e-12));
}

TEST_CASE("nonlinear latent loglik with the identity spline is a standard normal density") {
  Rng rng(17);
  const ScmShape shape = small_shape(2, 1);
  ad::ParamSet ps;
  init_scm(ps, ScmKind::kNonlinear, shape, rng);
  Tape tape;
  ad::BoundParams p(tape, ps);
  Var z = tape.constant(normal_tensor({2, 5, 2}, rng));
  Var g = tape.constant(Tensor({2, 2, 2}, {0, 1, 0, 0, 1, 0, 1, 1}));
  const Tensor u = residuals(ScmKind::kNonlinear, p, shape, z, g).value();
  double ref = 0;
  for (double v : u.data()) ref += -0.5 * v * v - 0.5 * kLog2Pi;
  CHECK(latent_loglik(ScmKind::kNonlinear, p, shape, z, g).value()[0] == doctest::Approx(ref).epsilon(1e-12));
  // Standardization adds the affine log-Jacobian.
  ResidualScale rs{{0.1, -0.2}, {2.0, 0.5}};
  double ref2 = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const std::size_t d = i % 2;
    const double v = (u[i] - rs.mean[d]) / rs.scale[d];
    ref2 += -0.5 * v * v - 0.5 * kLog2Pi - std::log(rs.scale[d]);
  }
  CHECK(latent_loglik(ScmKind::kNonlinear, p, shape, z, g, &rs).value()[0] == doctest::Approx(ref2).epsilon(1e-12));
}

TEST_CASE("nonlinear latent loglik gradient matches finite differences for every scm parameter") {
  Rng rng(18);
  const ScmShape shape = small_shape(2, 1);
  ad::ParamSet ps;
  init_scm(ps, ScmKind::kNonlinear, shape, rng);
  // Move the noise flow away from the identity so spline gradients are exercised.
  for (auto& e : ps.entries())
    if (e.name.rfind("scm.xi_eta", 0) == 0)
      for (double& v : e.value.data()) v += 0.3 * std::normal_distribution<double>(0, 1)(rng);
  Tensor zt = normal_tensor({1, 5, 2}, rng);
  Tensor gt({2, 2, 2}, {0, 1, 0, 0, 1, 1, 0, 1});
  std::vector<std::string> names;
  for (const auto& e : ps.entries()) names.push_back(e.name);
  ResidualScale rs{{0.05, -0.1}, {1.3, 0.8}};
  const double err = testing::param_fd_error(ps, names, [&](Tape& tape, const ad::BoundParams& p) {
    return latent_loglik(ScmKind::kNonlinear, p, shape, tape.constant(zt), tape.constant(gt), &rs);
  });
  CHECK(err < 1e-4);
}

TEST_CASE("linear latent loglik gradient matches finite differences") {
  Rng rng(19);
  ad::ParamSet ps;
  init_scm(ps, ScmKind::kLinear, {3, 2}, rng);
  ps["scm.weight"] = normal_tensor({3, 3, 3}, rng, 0, 0.5);
  ps["scm.noise_logvar"] = normal_tensor({3}, rng, 0, 0.3);
  Tensor zt = normal_tensor({2, 6, 3}, rng);
  Tensor gt = random_graph(rng, 3, 2, 0.7);
  const double err = testing::param_fd_error(ps, {"scm.weight", "scm.noise_logvar"}, [&](Tape& tape, const ad::BoundParams& p) {
    return latent_loglik(ScmKind::kLinear, p, {3, 2}, tape.constant(zt), tape.constant(gt));
  });
  CHECK(err < 1e-4);
}
