#include <algorithm>
#include <cmath>
#include <cstring>

#include "doctest.h"
#include "spacy/synthgen/generator.hpp"

using namespace spacy;
using namespace spacy::synthgen;
using ad::Tensor;

namespace {

// Asymptotic Kolmogorov distribution with the Stephens small-sample correction.
double ks_pvalue(std::vector<double> xs, double lo, double hi) {
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double f = (xs[i] - lo) / (hi - lo);
    d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
  }
  const double lambda = (std::sqrt(n) + 0.12 + 0.11 / std::sqrt(n)) * d;
  double p = 0;
  for (int k = 1; k < 100; ++k) p += 2 * ((k % 2) ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lambda * lambda);
  return std::clamp(p, 0.0, 1.0);
}

Mechanism linear_mechanism(std::size_t nodes, std::size_t lags, std::vector<double> noise_sd) {
  Mechanism m;
  m.kind = scm::ScmKind::kLinear;
  m.weights = Tensor({lags + 1, nodes, nodes});
  m.noise_sd = std::move(noise_sd);
  return m;
}

}  // namespace

TEST_CASE("ER graph with ten nodes has exactly forty instantaneous edges") {
  Rng rng(1);
  for (int i = 0; i < 50; ++i) {
    const scm::TemporalGraph g = sample_er_graph(10, 2, rng, 40, 20);
    CHECK(g.edge_count(0) == 40);
    CHECK(g.instantaneous_acyclic());
  }
}

TEST_CASE("ER lagged edges total 2D on every draw") {
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    const scm::TemporalGraph g = sample_er_graph(5, 3, rng, 5, 10);
    CHECK(g.edge_count() - g.edge_count(0) == 10);
    CHECK(g.instantaneous_acyclic());
  }
}

TEST_CASE("ER lagged edges can be counted per lag") {
  Rng rng(3);
  const scm::TemporalGraph g = sample_er_graph(4, 3, rng, 2, 8, true);
  for (std::size_t k = 1; k <= 3; ++k) CHECK(g.edge_count(k) == 8);
}

TEST_CASE("ER lagged edges spread over every lag, source and target") {
  Rng rng(4);
  std::vector<int> hits(2 * 3 * 3, 0);
  for (int i = 0; i < 3000; ++i) {
    const scm::TemporalGraph g = sample_er_graph(3, 2, rng, 0, 3);
    for (std::size_t k = 1; k <= 2; ++k)
      for (std::size_t a = 0; a < 3; ++a)
        for (std::size_t b = 0; b < 3; ++b) hits[((k - 1) * 3 + a) * 3 + b] += g.edge(k, a, b);
  }
  // Each of 18 cells is hit with probability 3/18 per draw: 500 expected.
  for (int h : hits) CHECK(std::abs(h - 500) < 5 * std::sqrt(500.0 * (1 - 1.0 / 6)));
}

TEST_CASE("ER rejects edge counts that cannot form a DAG") {
  Rng rng(5);
  CHECK_THROWS_AS(sample_er_graph(5, 1, rng, 20, 2), std::invalid_argument);
  CHECK_THROWS_AS(sample_er_graph(2, 1, rng, 1, 5), std::invalid_argument);
  GenConfig c;
  c.variate_nodes = {5};
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c.inst_edge_multiplier = 1;
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("spatial centers respect the separation constraint") {
  const auto grid = spatial::GridSpec::euclidean(20, 20);
  Rng rng(6);
  for (int i = 0; i < 500; ++i) {
    const SpatialDraw s = sample_spatial_params(2, grid, rng);
    CHECK(spatial::distance(s.kernels.nodes[0].center, s.kernels.nodes[1].center, grid.metric) >= 0.1);
  }
  const SpatialDraw five = sample_spatial_params(5, grid, rng);
  for (std::size_t a = 0; a < 5; ++a)
    for (std::size_t b = a + 1; b < 5; ++b)
      CHECK(spatial::distance(five.kernels.nodes[a].center, five.kernels.nodes[b].center, grid.metric) >= 0.1);
}

TEST_CASE("single spatial center is unconstrained and lies on the grid") {
  const auto grid = spatial::GridSpec::euclidean(4, 5);
  Rng rng(7);
  std::vector<int> seen(20, 0);
  for (int i = 0; i < 2000; ++i) {
    const SpatialDraw s = sample_spatial_params(1, grid, rng);
    REQUIRE(s.center_points.size() == 1);
    const auto p = grid.point(s.center_points[0]);
    CHECK(s.kernels.nodes[0].center == p);
    ++seen[s.center_points[0]];
  }
  for (int c : seen) CHECK(c > 40);
}

TEST_CASE("gamma draws are uniform on [3, 6]") {
  const auto grid = spatial::GridSpec::euclidean(5, 5);
  Rng rng(8);
  std::vector<double> gammas;
  for (int i = 0; i < 10000; ++i) {
    const SpatialDraw s = sample_spatial_params(1, grid, rng);
    CHECK(s.gamma_raw[0] >= 3.0);
    CHECK(s.gamma_raw[0] <= 6.0);
    CHECK(s.kernels.nodes[0].log_scale == doctest::Approx(s.gamma_raw[0] - 2 * std::log(100.0)));
    gammas.push_back(s.gamma_raw[0]);
  }
  CHECK(ks_pvalue(gammas, 3.0, 6.0) > 0.01);
  // The oracle itself rejects a clearly non-uniform sample.
  std::vector<double> skewed;
  for (double g : gammas) skewed.push_back(3.0 + 3.0 * std::pow((g - 3.0) / 3.0, 1.3));
  CHECK(ks_pvalue(skewed, 3.0, 6.0) < 0.01);
}

TEST_CASE("infeasible center placement reports an error") {
  const auto grid = spatial::GridSpec::euclidean(3, 3);
  Rng rng(9);
  SpatialOptions opt;
  opt.max_attempts = 100;
  CHECK_THROWS_AS(sample_spatial_params(20, grid, rng, opt), std::runtime_error);
}

TEST_CASE("scalar recurrence with lag-one weight one half") {
  scm::TemporalGraph g(1, 1);
  g.set_edge(1, 0, 0);
  Mechanism m = linear_mechanism(1, 1, {0.0});
  m.weights[1] = 0.5;
  Rng rng(1);
  const Tensor init({1, 1}, 1.0);
  const Tensor z = simulate_latents(g, m, rng, 20, 0, &init);
  for (std::size_t t = 0; t < 20; ++t) CHECK(z[t] == std::pow(0.5, static_cast<double>(t + 1)));
}

TEST_CASE("empty linear graph gives iid noise with variance one half") {
  scm::TemporalGraph g(1, 1);
  Mechanism m = linear_mechanism(1, 1, {std::sqrt(0.5)});
  Rng rng(2);
  const Tensor z = simulate_latents(g, m, rng, 10000, 100);
  double s = 0, s2 = 0;
  for (double v : z.data()) {
    s += v;
    s2 += v * v;
  }
  const double var = s2 / 1e4 - (s / 1e4) * (s / 1e4);
  CHECK(var == doctest::Approx(0.5).epsilon(0.05));
}

TEST_CASE("instantaneous chain propagates in topological order") {
  scm::TemporalGraph g(2, 1);
  g.set_edge(0, 1, 0);  // node 1 -> node 0, so node 0 must be computed second
  Mechanism m = linear_mechanism(2, 1, {0.0, 1.0});
  m.weights[1 * 2 + 0] = -0.7;
  Rng rng(3);
  const Tensor z = simulate_latents(g, m, rng, 50, 5);
  for (std::size_t t = 0; t < 50; ++t) CHECK(z[t * 2 + 0] == -0.7 * z[t * 2 + 1]);
}

TEST_CASE("explosive recurrences raise a divergence") {
  scm::TemporalGraph g(1, 1);
  g.set_edge(1, 0, 0);
  Mechanism m = linear_mechanism(1, 1, {1.0});
  m.weights[1] = 3.0;
  Rng rng(4);
  CHECK_THROWS_AS(simulate_latents(g, m, rng, 100, 100), Divergence);
}

TEST_CASE("linear mechanism weights lie in the signed band") {
  Rng rng(5);
  const scm::TemporalGraph g = sample_er_graph(6, 2, rng, 6, 12);
  const Mechanism m = sample_mechanism(g, scm::ScmKind::kLinear, rng, 0.5);
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t j = 0; j < 6; ++j) {
        const double w = m.weights[(k * 6 + i) * 6 + j];
        if (g.edge(k, i, j)) {
          CHECK(std::abs(w) >= 0.1);
          CHECK(std::abs(w) <= 0.5);
        } else {
          CHECK(w == 0.0);
        }
      }
}

TEST_CASE("nonlinear mechanism has zero mean without parents") {
  scm::TemporalGraph g(2, 1);
  g.set_edge(1, 0, 1);
  Rng rng(6);
  Mechanism m = sample_mechanism(g, scm::ScmKind::kNonlinear, rng, 0.0);
  const Tensor z = simulate_latents(g, m, rng, 20, 0);
  for (std::size_t t = 0; t < 20; ++t) CHECK(z[t * 2] == 0.0);
  bool moves = false;
  for (std::size_t t = 1; t < 20; ++t) moves = moves || z[t * 2 + 1] != z[1];
  CHECK(moves);
}

TEST_CASE("render with zero noise and unit factor copies the latent") {
  Rng rng(7);
  const Tensor z = normal_tensor({2, 5, 1}, rng);
  const Tensor f({6, 1}, 1.0);
  const Tensor x = render_observations(z, f, {1}, nullptr, 0.0, 1);
  CHECK(x.shape() == ad::Shape{2, 1, 6, 5});
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t l = 0; l < 6; ++l)
      for (std::size_t t = 0; t < 5; ++t) CHECK(x[(n * 6 + l) * 5 + t] == z[n * 5 + t]);
}

TEST_CASE("render matches the per-variate matrix product") {
  Rng rng(8);
  const Tensor z = normal_tensor({3, 4, 10}, rng), f = normal_tensor({7, 10}, rng);
  const Tensor x = render_observations(z, f, {5, 5}, nullptr, 0.0, 1);
  CHECK(x.shape() == ad::Shape{3, 2, 7, 4});
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t v = 0; v < 2; ++v)
      for (std::size_t l = 0; l < 7; ++l)
        for (std::size_t t = 0; t < 4; ++t) {
          double acc = 0;
          for (std::size_t d = 5 * v; d < 5 * v + 5; ++d) acc += f[l * 10 + d] * z[(n * 4 + t) * 10 + d];
          CHECK(x[((n * 2 + v) * 7 + l) * 4 + t] == doctest::Approx(acc).epsilon(1e-14));
        }
}

TEST_CASE("observation noise has the configured scale") {
  Rng rng(9);
  const Tensor z({4, 500, 1}), f({50, 1}, 1.0);
  const Tensor x = render_observations(z, f, {1}, nullptr, 0.1, 3);
  double s2 = 0;
  for (double v : x.data()) s2 += v * v;
  CHECK(std::sqrt(s2 / static_cast<double>(x.size())) == doctest::Approx(0.1).epsilon(0.02));
}

TEST_CASE("nonlinear point maps are strictly increasing") {
  Rng rng(10);
  for (int trial = 0; trial < 5; ++trial) {
    const PointMap m = sample_point_map(20, rng);
    for (std::size_t l = 0; l < 20; ++l) {
      double prev = m(-6.0, l);
      for (int i = 1; i <= 600; ++i) {
        const double cur = m(-6.0 + 0.02 * i, l);
        CHECK(cur - prev >= 0.1 * 0.02 * (1 - 1e-9));
        prev = cur;
      }
    }
  }
}

TEST_CASE("generated datasets are deterministic per seed") {
  GenConfig c;
  c.variate_nodes = {3};
  c.inst_edge_multiplier = 1;
  c.rows = c.cols = 8;
  c.samples = 6;
  c.length = 20;
  c.seed = 12;
  const GroundTruth a = generate_dataset(c), b = generate_dataset(c);
  CHECK(a.graph == b.graph);
  CHECK(std::memcmp(a.observations.data().data(), b.observations.data().data(), a.observations.size() * sizeof(double)) == 0);
  CHECK(std::memcmp(a.latents.data().data(), b.latents.data().data(), a.latents.size() * sizeof(double)) == 0);
  c.seed = 13;
  const GroundTruth other = generate_dataset(c);
  CHECK(std::memcmp(a.observations.data().data(), other.observations.data().data(), a.observations.size() * sizeof(double)) != 0);
}

TEST_CASE("generated linear datasets are stationary and well separated") {
  GenConfig c;
  c.inst_edge_multiplier = 1;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    c.seed = seed;
    const GroundTruth gt = generate_dataset(c);
    CHECK(gt.observations.shape() == ad::Shape{50, 1, 900, 100});
    CHECK(gt.latents.shape() == ad::Shape{50, 100, 5});
    CHECK(gt.graph.instantaneous_acyclic());
    CHECK(gt.graph.edge_count(0) == 5);
    CHECK(gt.graph.edge_count() - gt.graph.edge_count(0) == 10);
    CHECK(stationarity_gap(gt.latents) < 0.2);
    std::vector<std::size_t> peaks;
    for (std::size_t d = 0; d < 5; ++d) {
      std::size_t best = 0;
      for (std::size_t l = 0; l < 900; ++l)
        if (gt.factors[l * 5 + d] > gt.factors[best * 5 + d]) best = l;
      peaks.push_back(best);
    }
    std::sort(peaks.begin(), peaks.end());
    CHECK(std::adjacent_find(peaks.begin(), peaks.end()) == peaks.end());
  }
}

TEST_CASE("nonlinear scm and mapping generate finite data") {
  GenConfig c;
  c.variate_nodes = {2, 2};
  c.inst_edge_multiplier = 1;
  c.rows = c.cols = 6;
  c.samples = 4;
  c.length = 30;
  c.scm = scm::ScmKind::kNonlinear;
  c.mapping = MapKind::kNonlinear;
  const GroundTruth gt = generate_dataset(c);
  CHECK(gt.observations.shape() == ad::Shape{4, 2, 36, 30});
  for (double v : gt.observations.data()) CHECK(std::isfinite(v));
}

TEST_CASE("paper-scale dimensions are accepted") {
  GenConfig c;
  c.variate_nodes = {10};
  c.rows = c.cols = 100;
  c.samples = 2;  // the full N=100 tensor is 800 MB; dimensions per sample are what matter
  c.length = 100;
  c.inst_edge_multiplier = 4;
  const GroundTruth gt = generate_dataset(c);
  CHECK(gt.observations.shape() == ad::Shape{2, 1, 10000, 100});
  CHECK(gt.graph.edge_count(0) == 40);
  CHECK(gt.graph.instantaneous_acyclic());
}
