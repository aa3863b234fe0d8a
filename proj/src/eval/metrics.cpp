#include "spacy/eval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace spacy::eval {
namespace {

constexpr std::size_t kExhaustiveGraphNodes = 8;

struct Moments {
  std::vector<double> mean, sd;
};

// Per-node mean and sd over (N, T).
Moments moments(const ad::Tensor& z) {
  const std::size_t d = z.dim(2), n = z.size() / d;
  Moments m{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) m.mean[j] += z[i * d + j];
  for (double& v : m.mean) v /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double c = z[i * d + j] - m.mean[j];
      m.sd[j] += c * c;
    }
  for (double& v : m.sd) v = std::sqrt(v / static_cast<double>(n));
  return m;
}

void check_latents(const ad::Tensor& a, const ad::Tensor& b) {
  if (a.rank() != 3 || a.shape() != b.shape()) throw std::invalid_argument("latent series must share an (N, T, D) shape");
}

std::size_t disagreement(const scm::TemporalGraph& a, const scm::TemporalGraph& b, const std::vector<std::size_t>& perm) {
  std::size_t c = 0;
  for (std::size_t k = 0; k <= a.lags(); ++k)
    for (std::size_t i = 0; i < a.nodes(); ++i)
      for (std::size_t j = 0; j < a.nodes(); ++j) c += a.edge(k, i, j) != b.edge(k, perm[i], perm[j]);
  return c;
}

}  // namespace

Assignment hungarian(const std::vector<double>& cost, std::size_t n) {
  if (cost.size() != n * n) throw std::invalid_argument("cost matrix must be n x n");
  for (double c : cost)
    if (!std::isfinite(c)) throw std::invalid_argument("cost matrix must be finite");
  Assignment a;
  if (n == 0) return a;
  // Shortest augmenting paths with row/column potentials; 1-based with a
  // virtual column 0.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> match(n + 1, 0), way(n + 1, 0);
  for (std::size_t row = 1; row <= n; ++row) {
    match[0] = row;
    std::size_t col0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[col0] = 1;
      const std::size_t r = match[col0];
      double delta = inf;
      std::size_t col1 = 0;
      for (std::size_t c = 1; c <= n; ++c) {
        if (used[c]) continue;
        const double cur = cost[(r - 1) * n + (c - 1)] - u[r] - v[c];
        if (cur < minv[c]) {
          minv[c] = cur;
          way[c] = col0;
        }
        if (minv[c] < delta) {
          delta = minv[c];
          col1 = c;
        }
      }
      for (std::size_t c = 0; c <= n; ++c) {
        if (used[c]) {
          u[match[c]] += delta;
          v[c] -= delta;
        } else {
          minv[c] -= delta;
        }
      }
      col0 = col1;
    } while (match[col0] != 0);
    do {
      const std::size_t col1 = way[col0];
      match[col0] = match[col1];
      col0 = col1;
    } while (col0 != 0);
  }
  a.perm.assign(n, 0);
  for (std::size_t c = 1; c <= n; ++c) a.perm[match[c] - 1] = c - 1;
  for (std::size_t i = 0; i < n; ++i) a.cost += cost[i * n + a.perm[i]];
  return a;
}

std::string_view match_mode_name(MatchMode m) { return m == MatchMode::kLatent ? "latent" : "graph"; }

std::vector<double> correlation_cost(const ad::Tensor& truth, const ad::Tensor& estimate, std::size_t* constant_series) {
  check_latents(truth, estimate);
  const std::size_t d = truth.dim(2), n = truth.size() / d;
  const Moments mt = moments(truth), me = moments(estimate);
  std::vector<double> cost(d * d, 1.0);
  std::size_t constant = 0;
  for (std::size_t j = 0; j < d; ++j) constant += (mt.sd[j] == 0) + (me.sd[j] == 0);
  for (std::size_t i = 0; i < d; ++i) {
    if (mt.sd[i] == 0) continue;
    for (std::size_t j = 0; j < d; ++j) {
      if (me.sd[j] == 0) continue;
      double c = 0;
      for (std::size_t s = 0; s < n; ++s) c += (truth[s * d + i] - mt.mean[i]) * (estimate[s * d + j] - me.mean[j]);
      cost[i * d + j] = 1.0 - std::min(1.0, std::abs(c / static_cast<double>(n) / (mt.sd[i] * me.sd[j])));
    }
  }
  if (constant_series) *constant_series = constant;
  return cost;
}

Assignment match_nodes(const ad::Tensor& truth, const ad::Tensor& estimate, std::size_t* constant_series) {
  return hungarian(correlation_cost(truth, estimate, constant_series), truth.dim(2));
}

Assignment match_nodes(const scm::TemporalGraph& truth, const scm::TemporalGraph& estimate) {
  if (truth.nodes() != estimate.nodes() || truth.lags() != estimate.lags())
    throw std::invalid_argument("graphs must share node count and lags");
  const std::size_t d = truth.nodes();
  std::vector<std::size_t> perm(d);
  std::iota(perm.begin(), perm.end(), 0);
  if (d <= kExhaustiveGraphNodes) {
    Assignment best{perm, static_cast<double>(disagreement(truth, estimate, perm))};
    while (std::next_permutation(perm.begin(), perm.end())) {
      const auto c = static_cast<double>(disagreement(truth, estimate, perm));
      if (c < best.cost) best = {perm, c};
    }
    return best;
  }
  std::vector<double> cost(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j)
      for (std::size_t k = 0; k <= truth.lags(); ++k) {
        long in_t = 0, out_t = 0, in_e = 0, out_e = 0;
        for (std::size_t o = 0; o < d; ++o) {
          out_t += truth.edge(k, i, o);
          in_t += truth.edge(k, o, i);
          out_e += estimate.edge(k, j, o);
          in_e += estimate.edge(k, o, j);
        }
        cost[i * d + j] += static_cast<double>(std::labs(in_t - in_e) + std::labs(out_t - out_e));
        if (k > 0) cost[i * d + j] += truth.edge(k, i, i) != estimate.edge(k, j, j);
      }
  Assignment a = hungarian(cost, d);
  a.cost = static_cast<double>(disagreement(truth, estimate, a.perm));
  return a;
}

OrientationScore orientation_f1(const scm::TemporalGraph& truth, const scm::TemporalGraph& estimate, const std::vector<std::size_t>& perm) {
  if (truth.nodes() != estimate.nodes() || truth.lags() != estimate.lags())
    throw std::invalid_argument("graphs must share node count and lags");
  if (perm.size() != truth.nodes()) throw std::invalid_argument("permutation size differs from node count");
  const std::size_t d = truth.nodes();
  OrientationScore s;
  s.per_lag.resize(truth.lags() + 1);
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t k = 0; k <= truth.lags(); ++k) {
    LagCounts& c = s.per_lag[k];
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        const bool t = truth.edge(k, i, j), e = estimate.edge(k, perm[i], perm[j]);
        c.tp += t && e;
        c.fp += !t && e;
        c.fn += t && !e;
      }
    tp += c.tp;
    fp += c.fp;
    fn += c.fn;
  }
  s.precision = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  s.recall = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  s.f1 = s.precision + s.recall > 0 ? 2 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

double mcc(const ad::Tensor& truth, const ad::Tensor& estimate, const std::vector<std::size_t>& perm, std::size_t* constant_series) {
  check_latents(truth, estimate);
  const std::size_t d = truth.dim(2);
  if (perm.size() != d) throw std::invalid_argument("permutation size differs from node count");
  const std::vector<double> cost = correlation_cost(truth, estimate, constant_series);
  double total = 0;
  for (std::size_t i = 0; i < d; ++i) total += 1.0 - cost[i * d + perm[i]];
  return total / static_cast<double>(d);
}

EvalReport evaluate(const scm::TemporalGraph& truth_graph, const scm::TemporalGraph& estimate_graph, const ad::Tensor* truth_latents,
                    const ad::Tensor* estimate_latents) {
  if (truth_graph.nodes() != estimate_graph.nodes())
    throw std::invalid_argument("node count differs: truth " + std::to_string(truth_graph.nodes()) + ", estimate " +
                                std::to_string(estimate_graph.nodes()));
  if (truth_graph.lags() != estimate_graph.lags())
    throw std::invalid_argument("lag count differs: truth " + std::to_string(truth_graph.lags()) + ", estimate " +
                                std::to_string(estimate_graph.lags()));
  EvalReport r;
  if (truth_latents && estimate_latents) {
    r.mode = MatchMode::kLatent;
    r.permutation = match_nodes(*truth_latents, *estimate_latents).perm;
    r.mcc = mcc(*truth_latents, *estimate_latents, r.permutation, &r.constant_series);
  } else {
    r.mode = MatchMode::kGraph;
    r.permutation = match_nodes(truth_graph, estimate_graph).perm;
    r.mcc = std::numeric_limits<double>::quiet_NaN();
  }
  const OrientationScore s = orientation_f1(truth_graph, estimate_graph, r.permutation);
  r.f1 = s.f1;
  r.precision = s.precision;
  r.recall = s.recall;
  r.per_lag = s.per_lag;
  return r;
}

}  // namespace spacy::eval
