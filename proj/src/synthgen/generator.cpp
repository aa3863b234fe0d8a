#include "spacy/synthgen/generator.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>

namespace spacy::synthgen {
namespace {

using ad::Tensor;

constexpr std::size_t kNetHidden = 64;
constexpr std::size_t kMapHidden = 32;
constexpr std::size_t kMechanismRetries = 20;
constexpr double kDivergenceBound = 1e6;
constexpr double kStationarityTol = 0.2;
// Below this many points per half the variance comparison is mostly noise.
constexpr std::size_t kStationarityMinPoints = 1000;

Tensor uniform_init(std::size_t rows, std::size_t cols, Rng& rng) {
  const double a = 1.0 / std::sqrt(static_cast<double>(rows));
  return uniform_tensor(cols == 0 ? ad::Shape{rows} : ad::Shape{rows, cols}, rng, -a, a);
}

// Dense layer: out[j] = b[j] + sum_i in[i] w[i, j].
std::vector<double> dense(const std::vector<double>& in, const Tensor& w, const Tensor& b, bool relu) {
  const std::size_t n_in = w.dim(0), n_out = w.dim(1);
  std::vector<double> out(b.vec());
  for (std::size_t i = 0; i < n_in; ++i) {
    if (in[i] == 0.0) continue;
    for (std::size_t j = 0; j < n_out; ++j) out[j] += in[i] * w[i * n_out + j];
  }
  if (relu)
    for (double& v : out) v = std::max(v, 0.0);
  return out;
}

double net_forward(const NodeNet& net, const std::vector<double>& x) {
  std::vector<double> h = x;
  for (std::size_t l = 0; l < net.weights.size(); ++l) h = dense(h, net.weights[l], net.biases[l], l + 1 < net.weights.size());
  return h[0];
}

std::vector<std::size_t> instantaneous_order(const scm::TemporalGraph& g) {
  const std::size_t d = g.nodes();
  std::vector<std::uint8_t> adj(d * d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) adj[i * d + j] = g.edge(0, i, j);
  auto order = scm::topological_order(adj, d);
  if (!order) throw std::invalid_argument("instantaneous graph has a cycle");
  return *order;
}

}  // namespace

MapKind map_from_name(std::string_view name) {
  if (name == "linear") return MapKind::kLinear;
  if (name == "nonlinear") return MapKind::kNonlinear;
  throw std::invalid_argument("unknown mapping '" + std::string(name) + "'");
}

std::string_view map_name(MapKind k) { return k == MapKind::kLinear ? "linear" : "nonlinear"; }

std::size_t GenConfig::nodes() const { return std::accumulate(variate_nodes.begin(), variate_nodes.end(), std::size_t{0}); }

void GenConfig::validate() const {
  if (variate_nodes.empty()) throw std::invalid_argument("at least one variate is required");
  for (auto d : variate_nodes)
    if (d == 0) throw std::invalid_argument("node counts must be positive");
  if (lags == 0) throw std::invalid_argument("lags must be at least 1");
  if (length <= lags) throw std::invalid_argument("length must exceed lags");
  if (rows == 0 || cols == 0) throw std::invalid_argument("grid dimensions must be positive");
  if (samples == 0) throw std::invalid_argument("samples must be positive");
  if (!(noise_var >= 0) || !(obs_noise >= 0)) throw std::invalid_argument("noise scales must be non-negative");
  if (!(inst_edge_multiplier >= 0) || !(lag_edge_multiplier >= 0)) throw std::invalid_argument("edge multipliers must be non-negative");
  if (!(gamma_lo <= gamma_hi)) throw std::invalid_argument("gamma range is empty");
  if (!(scale_reference > 0)) throw std::invalid_argument("scale_reference must be positive");
  if (!(min_center_distance >= 0)) throw std::invalid_argument("min_center_distance must be non-negative");
  const std::size_t d = nodes();
  const auto inst = static_cast<std::size_t>(std::llround(inst_edge_multiplier * static_cast<double>(d)));
  if (inst > d * (d - 1) / 2)
    throw std::invalid_argument("instantaneous edge count " + std::to_string(inst) + " exceeds the DAG bound " +
                                std::to_string(d * (d - 1) / 2));
  const auto lagged = static_cast<std::size_t>(std::llround(lag_edge_multiplier * static_cast<double>(d)));
  if (lagged > (lag_edges_per_lag ? d * d : lags * d * d)) throw std::invalid_argument("lagged edge count exceeds available slots");
}

scm::TemporalGraph sample_er_graph(std::size_t nodes, std::size_t lags, Rng& rng, std::size_t inst_edges, std::size_t lag_edges,
                                   bool per_lag) {
  if (inst_edges > nodes * (nodes - 1) / 2)
    throw std::invalid_argument("instantaneous edge count " + std::to_string(inst_edges) + " does not fit a DAG on " +
                                std::to_string(nodes) + " nodes");
  const std::size_t slots = per_lag ? nodes * nodes : lags * nodes * nodes;
  if (lag_edges > slots) throw std::invalid_argument("lagged edge count exceeds available slots");
  scm::TemporalGraph g(nodes, lags);

  std::vector<std::size_t> order(nodes);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::pair<std::size_t, std::size_t>> forward;
  for (std::size_t a = 0; a < nodes; ++a)
    for (std::size_t b = a + 1; b < nodes; ++b) forward.emplace_back(order[a], order[b]);
  std::shuffle(forward.begin(), forward.end(), rng);
  for (std::size_t e = 0; e < inst_edges; ++e) g.set_edge(0, forward[e].first, forward[e].second);

  auto pick = [&](std::size_t first_lag, std::size_t n_lags, std::size_t count) {
    std::vector<std::size_t> cells(n_lags * nodes * nodes);
    std::iota(cells.begin(), cells.end(), 0);
    std::shuffle(cells.begin(), cells.end(), rng);
    for (std::size_t e = 0; e < count; ++e) {
      const std::size_t c = cells[e];
      g.set_edge(first_lag + c / (nodes * nodes), (c / nodes) % nodes, c % nodes);
    }
  };
  if (per_lag)
    for (std::size_t k = 1; k <= lags; ++k) pick(k, 1, lag_edges);
  else
    pick(1, lags, lag_edges);
  return g;
}

SpatialDraw sample_spatial_params(std::size_t nodes, const spatial::GridSpec& grid, Rng& rng, const SpatialOptions& opt) {
  const std::size_t L = grid.size();
  const double norm = grid.metric.kind == spatial::MetricKind::kHaversine ? std::numbers::pi * grid.metric.radius : 1.0;
  std::uniform_int_distribution<std::size_t> point(0, L - 1);
  SpatialDraw out;
  bool placed = false;
  for (std::size_t attempt = 0; attempt < opt.max_attempts && !placed; ++attempt) {
    out.center_points.clear();
    placed = true;
    for (std::size_t d = 0; d < nodes && placed; ++d) {
      const std::size_t p = point(rng);
      for (std::size_t q : out.center_points)
        if (spatial::distance(grid.point(p), grid.point(q), grid.metric) / norm < opt.min_distance) placed = false;
      out.center_points.push_back(p);
    }
  }
  if (!placed)
    throw std::runtime_error("could not place " + std::to_string(nodes) + " centers at separation " + std::to_string(opt.min_distance) +
                             " after " + std::to_string(opt.max_attempts) + " attempts");
  std::uniform_real_distribution<double> gamma(opt.gamma_lo, opt.gamma_hi);
  out.kernels.family = spatial::KernelFamily::kRbf;
  for (std::size_t d = 0; d < nodes; ++d) {
    const double g = gamma(rng);
    out.gamma_raw.push_back(g);
    spatial::NodeKernel nk;
    nk.center = grid.point(out.center_points[d]);
    nk.log_scale = g - 2.0 * std::log(opt.scale_reference);
    out.kernels.nodes.push_back(nk);
  }
  return out;
}

Mechanism sample_mechanism(const scm::TemporalGraph& g, scm::ScmKind kind, Rng& rng, double noise_var) {
  const std::size_t d = g.nodes(), k = g.lags() + 1;
  Mechanism m;
  m.kind = kind;
  m.noise_sd.assign(d, std::sqrt(noise_var));
  if (kind == scm::ScmKind::kLinear) {
    m.weights = Tensor({k, d, d});
    std::uniform_real_distribution<double> mag(0.1, 0.5);
    std::bernoulli_distribution sign(0.5);
    for (std::size_t lag = 0; lag < k; ++lag)
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j)
          if (g.edge(lag, i, j)) {
            const double w = mag(rng);
            m.weights[(lag * d + i) * d + j] = sign(rng) ? w : -w;
          }
    return m;
  }
  std::normal_distribution<double> raw(0.0, 1.0);
  for (std::size_t node = 0; node < d; ++node) {
    NodeNet net;
    const std::size_t dims[] = {k * d, kNetHidden, kNetHidden, 1};
    for (std::size_t l = 0; l < 3; ++l) {
      net.weights.push_back(uniform_init(dims[l], dims[l + 1], rng));
      Tensor b({dims[l + 1]});
      const double a = 1.0 / std::sqrt(static_cast<double>(dims[l]));
      for (double& v : b.data()) v = std::uniform_real_distribution<double>(-a, a)(rng);
      net.biases.push_back(b);
    }
    net.offset = net_forward(net, std::vector<double>(k * d, 0.0));
    for (double& v : net.noise_spline.raw) v = raw(rng);
    m.nets.push_back(std::move(net));
  }
  return m;
}

Tensor simulate_latents(const scm::TemporalGraph& g, const Mechanism& m, Rng& rng, std::size_t length, std::size_t burn_in,
                        const Tensor* initial) {
  const std::size_t d = g.nodes(), tau = g.lags(), total = tau + burn_in + length;
  const std::vector<std::size_t> order = instantaneous_order(g);
  std::vector<double> z(total * d);
  std::normal_distribution<double> normal(0.0, 1.0);
  if (initial) {
    if (initial->size() != tau * d) throw std::invalid_argument("initial values must be (lags, D)");
    std::copy(initial->data().begin(), initial->data().end(), z.begin());
  } else {
    for (std::size_t i = 0; i < tau * d; ++i) z[i] = normal(rng);
  }
  std::vector<double> input((tau + 1) * d);
  for (std::size_t t = tau; t < total; ++t) {
    for (std::size_t node : order) {
      double mean = 0, scale = m.noise_sd[node];
      if (m.kind == scm::ScmKind::kLinear) {
        for (std::size_t k = 0; k <= tau; ++k)
          for (std::size_t j = 0; j < d; ++j)
            if (g.edge(k, j, node)) mean += m.weights[(k * d + j) * d + node] * z[(t - k) * d + j];
      } else {
        double lag_sum = 0;
        std::size_t lag_parents = 0;
        for (std::size_t k = 0; k <= tau; ++k)
          for (std::size_t j = 0; j < d; ++j) {
            const bool on = g.edge(k, j, node);
            input[k * d + j] = on ? z[(t - k) * d + j] : 0.0;
            if (on && k > 0) {
              lag_sum += z[(t - k) * d + j];
              ++lag_parents;
            }
          }
        mean = net_forward(m.nets[node], input) - m.nets[node].offset;
        const double avg = lag_parents ? lag_sum / static_cast<double>(lag_parents) : 0.0;
        scale *= std::exp(0.5 * std::tanh(scm::spline_forward(avg, m.nets[node].noise_spline).value));
      }
      const double v = mean + (scale > 0 ? scale * normal(rng) : 0.0);
      if (!std::isfinite(v) || std::abs(v) > kDivergenceBound)
        throw Divergence("latent trajectory diverged at step " + std::to_string(t - tau));
      z[t * d + node] = v;
    }
  }
  Tensor out({length, d});
  std::copy(z.begin() + static_cast<std::ptrdiff_t>((tau + burn_in) * d), z.end(), out.data().begin());
  return out;
}

double PointMap::operator()(double x, std::size_t point) const {
  const double e = embedding[point];
  std::vector<double> h1(kMapHidden), h2(kMapHidden);
  for (std::size_t j = 0; j < kMapHidden; ++j) h1[j] = std::tanh(b1[j] + x * w1[j] + e * w1[kMapHidden + j]);
  double out = b3;
  for (std::size_t j = 0; j < kMapHidden; ++j) {
    double s = b2[j];
    for (std::size_t i = 0; i < kMapHidden; ++i) s += h1[i] * w2[i * kMapHidden + j];
    h2[j] = std::tanh(s);
    out += h2[j] * w3[j];
  }
  return x + out;
}

PointMap sample_point_map(std::size_t points, Rng& rng) {
  PointMap m;
  m.w1 = normal_tensor({2, kMapHidden}, rng);
  m.b1 = normal_tensor({kMapHidden}, rng);
  m.w2 = normal_tensor({kMapHidden, kMapHidden}, rng, 0.0, 1.0 / std::sqrt(static_cast<double>(kMapHidden)));
  m.b2 = normal_tensor({kMapHidden}, rng, 0.0, 0.1);
  m.w3 = normal_tensor({kMapHidden}, rng);
  // |dh/dx| <= |w1[x,:]| * ||W2||_2 * |w3| since tanh is 1-Lipschitz.
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> w2(m.w2.data().data(), kMapHidden,
                                                                                            kMapHidden);
  const double w2_norm = Eigen::JacobiSVD<Eigen::MatrixXd>(w2).singularValues()(0);
  double w1x = 0, w3n = 0;
  for (std::size_t j = 0; j < kMapHidden; ++j) {
    w1x += m.w1[j] * m.w1[j];
    w3n += m.w3[j] * m.w3[j];
  }
  const double lip = std::sqrt(w1x) * w2_norm * std::sqrt(w3n);
  for (double& v : m.w3.data()) v *= 0.9 / lip;
  m.embedding.resize(points);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& v : m.embedding) v = normal(rng);
  return m;
}

Tensor render_observations(const Tensor& latents, const Tensor& factors, const std::vector<std::size_t>& variate_nodes,
                           const PointMap* map, double noise_sd, std::uint64_t noise_seed) {
  const std::size_t n = latents.dim(0), t = latents.dim(1), d = latents.dim(2), L = factors.dim(0), V = variate_nodes.size();
  if (factors.dim(1) != d) throw std::invalid_argument("factor columns must match latent nodes");
  if (std::accumulate(variate_nodes.begin(), variate_nodes.end(), std::size_t{0}) != d)
    throw std::invalid_argument("variate partition must sum to the latent nodes");
  Tensor x({n, V, L, t});
  for (std::size_t s = 0; s < n; ++s) {
    Rng rng = substream(noise_seed, s);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::size_t off = 0;
    for (std::size_t v = 0; v < V; ++v) {
      for (std::size_t l = 0; l < L; ++l)
        for (std::size_t step = 0; step < t; ++step) {
          double acc = 0;
          for (std::size_t j = off; j < off + variate_nodes[v]; ++j) acc += factors[l * d + j] * latents[(s * t + step) * d + j];
          if (map) acc = (*map)(acc, l);
          if (noise_sd > 0) acc += noise_sd * normal(rng);
          x[((s * V + v) * L + l) * t + step] = acc;
        }
      off += variate_nodes[v];
    }
  }
  return x;
}

double stationarity_gap(const Tensor& latents) {
  const std::size_t n = latents.dim(0), t = latents.dim(1), d = latents.dim(2), half = t / 2;
  double gap = 0;
  for (std::size_t j = 0; j < d; ++j) {
    double var[2];
    for (int h = 0; h < 2; ++h) {
      const std::size_t lo = h == 0 ? t - 2 * half : t - half;
      double s = 0, s2 = 0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t step = lo; step < lo + half; ++step) {
          const double v = latents[(i * t + step) * d + j];
          s += v;
          s2 += v * v;
        }
      const double cnt = static_cast<double>(n * half);
      var[h] = s2 / cnt - (s / cnt) * (s / cnt);
    }
    if (var[0] <= 0) continue;
    gap = std::max(gap, std::abs(var[1] - var[0]) / var[0]);
  }
  return gap;
}

GroundTruth generate_dataset(const GenConfig& cfg) {
  cfg.validate();
  GroundTruth gt;
  gt.config = cfg;
  gt.grid = spatial::GridSpec::euclidean(cfg.rows, cfg.cols);
  const std::size_t d = cfg.nodes();

  Rng graph_rng = substream(cfg.seed, 1);
  gt.graph = sample_er_graph(d, cfg.lags, graph_rng, static_cast<std::size_t>(std::llround(cfg.inst_edge_multiplier * static_cast<double>(d))),
                             static_cast<std::size_t>(std::llround(cfg.lag_edge_multiplier * static_cast<double>(d))), cfg.lag_edges_per_lag);

  Rng spatial_rng = substream(cfg.seed, 2);
  SpatialOptions so{cfg.min_center_distance, cfg.gamma_lo, cfg.gamma_hi, cfg.scale_reference};
  gt.spatial.kernels.family = spatial::KernelFamily::kRbf;
  for (std::size_t dv : cfg.variate_nodes) {
    SpatialDraw part = sample_spatial_params(dv, gt.grid, spatial_rng, so);
    gt.spatial.kernels.nodes.insert(gt.spatial.kernels.nodes.end(), part.kernels.nodes.begin(), part.kernels.nodes.end());
    gt.spatial.gamma_raw.insert(gt.spatial.gamma_raw.end(), part.gamma_raw.begin(), part.gamma_raw.end());
    gt.spatial.center_points.insert(gt.spatial.center_points.end(), part.center_points.begin(), part.center_points.end());
  }
  gt.factors = spatial::evaluate_factor(gt.grid, gt.spatial.kernels);

  const bool check_stationary =
      cfg.scm == scm::ScmKind::kLinear && cfg.samples * (cfg.length / 2) >= kStationarityMinPoints;
  std::string last_failure;
  bool ok = false;
  for (std::size_t attempt = 0; attempt <= kMechanismRetries && !ok; ++attempt) {
    const std::uint64_t attempt_seed = mix_seed(cfg.seed, 100 + attempt);
    Rng mech_rng = substream(attempt_seed, 0);
    gt.mechanism = sample_mechanism(gt.graph, cfg.scm, mech_rng, cfg.noise_var);
    gt.mechanism_attempts = attempt + 1;
    gt.latents = Tensor({cfg.samples, cfg.length, d});
    try {
      for (std::size_t s = 0; s < cfg.samples; ++s) {
        Rng rng = substream(attempt_seed, 1 + s);
        Tensor z = simulate_latents(gt.graph, gt.mechanism, rng, cfg.length, cfg.burn_in);
        std::copy(z.data().begin(), z.data().end(), gt.latents.data().begin() + static_cast<std::ptrdiff_t>(s * cfg.length * d));
      }
    } catch (const Divergence& e) {
      last_failure = e.what();
      continue;
    }
    if (check_stationary) {
      const double gap = stationarity_gap(gt.latents);
      if (gap >= kStationarityTol) {
        last_failure = "variance drift " + std::to_string(gap);
        continue;
      }
    }
    ok = true;
  }
  if (!ok)
    throw std::runtime_error("latent simulation failed after " + std::to_string(kMechanismRetries) + " retries: " + last_failure);

  PointMap map;
  if (cfg.mapping == MapKind::kNonlinear) {
    Rng map_rng = substream(cfg.seed, 3);
    map = sample_point_map(gt.grid.size(), map_rng);
  }
  gt.observations = render_observations(gt.latents, gt.factors, cfg.variate_nodes, cfg.mapping == MapKind::kNonlinear ? &map : nullptr,
                                        cfg.obs_noise, mix_seed(cfg.seed, 4));
  return gt;
}

}  // namespace spacy::synthgen
