#pragma once

#include <cstdint>
#include <vector>

#include "spacy/random.hpp"
#include "spacy/scm/graph.hpp"
#include "spacy/scm/model.hpp"
#include "spacy/scm/spline.hpp"
#include "spacy/spatial/kernels.hpp"

namespace spacy::synthgen {

enum class MapKind { kLinear, kNonlinear };

MapKind map_from_name(std::string_view name);
std::string_view map_name(MapKind k);

struct GenConfig {
  std::vector<std::size_t> variate_nodes{5};
  std::size_t lags = 2;
  std::size_t rows = 30, cols = 30;
  std::size_t samples = 50;
  std::size_t length = 100;
  std::size_t burn_in = 100;
  scm::ScmKind scm = scm::ScmKind::kLinear;
  MapKind mapping = MapKind::kLinear;
  double noise_var = 0.5;  // SCM noise variance
  double obs_noise = 0.1;  // observation noise sd
  double inst_edge_multiplier = 4.0;
  double lag_edge_multiplier = 2.0;
  bool lag_edges_per_lag = false;  // lag_edge_multiplier*D edges in every lag instead of in total
  double min_center_distance = 0.1;
  double gamma_lo = 3.0, gamma_hi = 6.0;
  double scale_reference = 100.0;  // gamma is drawn in units of 1/scale_reference of the grid side
  std::uint64_t seed = 0;

  std::size_t nodes() const;
  std::size_t variates() const { return variate_nodes.size(); }
  void validate() const;
};

// Instantaneous edges form a DAG: a uniform random node order with exactly
// `inst_edges` forward pairs. Lagged edges are drawn without replacement over
// (lag, src, dst), `lag_edges` in total or per lag.
scm::TemporalGraph sample_er_graph(std::size_t nodes, std::size_t lags, Rng& rng, std::size_t inst_edges,
                                   std::size_t lag_edges, bool per_lag = false);

struct SpatialDraw {
  spatial::KernelParams kernels;  // rbf, log_scale already rescaled to grid units
  std::vector<double> gamma_raw;
  std::vector<std::size_t> center_points;  // grid index of each center
};

struct SpatialOptions {
  double min_distance = 0.1;
  double gamma_lo = 3.0, gamma_hi = 6.0;
  double scale_reference = 100.0;
  std::size_t max_attempts = 10000;
};

// Centers on grid points with pairwise distance >= min_distance. Distances on
// spherical grids are divided by pi*radius so both metrics live in [0,1].
SpatialDraw sample_spatial_params(std::size_t nodes, const spatial::GridSpec& grid, Rng& rng, const SpatialOptions& opt = {});

// One random structural network per node (nonlinear SCM).
struct NodeNet {
  std::vector<ad::Tensor> weights;  // (in,64), (64,64), (64,1)
  std::vector<ad::Tensor> biases;
  double offset = 0;  // net(0), subtracted so that parentless nodes have zero mean
  scm::SplineParams noise_spline;
};

struct Mechanism {
  scm::ScmKind kind = scm::ScmKind::kLinear;
  ad::Tensor weights;              // (lags+1, D, D), linear only
  std::vector<double> noise_sd;    // per node
  std::vector<NodeNet> nets;       // nonlinear only
};

Mechanism sample_mechanism(const scm::TemporalGraph& g, scm::ScmKind kind, Rng& rng, double noise_var);

// Thrown when a trajectory leaves |Z| <= 1e6.
struct Divergence : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Simulates burn_in + T steps after `lags` initial values and returns the last
// T as (T, D). Initial values are N(0,1) unless `initial` (lags, D) is given.
ad::Tensor simulate_latents(const scm::TemporalGraph& g, const Mechanism& m, Rng& rng, std::size_t length, std::size_t burn_in,
                            const ad::Tensor* initial = nullptr);

// Scalar monotone map x + h([x, e]) with h a random tanh net whose slope in x
// is bounded by 0.9.
struct PointMap {
  ad::Tensor w1, b1, w2, b2, w3;  // (2,32), (32), (32,32), (32), (32)
  double b3 = 0;
  std::vector<double> embedding;  // one scalar per grid point
  double operator()(double x, std::size_t point) const;
};

PointMap sample_point_map(std::size_t points, Rng& rng);

// latents (N,T,D) and factors (L,D) with columns grouped per variate;
// returns (N,V,L,T).
ad::Tensor render_observations(const ad::Tensor& latents, const ad::Tensor& factors, const std::vector<std::size_t>& variate_nodes,
                               const PointMap* map, double noise_sd, std::uint64_t noise_seed);

struct GroundTruth {
  GenConfig config;
  spatial::GridSpec grid;
  scm::TemporalGraph graph;
  SpatialDraw spatial;
  Mechanism mechanism;
  ad::Tensor factors;       // (L, D)
  ad::Tensor latents;       // (N, T, D)
  ad::Tensor observations;  // (N, V, L, T)
  std::size_t mechanism_attempts = 1;
};

// Relative change in per-node variance between the two halves of the kept
// series, pooled over samples. Used to reject non-stationary linear draws.
double stationarity_gap(const ad::Tensor& latents);

GroundTruth generate_dataset(const GenConfig& cfg);

}  // namespace spacy::synthgen
