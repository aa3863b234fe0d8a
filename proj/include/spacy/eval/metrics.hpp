#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "spacy/autodiff/tensor.hpp"
#include "spacy/scm/graph.hpp"

namespace spacy::eval {

// perm[i] is the estimate index assigned to truth index i.
struct Assignment {
  std::vector<std::size_t> perm;
  double cost = 0;
};

// Minimum-cost perfect matching on a square row-major cost matrix.
Assignment hungarian(const std::vector<double>& cost, std::size_t n);

enum class MatchMode { kLatent, kGraph };
std::string_view match_mode_name(MatchMode m);

// 1 - |corr| pooled over samples and time; latents are (N, T, D). Constant
// series get cost 1 and are counted in `constant_series` when given.
std::vector<double> correlation_cost(const ad::Tensor& truth, const ad::Tensor& estimate, std::size_t* constant_series = nullptr);
Assignment match_nodes(const ad::Tensor& truth, const ad::Tensor& estimate, std::size_t* constant_series = nullptr);

// Relabeling that minimizes the number of disagreeing (lag, src, dst) entries.
// Exhaustive for D <= 8; larger graphs use Hungarian on per-node in/out degree
// profiles.
Assignment match_nodes(const scm::TemporalGraph& truth, const scm::TemporalGraph& estimate);

struct LagCounts {
  std::size_t tp = 0, fp = 0, fn = 0;
};

struct OrientationScore {
  double f1 = 0, precision = 0, recall = 0;
  std::vector<LagCounts> per_lag;
};

// Edge (k, i, j) of the truth matches edge (k, perm[i], perm[j]) of the estimate.
OrientationScore orientation_f1(const scm::TemporalGraph& truth, const scm::TemporalGraph& estimate, const std::vector<std::size_t>& perm);

// Mean |Pearson corr| between truth node d and estimate node perm[d].
double mcc(const ad::Tensor& truth, const ad::Tensor& estimate, const std::vector<std::size_t>& perm,
           std::size_t* constant_series = nullptr);

struct EvalReport {
  double f1 = 0, precision = 0, recall = 0;
  double mcc = 0;  // NaN without latents
  std::vector<std::size_t> permutation;
  MatchMode mode = MatchMode::kLatent;
  std::vector<LagCounts> per_lag;
  std::size_t constant_series = 0;
};

// Matches on latents when both are given (non-null), on graphs otherwise.
EvalReport evaluate(const scm::TemporalGraph& truth_graph, const scm::TemporalGraph& estimate_graph, const ad::Tensor* truth_latents,
                    const ad::Tensor* estimate_latents);

}  // namespace spacy::eval
