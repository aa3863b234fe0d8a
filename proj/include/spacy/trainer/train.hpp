#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "spacy/scm/graph.hpp"
#include "spacy/trainer/adam.hpp"
#include "spacy/trainer/model.hpp"

namespace spacy::trainer {

struct TrainConfig {
  // Learning rates per parameter group.
  double lr_matrix = 1e-3;
  double lr_scm = 1e-3;
  double lr_encoder = 1e-3;
  double lr_factor = 1e-2;
  double lr_decoder = 1e-3;
  std::size_t batch_size = 100;
  std::size_t outer_auglag = 60;
  std::size_t inner_auglag = 6000;
  std::size_t scm_embed = 64;
  std::size_t decoder_embed = 32;
  double sparsity_alpha = 10.0;
  std::string spline = "quadratic";
  std::size_t freeze_epochs = 200;
  std::uint64_t seed = 0;
  std::string precision = "float64";

  // Model structure.
  std::vector<std::size_t> nodes{5};
  std::size_t lags = 2;
  std::string kernel = "rbf";
  std::string scm = "linear";
  std::string decoder = "linear";
  bool per_point_noise = false;
  double init_log_scale = -2.995732273553991;  // log(0.05)

  // Loop control.
  double validation_fraction = 0.2;
  std::size_t eval_every = 50;
  std::size_t plateau_steps = 500;
  double plateau_tol = 1e-3;
  std::size_t decoder_points = 64;
  std::size_t max_steps = 0;  // 0: no cap beyond the auglag budget
  double threshold = 0.5;

  void validate() const;
};

struct Dataset {
  ad::Tensor observations;  // (N, V, L, T)
  spatial::GridSpec grid;
};

ModelSpec make_model_spec(const TrainConfig& cfg, const spatial::GridSpec& grid);

struct LogRow {
  std::size_t step = 0, outer = 0;
  bool frozen = false;
  double elbo = 0, recon = 0, latent = 0, entropy_z = 0, entropy_g = 0, prior = 0, kl_f = 0;
  double h = 0, penalty_c = 0, lambda_al = 0;
  double val_elbo = std::numeric_limits<double>::quiet_NaN();
};

void write_log_header(std::ostream& os);
void write_log_row(std::ostream& os, const LogRow& row);

struct RunState {
  TrainConfig config;
  ModelSpec spec;
  ad::ParamSet params;
  Adam adam;
  scm::ResidualScale residual_scale;
  double lambda_al = 0.0;
  double penalty_c = 1.0;
  double h_prev = std::numeric_limits<double>::infinity();
  std::size_t step = 0;
  std::size_t outer = 0;
  std::size_t inner = 0;
  bool finished = false;
  Rng rng;
  std::vector<std::size_t> train_index, val_index;
  std::vector<std::size_t> epoch_order;
  std::size_t epoch_cursor = 0;
  std::optional<ad::ParamSet> best_params;
  double best_val = -std::numeric_limits<double>::infinity();
  double inner_best = -std::numeric_limits<double>::infinity();
  std::size_t inner_best_step = 0;
  std::vector<LogRow> log;

  std::size_t freeze_steps() const;
};

// Non-finite objective; carries the diagnostic of the failing step.
class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

Adam make_optimizer(const TrainConfig& cfg);
RunState init_run(const Dataset& data, const TrainConfig& cfg);

struct TrainHooks {
  std::function<void(const LogRow&)> on_step;
};

// Runs until the auglag budget, max_steps, or `steps` more steps (when
// nonzero) are exhausted. Resumable: calling again continues from `state`.
void train(RunState& state, const Dataset& data, std::size_t steps = 0, const TrainHooks& hooks = {});

// Validation ELBO per sample on the held-out split, with a fixed noise stream.
double validation_elbo(const RunState& state, const Dataset& data);

// Edge probabilities sigmoid(logits), instantaneous self loops zeroed.
ad::Tensor edge_probabilities(const ad::ParamSet& params);

// Thresholded graph; instantaneous cycles are broken greedily by dropping the
// lowest-probability edge that lies on a cycle.
scm::TemporalGraph extract_graph(const ad::Tensor& probs, double threshold);
scm::TemporalGraph extract_graph(const RunState& state, double threshold);

// Encoder means for every sample: (N, T, D).
ad::Tensor infer_latents(const RunState& state, const ad::Tensor& observations, std::size_t chunk = 16);

}  // namespace spacy::trainer
