#pragma once

#include <filesystem>

#include <json.hpp>

#include "spacy/trainer/train.hpp"

namespace spacy::io {

// Directory layout:
//   state.json             config echo, grid, counters, auglag multipliers,
//                          rng state, data split, residual statistics,
//                          parameter inventory
//   grid.spcy              grid coordinates (L, 2)
//   params/<name>.spcy     current parameters
//   adam/<name>.m.spcy     first moments (likewise .v for second moments)
//   best/<name>.spcy       best-validation parameters, when present
// The training log is not part of the checkpoint.
void save_checkpoint(const std::filesystem::path& dir, const trainer::RunState& state);
trainer::RunState load_checkpoint(const std::filesystem::path& dir);

nlohmann::json grid_to_json(const spatial::GridSpec& grid);
spatial::GridSpec grid_from_json(const nlohmann::json& j, const ad::Tensor& coords);

}  // namespace spacy::io
