#pragma once

#include <filesystem>
#include <stdexcept>

#include <json.hpp>

#include "spacy/synthgen/generator.hpp"
#include "spacy/trainer/train.hpp"

namespace spacy::io {

// Unknown key, type mismatch, or constraint violation in a configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Omitted keys keep their defaults; unknown keys are rejected by name. The
// result is validated.
trainer::TrainConfig parse_train_config(const nlohmann::json& j);
synthgen::GenConfig parse_gen_config(const nlohmann::json& j);

nlohmann::json to_json(const trainer::TrainConfig& c);
nlohmann::json to_json(const synthgen::GenConfig& c);

nlohmann::json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

trainer::TrainConfig load_train_config(const std::filesystem::path& path);
synthgen::GenConfig load_gen_config(const std::filesystem::path& path);

}  // namespace spacy::io
