#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "spacy/autodiff/tensor.hpp"
#include "spacy/eval/metrics.hpp"

namespace spacy::io {

inline constexpr const char* kSoftwareVersion = "0.1.0";
inline constexpr int kManifestVersion = 1;

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);
// FNV-1a over the little-endian 64-bit payload of the tensor.
std::uint64_t fingerprint(const ad::Tensor& t);
std::string hex64(std::uint64_t v);

struct Manifest {
  std::string kind;  // "dataset" or "run"
  nlohmann::json config;
  std::uint64_t seed = 0;
  std::uint64_t dataset_fingerprint = 0;
  std::vector<std::string> files;  // relative to the manifest's directory
  nlohmann::json metadata = nlohmann::json::object();
};

nlohmann::json to_json(const Manifest& m);
Manifest manifest_from_json(const nlohmann::json& j);
void write_manifest(const std::filesystem::path& dir, const Manifest& m);
Manifest read_manifest(const std::filesystem::path& dir);
// Throws FormatError if a listed file is missing.
void check_inventory(const std::filesystem::path& dir, const Manifest& m);

nlohmann::json to_json(const eval::EvalReport& r);

}  // namespace spacy::io
