#include "spacy/io/manifest.hpp"

#include <cmath>
#include <cstdio>

#include "spacy/io/config.hpp"
#include "spacy/io/tensor_file.hpp"

namespace spacy::io {

using nlohmann::json;

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fingerprint(const ad::Tensor& t) {
  const std::vector<std::uint8_t> bytes = encode_tensor(t, Dtype::kFloat64);
  const std::size_t header = bytes.size() - t.size() * sizeof(double);
  return fnv1a64(std::span<const std::uint8_t>(bytes).subspan(header));
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

json to_json(const Manifest& m) {
  return json{{"format_version", kManifestVersion},
              {"software_version", kSoftwareVersion},
              {"kind", m.kind},
              {"seed", m.seed},
              {"dataset_fingerprint", hex64(m.dataset_fingerprint)},
              {"files", m.files},
              {"config", m.config},
              {"metadata", m.metadata}};
}

Manifest manifest_from_json(const json& j) {
  try {
    if (j.at("format_version").get<int>() != kManifestVersion) throw FormatError("unsupported manifest version");
    Manifest m;
    m.kind = j.at("kind").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.dataset_fingerprint = std::stoull(j.at("dataset_fingerprint").get<std::string>(), nullptr, 16);
    m.files = j.at("files").get<std::vector<std::string>>();
    m.config = j.at("config");
    m.metadata = j.value("metadata", json::object());
    return m;
  } catch (const json::exception& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  } catch (const std::logic_error& e) {
    throw FormatError(std::string("manifest fingerprint: ") + e.what());
  }
}

void write_manifest(const std::filesystem::path& dir, const Manifest& m) { write_json(dir / "manifest.json", to_json(m)); }

Manifest read_manifest(const std::filesystem::path& dir) { return manifest_from_json(read_json(dir / "manifest.json")); }

void check_inventory(const std::filesystem::path& dir, const Manifest& m) {
  for (const auto& f : m.files)
    if (!std::filesystem::exists(dir / f)) throw FormatError("manifest lists missing file " + (dir / f).string());
}

json to_json(const eval::EvalReport& r) {
  json lags = json::array();
  for (std::size_t k = 0; k < r.per_lag.size(); ++k)
    lags.push_back({{"lag", k}, {"tp", r.per_lag[k].tp}, {"fp", r.per_lag[k].fp}, {"fn", r.per_lag[k].fn}});
  return json{{"f1", r.f1},
              {"precision", r.precision},
              {"recall", r.recall},
              {"mcc", std::isnan(r.mcc) ? json(nullptr) : json(r.mcc)},
              {"permutation", r.permutation},
              {"mode", eval::match_mode_name(r.mode)},
              {"per_lag", lags},
              {"correlation", "absolute"},
              {"constant_series", r.constant_series}};
}

}  // namespace spacy::io
