#include "spacy/io/config.hpp"

#include <cstdint>
#include <fstream>
#include <functional>
#include <map>

#include "spacy/io/tensor_file.hpp"

namespace spacy::io {
namespace {

using nlohmann::json;
using Setter = std::function<void(const json&)>;

template <class T>
Setter bind(T& field) {
  return [&field](const json& v) { field = v.get<T>(); };
}

// Accepts a single count or a per-variate list.
Setter bind_nodes(std::vector<std::size_t>& field) {
  return [&field](const json& v) {
    if (v.is_number_integer()) {
      if (v.get<std::int64_t>() < 0) throw ConfigError("key 'nodes': must be non-negative");
      field = {v.get<std::size_t>()};
    }
    else
      field = v.get<std::vector<std::size_t>>();
  };
}

void apply(const json& j, const std::map<std::string, Setter>& setters) {
  if (!j.is_object()) throw ConfigError("configuration must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    auto s = setters.find(it.key());
    if (s == setters.end()) throw ConfigError("unknown configuration key '" + it.key() + "'");
    try {
      s->second(it.value());
    } catch (const json::exception& e) {
      throw ConfigError("key '" + it.key() + "': " + e.what());
    }
  }
}

template <class C>
void validated(const C& c) {
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

}  // namespace

trainer::TrainConfig parse_train_config(const json& j) {
  trainer::TrainConfig c;
  const std::map<std::string, Setter> setters{
      {"lr_matrix", bind(c.lr_matrix)},
      {"lr_scm", bind(c.lr_scm)},
      {"lr_encoder", bind(c.lr_encoder)},
      {"lr_factor", bind(c.lr_factor)},
      {"lr_decoder", bind(c.lr_decoder)},
      {"batch_size", bind(c.batch_size)},
      {"outer_auglag", bind(c.outer_auglag)},
      {"inner_auglag", bind(c.inner_auglag)},
      {"scm_embed", bind(c.scm_embed)},
      {"decoder_embed", bind(c.decoder_embed)},
      {"sparsity_alpha", bind(c.sparsity_alpha)},
      {"spline", bind(c.spline)},
      {"freeze_epochs", bind(c.freeze_epochs)},
      {"seed", bind(c.seed)},
      {"precision", bind(c.precision)},
      {"nodes", bind_nodes(c.nodes)},
      {"lags", bind(c.lags)},
      {"kernel", bind(c.kernel)},
      {"scm", bind(c.scm)},
      {"decoder", bind(c.decoder)},
      {"per_point_noise", bind(c.per_point_noise)},
      {"init_log_scale", bind(c.init_log_scale)},
      {"validation_fraction", bind(c.validation_fraction)},
      {"eval_every", bind(c.eval_every)},
      {"plateau_steps", bind(c.plateau_steps)},
      {"plateau_tol", bind(c.plateau_tol)},
      {"decoder_points", bind(c.decoder_points)},
      {"max_steps", bind(c.max_steps)},
      {"threshold", bind(c.threshold)},
  };
  apply(j, setters);
  validated(c);
  return c;
}

synthgen::GenConfig parse_gen_config(const json& j) {
  synthgen::GenConfig c;
  std::string scm = std::string(scm::scm_name(c.scm)), mapping = std::string(synthgen::map_name(c.mapping));
  const std::map<std::string, Setter> setters{
      {"nodes", bind_nodes(c.variate_nodes)},
      {"lags", bind(c.lags)},
      {"rows", bind(c.rows)},
      {"cols", bind(c.cols)},
      {"samples", bind(c.samples)},
      {"length", bind(c.length)},
      {"burn_in", bind(c.burn_in)},
      {"scm", bind(scm)},
      {"mapping", bind(mapping)},
      {"noise_var", bind(c.noise_var)},
      {"obs_noise", bind(c.obs_noise)},
      {"inst_edge_multiplier", bind(c.inst_edge_multiplier)},
      {"lag_edge_multiplier", bind(c.lag_edge_multiplier)},
      {"lag_edges_per_lag", bind(c.lag_edges_per_lag)},
      {"min_center_distance", bind(c.min_center_distance)},
      {"gamma_lo", bind(c.gamma_lo)},
      {"gamma_hi", bind(c.gamma_hi)},
      {"scale_reference", bind(c.scale_reference)},
      {"seed", bind(c.seed)},
  };
  apply(j, setters);
  try {
    c.scm = scm::scm_from_name(scm);
    c.mapping = synthgen::map_from_name(mapping);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  validated(c);
  return c;
}

json to_json(const trainer::TrainConfig& c) {
  return json{{"lr_matrix", c.lr_matrix},
              {"lr_scm", c.lr_scm},
              {"lr_encoder", c.lr_encoder},
              {"lr_factor", c.lr_factor},
              {"lr_decoder", c.lr_decoder},
              {"batch_size", c.batch_size},
              {"outer_auglag", c.outer_auglag},
              {"inner_auglag", c.inner_auglag},
              {"scm_embed", c.scm_embed},
              {"decoder_embed", c.decoder_embed},
              {"sparsity_alpha", c.sparsity_alpha},
              {"spline", c.spline},
              {"freeze_epochs", c.freeze_epochs},
              {"seed", c.seed},
              {"precision", c.precision},
              {"nodes", c.nodes},
              {"lags", c.lags},
              {"kernel", c.kernel},
              {"scm", c.scm},
              {"decoder", c.decoder},
              {"per_point_noise", c.per_point_noise},
              {"init_log_scale", c.init_log_scale},
              {"validation_fraction", c.validation_fraction},
              {"eval_every", c.eval_every},
              {"plateau_steps", c.plateau_steps},
              {"plateau_tol", c.plateau_tol},
              {"decoder_points", c.decoder_points},
              {"max_steps", c.max_steps},
              {"threshold", c.threshold}};
}

json to_json(const synthgen::GenConfig& c) {
  return json{{"nodes", c.variate_nodes},
              {"lags", c.lags},
              {"rows", c.rows},
              {"cols", c.cols},
              {"samples", c.samples},
              {"length", c.length},
              {"burn_in", c.burn_in},
              {"scm", scm::scm_name(c.scm)},
              {"mapping", synthgen::map_name(c.mapping)},
              {"noise_var", c.noise_var},
              {"obs_noise", c.obs_noise},
              {"inst_edge_multiplier", c.inst_edge_multiplier},
              {"lag_edge_multiplier", c.lag_edge_multiplier},
              {"lag_edges_per_lag", c.lag_edges_per_lag},
              {"min_center_distance", c.min_center_distance},
              {"gamma_lo", c.gamma_lo},
              {"gamma_hi", c.gamma_hi},
              {"scale_reference", c.scale_reference},
              {"seed", c.seed}};
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("short write to " + path.string());
}

trainer::TrainConfig load_train_config(const std::filesystem::path& path) { return parse_train_config(read_json(path)); }
synthgen::GenConfig load_gen_config(const std::filesystem::path& path) { return parse_gen_config(read_json(path)); }

}  // namespace spacy::io
