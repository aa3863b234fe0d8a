#include "spacy/io/checkpoint.hpp"

#include <cmath>
#include <sstream>

#include "spacy/io/config.hpp"
#include "spacy/io/tensor_file.hpp"

namespace spacy::io {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

constexpr int kCheckpointVersion = 1;

// JSON has no infinities; they are stored as strings.
json real(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

double real(const json& j) {
  if (j.is_number()) return j.get<double>();
  const std::string s = j.get<std::string>();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  throw FormatError("bad real value '" + s + "'");
}

void save_params(const fs::path& dir, const ad::ParamSet& p) {
  fs::create_directories(dir);
  for (const auto& e : p.entries()) write_tensor(dir / (e.name + ".spcy"), e.value);
}

ad::ParamSet load_params(const fs::path& dir, const json& inventory) {
  ad::ParamSet p;
  for (const auto& e : inventory)
    p.add(e.at("name").get<std::string>(), ad::group_from_name(e.at("group").get<std::string>()),
          read_tensor(dir / (e.at("name").get<std::string>() + ".spcy")));
  return p;
}

}  // namespace

json grid_to_json(const spatial::GridSpec& grid) {
  return json{{"rows", grid.rows},
              {"cols", grid.cols},
              {"metric", grid.metric.kind == spatial::MetricKind::kEuclidean ? "euclidean" : "haversine"},
              {"radius", grid.metric.radius}};
}

spatial::GridSpec grid_from_json(const json& j, const ad::Tensor& coords) {
  spatial::GridSpec g;
  g.rows = j.at("rows").get<std::size_t>();
  g.cols = j.at("cols").get<std::size_t>();
  const std::string metric = j.at("metric").get<std::string>();
  if (metric == "euclidean")
    g.metric = spatial::Metric{};
  else if (metric == "haversine")
    g.metric = spatial::Metric::haversine(j.at("radius").get<double>());
  else
    throw FormatError("unknown metric '" + metric + "'");
  g.coords = coords;
  g.validate();
  return g;
}

void save_checkpoint(const fs::path& dir, const trainer::RunState& st) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  save_params(dir / "params", st.params);
  fs::create_directories(dir / "adam");
  json inventory = json::array(), adam_steps = json::array();
  for (std::size_t i = 0; i < st.params.size(); ++i) {
    const auto& e = st.params.entries()[i];
    inventory.push_back({{"name", e.name}, {"group", ad::group_name(e.group)}});
    const bool has_slot = i < st.adam.slots().size() && st.adam.slots()[i].t > 0;
    adam_steps.push_back(has_slot ? st.adam.slots()[i].t : 0);
    if (has_slot) {
      write_tensor(dir / "adam" / (e.name + ".m.spcy"), st.adam.slots()[i].m);
      write_tensor(dir / "adam" / (e.name + ".v.spcy"), st.adam.slots()[i].v);
    }
  }
  fs::remove_all(dir / "best");
  if (st.best_params) save_params(dir / "best", *st.best_params);
  write_tensor(dir / "grid.spcy", st.spec.grid.coords);

  std::ostringstream rng;
  rng << st.rng;
  json residual_mean = json::array(), residual_scale = json::array();
  for (double v : st.residual_scale.mean) residual_mean.push_back(real(v));
  for (double v : st.residual_scale.scale) residual_scale.push_back(real(v));
  json s{{"version", kCheckpointVersion},
         {"config", to_json(st.config)},
         {"grid", grid_to_json(st.spec.grid)},
         {"params", inventory},
         {"adam_steps", adam_steps},
         {"lambda_al", real(st.lambda_al)},
         {"penalty_c", real(st.penalty_c)},
         {"h_prev", real(st.h_prev)},
         {"step", st.step},
         {"outer", st.outer},
         {"inner", st.inner},
         {"finished", st.finished},
         {"rng", rng.str()},
         {"train_index", st.train_index},
         {"val_index", st.val_index},
         {"epoch_order", st.epoch_order},
         {"epoch_cursor", st.epoch_cursor},
         {"has_best", st.best_params.has_value()},
         {"best_val", real(st.best_val)},
         {"inner_best", real(st.inner_best)},
         {"inner_best_step", st.inner_best_step},
         {"residual_mean", residual_mean},
         {"residual_scale", residual_scale}};
  write_json(dir / "state.json", s);
}

trainer::RunState load_checkpoint(const fs::path& dir) {
  if (!fs::exists(dir / "state.json")) throw IoError("no checkpoint at " + dir.string());
  const json s = read_json(dir / "state.json");
  try {
    if (s.at("version").get<int>() != kCheckpointVersion) throw FormatError("unsupported checkpoint version");
    trainer::RunState st;
    st.config = parse_train_config(s.at("config"));
    st.spec = trainer::make_model_spec(st.config, grid_from_json(s.at("grid"), read_tensor(dir / "grid.spcy")));
    st.params = load_params(dir / "params", s.at("params"));
    st.adam = trainer::make_optimizer(st.config);
    const json& steps = s.at("adam_steps");
    st.adam.slots().resize(st.params.size());
    for (std::size_t i = 0; i < st.params.size(); ++i) {
      const std::size_t t = steps.at(i).get<std::size_t>();
      if (t == 0) continue;
      const std::string& name = st.params.entries()[i].name;
      auto& slot = st.adam.slots()[i];
      slot.t = t;
      slot.m = read_tensor(dir / "adam" / (name + ".m.spcy"));
      slot.v = read_tensor(dir / "adam" / (name + ".v.spcy"));
    }
    if (s.at("has_best").get<bool>()) st.best_params = load_params(dir / "best", s.at("params"));
    st.lambda_al = real(s.at("lambda_al"));
    st.penalty_c = real(s.at("penalty_c"));
    st.h_prev = real(s.at("h_prev"));
    st.step = s.at("step").get<std::size_t>();
    st.outer = s.at("outer").get<std::size_t>();
    st.inner = s.at("inner").get<std::size_t>();
    st.finished = s.at("finished").get<bool>();
    std::istringstream rng(s.at("rng").get<std::string>());
    rng >> st.rng;
    if (!rng) throw FormatError("bad rng state");
    st.train_index = s.at("train_index").get<std::vector<std::size_t>>();
    st.val_index = s.at("val_index").get<std::vector<std::size_t>>();
    st.epoch_order = s.at("epoch_order").get<std::vector<std::size_t>>();
    st.epoch_cursor = s.at("epoch_cursor").get<std::size_t>();
    st.best_val = real(s.at("best_val"));
    st.inner_best = real(s.at("inner_best"));
    st.inner_best_step = s.at("inner_best_step").get<std::size_t>();
    for (const auto& v : s.at("residual_mean")) st.residual_scale.mean.push_back(real(v));
    for (const auto& v : s.at("residual_scale")) st.residual_scale.scale.push_back(real(v));
    return st;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(dir.string() + "/state.json: " + e.what());
  }
}

}  // namespace spacy::io
