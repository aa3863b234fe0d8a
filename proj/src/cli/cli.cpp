#include "spacy/cli/cli.hpp"

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "spacy/eval/metrics.hpp"
#include "spacy/io/checkpoint.hpp"
#include "spacy/io/config.hpp"
#include "spacy/io/manifest.hpp"
#include "spacy/io/tensor_file.hpp"
#include "spacy/synthgen/generator.hpp"
#include "spacy/trainer/train.hpp"
#include "spacy/variational/posteriors.hpp"

namespace spacy::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw io::IoError("cannot create " + dir.string() + ": " + ec.message());
}

struct LoadedDataset {
  synthgen::GenConfig config;
  trainer::Dataset data;
  io::Manifest manifest;
};

LoadedDataset load_dataset(const fs::path& dir) {
  LoadedDataset d;
  d.manifest = io::read_manifest(dir);
  io::check_inventory(dir, d.manifest);
  d.config = io::parse_gen_config(d.manifest.config);
  d.data.observations = io::read_tensor(dir / "observations.spcy");
  d.data.grid = io::grid_from_json(d.manifest.metadata.at("grid"), io::read_tensor(dir / "grid.spcy"));
  if (io::fingerprint(d.data.observations) != d.manifest.dataset_fingerprint)
    throw io::FormatError("observation fingerprint does not match " + (dir / "manifest.json").string());
  return d;
}

int cmd_generate(const fs::path& config_path, const fs::path& out_dir, std::ostream& out) {
  const synthgen::GenConfig cfg = io::load_gen_config(config_path);
  const synthgen::GroundTruth gt = synthgen::generate_dataset(cfg);
  ensure_dir(out_dir);
  ad::Tensor centers({cfg.nodes(), 2}), log_scale({cfg.nodes()}), gamma({cfg.nodes()});
  for (std::size_t d = 0; d < cfg.nodes(); ++d) {
    centers[2 * d] = gt.spatial.kernels.nodes[d].center[0];
    centers[2 * d + 1] = gt.spatial.kernels.nodes[d].center[1];
    log_scale[d] = gt.spatial.kernels.nodes[d].log_scale;
    gamma[d] = gt.spatial.gamma_raw[d];
  }
  std::vector<std::pair<std::string, const ad::Tensor*>> files{{"observations.spcy", &gt.observations},
                                                               {"latents.spcy", &gt.latents},
                                                               {"factors.spcy", &gt.factors},
                                                               {"centers.spcy", &centers},
                                                               {"log_scale.spcy", &log_scale},
                                                               {"gamma_raw.spcy", &gamma},
                                                               {"grid.spcy", &gt.grid.coords}};
  const ad::Tensor graph = gt.graph.to_tensor();
  files.emplace_back("graph.spcy", &graph);
  if (cfg.scm == scm::ScmKind::kLinear) files.emplace_back("weights.spcy", &gt.mechanism.weights);
  io::Manifest m;
  m.kind = "dataset";
  m.config = io::to_json(cfg);
  m.seed = cfg.seed;
  m.dataset_fingerprint = io::fingerprint(gt.observations);
  for (const auto& [name, t] : files) {
    io::write_tensor(out_dir / name, *t);
    m.files.push_back(name);
  }
  io::write_json(out_dir / "config.json", m.config);
  m.files.push_back("config.json");
  m.metadata = {{"grid", io::grid_to_json(gt.grid)}, {"mechanism_attempts", gt.mechanism_attempts}};
  io::write_manifest(out_dir, m);
  out << "generated " << cfg.samples << " samples, " << cfg.nodes() << " nodes, " << gt.graph.edge_count() << " edges -> "
      << out_dir.string() << '\n';
  return kOk;
}

int cmd_train(const fs::path& data_dir, const fs::path& config_path, const fs::path& run_dir, std::ostream& out) {
  const LoadedDataset ds = load_dataset(data_dir);
  json cj = io::read_json(config_path);
  if (!cj.is_object()) throw io::ConfigError("configuration must be a JSON object");
  // Structure defaults to the dataset's when the config leaves it out.
  if (!cj.contains("nodes")) cj["nodes"] = ds.config.variate_nodes;
  if (!cj.contains("lags")) cj["lags"] = ds.config.lags;
  const trainer::TrainConfig cfg = io::parse_train_config(cj);
  trainer::RunState st = trainer::init_run(ds.data, cfg);
  ensure_dir(run_dir);
  std::ofstream log(run_dir / "log.csv");
  if (!log) throw io::IoError("cannot write " + (run_dir / "log.csv").string());
  trainer::write_log_header(log);
  trainer::TrainHooks hooks{[&log](const trainer::LogRow& r) { trainer::write_log_row(log, r); }};
  try {
    while (!st.finished) {
      const std::size_t outer = st.outer;
      trainer::train(st, ds.data, 1, hooks);
      if (st.outer != outer || st.finished) io::save_checkpoint(run_dir / "checkpoint", st);
    }
  } catch (const trainer::TrainingDiverged&) {
    log.flush();
    io::save_checkpoint(run_dir / "checkpoint", st);
    throw;
  }
  log.flush();
  io::write_tensor(run_dir / "edge_probs.spcy", trainer::edge_probabilities(st.params));
  io::Manifest m;
  m.kind = "run";
  m.config = io::to_json(cfg);
  m.seed = cfg.seed;
  m.dataset_fingerprint = ds.manifest.dataset_fingerprint;
  m.files = {"log.csv", "edge_probs.spcy", "checkpoint/state.json"};
  m.metadata = {{"dataset", fs::absolute(data_dir).string()}, {"steps", st.step}, {"penalty_c", st.penalty_c}};
  io::write_manifest(run_dir, m);
  out << "trained " << st.step << " steps, final h " << st.log.back().h << " -> " << run_dir.string() << '\n';
  return kOk;
}

int cmd_eval(const fs::path& run_dir, const fs::path& truth_dir, const fs::path& report_path, std::ostream& out) {
  const trainer::RunState st = io::load_checkpoint(run_dir / "checkpoint");
  const LoadedDataset ds = load_dataset(truth_dir);
  const scm::TemporalGraph truth = scm::TemporalGraph::from_tensor(io::read_tensor(truth_dir / "graph.spcy"));
  if (truth.nodes() != st.spec.nodes())
    throw io::ConfigError("node count mismatch: run has " + std::to_string(st.spec.nodes()) + ", truth has " +
                          std::to_string(truth.nodes()));
  if (truth.lags() != st.spec.lags)
    throw io::ConfigError("lag mismatch: run has " + std::to_string(st.spec.lags) + ", truth has " + std::to_string(truth.lags()));
  const ad::Tensor& x = ds.data.observations;
  if (x.dim(1) != st.spec.variates() || x.dim(2) != st.spec.grid.size())
    throw io::ConfigError("truth observations do not match the run's variates or grid");
  const ad::Tensor truth_latents = io::read_tensor(truth_dir / "latents.spcy");
  const ad::Tensor est_latents = trainer::infer_latents(st, x);
  const scm::TemporalGraph estimate = trainer::extract_graph(st, st.config.threshold);
  const eval::EvalReport r = eval::evaluate(truth, estimate, &truth_latents, &est_latents);
  json j = io::to_json(r);
  j["threshold"] = st.config.threshold;
  io::write_json(report_path, j);
  char buf[128];
  std::snprintf(buf, sizeof buf, "f1 %.4f precision %.4f recall %.4f mcc %.4f\n", r.f1, r.precision, r.recall, r.mcc);
  out << buf;
  return kOk;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void emit_text(const std::string& text, const std::string& out_path, std::ostream& out) {
  if (out_path.empty()) {
    out << text;
    return;
  }
  std::ofstream f(out_path);
  if (!f) throw io::IoError("cannot write " + out_path);
  f << text;
  if (!f) throw io::IoError("short write to " + out_path);
}

int cmd_export(const fs::path& run_dir, const std::string& what, const std::string& format, const std::string& out_path,
               const std::string& data_dir, std::ostream& out) {
  const trainer::RunState st = io::load_checkpoint(run_dir / "checkpoint");
  if (format == "spcy" && out_path.empty()) throw io::ConfigError("--format spcy requires --out");
  const std::size_t d = st.spec.nodes();

  if (what == "graph") {
    const ad::Tensor probs = trainer::edge_probabilities(st.params);
    const scm::TemporalGraph g = trainer::extract_graph(probs, st.config.threshold);
    if (format == "spcy") {
      io::write_tensor(out_path, probs);
      return kOk;
    }
    std::ostringstream s;
    json edges = json::array();
    if (format == "csv") s << "lag,src,dst,prob\n";
    for (std::size_t k = 0; k <= st.spec.lags; ++k)
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) {
          if (!g.edge(k, i, j)) continue;
          const double p = probs[(k * d + i) * d + j];
          if (format == "csv") s << k << ',' << i << ',' << j << ',' << fmt(p) << '\n';
          edges.push_back({{"lag", k}, {"src", i}, {"dst", j}, {"prob", p}});
        }
    if (format == "json") s << json{{"threshold", st.config.threshold}, {"edges", edges}}.dump(2) << '\n';
    emit_text(s.str(), out_path, out);
    return kOk;
  }

  if (what == "factors") {
    ad::Tape tape;
    ad::BoundParams p(tape, st.params, [](ad::ParamGroup) { return false; });
    const ad::Tensor f = variational::mean_factor(p, st.spec.grid, st.spec.kernel).value();
    const ad::Tensor centers = spatial::squash_center(st.spec.grid, p["factor.center_mean"]).value();
    const ad::Tensor& log_scale = st.params["factor.scale_mean"];
    if (format == "spcy") {
      io::write_tensor(out_path, f);
      return kOk;
    }
    std::ostringstream s;
    const std::size_t L = f.dim(0);
    if (format == "csv") {
      s << "point";
      for (std::size_t j = 0; j < d; ++j) s << ",node" << j;
      s << '\n';
      for (std::size_t l = 0; l < L; ++l) {
        s << l;
        for (std::size_t j = 0; j < d; ++j) s << ',' << fmt(f[l * d + j]);
        s << '\n';
      }
    } else {
      json nodes = json::array(), matrix = json::array();
      for (std::size_t j = 0; j < d; ++j)
        nodes.push_back({{"node", j}, {"center", {centers[2 * j], centers[2 * j + 1]}}, {"log_scale", log_scale[j]}});
      for (std::size_t l = 0; l < L; ++l) matrix.push_back(std::vector<double>(f.data().begin() + l * d, f.data().begin() + (l + 1) * d));
      s << json{{"kernel", spatial::kernel_name(st.spec.kernel)}, {"nodes", nodes}, {"matrix", matrix}}.dump(2) << '\n';
    }
    emit_text(s.str(), out_path, out);
    return kOk;
  }

  // latents
  if (data_dir.empty()) throw io::ConfigError("--what latents requires --data");
  const LoadedDataset ds = load_dataset(data_dir);
  const ad::Tensor& x = ds.data.observations;
  if (x.dim(1) != st.spec.variates() || x.dim(2) != st.spec.grid.size())
    throw io::ConfigError("dataset does not match the run's variates or grid");
  const ad::Tensor z = trainer::infer_latents(st, x);
  if (format == "spcy") {
    io::write_tensor(out_path, z);
    return kOk;
  }
  std::ostringstream s;
  const std::size_t n = z.dim(0), t = z.dim(1);
  if (format == "csv") {
    s << "sample,t";
    for (std::size_t j = 0; j < d; ++j) s << ",node" << j;
    s << '\n';
    for (std::size_t i = 0; i < n * t; ++i) {
      s << i / t << ',' << i % t;
      for (std::size_t j = 0; j < d; ++j) s << ',' << fmt(z[i * d + j]);
      s << '\n';
    }
  } else {
    json samples = json::array();
    for (std::size_t i = 0; i < n; ++i) {
      json rows = json::array();
      for (std::size_t step = 0; step < t; ++step)
        rows.push_back(std::vector<double>(z.data().begin() + (i * t + step) * d, z.data().begin() + (i * t + step + 1) * d));
      samples.push_back(rows);
    }
    s << json{{"shape", {n, t, d}}, {"latents", samples}}.dump() << '\n';
  }
  emit_text(s.str(), out_path, out);
  return kOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Spatiotemporal latent causal discovery"};
  app.require_subcommand(1);
  std::string config, out_dir, data_dir, run_dir, truth_dir, report, what, format, out_path;

  auto* gen = app.add_subcommand("generate", "Generate a synthetic dataset with ground truth");
  gen->add_option("--config", config, "Generator config (JSON)")->required();
  gen->add_option("--out", out_dir, "Output dataset directory")->required();

  auto* tr = app.add_subcommand("train", "Train on a dataset directory");
  tr->add_option("--data", data_dir, "Dataset directory")->required();
  tr->add_option("--config", config, "Training config (JSON)")->required();
  tr->add_option("--out", run_dir, "Run directory")->required();

  auto* ev = app.add_subcommand("eval", "Score a run against ground truth");
  ev->add_option("--run", run_dir, "Run directory")->required();
  ev->add_option("--truth", truth_dir, "Dataset directory with ground truth")->required();
  ev->add_option("--report", report, "Report path (JSON)")->required();

  auto* ex = app.add_subcommand("export", "Export learned artifacts");
  ex->add_option("--run", run_dir, "Run directory")->required();
  ex->add_option("--what", what, "factors, graph or latents")->required()->check(CLI::IsMember({"factors", "graph", "latents"}));
  ex->add_option("--format", format, "spcy, csv or json")->required()->check(CLI::IsMember({"spcy", "csv", "json"}));
  ex->add_option("--out", out_path, "Output file (stdout when omitted; required for spcy)");
  ex->add_option("--data", data_dir, "Dataset directory (latents only)");

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kBadArgs;
  }

  try {
    if (*gen) return cmd_generate(config, out_dir, out);
    if (*tr) return cmd_train(data_dir, config, run_dir, out);
    if (*ev) return cmd_eval(run_dir, truth_dir, report, out);
    return cmd_export(run_dir, what, format, out_path, data_dir, out);
  } catch (const trainer::TrainingDiverged& e) {
    err << "error: training diverged: " << e.what() << '\n';
    return kDiverged;
  } catch (const io::IoError& e) {
    err << "error: " << e.what() << '\n';
    return kIoFailure;
  } catch (const io::FormatError& e) {
    err << "error: " << e.what() << '\n';
    return kIoFailure;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kIoFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kInvalid;
  }
}

}  // namespace spacy::cli
