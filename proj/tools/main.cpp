#include <CLI11.hpp>
#include <json.hpp>

#include <Eigen/Core>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "terrakoop/config.hpp"
#include "terrakoop/dataset.hpp"
#include "terrakoop/errors.hpp"
#include "terrakoop/json_io.hpp"
#include "terrakoop/kmpc.hpp"
#include "terrakoop/lifting.hpp"
#include "terrakoop/predict.hpp"
#include "terrakoop/ssid.hpp"
#include "terrakoop/terramech.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace terrakoop;

namespace {

struct Common {
  std::string config_path;
  std::string out;
  std::optional<int> workers;
  std::optional<std::uint64_t> seed;
  std::string soil;
};

struct Args {
  std::string data, test, model, baseline, flat_data;
  std::vector<double> refresh;
  std::string terrain;
  std::optional<double> amplitude;
  std::optional<int> trajectories;
  bool deterministic = false;
};

config::ExperimentConfig effective_config(const Common& c) {
  config::ExperimentConfig cfg;
  if (!c.config_path.empty()) cfg = config::load(c.config_path);
  config::apply_environment(cfg);
  if (!c.soil.empty()) {
    cfg.soil = terramech::soil_by_name(c.soil).name;
    cfg.dataset.soil = cfg.soil;
    cfg.ssid.soil = cfg.soil;
  }
  if (c.workers) {
    if (*c.workers < 1) throw ConfigError("--workers must be >= 1");
    cfg.workers = *c.workers;
    cfg.dataset.workers = cfg.workers;
    cfg.lifting.workers = cfg.workers;
  }
  if (c.seed) cfg.dataset.seed = *c.seed;
  if (!c.out.empty()) cfg.output_dir = c.out;
  return cfg;
}

std::string out_path(const config::ExperimentConfig& cfg, const std::string& name) {
  fs::create_directories(cfg.output_dir);
  return (fs::path(cfg.output_dir) / name).string();
}

/// Everything needed to rerun: effective configuration, seeds, input hashes
/// and build versions. Timings are left out on purpose so that reruns match.
std::vector<std::string> g_argv;

void write_stamp(const config::ExperimentConfig& cfg, const std::string& command,
                 const json& inputs) {
  const json c = config::to_json(cfg);
  json stamp{{"tool", "terrakoop"},
             {"version", config::kVersion},
             {"command", command},
             {"argv", g_argv},
             {"config_sha256", json_io::sha256_hex(c.dump())},
             {"config", c},
             {"seeds",
              {{"dataset", cfg.dataset.seed}, {"split", cfg.effective_split_seed()}}},
             {"inputs", inputs},
             {"build",
              {{"compiler", __VERSION__},
               {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                             std::to_string(EIGEN_MAJOR_VERSION) + "." +
                             std::to_string(EIGEN_MINOR_VERSION)},
               {"cxx", __cplusplus}}}};
  json_io::write_file(out_path(cfg, command + "_stamp.json"), stamp.dump(2) + "\n");
}

json hash_inputs(const std::vector<std::string>& paths) {
  json j = json::object();
  for (const auto& p : paths) {
    if (!p.empty()) j[p] = json_io::sha256_file(p);
  }
  return j;
}

std::vector<ssid::IoRecord> load_io(const std::string& manifest_path, std::string* soil = nullptr) {
  if (manifest_path.empty()) throw ConfigError("a dataset manifest is required (--data)");
  const auto m = dataset::load_manifest(manifest_path);
  dataset::verify_manifest(m);
  if (soil) *soil = m.soil;
  return predict::io_records(dataset::load_records(m));
}

predict::Predictor load_predictor(const std::string& dir) {
  if (dir.empty()) throw ConfigError("a model directory is required (--model)");
  return {ssid::load_model((fs::path(dir) / "model.json").string()),
          lifting::load_lifting((fs::path(dir) / "lifting.json").string())};
}

std::vector<std::string> model_inputs(const std::string& dir) {
  return {(fs::path(dir) / "model.json").string(), (fs::path(dir) / "lifting.json").string()};
}

json cmd_gen(const config::ExperimentConfig& cfg_in, const Args& a) {
  config::ExperimentConfig cfg = cfg_in;
  if (a.trajectories) cfg.dataset.n_trajectories = *a.trajectories;
  if (!a.terrain.empty()) cfg.dataset.terrain.kind = a.terrain;
  if (a.amplitude) cfg.dataset.terrain.amplitude = *a.amplitude;
  cfg.validate();
  const auto m = dataset::generate_dataset(cfg.dataset, cfg.output_dir);
  auto [train, test] = dataset::split(m, cfg.test_fraction, cfg.effective_split_seed());
  dataset::save_manifest(out_path(cfg, "train.json"), train);
  dataset::save_manifest(out_path(cfg, "test.json"), test);
  int truncated = 0;
  for (const auto& e : m.entries) truncated += e.termination != "completed";
  write_stamp(cfg, "gen", json::object());
  return {{"trajectories", m.entries.size()},
          {"train", train.entries.size()},
          {"test", test.entries.size()},
          {"truncated", truncated},
          {"soil", m.soil},
          {"terrain", m.terrain.kind},
          {"manifest", out_path(cfg, "manifest.json")}};
}

json cmd_identify(const config::ExperimentConfig& cfg, const Args& a) {
  std::string soil;
  const auto records = load_io(a.data, &soil);
  ssid::IdentifyConfig sc = cfg.ssid;
  sc.soil = soil;
  const ssid::Identification id = ssid::identify(records, sc);
  const auto [Y, Z] = predict::lifting_pairs(id, records);
  const lifting::LiftingMap lift = lifting::fit_lifting(Y, Z, cfg.lifting);
  ssid::save_model(out_path(cfg, "model.json"), id.model);
  lifting::save_lifting(out_path(cfg, "lifting.json"), lift);
  std::string log = "record,G,accepted\n";
  for (const auto& e : id.model.acceptance_log) {
    log += std::to_string(e.record) + ",";
    json_io::append_number(log, e.G);
    log += e.accepted ? ",1\n" : ",0\n";
  }
  json_io::write_file(out_path(cfg, "acceptance.csv"), log);
  write_stamp(cfg, "identify", hash_inputs({a.data}));
  int accepted = 0;
  for (const auto& e : id.model.acceptance_log) accepted += e.accepted;
  return {{"soil", soil},
          {"r", id.model.r},
          {"spectral_radius", id.model.spectral_radius()},
          {"stabilized", id.model.stabilized},
          {"records", records.size()},
          {"accepted", accepted},
          {"model", out_path(cfg, "model.json")}};
}

json cmd_sweep(const config::ExperimentConfig& cfg, const Args& a) {
  std::string soil, test_soil;
  const auto train = load_io(a.data, &soil);
  const auto tests = load_io(a.test, &test_soil);
  ssid::IdentifyConfig sc = cfg.ssid;
  sc.soil = soil;
  const auto refreshes = a.refresh.empty() ? cfg.evaluation.refresh : a.refresh;
  const ssid::Accumulation acc = ssid::accumulate(train, sc);
  std::vector<predict::MetricRow> rows;
  const auto& labels = dataset::output_labels();

  const auto orders = predict::order_sweep(acc, train, tests, cfg.evaluation.orders, sc,
                                           cfg.lifting, cfg.evaluation.primary_refresh,
                                           cfg.workers);
  const std::string tag = "order_sweep";
  for (const auto& pt : orders) {
    predict::append_set_rmse(rows, tag, test_soil, pt.r, cfg.evaluation.primary_refresh, pt.rmse,
                             labels);
    for (Eigen::Index i = 0; i < pt.n_rmse.size(); ++i) {
      rows.push_back({tag, test_soil, pt.r, cfg.evaluation.primary_refresh,
                      labels[std::size_t(i)], "n_rmse", pt.n_rmse[i]});
    }
    rows.push_back({tag, test_soil, pt.r, cfg.evaluation.primary_refresh, "all",
                    "spectral_radius", pt.spectral_radius});
  }

  const ssid::Identification id = ssid::realize(acc, train, acc.r, sc);
  const auto [Y, Z] = predict::lifting_pairs(id, train);
  const predict::Predictor pred{id.model, lifting::fit_lifting(Y, Z, cfg.lifting)};
  const auto sweep = predict::refresh_sweep(pred, tests, refreshes, cfg.workers);
  for (const auto& pt : sweep) {
    predict::append_set_rmse(rows, "refresh_sweep", test_soil, id.model.r, pt.refresh, pt.rmse,
                             labels);
  }
  json_io::write_file(out_path(cfg, "metrics.csv"), predict::metrics_csv(rows));
  write_stamp(cfg, "sweep", hash_inputs({a.data, a.test}));
  json refresh_rmse = json::array();
  for (const auto& pt : sweep) {
    refresh_rmse.push_back({{"refresh", pt.refresh},
                            {"rmse", std::vector<double>(pt.rmse.pooled.data(),
                                                         pt.rmse.pooled.data() + 3)}});
  }
  json order_list = json::array();
  for (const auto& pt : orders) order_list.push_back(pt.r);
  return {{"soil", soil},
          {"r", id.model.r},
          {"orders", order_list},
          {"refresh_sweep", refresh_rmse},
          {"metrics", out_path(cfg, "metrics.csv")}};
}

json cmd_eval(const config::ExperimentConfig& cfg, const Args& a) {
  const predict::Predictor pred = load_predictor(a.model);
  std::string soil;
  const auto tests = load_io(a.data, &soil);
  const auto refreshes = a.refresh.empty() ? std::vector<double>{cfg.evaluation.primary_refresh}
                                           : a.refresh;
  const auto& labels = dataset::output_labels();
  std::vector<predict::MetricRow> rows;
  std::vector<std::string> inputs = model_inputs(a.model);
  inputs.push_back(a.data);
  std::optional<predict::Predictor> base;
  if (!a.baseline.empty()) {
    base = load_predictor(a.baseline);
    for (const auto& p : model_inputs(a.baseline)) inputs.push_back(p);
  }
  std::vector<ssid::IoRecord> flat;
  if (!a.flat_data.empty()) {
    flat = load_io(a.flat_data);
    inputs.push_back(a.flat_data);
  }
  json summary_rows = json::array();
  for (double r : refreshes) {
    const auto m = predict::rmse_set(predict::evaluate(pred, tests, r, cfg.workers));
    predict::append_set_rmse(rows, pred.model.soil, soil, pred.model.r, r, m, labels);
    json entry{{"refresh", r},
               {"rmse", std::vector<double>(m.pooled.data(), m.pooled.data() + m.pooled.size())}};
    if (base) {
      const auto b = predict::rmse_set(predict::evaluate(*base, tests, r, cfg.workers));
      predict::append_set_rmse(rows, base->model.soil, soil, base->model.r, r, b, labels);
      const Eigen::VectorXd ratio = m.pooled.cwiseQuotient(b.pooled);
      for (Eigen::Index i = 0; i < ratio.size(); ++i) {
        rows.push_back({pred.model.soil, soil, pred.model.r, r, labels[std::size_t(i)],
                        "rmse_ratio_vs_" + base->model.soil, ratio[i]});
      }
      entry["ratio"] = std::vector<double>(ratio.data(), ratio.data() + ratio.size());
    }
    if (!flat.empty()) {
      const auto f = predict::rmse_set(predict::evaluate(pred, flat, r, cfg.workers));
      predict::append_set_rmse(rows, pred.model.soil, soil + "_flat", pred.model.r, r, f,
                               labels);
      const Eigen::VectorXd pct = predict::pct_rmse(m.pooled, f.pooled);
      for (Eigen::Index i = 0; i < pct.size(); ++i) {
        rows.push_back({pred.model.soil, soil, pred.model.r, r, labels[std::size_t(i)],
                        "pct_rmse", pct[i]});
      }
      entry["pct_rmse"] = std::vector<double>(pct.data(), pct.data() + pct.size());
    }
    summary_rows.push_back(entry);
  }
  json_io::write_file(out_path(cfg, "metrics.csv"), predict::metrics_csv(rows));
  write_stamp(cfg, "eval", hash_inputs(inputs));
  return {{"model_soil", pred.model.soil},
          {"data_soil", soil},
          {"results", summary_rows},
          {"metrics", out_path(cfg, "metrics.csv")}};
}

json cmd_mpc(const config::ExperimentConfig& cfg, const Args& a) {
  const predict::Predictor pred = load_predictor(a.model);
  kmpc::Plant plant;
  plant.vehicle = cfg.dataset.vehicle;
  plant.soil = terramech::soil_by_name(cfg.soil);
  plant.terrain = Terrain::flat();
  const kmpc::Reference ref = kmpc::fishhook_reference(plant, cfg.reference.fishhook);
  const kmpc::ClosedLoopLog log =
      kmpc::run_closed_loop(plant, {pred.model, pred.lifting}, cfg.mpc, ref);
  json_io::write_file(out_path(cfg, "closed_loop.csv"), kmpc::log_csv(log, a.deterministic));
  write_stamp(cfg, "mpc", hash_inputs(model_inputs(a.model)));
  json out{{"model_soil", pred.model.soil},
           {"plant_soil", plant.soil.name},
           {"termination", log.termination},
           {"solves", log.solves.size()},
           {"mean_cost", log.mean_cost},
           {"inputs_within_bounds", log.inputs_within_bounds},
           {"monotone", log.monotone},
           {"log", out_path(cfg, "closed_loop.csv")}};
  if (!a.deterministic) out["mean_solve_ms"] = log.mean_solve_ms;
  return out;
}

json cmd_forces(const config::ExperimentConfig& cfg, const Args&) {
  const terramech::SoilParams soil = terramech::soil_by_name(cfg.soil);
  const terramech::WheelGeometry wheel = cfg.dataset.vehicle.wheel;
  std::string csv = "soil,N,beta,s,h_f,F_l,F_c,F_z\n";
  int rows = 0;
  for (double N : {1000.0, 2000.0, 3000.0}) {
    for (double beta : {0.0, 0.1, 0.2}) {
      for (int i = 0; i <= 40; ++i) {
        const double s = -0.8 + 1.6 * i / 40.0;
        const double h = terramech::solve_sinkage(N, s, beta, soil, wheel);
        const auto f = terramech::integrate_forces(h, {s, beta, N}, soil, wheel);
        csv += soil.name;
        for (double v : {N, beta, s, h, f.F_l, f.F_c, f.F_z}) {
          csv += ",";
          json_io::append_number(csv, v);
        }
        csv += "\n";
        ++rows;
      }
    }
  }
  json_io::write_file(out_path(cfg, "forces.csv"), csv);
  write_stamp(cfg, "forces", json::object());
  return {{"soil", soil.name}, {"rows", rows}, {"table", out_path(cfg, "forces.csv")}};
}

}  // namespace

int main(int argc, char** argv) {
  g_argv.assign(argv, argv + argc);
  CLI::App app{"Koopman identification and MPC for off-road vehicles on deformable terrain"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(config::kVersion));
  Common common;
  Args args;
  auto add_common = [&](CLI::App* s) {
    s->add_option("--config", common.config_path, "experiment configuration (JSON)")
        ->check(CLI::ExistingFile);
    s->add_option("--out", common.out, "output directory");
    s->add_option("--workers", common.workers, "worker threads");
    s->add_option("--seed", common.seed, "dataset seed");
    s->add_option("--soil", common.soil, "soil (sandy_loam | clay)");
  };

  auto* gen = app.add_subcommand("gen", "generate a trajectory dataset and train/test split");
  add_common(gen);
  gen->add_option("-n,--trajectories", args.trajectories, "number of trajectories");
  gen->add_option("--terrain", args.terrain, "flat | random");
  gen->add_option("--amplitude", args.amplitude, "random terrain amplitude [m]");

  auto* identify = app.add_subcommand("identify", "identify a model and fit its lifting");
  add_common(identify);
  identify->add_option("--data", args.data, "training manifest")->required();

  auto* sweep = app.add_subcommand("sweep", "order and refresh sweeps");
  add_common(sweep);
  sweep->add_option("--data", args.data, "training manifest")->required();
  sweep->add_option("--test", args.test, "test manifest")->required();
  sweep->add_option("--refresh", args.refresh, "refresh periods [s]");

  auto* eval = app.add_subcommand("eval", "rollout metrics of a stored model");
  add_common(eval);
  eval->add_option("--model", args.model, "directory with model.json and lifting.json")
      ->required();
  eval->add_option("--data", args.data, "test manifest")->required();
  eval->add_option("--baseline", args.baseline, "second model directory for RMSE ratios");
  eval->add_option("--flat-data", args.flat_data, "flat-terrain manifest for %RMSE");
  eval->add_option("--refresh", args.refresh, "refresh periods [s]");

  auto* mpc = app.add_subcommand("mpc", "closed-loop fishhook run on the --soil plant");
  add_common(mpc);
  mpc->add_option("--model", args.model, "directory with model.json and lifting.json")
      ->required();
  mpc->add_flag("--deterministic", args.deterministic, "write zero solve times");

  auto* forces = app.add_subcommand("forces", "wheel force tables against slip");
  add_common(forces);

  std::string command = "?";
  auto summary = [&](const std::string& status, const json& body) {
    json line{{"command", command}, {"status", status}};
    line.update(body);
    std::cout << line.dump() << std::endl;
  };
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  try {
    CLI::App* sub = app.get_subcommands().front();
    command = sub->get_name();
    const config::ExperimentConfig cfg = effective_config(common);
    cfg.validate();
    json body;
    if (command == "gen") body = cmd_gen(cfg, args);
    else if (command == "identify") body = cmd_identify(cfg, args);
    else if (command == "sweep") body = cmd_sweep(cfg, args);
    else if (command == "eval") body = cmd_eval(cfg, args);
    else if (command == "mpc") body = cmd_mpc(cfg, args);
    else body = cmd_forces(cfg, args);
    summary("ok", body);
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    summary("config_error", {{"message", e.what()}});
    return 1;
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    summary("numerical_error", {{"message", e.what()}});
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    summary("config_error", {{"message", e.what()}});
    return 1;
  }
}
