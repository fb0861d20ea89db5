#include "terrakoop/config.hpp"

#include <cstdlib>

#include "terrakoop/errors.hpp"
#include "terrakoop/json_io.hpp"
#include "terrakoop/rng.hpp"

namespace terrakoop::config {

using json = nlohmann::json;
using json_io::check_keys;
using json_io::read_opt;

namespace {

template <int N>
void read_fixed(const json& j, const char* key, Eigen::Matrix<double, N, 1>& out,
                const std::string& w) {
  if (!j.contains(key)) return;
  std::vector<double> v;
  read_opt(j, key, v, w);
  if (v.size() != std::size_t(N)) {
    throw ConfigError(w + "." + key + ": expected " + std::to_string(N) + " numbers");
  }
  for (int i = 0; i < N; ++i) out[i] = v[std::size_t(i)];
}

void read_range(const json& j, const char* key, double& lo, double& hi, const std::string& w) {
  Eigen::Vector2d v(lo, hi);
  read_fixed<2>(j, key, v, w);
  lo = v[0];
  hi = v[1];
}

std::vector<excitation::Family> read_families(const json& j, const char* key,
                                              std::vector<excitation::Family> def,
                                              const std::string& w) {
  if (!j.contains(key)) return def;
  std::vector<std::string> names;
  read_opt(j, key, names, w);
  std::vector<excitation::Family> out;
  for (const auto& n : names) out.push_back(excitation::family_from_string(n));
  return out;
}

std::vector<std::string> family_names(const std::vector<excitation::Family>& f) {
  std::vector<std::string> out;
  for (auto x : f) out.push_back(excitation::to_string(x));
  return out;
}

template <int N>
std::vector<double> vec(const Eigen::Matrix<double, N, 1>& v) {
  return {v.data(), v.data() + N};
}

void parse_dataset(const json& j, ExperimentConfig& c) {
  const std::string w = "dataset";
  check_keys(j, {"name", "n_trajectories", "duration", "dt_out", "seed", "u0", "psi0",
                 "omega_perturbation", "pe_depth", "max_attempts", "terrain", "excitation",
                 "test_fraction", "split_seed"},
             w);
  auto& d = c.dataset;
  read_opt(j, "name", d.name, w);
  read_opt(j, "n_trajectories", d.n_trajectories, w);
  read_opt(j, "duration", d.duration, w);
  read_opt(j, "dt_out", d.dt_out, w);
  read_opt(j, "seed", d.seed, w);
  read_range(j, "u0", d.u0_min, d.u0_max, w);
  read_range(j, "psi0", d.psi0_min, d.psi0_max, w);
  read_opt(j, "omega_perturbation", d.omega_perturbation, w);
  read_opt(j, "pe_depth", d.pe_depth, w);
  read_opt(j, "max_attempts", d.max_attempts, w);
  read_opt(j, "test_fraction", c.test_fraction, w);
  read_opt(j, "split_seed", c.split_seed, w);
  if (j.contains("terrain")) d.terrain = dataset::terrain_from_json(j.at("terrain"));
  if (j.contains("excitation")) {
    const json& e = j.at("excitation");
    const std::string we = w + ".excitation";
    check_keys(e, {"steering_families", "torque_families", "steering_pool", "torque_pool",
                   "steer_cap", "torque_cap", "steer_dither", "torque_dither"},
               we);
    auto& x = d.excitation;
    x.steering_families = read_families(e, "steering_families", x.steering_families, we);
    x.torque_families = read_families(e, "torque_families", x.torque_families, we);
    read_opt(e, "steering_pool", x.steering_pool, we);
    read_opt(e, "torque_pool", x.torque_pool, we);
    read_opt(e, "steer_cap", x.steer_cap, we);
    read_opt(e, "torque_cap", x.torque_cap, we);
    read_opt(e, "steer_dither", x.steer_dither, we);
    read_opt(e, "torque_dither", x.torque_dither, we);
  }
}

void parse_ssid(const json& j, ssid::IdentifyConfig& s) {
  const std::string w = "ssid";
  check_keys(j, {"l", "r", "r_max", "energy", "epsilon", "stabilize", "regularize", "b_solver",
                 "b_rel_tol", "b_max_iterations"},
             w);
  read_opt(j, "l", s.l, w);
  if (j.contains("r")) {
    const json& r = j.at("r");
    if (r.is_string() && r.get<std::string>() == "auto") {
      s.r = 0;
    } else if (r.is_number_integer() && r.get<int>() >= 1) {
      s.r = r.get<int>();
    } else {
      throw ConfigError("ssid.r: expected \"auto\" or a positive integer");
    }
  }
  read_opt(j, "r_max", s.r_max, w);
  read_opt(j, "energy", s.energy, w);
  if (j.contains("epsilon")) {
    if (j.at("epsilon").is_null()) {
      s.epsilon.reset();
    } else {
      double e = 0.0;
      read_opt(j, "epsilon", e, w);
      s.epsilon = e;
    }
  }
  read_opt(j, "stabilize", s.stabilize, w);
  read_opt(j, "regularize", s.projection.regularize, w);
  if (j.contains("b_solver")) {
    std::string b;
    read_opt(j, "b_solver", b, w);
    if (b == "gradient") s.b.solver = ssid::BSolver::gradient;
    else if (b == "exact") s.b.solver = ssid::BSolver::exact;
    else throw ConfigError("ssid.b_solver: expected gradient or exact");
  }
  read_opt(j, "b_rel_tol", s.b.rel_tol, w);
  read_opt(j, "b_max_iterations", s.b.max_iterations, w);
}

void parse_lifting(const json& j, lifting::LiftingConfig& l) {
  const std::string w = "lifting";
  check_keys(j, {"max_pairs", "ml_subsample", "hyper", "ml_iterations", "noise_variance",
                 "jitter"},
             w);
  read_opt(j, "max_pairs", l.max_pairs, w);
  read_opt(j, "ml_subsample", l.ml_subsample, w);
  if (j.contains("hyper")) {
    std::string h;
    read_opt(j, "hyper", h, w);
    if (h == "marginal_likelihood") l.hyper = lifting::Hyper::marginal_likelihood;
    else if (h == "median") l.hyper = lifting::Hyper::median;
    else throw ConfigError("lifting.hyper: expected marginal_likelihood or median");
  }
  read_opt(j, "ml_iterations", l.ml_iterations, w);
  if (j.contains("noise_variance") && !j.at("noise_variance").is_null()) {
    double v = 0.0;
    read_opt(j, "noise_variance", v, w);
    l.noise_variance = v;
  }
  read_opt(j, "jitter", l.jitter, w);
}

void parse_mpc(const json& j, ExperimentConfig& c) {
  const std::string w = "mpc";
  check_keys(j, {"Np", "Nc", "dt_mpc", "Q", "R", "R_du", "u_lo", "u_hi", "max_iterations",
                 "pg_tol", "c_c", "reference"},
             w);
  auto& m = c.mpc;
  read_opt(j, "Np", m.Np, w);
  read_opt(j, "Nc", m.Nc, w);
  read_opt(j, "dt_mpc", m.dt_mpc, w);
  read_fixed<6>(j, "Q", m.Q, w);
  read_fixed<2>(j, "R", m.R, w);
  read_fixed<2>(j, "R_du", m.R_du, w);
  read_fixed<2>(j, "u_lo", m.u_lo, w);
  read_fixed<2>(j, "u_hi", m.u_hi, w);
  read_opt(j, "max_iterations", m.solver.max_iterations, w);
  read_opt(j, "pg_tol", m.solver.pg_tol, w);
  if (j.contains("c_c")) {
    Eigen::Vector3d cc = Eigen::Vector3d::Zero();
    read_fixed<3>(j, "c_c", cc, w);
    m.c_c = cc;
  }
  if (j.contains("reference")) {
    const json& r = j.at("reference");
    const std::string wr = w + ".reference";
    check_keys(r,
               {"kind", "u0", "tau", "duration", "level", "countersteer", "rate", "dwell",
                "t_start"},
               wr);
    kmpc::FishhookSpec& f = c.reference.fishhook;
    read_opt(r, "kind", c.reference.kind, wr);
    read_opt(r, "u0", f.u0, wr);
    read_opt(r, "tau", f.tau, wr);
    read_opt(r, "duration", f.duration, wr);
    read_opt(r, "level", f.level, wr);
    read_opt(r, "countersteer", f.countersteer, wr);
    read_opt(r, "rate", f.rate, wr);
    read_opt(r, "dwell", f.dwell, wr);
    read_opt(r, "t_start", f.t_start, wr);
  }
}

}  // namespace

void ExperimentConfig::validate() const {
  terramech::soil_by_name(soil);
  dataset.validate();
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) {
    throw ConfigError("dataset.test_fraction must be in [0, 1)");
  }
  if (ssid.l < 2) throw ConfigError("ssid.l must be >= 2");
  if (ssid.r_max < 1) throw ConfigError("ssid.r_max must be >= 1");
  if (ssid.r > 0 && ssid.l * 3 < ssid.r) throw ConfigError("ssid.r exceeds l p");
  if (!(ssid.energy > 0.0 && ssid.energy <= 1.0)) throw ConfigError("ssid.energy must be in (0, 1]");
  if (lifting.max_pairs < 1 || lifting.ml_subsample < 2) throw ConfigError("lifting: pair counts");
  if (evaluation.refresh.empty()) throw ConfigError("evaluation.refresh must not be empty");
  for (double r : evaluation.refresh) {
    if (!(r > 0.0)) throw ConfigError("evaluation.refresh entries must be > 0");
  }
  for (int r : evaluation.orders) {
    if (r < 1) throw ConfigError("evaluation.orders entries must be >= 1");
  }
  mpc.validate();
  if (reference.kind != "fishhook") throw ConfigError("mpc.reference.kind: only fishhook");
  const kmpc::FishhookSpec& f = reference.fishhook;
  if (!(f.u0 > 0.0 && f.duration > 0.0 && f.rate > 0.0 && f.dwell >= 0.0 && f.t_start >= 0.0)) {
    throw ConfigError("mpc.reference: u0, duration and rate must be > 0, dwell and t_start >= 0");
  }
  if (workers < 1) throw ConfigError("workers must be >= 1");
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
}

std::uint64_t ExperimentConfig::effective_split_seed() const {
  return split_seed != 0 ? split_seed : derive_seed(dataset.seed, 99);
}

ExperimentConfig from_json(const json& j) {
  check_keys(j, {"soil", "vehicle", "dataset", "ssid", "lifting", "evaluation", "mpc",
                 "output_dir", "workers"},
             "config");
  ExperimentConfig c;
  read_opt(j, "soil", c.soil, "config");
  if (j.contains("vehicle")) c.dataset.vehicle = json_io::vehicle_params_from_json(j.at("vehicle"));
  if (j.contains("dataset")) parse_dataset(j.at("dataset"), c);
  if (j.contains("ssid")) parse_ssid(j.at("ssid"), c.ssid);
  if (j.contains("lifting")) parse_lifting(j.at("lifting"), c.lifting);
  if (j.contains("evaluation")) {
    const json& e = j.at("evaluation");
    check_keys(e, {"refresh", "primary_refresh", "orders"}, "evaluation");
    read_opt(e, "refresh", c.evaluation.refresh, "evaluation");
    read_opt(e, "primary_refresh", c.evaluation.primary_refresh, "evaluation");
    read_opt(e, "orders", c.evaluation.orders, "evaluation");
  }
  if (j.contains("mpc")) parse_mpc(j.at("mpc"), c);
  read_opt(j, "output_dir", c.output_dir, "config");
  read_opt(j, "workers", c.workers, "config");
  c.soil = terramech::soil_by_name(c.soil).name;
  c.dataset.soil = c.soil;
  c.dataset.workers = c.workers;
  c.ssid.soil = c.soil;
  c.ssid.dt = c.dataset.dt_out;
  c.lifting.workers = c.workers;
  c.validate();
  return c;
}

ExperimentConfig load(const std::string& path) {
  json j;
  try {
    j = json::parse(json_io::read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path + "': " + e.what());
  }
  return from_json(j);
}

json to_json(const ExperimentConfig& c) {
  const auto& d = c.dataset;
  const auto& x = d.excitation;
  json ssid{{"l", c.ssid.l},
            {"r_max", c.ssid.r_max},
            {"energy", c.ssid.energy},
            {"stabilize", c.ssid.stabilize},
            {"regularize", c.ssid.projection.regularize},
            {"b_solver", c.ssid.b.solver == ssid::BSolver::exact ? "exact" : "gradient"},
            {"b_rel_tol", c.ssid.b.rel_tol},
            {"b_max_iterations", c.ssid.b.max_iterations}};
  if (c.ssid.r > 0) ssid["r"] = c.ssid.r;
  else ssid["r"] = "auto";
  ssid["epsilon"] = c.ssid.epsilon ? json(*c.ssid.epsilon) : json(nullptr);
  json lifting{{"max_pairs", c.lifting.max_pairs},
               {"ml_subsample", c.lifting.ml_subsample},
               {"hyper", c.lifting.hyper == lifting::Hyper::median ? "median"
                                                                    : "marginal_likelihood"},
               {"ml_iterations", c.lifting.ml_iterations},
               {"jitter", c.lifting.jitter}};
  lifting["noise_variance"] =
      c.lifting.noise_variance ? json(*c.lifting.noise_variance) : json(nullptr);
  json mpc{{"Np", c.mpc.Np},
           {"Nc", c.mpc.Nc},
           {"dt_mpc", c.mpc.dt_mpc},
           {"Q", vec<6>(c.mpc.Q)},
           {"R", vec<2>(c.mpc.R)},
           {"R_du", vec<2>(c.mpc.R_du)},
           {"u_lo", vec<2>(c.mpc.u_lo)},
           {"u_hi", vec<2>(c.mpc.u_hi)},
           {"max_iterations", c.mpc.solver.max_iterations},
           {"pg_tol", c.mpc.solver.pg_tol},
           {"reference",
            {{"kind", c.reference.kind},
             {"u0", c.reference.fishhook.u0},
             {"tau", c.reference.fishhook.tau},
             {"duration", c.reference.fishhook.duration},
             {"level", c.reference.fishhook.level},
             {"countersteer", c.reference.fishhook.countersteer},
             {"rate", c.reference.fishhook.rate},
             {"dwell", c.reference.fishhook.dwell},
             {"t_start", c.reference.fishhook.t_start}}}};
  if (c.mpc.c_c.size() == 3) {
    mpc["c_c"] = std::vector<double>(c.mpc.c_c.data(), c.mpc.c_c.data() + 3);
  }
  return json{
      {"soil", c.soil},
      {"vehicle", json_io::to_json(d.vehicle)},
      {"dataset",
       {{"name", d.name},
        {"n_trajectories", d.n_trajectories},
        {"duration", d.duration},
        {"dt_out", d.dt_out},
        {"seed", d.seed},
        {"u0", {d.u0_min, d.u0_max}},
        {"psi0", {d.psi0_min, d.psi0_max}},
        {"omega_perturbation", d.omega_perturbation},
        {"pe_depth", d.pe_depth},
        {"max_attempts", d.max_attempts},
        {"terrain", dataset::terrain_to_json(d.terrain)},
        {"excitation",
         {{"steering_families", family_names(x.steering_families)},
          {"torque_families", family_names(x.torque_families)},
          {"steering_pool", x.steering_pool},
          {"torque_pool", x.torque_pool},
          {"steer_cap", x.steer_cap},
          {"torque_cap", x.torque_cap},
          {"steer_dither", x.steer_dither},
          {"torque_dither", x.torque_dither}}},
        {"test_fraction", c.test_fraction},
        {"split_seed", c.split_seed}}},
      {"ssid", ssid},
      {"lifting", lifting},
      {"evaluation",
       {{"refresh", c.evaluation.refresh},
        {"primary_refresh", c.evaluation.primary_refresh},
        {"orders", c.evaluation.orders}}},
      {"mpc", mpc},
      {"output_dir", c.output_dir},
      {"workers", c.workers}};
}

void apply_environment(ExperimentConfig& c) {
  if (const char* out = std::getenv("TERRAKOOP_OUT"); out && *out) c.output_dir = out;
  if (const char* w = std::getenv("TERRAKOOP_WORKERS"); w && *w) {
    char* end = nullptr;
    const long n = std::strtol(w, &end, 10);
    if (*end != '\0' || n < 1) throw ConfigError("TERRAKOOP_WORKERS must be a positive integer");
    c.workers = int(n);
    c.dataset.workers = c.workers;
    c.lifting.workers = c.workers;
  }
}

}  // namespace terrakoop::config
