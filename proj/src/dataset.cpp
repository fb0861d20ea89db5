#include "terrakoop/dataset.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <exception>
#include <filesystem>
#include <mutex>
#include <sstream>
#include <thread>

#include "terrakoop/errors.hpp"
#include "terrakoop/json_io.hpp"
#include "terrakoop/rng.hpp"

namespace terrakoop::dataset {

namespace fs = std::filesystem;
using json = nlohmann::json;
using excitation::Family;
using excitation::SignalSpec;

double TrajectoryRecord::dt() const {
  if (rows.size() < 2) throw ConfigError("trajectory too short to infer dt");
  return rows[1].t - rows[0].t;
}

Eigen::MatrixXd TrajectoryRecord::outputs() const {
  Eigen::MatrixXd y(3, Eigen::Index(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) {
    y.col(Eigen::Index(k)) << rows[k].x.u, rows[k].x.v, rows[k].x.psi_dot;
  }
  return y;
}

Eigen::MatrixXd TrajectoryRecord::inputs() const {
  Eigen::MatrixXd u(2, Eigen::Index(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) u.col(Eigen::Index(k)) << rows[k].in.delta, rows[k].in.tau;
  return u;
}

const std::vector<std::string>& output_labels() {
  static const std::vector<std::string> l{"u", "v", "psi_dot"};
  return l;
}

const std::vector<std::string>& input_labels() {
  static const std::vector<std::string> l{"delta", "tau"};
  return l;
}

const std::string& trajectory_header() {
  static const std::string h =
      "t,u,v,psi,psi_dot,X,Y,z,z_dot,theta,theta_dot,omega_f,omega_r,delta,tau,N_f,N_r,s_f,s_r,"
      "hf_f,hf_r,event";
  return h;
}

namespace {

constexpr int kColumns = 22;

using json_io::append_number;

}  // namespace

std::string format_trajectory(const std::vector<vehicle::TrajectoryRow>& rows) {
  std::string out = trajectory_header();
  out += '\n';
  for (const auto& r : rows) {
    const double vals[] = {r.t,       r.x.u,       r.x.v,       r.x.psi,     r.x.psi_dot, r.x.X,
                           r.x.Y,     r.x.z,       r.x.z_dot,   r.x.theta,   r.x.theta_dot,
                           r.x.omega_f, r.x.omega_r, r.in.delta, r.in.tau,  r.N_f,
                           r.N_r,     r.s_f,       r.s_r,       r.hf_f,      r.hf_r};
    for (double v : vals) {
      append_number(out, v);
      out += ',';
    }
    out += r.event;
    out += '\n';
  }
  return out;
}

void save_trajectory(const std::string& path, const std::vector<vehicle::TrajectoryRow>& rows) {
  json_io::write_file(path, format_trajectory(rows));
}

TrajectoryRecord parse_trajectory(const std::string& text) {
  TrajectoryRecord rec;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  if (!std::getline(in, line)) throw ParseError("trajectory: empty file", 1);
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != trajectory_header()) throw ParseError("trajectory: unexpected header", line_no);
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    double v[kColumns - 1];
    std::size_t pos = 0;
    for (int c = 0; c < kColumns - 1; ++c) {
      const std::size_t comma = line.find(',', pos);
      if (comma == std::string::npos) {
        throw ParseError("trajectory: expected " + std::to_string(kColumns) + " fields", line_no);
      }
      const char* b = line.data() + pos;
      const char* e = line.data() + comma;
      auto res = std::from_chars(b, e, v[c]);
      if (res.ec != std::errc() || res.ptr != e) {
        throw ParseError("trajectory: malformed number in column " + std::to_string(c + 1),
                         line_no);
      }
      pos = comma + 1;
    }
    vehicle::TrajectoryRow r;
    r.event = line.substr(pos);
    if (r.event.find(',') != std::string::npos) {
      throw ParseError("trajectory: too many fields", line_no);
    }
    r.t = v[0];
    vehicle::VehicleState::Vec x;
    for (int i = 0; i < 12; ++i) x[i] = v[1 + i];
    r.x = vehicle::VehicleState::from_vector(x);
    r.in = {v[13], v[14]};
    r.N_f = v[15];
    r.N_r = v[16];
    r.s_f = v[17];
    r.s_r = v[18];
    r.hf_f = v[19];
    r.hf_r = v[20];
    if (!r.event.empty()) rec.termination = r.event;
    rec.rows.push_back(std::move(r));
  }
  return rec;
}

TrajectoryRecord load_trajectory(const std::string& path) {
  return parse_trajectory(json_io::read_file(path));
}

void TerrainSpec::validate() const {
  if (kind != "flat" && kind != "random") throw ConfigError("terrain: kind must be flat or random");
  if (kind == "random" && !(amplitude >= 0.0 && components >= 1 && min_wavelength > 0.0 &&
                            max_wavelength >= min_wavelength)) {
    throw ConfigError("terrain: invalid random-field parameters");
  }
}

Terrain TerrainSpec::build(std::uint64_t seed) const {
  if (kind == "flat") return Terrain::flat();
  if (kind == "random") {
    return Terrain::random_field(derive_seed(seed, 77), amplitude, components, min_wavelength,
                                 max_wavelength);
  }
  throw ConfigError("terrain kind must be 'flat' or 'random'");
}

void DatasetConfig::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError("dataset: " + msg);
  };
  require(n_trajectories >= 1, "n_trajectories must be >= 1");
  require(duration > 0.0 && dt_out > 0.0 && duration >= dt_out, "duration/dt_out");
  require(u0_min > 0.0 && u0_max >= u0_min, "u0 range");
  require(psi0_max >= psi0_min, "psi0 range");
  require(omega_perturbation >= 0.0 && omega_perturbation < 1.0, "omega_perturbation");
  require(pe_depth >= 1, "pe_depth must be >= 1");
  require(max_attempts >= 1, "max_attempts must be >= 1");
  require(workers >= 1, "workers must be >= 1");
  require(!excitation.steering_families.empty() && !excitation.torque_families.empty(),
          "empty family list");
  require(excitation.steer_cap > 0.0 && excitation.torque_cap > 0.0, "caps must be > 0");
  for (double a : excitation.steering_pool) {
    for (double b : excitation.torque_pool) require(a != b, "frequency pools must be disjoint");
  }
  terrain.validate();
  vehicle.validate();
  terramech::soil_by_name(soil);
}

std::string DatasetManifest::path_of(const ManifestEntry& e) const {
  return (fs::path(directory) / e.file).string();
}

json terrain_to_json(const TerrainSpec& t) {
  return json{{"kind", t.kind},
              {"amplitude", t.amplitude},
              {"components", t.components},
              {"min_wavelength", t.min_wavelength},
              {"max_wavelength", t.max_wavelength}};
}

TerrainSpec terrain_from_json(const json& j) {
  const std::string w = "terrain";
  json_io::check_keys(j, {"kind", "amplitude", "components", "min_wavelength", "max_wavelength"},
                      w);
  TerrainSpec t;
  json_io::read_opt(j, "kind", t.kind, w);
  json_io::read_opt(j, "amplitude", t.amplitude, w);
  json_io::read_opt(j, "components", t.components, w);
  json_io::read_opt(j, "min_wavelength", t.min_wavelength, w);
  json_io::read_opt(j, "max_wavelength", t.max_wavelength, w);
  t.validate();
  return t;
}

std::string creation_stamp() {
  std::time_t t;
  if (const char* sde = std::getenv("SOURCE_DATE_EPOCH")) {
    t = static_cast<std::time_t>(std::strtoll(sde, nullptr, 10));
  } else {
    t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  }
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string manifest_to_json(const DatasetManifest& m) {
  json entries = json::array();
  for (const auto& e : m.entries) {
    entries.push_back(json{{"file", e.file},
                           {"seed", e.seed},
                           {"steering", json_io::to_json(e.steering)},
                           {"torque", json_io::to_json(e.torque)},
                           {"duration", e.duration},
                           {"dt_out", e.dt_out},
                           {"termination", e.termination},
                           {"rows", e.rows},
                           {"sha256", e.sha256}});
  }
  json j{{"format_version", m.format_version},
         {"name", m.name},
         {"soil", m.soil},
         {"vehicle_hash", m.vehicle_hash},
         {"created", m.created},
         {"terrain", terrain_to_json(m.terrain)},
         {"trajectories", entries}};
  return j.dump(2) + "\n";
}

DatasetManifest manifest_from_json(const std::string& text, const std::string& directory) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("manifest: ") + e.what());
  }
  const std::string w = "manifest";
  json_io::check_keys(j, {"format_version", "name", "soil", "vehicle_hash", "created", "terrain",
                          "trajectories"},
                      w);
  DatasetManifest m;
  m.directory = directory;
  json_io::read_opt(j, "format_version", m.format_version, w);
  if (m.format_version != 1) throw ConfigError("manifest: unsupported format_version");
  json_io::read_opt(j, "name", m.name, w);
  json_io::read_opt(j, "soil", m.soil, w);
  json_io::read_opt(j, "vehicle_hash", m.vehicle_hash, w);
  json_io::read_opt(j, "created", m.created, w);
  if (j.contains("terrain")) m.terrain = terrain_from_json(j.at("terrain"));
  if (!j.contains("trajectories") || !j.at("trajectories").is_array()) {
    throw ConfigError("manifest: missing trajectories array");
  }
  for (const auto& je : j.at("trajectories")) {
    const std::string we = "manifest.trajectories[]";
    json_io::check_keys(je, {"file", "seed", "steering", "torque", "duration", "dt_out",
                             "termination", "rows", "sha256"},
                        we);
    ManifestEntry e;
    json_io::read_opt(je, "file", e.file, we);
    json_io::read_opt(je, "seed", e.seed, we);
    if (je.contains("steering")) e.steering = json_io::signal_spec_from_json(je.at("steering"));
    if (je.contains("torque")) e.torque = json_io::signal_spec_from_json(je.at("torque"));
    json_io::read_opt(je, "duration", e.duration, we);
    json_io::read_opt(je, "dt_out", e.dt_out, we);
    json_io::read_opt(je, "termination", e.termination, we);
    json_io::read_opt(je, "rows", e.rows, we);
    json_io::read_opt(je, "sha256", e.sha256, we);
    m.entries.push_back(std::move(e));
  }
  for (std::size_t a = 0; a < m.entries.size(); ++a) {
    for (std::size_t b = a + 1; b < m.entries.size(); ++b) {
      if (m.entries[a].seed == m.entries[b].seed) {
        throw ConfigError("manifest: duplicate seed " + std::to_string(m.entries[a].seed));
      }
    }
  }
  return m;
}

void save_manifest(const std::string& path, const DatasetManifest& m) {
  json_io::write_file(path, manifest_to_json(m));
}

DatasetManifest load_manifest(const std::string& path) {
  return manifest_from_json(json_io::read_file(path), fs::path(path).parent_path().string());
}

void verify_manifest(const DatasetManifest& m) {
  for (const auto& e : m.entries) {
    const std::string p = m.path_of(e);
    if (!fs::exists(p)) throw ConfigError("manifest: missing file '" + p + "'");
    if (json_io::sha256_file(p) != e.sha256) {
      throw ConfigError("manifest: hash mismatch for '" + p + "'");
    }
  }
}

std::string vehicle_hash(const vehicle::VehicleParams& p) {
  return json_io::sha256_hex(json_io::to_json(p).dump()).substr(0, 16);
}

namespace {

template <class T>
T pick(const std::vector<T>& v, Rng& rng) {
  return v[rng.index(v.size())];
}

SignalSpec steering_spec(Family f, const ExcitationConfig& ex, Rng& rng, std::uint64_t seed) {
  SignalSpec s;
  s.family = f;
  s.lo = -ex.steer_cap;
  s.hi = ex.steer_cap;
  s.frequency_pool = ex.steering_pool;
  s.dither = ex.steer_dither;
  s.seed = seed;
  const double cap = ex.steer_cap;
  const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
  switch (f) {
    case Family::straight:
      break;
    case Family::circle:
      s.level = sign * rng.uniform(0.15, 0.85) * cap;
      break;
    case Family::multisine:
    case Family::slalom:
      s.amplitude = rng.uniform(0.3, 1.0) * cap;
      s.tones = 3;
      break;
    case Family::fishhook:
      s.level = sign * rng.uniform(0.4, 0.9) * cap;
      s.countersteer = rng.uniform(0.4, 1.0) * cap;
      s.rate = rng.uniform(0.3, 1.0);
      s.dwell = rng.uniform(0.5, 2.0);
      s.t_start = rng.uniform(0.5, 2.0);
      break;
    case Family::prbs:
      s.level = rng.uniform(0.15, 0.7) * cap;
      s.dwell = rng.uniform(0.3, 1.5);
      break;
    case Family::chirp:
      s.amplitude = rng.uniform(0.15, 0.85) * cap;
      s.f0 = 0.05;
      s.f1 = rng.uniform(0.5, 1.5);
      break;
    case Family::ramp:
      s.level = rng.uniform(0.3, 0.85) * cap;
      s.offset = -s.level;
      s.rate = rng.uniform(0.1, 0.5);
      s.dwell = rng.uniform(0.5, 2.0);
      break;
  }
  return s;
}

SignalSpec torque_spec(Family f, const ExcitationConfig& ex, Rng& rng, std::uint64_t seed) {
  SignalSpec s;
  s.family = f;
  s.lo = 0.0;
  s.hi = ex.torque_cap;
  s.frequency_pool = ex.torque_pool;
  s.dither = ex.torque_dither;
  s.seed = seed;
  const double cap = ex.torque_cap;
  auto swing = [&](double offset) {
    return rng.uniform(0.3, 1.0) * std::min(offset, cap - offset);
  };
  switch (f) {
    case Family::straight:
      break;
    case Family::circle:
      s.level = rng.uniform(0.15, 0.8) * cap;
      break;
    case Family::multisine:
    case Family::slalom:
    case Family::chirp:
      s.offset = rng.uniform(0.25, 0.7) * cap;
      s.amplitude = swing(s.offset);
      s.tones = 3;
      s.f0 = 0.05;
      s.f1 = rng.uniform(0.3, 1.0);
      break;
    case Family::prbs:
      s.offset = rng.uniform(0.25, 0.7) * cap;
      s.level = swing(s.offset);
      s.dwell = rng.uniform(0.3, 1.5);
      break;
    case Family::fishhook:
      // Torque fishhook: step up, hold, back off to a lower level.
      s.offset = rng.uniform(0.1, 0.3) * cap;
      s.level = rng.uniform(0.3, 0.6) * cap;
      s.countersteer = rng.uniform(0.0, s.offset);
      s.rate = rng.uniform(20.0, 80.0);
      s.dwell = rng.uniform(0.5, 2.0);
      s.t_start = rng.uniform(0.5, 2.0);
      break;
    case Family::ramp:
      s.offset = rng.uniform(0.0, 0.3) * cap;
      s.level = rng.uniform(0.5, 0.95) * cap;
      s.rate = rng.uniform(20.0, 80.0);
      s.dwell = rng.uniform(0.5, 2.0);
      break;
  }
  return s;
}

}  // namespace

TrajectoryPlan plan_trajectory(const DatasetConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  TrajectoryPlan plan;
  plan.seed = seed;
  const double u0 = rng.uniform(cfg.u0_min, cfg.u0_max);
  plan.x0.u = u0;
  plan.x0.psi = rng.uniform(cfg.psi0_min, cfg.psi0_max);
  const double r = cfg.vehicle.wheel.r;
  plan.x0.omega_f = u0 / r * (1.0 + rng.uniform(-cfg.omega_perturbation, cfg.omega_perturbation));
  plan.x0.omega_r = u0 / r * (1.0 + rng.uniform(-cfg.omega_perturbation, cfg.omega_perturbation));
  const Family fs_ = pick(cfg.excitation.steering_families, rng);
  const Family ft = pick(cfg.excitation.torque_families, rng);
  plan.steering = steering_spec(fs_, cfg.excitation, rng, derive_seed(seed, 11));
  plan.torque = torque_spec(ft, cfg.excitation, rng, derive_seed(seed, 12));
  return plan;
}

vehicle::InputSignal build_signal(const TrajectoryPlan& plan, double duration, double dt) {
  const auto d = excitation::make_signal(plan.steering, duration, dt);
  const auto t = excitation::make_signal(plan.torque, duration, dt);
  vehicle::InputSignal sig;
  sig.dt = dt;
  sig.samples.resize(d.size());
  for (std::size_t k = 0; k < d.size(); ++k) sig.samples[k] = {d[k], t[k]};
  return sig;
}

void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
  if (n <= 0) return;
  workers = std::max(1, std::min(workers, n));
  if (workers == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr first;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const int i = next.fetch_add(1);
        if (i >= n) return;
        {
          std::lock_guard lock(mu);
          if (first) return;
        }
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!first) first = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first) std::rethrow_exception(first);
}

DatasetManifest generate_dataset(const DatasetConfig& cfg, const std::string& out_dir,
                                 const std::function<void(int, int)>& progress) {
  cfg.validate();
  const terramech::SoilParams soil = terramech::soil_by_name(cfg.soil);
  fs::create_directories(out_dir);

  const int n = cfg.n_trajectories;
  std::vector<ManifestEntry> entries(static_cast<std::size_t>(n));
  std::atomic<int> done{0};
  std::mutex progress_mu;

  parallel_for(n, cfg.workers, [&](int i) {
    std::string last_failure;
    for (int attempt = 0; attempt < cfg.max_attempts; ++attempt) {
      const std::uint64_t seed = derive_seed(derive_seed(cfg.seed, std::uint64_t(i)),
                                             std::uint64_t(attempt));
      const TrajectoryPlan plan = plan_trajectory(cfg, seed);
      const vehicle::InputSignal sig = build_signal(plan, cfg.duration, cfg.dt_out);
      Eigen::MatrixXd u(2, Eigen::Index(sig.samples.size()));
      for (std::size_t k = 0; k < sig.samples.size(); ++k) {
        u.col(Eigen::Index(k)) << sig.samples[k].delta, sig.samples[k].tau;
      }
      if (!excitation::pe_rank_check(u, cfg.pe_depth).persistently_exciting) {
        last_failure = "input not persistently exciting (steering " +
                       excitation::to_string(plan.steering.family) + ", torque " +
                       excitation::to_string(plan.torque.family) + ")";
        continue;
      }
      vehicle::Trajectory traj;
      try {
        traj = vehicle::simulate(plan.x0, sig, cfg.terrain.build(seed), soil, cfg.vehicle,
                                 cfg.duration, cfg.dt_out);
      } catch (const NumericalError& e) {
        last_failure = std::string("simulation failed: ") + e.what();
        continue;
      }
      char name[32];
      std::snprintf(name, sizeof(name), "traj_%04d.csv", i);
      const std::string text = format_trajectory(traj.rows);
      json_io::write_file((fs::path(out_dir) / name).string(), text);
      ManifestEntry& e = entries[std::size_t(i)];
      e.file = name;
      e.seed = seed;
      e.steering = plan.steering;
      e.torque = plan.torque;
      e.duration = cfg.duration;
      e.dt_out = cfg.dt_out;
      e.termination = traj.termination;
      e.rows = traj.rows.size();
      e.sha256 = json_io::sha256_hex(text);
      const int d = ++done;
      if (progress) {
        std::lock_guard lock(progress_mu);
        progress(d, n);
      }
      return;
    }
    throw NumericalError("dataset: trajectory " + std::to_string(i) + " failed after " +
                         std::to_string(cfg.max_attempts) + " attempts: " + last_failure);
  });

  DatasetManifest m;
  m.name = cfg.name;
  m.soil = soil.name;
  m.vehicle_hash = vehicle_hash(cfg.vehicle);
  m.created = creation_stamp();
  m.terrain = cfg.terrain;
  m.entries = std::move(entries);
  m.directory = out_dir;
  save_manifest((fs::path(out_dir) / "manifest.json").string(), m);
  return m;
}

std::pair<DatasetManifest, DatasetManifest> split(const DatasetManifest& m, double test_fraction,
                                                  std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw ConfigError("split: test_fraction must lie in (0, 1)");
  }
  const std::size_t n = m.entries.size();
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.index(i)]);
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * double(n)));
  std::vector<std::size_t> test(idx.begin(), idx.begin() + std::ptrdiff_t(n_test));
  std::vector<std::size_t> train(idx.begin() + std::ptrdiff_t(n_test), idx.end());
  std::sort(test.begin(), test.end());
  std::sort(train.begin(), train.end());
  DatasetManifest a = m, b = m;
  a.entries.clear();
  b.entries.clear();
  a.name = m.name + "_train";
  b.name = m.name + "_test";
  for (auto i : train) a.entries.push_back(m.entries[i]);
  for (auto i : test) b.entries.push_back(m.entries[i]);
  return {a, b};
}

std::vector<TrajectoryRecord> load_records(const DatasetManifest& m) {
  std::vector<TrajectoryRecord> out;
  out.reserve(m.entries.size());
  for (const auto& e : m.entries) out.push_back(load_trajectory(m.path_of(e)));
  return out;
}

}  // namespace terrakoop::dataset
