#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "terrakoop/excitation.hpp"
#include "terrakoop/terrain.hpp"
#include "terrakoop/vehicle.hpp"

namespace terrakoop::dataset {

/// Loaded trajectory file. Rows carry the full CSV content.
struct TrajectoryRecord {
  std::vector<vehicle::TrajectoryRow> rows;
  std::string termination = "completed";

  std::size_t size() const { return rows.size(); }
  double dt() const;
  /// Measured outputs [u, v, psi_dot], 3 x n.
  Eigen::MatrixXd outputs() const;
  /// Inputs [delta, tau], 2 x n. Column k holds on [t_k, t_k+1).
  Eigen::MatrixXd inputs() const;
};

const std::vector<std::string>& output_labels();
const std::vector<std::string>& input_labels();
const std::string& trajectory_header();

std::string format_trajectory(const std::vector<vehicle::TrajectoryRow>& rows);
void save_trajectory(const std::string& path, const std::vector<vehicle::TrajectoryRow>& rows);
/// Throws ParseError with the 1-based line number on malformed content.
TrajectoryRecord load_trajectory(const std::string& path);
TrajectoryRecord parse_trajectory(const std::string& text);

struct TerrainSpec {
  std::string kind = "flat";  // flat | random
  double amplitude = 0.1;     // bound on |H| for random fields
  int components = 6;
  double min_wavelength = 6.0;
  double max_wavelength = 30.0;

  /// Terrain for one trajectory; random fields derive from the trajectory seed.
  Terrain build(std::uint64_t seed) const;
  void validate() const;
};

nlohmann::json terrain_to_json(const TerrainSpec& t);
TerrainSpec terrain_from_json(const nlohmann::json& j);

/// UTC ISO-8601 stamp from SOURCE_DATE_EPOCH when set, else the current time.
std::string creation_stamp();

/// Randomization ranges for the per-trajectory excitation specs.
struct ExcitationConfig {
  std::vector<excitation::Family> steering_families = excitation::all_families();
  std::vector<excitation::Family> torque_families = {
      excitation::Family::circle, excitation::Family::multisine, excitation::Family::slalom,
      excitation::Family::prbs, excitation::Family::chirp, excitation::Family::ramp};
  // Disjoint tone pools [Hz].
  std::vector<double> steering_pool = {0.05, 0.1, 0.2, 0.3, 0.45, 0.7, 1.0};
  std::vector<double> torque_pool = {0.07, 0.15, 0.25, 0.38, 0.55, 0.85};
  double steer_cap = 0.35;
  double torque_cap = 0.95 * 130.0;
  double steer_dither = 0.01;
  double torque_dither = 2.0;
};

struct DatasetConfig {
  std::string name = "dataset";
  std::string soil = "sandy_loam";
  vehicle::VehicleParams vehicle;
  int n_trajectories = 100;
  double duration = 10.0;
  double dt_out = 0.01;
  std::uint64_t seed = 1;
  double u0_min = 2.0, u0_max = 8.0;
  double psi0_min = -3.141592653589793, psi0_max = 3.141592653589793;
  double omega_perturbation = 0.1;  // omega0 = u0/r (1 + eps), |eps| <= this
  ExcitationConfig excitation;
  TerrainSpec terrain;
  int pe_depth = 40;
  int max_attempts = 5;
  int workers = 1;

  void validate() const;
};

struct ManifestEntry {
  std::string file;  // relative to the manifest directory
  std::uint64_t seed = 0;
  excitation::SignalSpec steering, torque;
  double duration = 0.0;
  double dt_out = 0.0;
  std::string termination;
  std::size_t rows = 0;
  std::string sha256;
};

struct DatasetManifest {
  int format_version = 1;
  std::string name;
  std::string soil;
  std::string vehicle_hash;
  std::string created;
  TerrainSpec terrain;
  std::vector<ManifestEntry> entries;
  std::string directory;  // where relative paths resolve, not serialized

  std::string path_of(const ManifestEntry& e) const;
};

std::string manifest_to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const std::string& text, const std::string& directory);
void save_manifest(const std::string& path, const DatasetManifest& m);
DatasetManifest load_manifest(const std::string& path);

/// Throws ConfigError when a listed file is missing or its hash differs.
void verify_manifest(const DatasetManifest& m);

std::string vehicle_hash(const vehicle::VehicleParams& p);

/// Seeded per-trajectory setup, exposed for tests and reuse.
struct TrajectoryPlan {
  std::uint64_t seed = 0;
  vehicle::VehicleState x0;
  excitation::SignalSpec steering, torque;
};
TrajectoryPlan plan_trajectory(const DatasetConfig& cfg, std::uint64_t seed);
vehicle::InputSignal build_signal(const TrajectoryPlan& plan, double duration, double dt);

/// Simulates cfg.n_trajectories trajectories into out_dir and writes
/// out_dir/manifest.json. The creation stamp comes from SOURCE_DATE_EPOCH when
/// set. progress (optional) is called after each trajectory.
DatasetManifest generate_dataset(const DatasetConfig& cfg, const std::string& out_dir,
                                 const std::function<void(int, int)>& progress = {});

/// Seed-deterministic disjoint partition; test gets round(fraction N) entries.
std::pair<DatasetManifest, DatasetManifest> split(const DatasetManifest& m, double test_fraction,
                                                  std::uint64_t seed);

std::vector<TrajectoryRecord> load_records(const DatasetManifest& m);

/// Runs fn(i) for i in [0, n) on `workers` threads. The first exception is
/// rethrown after all threads finish.
void parallel_for(int n, int workers, const std::function<void(int)>& fn);

}  // namespace terrakoop::dataset
