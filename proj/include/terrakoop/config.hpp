#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "terrakoop/dataset.hpp"
#include "terrakoop/kmpc.hpp"
#include "terrakoop/lifting.hpp"
#include "terrakoop/ssid.hpp"

namespace terrakoop::config {

inline constexpr const char* kVersion = "0.1.0";

struct EvaluationSpec {
  std::vector<double> refresh{0.25, 0.5, 1.25, 2.5};
  double primary_refresh = 1.25;
  std::vector<int> orders{2, 4, 6, 8, 10, 12, 16, 20};
};

struct ReferenceSpec {
  std::string kind = "fishhook";
  kmpc::FishhookSpec fishhook;
};

struct ExperimentConfig {
  std::string soil = "sandy_loam";
  dataset::DatasetConfig dataset;  // soil and vehicle are copied in from the top level
  double test_fraction = 0.2;
  std::uint64_t split_seed = 0;    // 0: derived from dataset.seed
  ssid::IdentifyConfig ssid;
  lifting::LiftingConfig lifting;
  EvaluationSpec evaluation;
  kmpc::MpcConfig mpc;
  ReferenceSpec reference;
  std::string output_dir = "out";
  int workers = 1;

  void validate() const;
  std::uint64_t effective_split_seed() const;
};

/// Unknown keys anywhere are rejected with ConfigError.
ExperimentConfig from_json(const nlohmann::json& j);
ExperimentConfig load(const std::string& path);
/// Canonical form of the effective configuration, defaults filled in.
nlohmann::json to_json(const ExperimentConfig& c);

/// TERRAKOOP_OUT and TERRAKOOP_WORKERS override output_dir and workers.
void apply_environment(ExperimentConfig& c);

}  // namespace terrakoop::config
