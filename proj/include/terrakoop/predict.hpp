#pragma once

#include <complex>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "terrakoop/dataset.hpp"
#include "terrakoop/lifting.hpp"
#include "terrakoop/ssid.hpp"

namespace terrakoop::predict {

using Eigen::MatrixXd;
using Eigen::VectorXd;

using Lifter = std::function<VectorXd(const VectorXd&)>;

struct PredictionRun {
  MatrixXd yhat;  // p x n
  MatrixXd y;     // p x n
  double refresh = 0.0;
  int refresh_steps = 0;
  std::string model_id;
  VectorXd rmse;  // per output
  int lift_calls = 0;
};

/// Open-loop rollout driven by the recorded inputs. At each refresh boundary
/// b the latent state is re-lifted from y_b; ŷ_b at a boundary is the
/// prediction carried over from the previous segment (C lift(y_0) at t = 0),
/// so refresh = dt gives one-step predictions.
PredictionRun rollout(const ssid::KoopmanModel& model, const Lifter& lift,
                      const ssid::IoRecord& truth, double refresh, const std::string& id = "");
PredictionRun rollout(const ssid::KoopmanModel& model, const lifting::LiftingMap& lift,
                      const ssid::IoRecord& truth, double refresh, const std::string& id = "");

/// sqrt(mean_t (ŷ - y)^2) per output.
VectorXd rmse(const PredictionRun& run);

struct SetRmse {
  VectorXd pooled;         // sqrt(mean over trajectories of per-trajectory mean square)
  VectorXd mean_of_rmse;   // mean over trajectories of per-trajectory RMSE
  int trajectories = 0;
};
SetRmse rmse_set(const std::vector<PredictionRun>& runs);

/// Column j of the result is model j's RMSE divided by the per-output maximum
/// over all models.
MatrixXd n_rmse(const std::vector<VectorXd>& rmse_per_model);

/// Mean absolute error per output and step, averaged over runs. With
/// fold_steps > 0 the step index is taken modulo fold_steps (error growth
/// within a refresh segment).
MatrixXd rmse_t(const std::vector<PredictionRun>& runs, int fold_steps = 0);

/// 100 (elev - flat) / flat per output.
VectorXd pct_rmse(const VectorXd& elev, const VectorXd& flat);

struct Spectrum {
  std::vector<std::complex<double>> eigenvalues;  // sorted by descending modulus
  double max_modulus = 0.0;
  bool stable = false;  // max_modulus <= 1 + 1e-6
};
Spectrum spectrum(const MatrixXd& A);

/// Identified model plus its lifting map.
struct Predictor {
  ssid::KoopmanModel model;
  lifting::LiftingMap lifting;
};

/// Input/output views of loaded trajectories, same order.
std::vector<ssid::IoRecord> io_records(const std::vector<dataset::TrajectoryRecord>& records);

/// (measured output, latent state) pairs aligned at Hankel column starts.
std::pair<MatrixXd, MatrixXd> lifting_pairs(const ssid::Identification& id,
                                            const std::vector<ssid::IoRecord>& records);

Predictor fit_predictor(const std::vector<ssid::IoRecord>& records, const ssid::IdentifyConfig& cfg,
                        const lifting::LiftingConfig& lcfg);

std::vector<PredictionRun> evaluate(const Predictor& pred, const std::vector<ssid::IoRecord>& tests,
                                    double refresh, int workers = 1);

struct RefreshPoint {
  double refresh = 0.0;
  SetRmse rmse;
};
std::vector<RefreshPoint> refresh_sweep(const Predictor& pred,
                                        const std::vector<ssid::IoRecord>& tests,
                                        const std::vector<double>& refreshes, int workers = 1);

struct OrderPoint {
  int r = 0;
  SetRmse rmse;
  VectorXd n_rmse;
  double spectral_radius = 0.0;
  bool stabilized = false;
};
/// Realizes one model per order from a shared accumulation, fits its lifting
/// and evaluates it. Orders above the numerical rank are skipped.
std::vector<OrderPoint> order_sweep(const ssid::Accumulation& acc,
                                    const std::vector<ssid::IoRecord>& train,
                                    const std::vector<ssid::IoRecord>& tests,
                                    const std::vector<int>& orders, const ssid::IdentifyConfig& cfg,
                                    const lifting::LiftingConfig& lcfg, double refresh,
                                    int workers = 1);

/// Long-format metric table: model,soil,order,refresh,output,metric,value.
struct MetricRow {
  std::string model, soil;
  int order = 0;
  double refresh = 0.0;
  std::string output, metric;
  double value = 0.0;
};
std::string metrics_csv(const std::vector<MetricRow>& rows);
void append_set_rmse(std::vector<MetricRow>& rows, const std::string& model,
                     const std::string& soil, int order, double refresh, const SetRmse& m,
                     const std::vector<std::string>& outputs);

}  // namespace terrakoop::predict
