#include "terrakoop/predict.hpp"

#include <algorithm>
#include <cmath>

#include "terrakoop/dataset.hpp"
#include "terrakoop/errors.hpp"
#include "terrakoop/json_io.hpp"

namespace terrakoop::predict {

namespace {

int refresh_steps(double refresh, double dt) {
  if (!(refresh > 0.0) || !(dt > 0.0)) throw ConfigError("rollout: refresh and dt must be > 0");
  const double q = refresh / dt;
  const long k = std::lround(q);
  if (k < 1 || std::abs(q - double(k)) > 1e-9 * std::max(1.0, q)) {
    throw ConfigError("rollout: refresh period must be a positive multiple of dt");
  }
  return int(k);
}

}  // namespace

PredictionRun rollout(const ssid::KoopmanModel& model, const Lifter& lift,
                      const ssid::IoRecord& truth, double refresh, const std::string& id) {
  const Eigen::Index n = truth.y.cols();
  if (truth.u.cols() != n) throw ConfigError("rollout: input and output lengths differ");
  if (truth.y.rows() != model.p || truth.u.rows() != model.m) {
    throw ConfigError("rollout: channel counts differ from the model");
  }
  if (n < 1) throw ConfigError("rollout: empty trajectory");
  PredictionRun run;
  run.refresh = refresh;
  run.refresh_steps = refresh_steps(refresh, model.dt);
  run.model_id = id;
  run.y = truth.y;
  run.yhat.resize(model.p, n);
  VectorXd z = lift(truth.y.col(0));
  run.lift_calls = 1;
  run.yhat.col(0) = model.C * z;
  for (Eigen::Index t = 0; t + 1 < n; ++t) {
    z = model.A * z + model.B * truth.u.col(t);
    run.yhat.col(t + 1) = model.C * z;
    if ((t + 1) % run.refresh_steps == 0 && t + 2 < n) {
      z = lift(truth.y.col(t + 1));
      ++run.lift_calls;
    }
  }
  if (!run.yhat.allFinite()) throw NumericalError("rollout: non-finite prediction");
  run.rmse = rmse(run);
  return run;
}

PredictionRun rollout(const ssid::KoopmanModel& model, const lifting::LiftingMap& lift,
                      const ssid::IoRecord& truth, double refresh, const std::string& id) {
  return rollout(model, [&](const VectorXd& y) { return lift.lift(y); }, truth, refresh, id);
}

VectorXd rmse(const PredictionRun& run) {
  if (run.y.cols() != run.yhat.cols() || run.y.rows() != run.yhat.rows() || run.y.cols() == 0) {
    throw ConfigError("rmse: prediction and truth shapes differ");
  }
  return ((run.yhat - run.y).rowwise().squaredNorm() / double(run.y.cols())).cwiseSqrt();
}

SetRmse rmse_set(const std::vector<PredictionRun>& runs) {
  if (runs.empty()) throw ConfigError("rmse_set: empty run set");
  const Eigen::Index p = runs[0].y.rows();
  SetRmse out;
  VectorXd ms = VectorXd::Zero(p);
  out.mean_of_rmse = VectorXd::Zero(p);
  for (const auto& run : runs) {
    if (run.y.rows() != p) throw ConfigError("rmse_set: inconsistent output counts");
    const VectorXd e = rmse(run);
    ms += e.cwiseAbs2();
    out.mean_of_rmse += e;
  }
  const double N = double(runs.size());
  out.pooled = (ms / N).cwiseSqrt();
  out.mean_of_rmse /= N;
  out.trajectories = int(runs.size());
  return out;
}

MatrixXd n_rmse(const std::vector<VectorXd>& per_model) {
  if (per_model.empty()) throw ConfigError("n_rmse: empty model set");
  const Eigen::Index p = per_model[0].size();
  MatrixXd M(p, Eigen::Index(per_model.size()));
  for (std::size_t j = 0; j < per_model.size(); ++j) {
    if (per_model[j].size() != p) throw ConfigError("n_rmse: inconsistent output counts");
    M.col(Eigen::Index(j)) = per_model[j];
  }
  for (Eigen::Index i = 0; i < p; ++i) {
    const double mx = M.row(i).maxCoeff();
    if (mx > 0.0) M.row(i) /= mx;
    else M.row(i).setOnes();
  }
  return M;
}

MatrixXd rmse_t(const std::vector<PredictionRun>& runs, int fold_steps) {
  if (runs.empty()) throw ConfigError("rmse_t: empty run set");
  const Eigen::Index p = runs[0].y.rows();
  Eigen::Index len = 0;
  for (const auto& r : runs) len = std::max(len, r.y.cols());
  if (fold_steps > 0) len = std::min<Eigen::Index>(len, fold_steps + 1);
  MatrixXd sum = MatrixXd::Zero(p, len);
  Eigen::VectorXd count = Eigen::VectorXd::Zero(len);
  for (const auto& r : runs) {
    if (r.y.rows() != p) throw ConfigError("rmse_t: inconsistent output counts");
    for (Eigen::Index t = 0; t < r.y.cols(); ++t) {
      // Folded index: offset from the last refresh, with the boundary sample
      // counted at the end of the segment it closes.
      Eigen::Index k = t;
      if (fold_steps > 0) k = t == 0 ? 0 : (t - 1) % fold_steps + 1;
      sum.col(k) += (r.yhat.col(t) - r.y.col(t)).cwiseAbs();
      count[k] += 1.0;
    }
  }
  for (Eigen::Index k = 0; k < len; ++k) {
    if (count[k] > 0.0) sum.col(k) /= count[k];
  }
  return sum;
}

VectorXd pct_rmse(const VectorXd& elev, const VectorXd& flat) {
  if (elev.size() != flat.size() || elev.size() == 0) throw ConfigError("pct_rmse: sizes differ");
  if ((flat.array() <= 0.0).any()) throw ConfigError("pct_rmse: reference RMSE must be > 0");
  return 100.0 * (elev - flat).cwiseQuotient(flat);
}

Spectrum spectrum(const MatrixXd& A) {
  Spectrum s;
  if (A.size() == 0) {
    s.stable = true;
    return s;
  }
  Eigen::EigenSolver<MatrixXd> es(A, false);
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
    s.eigenvalues.push_back(es.eigenvalues()[i]);
  }
  std::stable_sort(s.eigenvalues.begin(), s.eigenvalues.end(),
                   [](auto a, auto b) { return std::abs(a) > std::abs(b); });
  s.max_modulus = std::abs(s.eigenvalues.front());
  s.stable = s.max_modulus <= 1.0 + 1e-6;
  return s;
}

std::vector<ssid::IoRecord> io_records(const std::vector<dataset::TrajectoryRecord>& records) {
  std::vector<ssid::IoRecord> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back({r.inputs(), r.outputs()});
  return out;
}

std::pair<MatrixXd, MatrixXd> lifting_pairs(const ssid::Identification& id,
                                            const std::vector<ssid::IoRecord>& records) {
  const MatrixXd& Z = id.latent.Z0;
  MatrixXd Y(id.model.p, Z.cols());
  for (const auto& range : id.latent.ranges) {
    const auto& rec = records.at(std::size_t(range.record));
    Y.middleCols(range.first, range.count) = rec.y.leftCols(range.count);
  }
  return {Y, Z};
}

Predictor fit_predictor(const std::vector<ssid::IoRecord>& records, const ssid::IdentifyConfig& cfg,
                        const lifting::LiftingConfig& lcfg) {
  const ssid::Identification id = ssid::identify(records, cfg);
  const auto [Y, Z] = lifting_pairs(id, records);
  return {id.model, lifting::fit_lifting(Y, Z, lcfg)};
}

std::vector<PredictionRun> evaluate(const Predictor& pred, const std::vector<ssid::IoRecord>& tests,
                                    double refresh, int workers) {
  if (tests.empty()) throw ConfigError("evaluate: no test trajectories");
  std::vector<PredictionRun> runs(tests.size());
  dataset::parallel_for(int(tests.size()), workers, [&](int i) {
    runs[std::size_t(i)] = rollout(pred.model, pred.lifting, tests[std::size_t(i)], refresh);
  });
  return runs;
}

std::vector<RefreshPoint> refresh_sweep(const Predictor& pred,
                                        const std::vector<ssid::IoRecord>& tests,
                                        const std::vector<double>& refreshes, int workers) {
  std::vector<RefreshPoint> out;
  for (double r : refreshes) out.push_back({r, rmse_set(evaluate(pred, tests, r, workers))});
  return out;
}

std::vector<OrderPoint> order_sweep(const ssid::Accumulation& acc,
                                    const std::vector<ssid::IoRecord>& train,
                                    const std::vector<ssid::IoRecord>& tests,
                                    const std::vector<int>& orders, const ssid::IdentifyConfig& cfg,
                                    const lifting::LiftingConfig& lcfg, double refresh,
                                    int workers) {
  std::vector<OrderPoint> out;
  for (int r : orders) {
    ssid::Identification id;
    try {
      id = ssid::realize(acc, train, r, cfg);
    } catch (const NumericalError&) {
      continue;
    }
    const auto [Y, Z] = lifting_pairs(id, train);
    const Predictor pred{id.model, lifting::fit_lifting(Y, Z, lcfg)};
    OrderPoint pt;
    pt.r = r;
    pt.rmse = rmse_set(evaluate(pred, tests, refresh, workers));
    pt.spectral_radius = id.model.spectral_radius();
    pt.stabilized = id.model.stabilized;
    out.push_back(std::move(pt));
  }
  if (out.empty()) throw NumericalError("order_sweep: no order could be realized");
  std::vector<VectorXd> all;
  for (const auto& pt : out) all.push_back(pt.rmse.pooled);
  const MatrixXd N = n_rmse(all);
  for (std::size_t j = 0; j < out.size(); ++j) out[j].n_rmse = N.col(Eigen::Index(j));
  return out;
}

std::string metrics_csv(const std::vector<MetricRow>& rows) {
  std::string s = "model,soil,order,refresh,output,metric,value\n";
  for (const auto& r : rows) {
    s += r.model + "," + r.soil + "," + std::to_string(r.order) + ",";
    json_io::append_number(s, r.refresh);
    s += "," + r.output + "," + r.metric + ",";
    json_io::append_number(s, r.value);
    s += "\n";
  }
  return s;
}

void append_set_rmse(std::vector<MetricRow>& rows, const std::string& model,
                     const std::string& soil, int order, double refresh, const SetRmse& m,
                     const std::vector<std::string>& outputs) {
  for (Eigen::Index i = 0; i < m.pooled.size(); ++i) {
    const std::string name = std::size_t(i) < outputs.size() ? outputs[std::size_t(i)]
                                                             : std::to_string(i);
    rows.push_back({model, soil, order, refresh, name, "rmse", m.pooled[i]});
    rows.push_back({model, soil, order, refresh, name, "rmse_traj_mean", m.mean_of_rmse[i]});
  }
}

}  // namespace terrakoop::predict
