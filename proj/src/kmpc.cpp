#include "terrakoop/kmpc.hpp"

#include <chrono>
#include <cmath>
#include <numbers>

#include "terrakoop/errors.hpp"
#include "terrakoop/excitation.hpp"
#include "terrakoop/json_io.hpp"

namespace terrakoop::kmpc {

void MpcConfig::validate() const {
  auto require = [](bool ok, const char* msg) {
    if (!ok) throw ConfigError(std::string("mpc: ") + msg);
  };
  require(Np >= 1 && Nc >= 1 && Nc <= Np, "need Np >= Nc >= 1");
  require(dt_mpc > 0.0, "dt_mpc must be > 0");
  require((Q.array() >= 0.0).all() && (R.array() >= 0.0).all(), "Q and R must be PSD");
  require((R_du.array() > 0.0).all(), "R_du must be PD");
  require((u_lo.array() <= u_hi.array()).all(), "input bounds must satisfy lo <= hi");
  require(c_c.size() == 0 || c_c.size() == 3, "c_c must have 3 entries");
}

ssid::KoopmanModel resample_model(const ssid::KoopmanModel& model, double dt_mpc) {
  const double ratio = dt_mpc / model.dt;
  const long q = std::lround(ratio);
  if (q < 1 || std::abs(ratio - double(q)) > 1e-9 * std::max(1.0, ratio)) {
    throw ConfigError("resample_model: dt_mpc must be an integer multiple of the model dt");
  }
  ssid::KoopmanModel out = model;
  MatrixXd Ap = MatrixXd::Identity(model.r, model.r);
  MatrixXd S = MatrixXd::Zero(model.r, model.r);
  for (long i = 0; i < q; ++i) {
    S += Ap;
    Ap = Ap * model.A;
  }
  out.A = Ap;
  out.B = S * model.B;
  out.dt = model.dt * double(q);
  return out;
}

double wrap_angle(double a) {
  constexpr double pi = std::numbers::pi;
  double w = std::remainder(a, 2.0 * pi);  // [-pi, pi]
  if (w <= -pi) w += 2.0 * pi;
  return w;
}

namespace {

VectorXd offset_of(const MpcConfig& cfg, Eigen::Index p) {
  return cfg.c_c.size() == 0 ? VectorXd::Zero(p) : cfg.c_c;
}

void check_shapes(const ssid::KoopmanModel& model, const VectorXd& z0, const MatrixXd& U,
                  const MpcConfig& cfg) {
  if (model.p != 3 || model.m != 2) throw ConfigError("mpc: model must have 3 outputs, 2 inputs");
  if (z0.size() != model.r) throw ConfigError("mpc: z0 size differs from model order");
  if (U.rows() != 2 || U.cols() != cfg.Np) throw ConfigError("mpc: U must be 2 x Np");
}

}  // namespace

MatrixXd predict_horizon(const ssid::KoopmanModel& model, const VectorXd& z0, const Pose& pose,
                         const MatrixXd& U, const MpcConfig& cfg) {
  check_shapes(model, z0, U, cfg);
  const VectorXd c = offset_of(cfg, model.p);
  const double dt = cfg.dt_mpc;
  MatrixXd yt(6, cfg.Np + 1);
  VectorXd z = z0;
  Pose x = pose;
  for (int k = 0; k <= cfg.Np; ++k) {
    const VectorXd yb = model.C * z + c;
    yt.col(k).head<3>() = x;
    yt.col(k).tail<3>() = yb;
    if (k == cfg.Np) break;
    const double cs = std::cos(x[2]), sn = std::sin(x[2]);
    x[0] += (yb[0] * cs - yb[1] * sn) * dt;
    x[1] += (yb[0] * sn + yb[1] * cs) * dt;
    x[2] += yb[2] * dt;
    z = model.A * z + model.B * U.col(k);
  }
  if (!yt.allFinite()) throw NumericalError("predict_horizon: non-finite propagation");
  return yt;
}

double horizon_cost(const MatrixXd& yt, const MatrixXd& ref, const MatrixXd& U,
                    const Vector2d& u_prev, const MpcConfig& cfg) {
  const int Np = int(U.cols());
  if (ref.rows() != 6 || ref.cols() != Np || yt.rows() != 6 || yt.cols() < Np) {
    throw ConfigError("horizon_cost: inconsistent lengths");
  }
  double J = 0.0;
  Vector2d prev = u_prev;
  for (int k = 0; k < Np; ++k) {
    Vector6d e = yt.col(k) - ref.col(k);
    e[2] = wrap_angle(e[2]);
    const Vector2d u = U.col(k);
    const Vector2d du = u - prev;
    J += e.dot(cfg.Q.cwiseProduct(e)) + u.dot(cfg.R.cwiseProduct(u)) +
         du.dot(cfg.R_du.cwiseProduct(du));
    prev = u;
  }
  return J;
}

double cost_and_gradient(const ssid::KoopmanModel& model, const VectorXd& z0, const Pose& pose,
                         const MatrixXd& ref, const MatrixXd& U, const Vector2d& u_prev,
                         const MpcConfig& cfg, MatrixXd* grad) {
  const MatrixXd yt = predict_horizon(model, z0, pose, U, cfg);
  const double J = horizon_cost(yt, ref, U, u_prev, cfg);
  if (!grad) return J;
  const int Np = cfg.Np;
  const double dt = cfg.dt_mpc;
  grad->resize(2, Np);
  Eigen::Vector3d lp = Eigen::Vector3d::Zero();  // adjoint of pose_{k+1}
  VectorXd lz = VectorXd::Zero(model.r);         // adjoint of z_{k+1}
  for (int k = Np - 1; k >= 0; --k) {
    Vector6d e = yt.col(k) - ref.col(k);
    e[2] = wrap_angle(e[2]);
    const Vector6d ge = 2.0 * cfg.Q.cwiseProduct(e);
    // u_k enters only through z_{k+1}.
    const Vector2d u = U.col(k);
    Vector2d gu = model.B.transpose() * lz + 2.0 * cfg.R.cwiseProduct(u);
    const Vector2d prev = k == 0 ? u_prev : Vector2d(U.col(k - 1));
    gu += 2.0 * cfg.R_du.cwiseProduct(u - prev);
    if (k + 1 < Np) gu -= 2.0 * cfg.R_du.cwiseProduct(Vector2d(U.col(k + 1)) - u);
    grad->col(k) = gu;
    // Pose_{k+1} = pose_k + dt g(psi_k, y_k).
    const double psi = yt(2, k), ub = yt(3, k), vb = yt(4, k);
    const double cs = std::cos(psi), sn = std::sin(psi);
    Eigen::Vector3d lp_k = ge.head<3>() + lp;
    lp_k[2] += dt * (lp[0] * (-ub * sn - vb * cs) + lp[1] * (ub * cs - vb * sn));
    Eigen::Vector3d gy = ge.tail<3>();
    gy[0] += dt * (lp[0] * cs + lp[1] * sn);
    gy[1] += dt * (-lp[0] * sn + lp[1] * cs);
    gy[2] += dt * lp[2];
    lz = model.C.transpose() * gy + model.A.transpose() * lz;
    lp = lp_k;
  }
  return J;
}

MpcSolution solve_mpc(const ssid::KoopmanModel& model, const VectorXd& z0, const Pose& pose,
                      const MatrixXd& ref, const Vector2d& u_prev, const MatrixXd& U_warm,
                      const MpcConfig& cfg) {
  cfg.validate();
  check_shapes(model, z0, U_warm, cfg);
  if (ref.rows() != 6 || ref.cols() != cfg.Np) {
    throw ConfigError("solve_mpc: reference must be 6 x Np");
  }
  const int n = 2 * cfg.Np;
  const Vector2d span = cfg.u_hi - cfg.u_lo;
  // Decision variables: inputs scaled to [0, 1] per channel.
  auto to_inputs = [&](const VectorXd& s) {
    MatrixXd U(2, cfg.Np);
    for (int k = 0; k < cfg.Np; ++k) {
      for (int c = 0; c < 2; ++c) U(c, k) = cfg.u_lo[c] + span[c] * s[2 * k + c];
    }
    return U;
  };
  MatrixXd U_start(2, cfg.Np);
  for (int k = 0; k < cfg.Np; ++k) {
    U_start.col(k) = U_warm.col(k).cwiseMax(cfg.u_lo).cwiseMin(cfg.u_hi);
  }
  VectorXd s0(n);
  for (int k = 0; k < cfg.Np; ++k) {
    for (int c = 0; c < 2; ++c) {
      s0[2 * k + c] = span[c] > 0.0 ? (U_start(c, k) - cfg.u_lo[c]) / span[c] : 0.0;
    }
  }
  MatrixXd G;
  const optim::Objective obj = [&](const VectorXd& s, VectorXd& g) {
    const MatrixXd U = to_inputs(s);
    const double J = cost_and_gradient(model, z0, pose, ref, U, u_prev, cfg, &G);
    for (int k = 0; k < cfg.Np; ++k) {
      for (int c = 0; c < 2; ++c) g[2 * k + c] = G(c, k) * span[c];
    }
    return J;
  };
  const optim::BoxResult res =
      optim::minimize_box(obj, s0, VectorXd::Zero(n), VectorXd::Ones(n), cfg.solver);
  MpcSolution sol;
  sol.U = to_inputs(res.x);
  for (int k = 0; k < cfg.Np; ++k) {
    sol.U.col(k) = sol.U.col(k).cwiseMax(cfg.u_lo).cwiseMin(cfg.u_hi);
  }
  sol.warm_cost = cost_and_gradient(model, z0, pose, ref, U_start, u_prev, cfg, nullptr);
  sol.cost = cost_and_gradient(model, z0, pose, ref, sol.U, u_prev, cfg, nullptr);
  if (!(sol.cost <= sol.warm_cost)) {
    // Rounding in the scaled variables can cost the last bits of a step that
    // made no real progress.
    sol.U = U_start;
    sol.cost = sol.warm_cost;
  }
  sol.iterations = res.iterations;
  sol.status = res.status;
  return sol;
}

MpcSolution solve_mpc(const ssid::KoopmanModel& model, const lifting::LiftingMap& lift,
                      const VectorXd& y, const Pose& pose, const MatrixXd& ref,
                      const Vector2d& u_prev, const MatrixXd& U_warm, const MpcConfig& cfg) {
  return solve_mpc(model, lift.lift(y), pose, ref, u_prev, U_warm, cfg);
}

MatrixXd shift_warm_start(const MatrixXd& U, int Nc) {
  const Eigen::Index Np = U.cols();
  MatrixXd W(U.rows(), Np);
  for (Eigen::Index k = 0; k < Np; ++k) W.col(k) = U.col(std::min(k + Nc, Np - 1));
  return W;
}

Vector6d Reference::at(double t) const {
  if (y.cols() == 0) throw ConfigError("reference: empty");
  if (t <= 0.0) return y.col(0);
  const double q = t / dt;
  const Eigen::Index i = Eigen::Index(std::floor(q));
  if (i >= y.cols() - 1) return y.col(y.cols() - 1);
  const double f = q - double(i);
  return (1.0 - f) * y.col(i) + f * y.col(i + 1);
}

MatrixXd Reference::window(double t0, int Np, double dt_mpc) const {
  MatrixXd W(6, Np);
  for (int k = 0; k < Np; ++k) W.col(k) = at(t0 + k * dt_mpc);
  return W;
}

namespace {

Vector6d tracked(const vehicle::VehicleState& x) {
  Vector6d y;
  y << x.X, x.Y, x.psi, x.u, x.v, x.psi_dot;
  return y;
}

}  // namespace

Reference reference_from_simulation(const Plant& plant, const vehicle::VehicleState& x0,
                                    const vehicle::InputSignal& inputs, double duration,
                                    double dt) {
  const auto traj = vehicle::simulate(x0, inputs, plant.terrain, plant.soil, plant.vehicle,
                                      duration, dt, plant.sim);
  if (traj.truncated()) {
    throw NumericalError("reference_from_simulation: plant run ended early (" + traj.termination +
                         ")");
  }
  Reference ref;
  ref.dt = dt;
  ref.x0 = x0;
  ref.u_trim << inputs.samples.front().delta, inputs.samples.front().tau;
  ref.y.resize(6, Eigen::Index(traj.rows.size()));
  for (std::size_t k = 0; k < traj.rows.size(); ++k) {
    ref.y.col(Eigen::Index(k)) = tracked(traj.rows[k].x);
  }
  return ref;
}

Reference reference_from_path(const MatrixXd& XY, const VectorXd& speed, double dt,
                              const vehicle::VehicleState& x0) {
  const Eigen::Index n = XY.cols();
  if (XY.rows() != 2 || n < 2 || speed.size() != n || !(dt > 0.0)) {
    throw ConfigError("reference_from_path: need a 2 x n path, n speeds and dt > 0");
  }
  Reference ref;
  ref.dt = dt;
  ref.x0 = x0;
  ref.y.resize(6, n);
  VectorXd psi(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const Eigen::Index a = std::max<Eigen::Index>(k - 1, 0), b = std::min(k + 1, n - 1);
    const Eigen::Vector2d d = XY.col(b) - XY.col(a);
    double h = std::atan2(d[1], d[0]);
    if (k > 0) h = psi[k - 1] + wrap_angle(h - psi[k - 1]);
    psi[k] = h;
  }
  for (Eigen::Index k = 0; k < n; ++k) {
    const Eigen::Index a = std::max<Eigen::Index>(k - 1, 0), b = std::min(k + 1, n - 1);
    const double rate = (psi[b] - psi[a]) / (dt * double(b - a));
    ref.y.col(k) << XY(0, k), XY(1, k), psi[k], speed[k], 0.0, rate;
  }
  return ref;
}

Reference fishhook_reference(const Plant& plant, const FishhookSpec& spec) {
  excitation::SignalSpec steer;
  steer.family = excitation::Family::fishhook;
  steer.level = spec.level;
  steer.countersteer = spec.countersteer;
  steer.rate = spec.rate;
  steer.dwell = spec.dwell;
  steer.t_start = spec.t_start;
  steer.validate();
  const double dt = 0.01;
  const auto delta = excitation::make_signal(steer, spec.duration, dt);
  vehicle::InputSignal sig;
  sig.dt = dt;
  for (double d : delta) sig.samples.push_back({d, spec.tau});
  vehicle::VehicleState x0;
  x0.u = spec.u0;
  x0.omega_f = x0.omega_r = spec.u0 / plant.vehicle.wheel.r;
  return reference_from_simulation(plant, x0, sig, spec.duration, dt);
}

ClosedLoopLog run_closed_loop(const Plant& plant, const Controller& ctrl, const MpcConfig& cfg,
                              const Reference& ref) {
  cfg.validate();
  const ssid::KoopmanModel model = resample_model(ctrl.model, cfg.dt_mpc);
  ClosedLoopLog log;
  vehicle::VehicleState x = ref.x0;
  const double t_end = ref.duration();
  double t = 0.0;
  Vector2d u_prev = ref.u_trim.cwiseMax(cfg.u_lo).cwiseMin(cfg.u_hi);
  MatrixXd U_warm(2, cfg.Np);
  for (int k = 0; k < cfg.Np; ++k) U_warm.col(k) = u_prev;
  double sat_since = -1.0, sat_xte = 0.0;
  double cost_sum = 0.0, ms_sum = 0.0;
  bool stop = false;

  while (!stop && t < t_end - 1e-9) {
    const Vector6d meas = tracked(x);
    const MatrixXd window = ref.window(t, cfg.Np, cfg.dt_mpc);
    const auto t0 = std::chrono::steady_clock::now();
    const MpcSolution sol = solve_mpc(model, ctrl.lifting, meas.tail<3>(), meas.head<3>(), window,
                                      u_prev, U_warm, cfg);
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    log.solves.push_back({t, sol.cost, sol.warm_cost, sol.iterations, ms, sol.status});
    if (sol.cost > sol.warm_cost) log.monotone = false;
    cost_sum += sol.cost;
    ms_sum += ms;

    const int remaining = int(std::ceil((t_end - t) / cfg.dt_mpc - 1e-9));
    const int steps = std::max(1, std::min(cfg.Nc, remaining));
    vehicle::InputSignal sig;
    sig.dt = cfg.dt_mpc;
    for (int k = 0; k < steps; ++k) sig.samples.push_back({sol.U(0, k), sol.U(1, k)});
    const auto seg = vehicle::simulate(x, sig, plant.terrain, plant.soil, plant.vehicle,
                                       cfg.dt_mpc * steps, cfg.dt_mpc, plant.sim);
    for (int k = 0; k < steps && std::size_t(k) < seg.rows.size(); ++k) {
      const auto& row = seg.rows[std::size_t(k)];
      const double tk = t + k * cfg.dt_mpc;
      const Vector6d r = ref.at(tk);
      LogRow lr;
      lr.t = tk;
      lr.X = row.x.X;
      lr.Y = row.x.Y;
      lr.psi = row.x.psi;
      lr.u = row.x.u;
      lr.v = row.x.v;
      lr.psi_dot = row.x.psi_dot;
      lr.X_ref = r[0];
      lr.Y_ref = r[1];
      lr.psi_ref = r[2];
      lr.delta = sol.U(0, k);
      lr.tau = sol.U(1, k);
      lr.cost = sol.cost;
      lr.solve_ms = k == 0 ? ms : 0.0;
      if (lr.delta < cfg.u_lo[0] || lr.delta > cfg.u_hi[0] || lr.tau < cfg.u_lo[1] ||
          lr.tau > cfg.u_hi[1]) {
        log.inputs_within_bounds = false;
      }
      lr.saturated = lr.delta <= cfg.u_lo[0] || lr.delta >= cfg.u_hi[0];
      const double xte =
          std::abs(-std::sin(r[2]) * (lr.X - r[0]) + std::cos(r[2]) * (lr.Y - r[1]));
      if (lr.saturated) {
        if (sat_since < 0.0) {
          sat_since = tk;
          sat_xte = xte;
        } else if (tk - sat_since > 2.0 && xte > sat_xte) {
          log.termination = "saturation_stall";
          stop = true;
        }
      } else {
        sat_since = -1.0;
      }
      log.rows.push_back(lr);
      if (stop) break;
    }
    if (seg.truncated()) {
      log.termination = seg.termination;
      break;
    }
    x = seg.rows.back().x;
    t += steps * cfg.dt_mpc;
    u_prev = sol.U.col(steps - 1);
    U_warm = shift_warm_start(sol.U, steps);
  }
  if (!log.solves.empty()) {
    log.mean_cost = cost_sum / double(log.solves.size());
    log.mean_solve_ms = ms_sum / double(log.solves.size());
  }
  return log;
}

std::string log_csv(const ClosedLoopLog& log, bool deterministic) {
  std::string s = "t,X,Y,psi,u,v,psi_dot,X_ref,Y_ref,psi_ref,delta,tau,cost,solve_ms,saturated\n";
  for (const auto& r : log.rows) {
    for (double v : {r.t, r.X, r.Y, r.psi, r.u, r.v, r.psi_dot, r.X_ref, r.Y_ref, r.psi_ref,
                     r.delta, r.tau, r.cost, deterministic ? 0.0 : r.solve_ms}) {
      json_io::append_number(s, v);
      s += ",";
    }
    s += r.saturated ? "1\n" : "0\n";
  }
  return s;
}

}  // namespace terrakoop::kmpc
