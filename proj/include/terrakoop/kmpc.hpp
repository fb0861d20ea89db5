#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "terrakoop/lifting.hpp"
#include "terrakoop/optim.hpp"
#include "terrakoop/ssid.hpp"
#include "terrakoop/terrain.hpp"
#include "terrakoop/terramech.hpp"
#include "terrakoop/vehicle.hpp"

namespace terrakoop::kmpc {

using Eigen::MatrixXd;
using Eigen::Vector2d;
using Eigen::Vector3d;
using Eigen::VectorXd;

using Vector6d = Eigen::Matrix<double, 6, 1>;

struct MpcConfig {
  int Np = 20;
  int Nc = 5;
  double dt_mpc = 0.1;
  Vector6d Q = (Vector6d() << 15, 15, 15, 1, 15, 15).finished();  // X, Y, psi, u, v, psi_dot
  Vector2d R{1e-2, 1e-6};
  Vector2d R_du{100, 1};
  Vector2d u_lo{-0.35, 0.0};
  Vector2d u_hi{0.35, 130.0};
  optim::BoxOptions solver;   // pg_tol 1e-6 on inputs scaled to [0, 1], 200 iterations
  VectorXd c_c;               // output offset, empty means zero

  void validate() const;
};

/// Planar pose [X, Y, psi].
using Pose = Vector3d;

/// Exact ZOH resampling: A' = A^q, B' = sum_{i<q} A^i B, C unchanged.
ssid::KoopmanModel resample_model(const ssid::KoopmanModel& model, double dt_mpc);

/// Tracked outputs [X, Y, psi, u, v, psi_dot] for k = 0 .. Np (6 x (Np+1)).
/// The latent state follows z' = A z + B u_k and the pose an explicit Euler
/// step driven by the body velocities C z_k + c_c.
MatrixXd predict_horizon(const ssid::KoopmanModel& model, const VectorXd& z0, const Pose& pose,
                         const MatrixXd& U, const MpcConfig& cfg);

/// Wraps an angle to (-pi, pi].
double wrap_angle(double a);

/// Sum over k = 0 .. Np-1 of e_k^T Q e_k + u_k^T R u_k + du_k^T R_du du_k with
/// the heading error wrapped and du_0 = u_0 - u_prev. ytilde may carry one
/// trailing column, which is ignored.
double horizon_cost(const MatrixXd& ytilde, const MatrixXd& ref, const MatrixXd& U,
                    const Vector2d& u_prev, const MpcConfig& cfg);

/// Cost and its gradient with respect to U (2 x Np) by reverse accumulation.
double cost_and_gradient(const ssid::KoopmanModel& model, const VectorXd& z0, const Pose& pose,
                         const MatrixXd& ref, const MatrixXd& U, const Vector2d& u_prev,
                         const MpcConfig& cfg, MatrixXd* grad);

struct MpcSolution {
  MatrixXd U;           // 2 x Np, within bounds
  double cost = 0.0;
  double warm_cost = 0.0;
  int iterations = 0;
  std::string status;
};

/// Projected quasi-Newton single shooting from the warm start (clipped to
/// the bounds). The returned cost never exceeds the warm-start cost.
MpcSolution solve_mpc(const ssid::KoopmanModel& model, const VectorXd& z0, const Pose& pose,
                      const MatrixXd& ref, const Vector2d& u_prev, const MatrixXd& U_warm,
                      const MpcConfig& cfg);
MpcSolution solve_mpc(const ssid::KoopmanModel& model, const lifting::LiftingMap& lift,
                      const VectorXd& y, const Pose& pose, const MatrixXd& ref,
                      const Vector2d& u_prev, const MatrixXd& U_warm, const MpcConfig& cfg);

/// Previous solution shifted by Nc columns, padded with its last column.
MatrixXd shift_warm_start(const MatrixXd& U, int Nc);

/// Sampled reference [X, Y, psi, u, v, psi_dot] on a uniform grid.
struct Reference {
  double dt = 0.01;
  MatrixXd y;  // 6 x n
  vehicle::VehicleState x0;
  Vector2d u_trim = Vector2d::Zero();  // input at t = 0, seeds u_prev and the warm start

  double duration() const { return dt * double(y.cols() - 1); }
  /// Linear interpolation (heading unwrapped), held beyond the last sample.
  Vector6d at(double t) const;
  /// Columns at t0 + k dt_mpc, k = 0 .. Np-1.
  MatrixXd window(double t0, int Np, double dt_mpc) const;
};

struct Plant {
  vehicle::VehicleParams vehicle;
  terramech::SoilParams soil;
  Terrain terrain;
  vehicle::SimulationOptions sim;
};

/// Reference from an open-loop plant run under the given inputs.
Reference reference_from_simulation(const Plant& plant, const vehicle::VehicleState& x0,
                                    const vehicle::InputSignal& inputs, double duration,
                                    double dt);

/// Reference from a planar path with a speed profile; heading comes from the
/// path tangent, v from zero sideslip and psi_dot from the heading rate.
Reference reference_from_path(const MatrixXd& XY, const VectorXd& speed, double dt,
                              const vehicle::VehicleState& x0);

/// Ramp-hold-countersteer steering at constant drive torque. The defaults
/// follow the NHTSA shape: hold and countersteer near the steering cap, road
/// wheel rate about 45 deg/s.
struct FishhookSpec {
  double u0 = 5.0;        // initial speed [m/s], wheels rolling freely
  double tau = 60.0;      // drive torque [N m]
  double duration = 8.0;  // [s]
  double level = 0.3;     // first hold [rad]
  double countersteer = 0.3;
  double rate = 0.785;    // [rad/s]
  double dwell = 1.5;     // first hold time [s]
  double t_start = 1.0;
};

/// Open-loop run of the plant under the fishhook input.
Reference fishhook_reference(const Plant& plant, const FishhookSpec& spec = {});

struct LogRow {
  double t = 0.0;
  double X = 0.0, Y = 0.0, psi = 0.0, u = 0.0, v = 0.0, psi_dot = 0.0;
  double X_ref = 0.0, Y_ref = 0.0, psi_ref = 0.0;
  double delta = 0.0, tau = 0.0;
  double cost = 0.0;
  double solve_ms = 0.0;
  bool saturated = false;
};

struct SolveRecord {
  double t = 0.0;
  double cost = 0.0;
  double warm_cost = 0.0;
  int iterations = 0;
  double solve_ms = 0.0;
  std::string status;
};

struct ClosedLoopLog {
  std::vector<LogRow> rows;
  std::vector<SolveRecord> solves;
  std::string termination = "completed";  // completed | saturation_stall | plant event name
  double mean_cost = 0.0;
  double mean_solve_ms = 0.0;
  bool inputs_within_bounds = true;
  bool monotone = true;  // cost <= warm-start cost at every solve
};

/// Controller state: the model at the identification rate plus its lifting.
struct Controller {
  ssid::KoopmanModel model;
  lifting::LiftingMap lifting;
};

/// Receding-horizon loop against the nonlinear simulator. Each solve applies
/// its first Nc inputs under ZOH at dt_mpc. Stops at the reference end, on a
/// plant event, or on a steering-saturation stall (|delta| at its bound for
/// more than 2 s while the cross-track error grows).
ClosedLoopLog run_closed_loop(const Plant& plant, const Controller& ctrl, const MpcConfig& cfg,
                              const Reference& ref);

/// t,X,Y,psi,u,v,psi_dot,X_ref,Y_ref,psi_ref,delta,tau,cost,solve_ms,saturated.
/// With deterministic = true, solve_ms is written as 0.
std::string log_csv(const ClosedLoopLog& log, bool deterministic);

}  // namespace terrakoop::kmpc
