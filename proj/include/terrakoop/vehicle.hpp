#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "terrakoop/ode.hpp"
#include "terrakoop/terrain.hpp"
#include "terrakoop/terramech.hpp"

namespace terrakoop::vehicle {

/// Lateral balance of the front wheel forces. as_printed flips the sign of
/// the front cornering term in the lateral equation only.
enum class SignConvention { standard, as_printed };

/// f_r = P^alpha_R N^beta_R (A + B v_l + C v_l^2); all zero disables it.
struct RollingResistance {
  double P = 0.0;
  double alpha_R = 0.0;
  double beta_R = 0.0;
  double A = 0.0, B = 0.0, C = 0.0;
};

struct VehicleParams {
  double m = 452.0;     // sprung mass
  double m_w = 30.0;    // wheel mass
  double I_z = 600.0;   // not tabulated, default
  double I_y = 600.0;   // not tabulated, default
  double I_wf = 1.8;
  double I_wr = 1.8;
  double l_f = 1.3595;
  double l_r = 1.3595;
  double k_f = 5000.0, k_r = 5000.0;
  double c_f = 300.0, c_r = 300.0;
  terramech::WheelGeometry wheel;
  double rho_air = 1.225;
  double C_d = 0.5;
  double A_fx = 1.5;
  double A_fy = 2.5;
  double g = 9.81;
  RollingResistance rolling;
  SignConvention sign_convention = SignConvention::standard;

  double wheelbase() const { return l_f + l_r; }
  void validate() const;
};

struct VehicleState {
  double u = 0.0, v = 0.0;
  double psi = 0.0, psi_dot = 0.0;
  double X = 0.0, Y = 0.0;
  double z = 0.0, z_dot = 0.0;
  double theta = 0.0, theta_dot = 0.0;
  double omega_f = 0.0, omega_r = 0.0;

  static constexpr int kDim = 12;
  using Vec = Eigen::Matrix<double, kDim, 1>;

  Vec to_vector() const;
  static VehicleState from_vector(const Vec& x);
  bool all_finite() const { return to_vector().allFinite(); }
};

/// Field names in to_vector() order.
const std::vector<std::string>& state_names();

struct ControlInput {
  double delta = 0.0;  // steering [rad]
  double tau = 0.0;    // rear drive torque [N m]
};

struct InputLimits {
  double delta_max = 0.35;
  double tau_max = 130.0;
};

enum class Axle { front, rear };

struct NormalLoad {
  double N = 0.0;      // clamped at 0
  double raw = 0.0;    // before clamping, used for the lift-off event
  bool liftoff = false;
};

/// Terrain contact kinematics under one axle.
struct GroundContact {
  double z_g = 0.0;
  double z_g_dot = 0.0;
  double H_ddot = 0.0;
};

GroundContact ground_contact(Axle axle, const VehicleState& x, const Terrain& terrain,
                             const VehicleParams& p);

NormalLoad normal_load(Axle axle, const VehicleState& x, const Terrain& terrain,
                       const VehicleParams& p);

double rolling_resistance(double P, double N, double v_l, const RollingResistance& coeffs);

struct AeroDrag {
  double f_ax = 0.0;
  double f_ay = 0.0;
};

/// Quadratic drag per body axis, opposing motion.
AeroDrag aero_drag(double u, double v, const VehicleParams& p);

struct WheelKinematics {
  double v_l = 0.0;
  double v_c = 0.0;
};

WheelKinematics wheel_kinematics(Axle axle, const VehicleState& x, double delta,
                                 const VehicleParams& p);

/// Previous sinkage per wheel, used as the Newton starting point.
struct SinkageCache {
  double h_front = -1.0;
  double h_rear = -1.0;
};

struct WheelReport {
  NormalLoad load;
  WheelKinematics kin;
  terramech::SlipRatio slip;
  terramech::WheelForces forces;
  double f_r = 0.0;
};

struct Evaluation {
  VehicleState::Vec xdot;
  WheelReport front, rear;
  AeroDrag drag;
};

/// Full right-hand side with per-wheel diagnostics. Slip that is degenerate
/// (wheel and ground speed both below the stationary threshold) produces no
/// tangential force.
Evaluation evaluate(const VehicleState& x, const ControlInput& in, const Terrain& terrain,
                    const terramech::SoilParams& soil, const VehicleParams& p,
                    SinkageCache* cache = nullptr);

VehicleState derivatives(const VehicleState& x, const ControlInput& in, const Terrain& terrain,
                         const terramech::SoilParams& soil, const VehicleParams& p);

/// Zero-order-hold input sequence: sample k holds on [k dt, (k+1) dt).
struct InputSignal {
  double dt = 0.01;
  std::vector<ControlInput> samples;

  std::size_t index_at(double t) const;
  const ControlInput& at(double t) const { return samples[index_at(t)]; }
  double covered_duration() const { return dt * double(samples.size()); }
};

struct SimulationOptions {
  ode::Tolerances tol;
  double max_step = 0.01;
  double min_step = 1e-10;
  /// Accepted plus rejected steps before NumericalError (0: no limit).
  long max_steps = 200000;
  /// This many consecutive steps below collapse_step throw NumericalError.
  /// Catches the singular-slip crawl of a wheel stopping while the body slides.
  double collapse_step = 1e-6;
  int collapse_count = 2000;
  double event_tol = 1e-8;
  bool liftoff_event = true;
  bool low_speed_event = true;
  double low_speed = 0.05;
  double small_angle_limit = 0.3;
  InputLimits limits;
  terramech::SinkageOptions sinkage;
};

struct TrajectoryRow {
  double t = 0.0;
  VehicleState x;
  ControlInput in;
  double N_f = 0.0, N_r = 0.0;
  double s_f = 0.0, s_r = 0.0;
  double hf_f = 0.0, hf_r = 0.0;
  std::string event;  // set on the last row of a truncated run
};

struct Trajectory {
  std::vector<TrajectoryRow> rows;
  std::string termination = "completed";  // completed | liftoff_front | liftoff_rear | low_speed
  double event_time = -1.0;
  VehicleState event_state;
  int small_angle_violations = 0;  // output rows with |theta| above the limit
  int steps_accepted = 0;
  int steps_rejected = 0;
  double max_error_norm = 0.0;  // largest accepted scaled local error

  bool truncated() const { return termination != "completed"; }
};

/// Adaptive Dormand-Prince integration with ZOH inputs, events located by
/// bisection on the dense output, and rows at exactly k dt_out.
Trajectory simulate(const VehicleState& x0, const InputSignal& signal, const Terrain& terrain,
                    const terramech::SoilParams& soil, const VehicleParams& p, double duration,
                    double dt_out, const SimulationOptions& opts = {});

}  // namespace terrakoop::vehicle
