#pragma once

#include <optional>
#include <string>

namespace terrakoop::terramech {

/// Bekker / Wong-Reece soil parameter set, SI units throughout.
struct SoilParams {
  std::string name;
  double k_c = 0.0;        // cohesive modulus [N/m^(n+1)]
  double k_phi = 0.0;      // frictional modulus [N/m^(n+2)]
  double c = 0.0;          // cohesion [Pa]
  double phi = 0.0;        // internal friction angle [rad]
  double n = 1.0;          // sinkage exponent
  double k_t = 0.0;        // longitudinal shear deformation modulus [m]
  double k_c_shear = 0.0;  // lateral shear deformation modulus [m]
  double a0 = 0.0;
  double a1 = 0.0;
  double lambda_r = 0.0;   // rear exit-sinkage ratio

  /// Throws ConfigError when an invariant is violated.
  void validate() const;
};

/// Table values for the two reference soils (kN/kPa converted to N/Pa).
SoilParams sandy_loam();
SoilParams clay();
/// Accepts "sandy_loam"/"sandyloam" and "clay".
SoilParams soil_by_name(const std::string& name);

struct WheelGeometry {
  double r = 0.33;
  double b = 0.2286;

  void validate() const;
};

struct ContactAngles {
  double theta_f = 0.0;  // entry
  double theta_r = 0.0;  // exit (non-positive)
  double theta_m = 0.0;  // max normal stress
};

struct ContactState {
  double s = 0.0;     // slip ratio
  double beta = 0.0;  // slip angle [rad]
  double N = 0.0;     // normal load [N]
};

struct WheelForces {
  double F_l = 0.0;
  double F_c = 0.0;
  double F_z = 0.0;
  double h_f = 0.0;
  bool degenerate_slip = false;
};

struct SlipRatio {
  double s = 0.0;
  bool degenerate = false;  // both speeds under the stationary threshold
};

inline constexpr double kStationaryThreshold = 1e-3;  // [m/s]

/// Longitudinal slip: driving (|wr| > |v|) gives 1 - v/(wr), braking gives
/// wr/v - 1. Clamped to [-1, 1].
SlipRatio slip_ratio(double omega, double v_l, double r,
                     double stationary_threshold = kStationaryThreshold);

/// atan2(v_c, |v_l|), so the result lies in [-pi/2, pi/2].
double slip_angle(double v_c, double v_l);

/// Entry, exit and max-stress angles for sinkage h_f. theta_m is kept inside
/// [0, theta_f]. Throws DomainError for h_f outside [0, r).
ContactAngles contact_angles(double h_f, double s, const SoilParams& soil,
                             const WheelGeometry& wheel);

/// Bekker normal stress at contact angle theta. Throws DomainError outside
/// [theta_r, theta_f].
double normal_stress(double theta, const ContactAngles& angles,
                     const SoilParams& soil, const WheelGeometry& wheel);

struct ShearStress {
  double tau_t = 0.0;
  double tau_c = 0.0;
};

/// Janosi-Hanamoto shear with a Mohr-Coulomb cap c + sigma tan(phi). The
/// stresses take the sign of the shear displacement, so |tau| never exceeds
/// the cap.
ShearStress shear_stresses(double theta, const ContactAngles& angles, double s,
                           double beta, const SoilParams& soil,
                           const WheelGeometry& wheel);

enum class VerticalIntegrand {
  standard,   // tau_t sin(theta) + sigma cos(theta)
  as_printed  // tau_t sin(theta) + sigma sin(theta)
};

struct QuadratureOptions {
  int nodes = 64;         // Gauss-Legendre nodes per branch
  bool adaptive = true;   // panel bisection until successive sums agree
  double rel_tol = 1e-8;
  int max_depth = 8;
  VerticalIntegrand vertical = VerticalIntegrand::standard;
};

/// Integrates stresses over [theta_r, theta_f] into wheel forces at a given
/// sinkage. Each branch ([theta_r, theta_m] and [theta_m, theta_f]) is mapped
/// by a quadratic change of variable that removes the square-root-type
/// endpoint behaviour of h^n before Gauss-Legendre is applied.
WheelForces integrate_forces(double h_f, const ContactState& state,
                             const SoilParams& soil, const WheelGeometry& wheel,
                             const QuadratureOptions& quad = {});

struct SinkageOptions {
  double tol_abs = 1e-8;   // [N]
  double tol_rel = 1e-10;
  int max_iterations = 100;
  double fd_step = 1e-6;      // central difference step, fraction of r
  double bracket_max = 0.9;   // upper bracket, fraction of r
  double initial_cap = 0.3;   // cap on the closed-form initial guess, fraction of r
  std::optional<double> initial_guess;  // overrides the closed-form guess
  QuadratureOptions quad;
};

/// Newton iteration on F_z(h_f) - N with a finite-difference slope, kept
/// inside a bisection bracket. Throws NumericalError when no bracket exists in
/// [0, bracket_max r) and ConvergenceError on iteration exhaustion.
double solve_sinkage(double N, double s, double beta, const SoilParams& soil,
                     const WheelGeometry& wheel, const SinkageOptions& opts = {});

/// Full pipeline: slip, slip angle, sinkage equilibrium and force integrals.
WheelForces wheel_forces(double N, double omega, double v_l, double v_c,
                         const SoilParams& soil, const WheelGeometry& wheel,
                         const SinkageOptions& opts = {});

}  // namespace terrakoop::terramech
