#include "terrakoop/terramech.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "terrakoop/errors.hpp"
#include "terrakoop/quadrature.hpp"

namespace terrakoop::terramech {

namespace {

constexpr double kAngleSlack = 1e-12;

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

double pos_pow(double x, double n) { return x > 0.0 ? std::pow(x, n) : 0.0; }

// Stress evaluation without domain checks; callers guarantee theta in patch.
struct PatchModel {
  ContactAngles a;
  double r, b, pressure_coeff, n, c, tan_phi, k_t, k_cs;
  double s, tan_beta;
  double cos_f, sin_f;

  PatchModel(const ContactAngles& angles, double s_, double beta,
             const SoilParams& soil, const WheelGeometry& wheel)
      : a(angles),
        r(wheel.r),
        b(wheel.b),
        pressure_coeff(soil.k_c / wheel.b + soil.k_phi),
        n(soil.n),
        c(soil.c),
        tan_phi(std::tan(soil.phi)),
        k_t(soil.k_t),
        k_cs(soil.k_c_shear),
        s(s_),
        tan_beta(std::tan(beta)),
        cos_f(std::cos(angles.theta_f)),
        sin_f(std::sin(angles.theta_f)) {}

  double sigma(double theta) const {
    if (theta >= a.theta_m) return pressure_coeff * pos_pow(r * (std::cos(theta) - cos_f), n);
    const double span = a.theta_m - a.theta_r;
    if (span <= 0.0) return 0.0;
    const double theta_e =
        a.theta_f - ((theta - a.theta_r) / span) * (a.theta_f - a.theta_m);
    return pressure_coeff * pos_pow(r * (std::cos(theta_e) - cos_f), n);
  }

  static double mobilised(double cap, double j, double k) {
    const double frac = -std::expm1(-std::abs(j) / k);
    return std::copysign(cap * frac, j);
  }

  ShearStress shear(double theta, double sig) const {
    const double cap = c + sig * tan_phi;
    const double j_t = r * ((a.theta_f - theta) - (1.0 - s) * (sin_f - std::sin(theta)));
    const double j_c = r * (1.0 - s) * (a.theta_f - theta) * tan_beta;
    ShearStress out;
    out.tau_t = j_t == 0.0 ? 0.0 : mobilised(cap, j_t, k_t);
    out.tau_c = j_c == 0.0 ? 0.0 : mobilised(cap, j_c, k_cs);
    return out;
  }
};

struct Sums {
  double l = 0.0, c = 0.0, z = 0.0;
  double al = 0.0, ac = 0.0, az = 0.0;

  Sums& operator+=(const Sums& o) {
    l += o.l; c += o.c; z += o.z;
    al += o.al; ac += o.ac; az += o.az;
    return *this;
  }
};

Sums operator+(Sums a, const Sums& b) { return a += b; }

enum class Branch { front, rear };

class PatchIntegrator {
 public:
  PatchIntegrator(const PatchModel& model, const QuadratureOptions& quad, bool lateral)
      : m_(model), q_(quad), rule_(gauss_legendre(quad.nodes)), lateral_(lateral) {}

  Sums integrate(Branch br) const {
    const double len = br == Branch::front ? m_.a.theta_f - m_.a.theta_m
                                           : m_.a.theta_m - m_.a.theta_r;
    if (len <= 0.0) return {};
    const Sums coarse = panel(br, 0.0, 1.0);
    if (!q_.adaptive) return coarse;
    return refine(br, 0.0, 1.0, coarse, 0);
  }

 private:
  // Branch parameter t in [0, 1], quadratic in theta so that t = 0 is the
  // endpoint where the local sinkage vanishes.
  Sums panel(Branch br, double t0, double t1) const {
    Sums out;
    const double half = 0.5 * (t1 - t0);
    const double mid = 0.5 * (t1 + t0);
    const double len = br == Branch::front ? m_.a.theta_f - m_.a.theta_m
                                           : m_.a.theta_m - m_.a.theta_r;
    const double rb = m_.r * m_.b;
    for (std::size_t i = 0; i < rule_.x.size(); ++i) {
      const double t = mid + half * rule_.x[i];
      const double theta = br == Branch::front ? m_.a.theta_f - len * t * t
                                               : m_.a.theta_r + len * t * t;
      const double jac = 2.0 * len * t * half * rule_.w[i] * rb;
      const double sig = m_.sigma(theta);
      const ShearStress tau = lateral_ ? m_.shear(theta, sig) : shear_t_only(theta, sig);
      const double ct = std::cos(theta), st = std::sin(theta);
      const double fl = tau.tau_t * ct - sig * st;
      const double fz = q_.vertical == VerticalIntegrand::standard
                            ? tau.tau_t * st + sig * ct
                            : tau.tau_t * st + sig * st;
      if (!std::isfinite(fl) || !std::isfinite(fz) || !std::isfinite(tau.tau_c)) {
        std::ostringstream os;
        os << "integrate_forces: non-finite integrand at theta=" << theta;
        throw NumericalError(os.str());
      }
      out.l += jac * fl;
      out.z += jac * fz;
      out.c += jac * tau.tau_c;
      out.al += std::abs(jac * fl);
      out.az += std::abs(jac * fz);
      out.ac += std::abs(jac * tau.tau_c);
    }
    return out;
  }

  ShearStress shear_t_only(double theta, double sig) const {
    const double cap = m_.c + sig * m_.tan_phi;
    const double j_t =
        m_.r * ((m_.a.theta_f - theta) - (1.0 - m_.s) * (m_.sin_f - std::sin(theta)));
    return {j_t == 0.0 ? 0.0 : PatchModel::mobilised(cap, j_t, m_.k_t), 0.0};
  }

  bool agree(const Sums& coarse, const Sums& fine) const {
    auto ok = [&](double a, double b, double scale) {
      return std::abs(a - b) <= q_.rel_tol * scale + 1e-300;
    };
    return ok(coarse.l, fine.l, fine.al) && ok(coarse.z, fine.z, fine.az) &&
           ok(coarse.c, fine.c, fine.ac);
  }

  Sums refine(Branch br, double t0, double t1, const Sums& coarse, int depth) const {
    const double tm = 0.5 * (t0 + t1);
    const Sums left = panel(br, t0, tm);
    const Sums right = panel(br, tm, t1);
    const Sums fine = left + right;
    if (agree(coarse, fine) || depth >= q_.max_depth) return fine;
    return refine(br, t0, tm, left, depth + 1) + refine(br, tm, t1, right, depth + 1);
  }

  const PatchModel& m_;
  const QuadratureOptions& q_;
  const GaussRule& rule_;
  bool lateral_;
};

Sums integrate_patch(double h_f, double s, double beta, const SoilParams& soil,
                     const WheelGeometry& wheel, const QuadratureOptions& quad,
                     bool lateral) {
  const ContactAngles angles = contact_angles(h_f, s, soil, wheel);
  const PatchModel model(angles, s, beta, soil, wheel);
  const PatchIntegrator integ(model, quad, lateral);
  return integ.integrate(Branch::rear) + integ.integrate(Branch::front);
}

}  // namespace

void SoilParams::validate() const {
  require(k_c >= 0.0, "soil " + name + ": k_c must be >= 0");
  require(k_phi > 0.0, "soil " + name + ": k_phi must be > 0");
  require(c >= 0.0, "soil " + name + ": c must be >= 0");
  require(phi > 0.0 && phi < std::numbers::pi / 2, "soil " + name + ": phi must lie in (0, pi/2)");
  require(n > 0.0, "soil " + name + ": n must be > 0");
  require(k_t > 0.0, "soil " + name + ": k_t must be > 0");
  require(k_c_shear > 0.0, "soil " + name + ": k_c_shear must be > 0");
  require(lambda_r > 0.0 && lambda_r < 1.0, "soil " + name + ": lambda_r must lie in (0, 1)");
  require(a0 > 0.0, "soil " + name + ": a0 must be > 0");
}

SoilParams sandy_loam() {
  SoilParams p;
  p.name = "sandy_loam";
  p.k_c = 5.27e3;
  p.k_phi = 1515.04e3;
  p.c = 1.72e3;
  p.phi = 0.5061;
  p.n = 0.7;
  p.k_t = 0.025;
  p.k_c_shear = 0.025;
  p.a0 = 0.18;
  p.a1 = 0.32;
  p.lambda_r = 0.08;
  return p;
}

SoilParams clay() {
  SoilParams p;
  p.name = "clay";
  p.k_c = 13.19e3;
  p.k_phi = 692.15e3;
  p.c = 4.14e3;
  p.phi = 0.2269;
  p.n = 0.5;
  p.k_t = 0.01;
  p.k_c_shear = 0.01;
  p.a0 = 0.43;
  p.a1 = 0.32;
  p.lambda_r = 0.08;
  return p;
}

SoilParams soil_by_name(const std::string& name) {
  if (name == "sandy_loam" || name == "sandyloam") return sandy_loam();
  if (name == "clay") return clay();
  throw ConfigError("unknown soil '" + name + "'");
}

void WheelGeometry::validate() const {
  require(r > 0.0, "wheel radius must be > 0");
  require(b > 0.0, "wheel width must be > 0");
}

SlipRatio slip_ratio(double omega, double v_l, double r, double stationary_threshold) {
  const double wr = omega * r;
  if (std::abs(wr) < stationary_threshold && std::abs(v_l) < stationary_threshold) {
    return {0.0, true};
  }
  double s = 0.0;
  if (std::abs(wr) > std::abs(v_l)) {
    s = 1.0 - v_l / wr;
  } else if (std::abs(wr) < std::abs(v_l)) {
    s = wr / v_l - 1.0;
  }
  return {std::clamp(s, -1.0, 1.0), false};
}

double slip_angle(double v_c, double v_l) {
  return std::clamp(std::atan2(v_c, std::abs(v_l)), -std::numbers::pi / 2, std::numbers::pi / 2);
}

ContactAngles contact_angles(double h_f, double s, const SoilParams& soil,
                             const WheelGeometry& wheel) {
  if (!(h_f >= 0.0)) throw DomainError("contact_angles: negative or non-finite sinkage");
  if (h_f >= wheel.r) throw DomainError("contact_angles: sinkage overflow, wheel buried past axle");
  ContactAngles a;
  if (h_f == 0.0) return a;
  a.theta_f = std::acos(1.0 - h_f / wheel.r);
  a.theta_m = std::clamp((soil.a0 + soil.a1 * s) * a.theta_f, 0.0, a.theta_f);
  a.theta_r = -std::acos(1.0 - soil.lambda_r * h_f / wheel.r);
  return a;
}

double normal_stress(double theta, const ContactAngles& angles, const SoilParams& soil,
                     const WheelGeometry& wheel) {
  if (theta < angles.theta_r - kAngleSlack || theta > angles.theta_f + kAngleSlack) {
    throw DomainError("normal_stress: angle outside contact patch");
  }
  theta = std::clamp(theta, angles.theta_r, angles.theta_f);
  return PatchModel(angles, 0.0, 0.0, soil, wheel).sigma(theta);
}

ShearStress shear_stresses(double theta, const ContactAngles& angles, double s, double beta,
                           const SoilParams& soil, const WheelGeometry& wheel) {
  if (theta < angles.theta_r - kAngleSlack || theta > angles.theta_f + kAngleSlack) {
    throw DomainError("shear_stresses: angle outside contact patch");
  }
  theta = std::clamp(theta, angles.theta_r, angles.theta_f);
  const PatchModel model(angles, s, beta, soil, wheel);
  return model.shear(theta, model.sigma(theta));
}

WheelForces integrate_forces(double h_f, const ContactState& state, const SoilParams& soil,
                             const WheelGeometry& wheel, const QuadratureOptions& quad) {
  WheelForces out;
  out.h_f = h_f;
  if (h_f == 0.0) {
    contact_angles(h_f, state.s, soil, wheel);
    return out;
  }
  const Sums sums = integrate_patch(h_f, state.s, state.beta, soil, wheel, quad, true);
  out.F_l = sums.l;
  out.F_c = state.beta == 0.0 ? 0.0 : sums.c;
  out.F_z = sums.z;
  return out;
}

namespace {

struct SinkageSolution {
  double h_f = 0.0;
  Sums check;  // configured-rule integrals at h_f, lateral included
};

SinkageSolution solve_sinkage_impl(double N, double s, double beta, const SoilParams& soil,
                                   const WheelGeometry& wheel, const SinkageOptions& opts) {
  if (!(N >= 0.0)) throw DomainError("solve_sinkage: normal load must be >= 0");
  if (N == 0.0) return {};

  const double r = wheel.r;
  const double tol = opts.tol_abs + opts.tol_rel * N;

  // Inner iterations use the fixed rule; the accepted root is re-checked with
  // the configured (possibly adaptive) rule. If the two rules disagree by more
  // than the tolerance, the remaining iterations switch to the configured rule.
  QuadratureOptions fixed = opts.quad;
  fixed.adaptive = false;
  const QuadratureOptions* inner = &fixed;
  auto residual = [&](double h) {
    return integrate_patch(h, s, beta, soil, wheel, *inner, false).z - N;
  };
  auto checked = [&](double h) { return integrate_patch(h, s, beta, soil, wheel, opts.quad, true); };

  double lo = 0.0;
  double hi = opts.bracket_max * r;
  const double f_hi = residual(hi);
  if (f_hi < 0.0) {
    std::ostringstream os;
    os << "solve_sinkage: no equilibrium in [0, " << opts.bracket_max << " r] for N=" << N
       << " (F_z max " << f_hi + N << ")";
    throw NumericalError(os.str());
  }

  double h;
  if (opts.initial_guess && *opts.initial_guess > 0.0 && *opts.initial_guess < hi) {
    h = *opts.initial_guess;
  } else {
    const double k = soil.k_c / wheel.b + soil.k_phi;
    h = r * std::pow(N / (r * wheel.b * k * std::pow(r, soil.n)), 1.0 / soil.n);
    h = std::min(h, opts.initial_cap * r);
    if (!(h > 0.0)) h = 0.5 * hi;
  }

  const double step = opts.fd_step * r;
  double f = residual(h);
  for (int it = 0; it < opts.max_iterations; ++it) {
    if (f < 0.0) lo = std::max(lo, h); else hi = std::min(hi, h);
    if (std::abs(f) <= tol) {
      Sums sums = checked(h);
      const double f_check = sums.z - N;
      if (std::abs(f_check) <= tol) return {h, sums};
      inner = &opts.quad;
      f = f_check;
    }
    const double h_minus = std::max(h - step, 0.0);
    const double h_plus = h + step;
    const double slope = (residual(h_plus) - residual(h_minus)) / (h_plus - h_minus);
    double next = h - f / slope;
    if (!std::isfinite(next) || slope <= 0.0 || next <= lo || next >= hi) {
      next = 0.5 * (lo + hi);
    }
    if (std::abs(next - h) <= 1e-15 * r) {
      // Step underflow at the resolution of h. The residual cannot be resolved
      // below the accuracy of the quadrature rule itself.
      Sums sums = checked(next);
      const double floor = opts.quad.adaptive ? opts.quad.rel_tol * sums.az : 1e-9 * N;
      if (std::abs(sums.z - N) <= std::max(tol, floor)) return {next, sums};
    }
    h = next;
    f = residual(h);
  }
  throw ConvergenceError("solve_sinkage: maximum iterations exceeded", f);
}

}  // namespace

double solve_sinkage(double N, double s, double beta, const SoilParams& soil,
                     const WheelGeometry& wheel, const SinkageOptions& opts) {
  return solve_sinkage_impl(N, s, beta, soil, wheel, opts).h_f;
}

WheelForces wheel_forces(double N, double omega, double v_l, double v_c,
                         const SoilParams& soil, const WheelGeometry& wheel,
                         const SinkageOptions& opts) {
  const SlipRatio slip = slip_ratio(omega, v_l, wheel.r);
  const double beta = slip_angle(v_c, v_l);
  const SinkageSolution sol = solve_sinkage_impl(N, slip.s, beta, soil, wheel, opts);
  WheelForces out;
  out.h_f = sol.h_f;
  out.F_l = sol.check.l;
  out.F_c = beta == 0.0 ? 0.0 : sol.check.c;
  out.F_z = sol.check.z;
  out.degenerate_slip = slip.degenerate;
  return out;
}

}  // namespace terrakoop::terramech
