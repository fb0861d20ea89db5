#include "terrakoop/vehicle.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "terrakoop/errors.hpp"

namespace terrakoop::vehicle {

namespace tm = terrakoop::terramech;

void VehicleParams::validate() const {
  auto require = [](bool ok, const char* msg) {
    if (!ok) throw ConfigError(msg);
  };
  require(m > 0.0 && m_w > 0.0, "vehicle masses must be > 0");
  require(I_z > 0.0 && I_y > 0.0 && I_wf > 0.0 && I_wr > 0.0, "vehicle inertias must be > 0");
  require(l_f > 0.0 && l_r > 0.0, "axle distances must be > 0");
  require(k_f >= 0.0 && k_r >= 0.0 && c_f >= 0.0 && c_r >= 0.0,
          "suspension coefficients must be >= 0");
  require(rho_air >= 0.0 && C_d >= 0.0 && A_fx >= 0.0 && A_fy >= 0.0,
          "aero coefficients must be >= 0");
  require(g > 0.0, "gravity must be > 0");
  wheel.validate();
}

VehicleState::Vec VehicleState::to_vector() const {
  Vec x;
  x << u, v, psi, psi_dot, X, Y, z, z_dot, theta, theta_dot, omega_f, omega_r;
  return x;
}

VehicleState VehicleState::from_vector(const Vec& x) {
  VehicleState s;
  s.u = x[0];
  s.v = x[1];
  s.psi = x[2];
  s.psi_dot = x[3];
  s.X = x[4];
  s.Y = x[5];
  s.z = x[6];
  s.z_dot = x[7];
  s.theta = x[8];
  s.theta_dot = x[9];
  s.omega_f = x[10];
  s.omega_r = x[11];
  return s;
}

const std::vector<std::string>& state_names() {
  static const std::vector<std::string> names{"u",     "v",         "psi",     "psi_dot",
                                              "X",     "Y",         "z",       "z_dot",
                                              "theta", "theta_dot", "omega_f", "omega_r"};
  return names;
}

GroundContact ground_contact(Axle axle, const VehicleState& x, const Terrain& terrain,
                             const VehicleParams& p) {
  if (terrain.is_flat()) return {};
  const double arm = axle == Axle::front ? p.l_f : -p.l_r;
  const double cp = std::cos(x.psi), sp = std::sin(x.psi);
  const double px = x.X + arm * cp;
  const double py = x.Y + arm * sp;
  // Planar velocity of the contact point in the global frame.
  const Eigen::Vector2d vel(x.u * cp - x.v * sp - arm * x.psi_dot * sp,
                            x.u * sp + x.v * cp + arm * x.psi_dot * cp);
  const Terrain::Sample s = terrain.sample(px, py);
  GroundContact gc;
  gc.z_g = s.h;
  gc.z_g_dot = s.grad.dot(vel);
  // Along-path second derivative; the planar-acceleration term is neglected
  // so that H'' does not depend on the forces being evaluated.
  gc.H_ddot = vel.dot(s.hess * vel);
  return gc;
}

namespace {

struct AxleSuspension {
  double dz = 0.0;     // z_i - z_g
  double dz_dot = 0.0; // z_i' - z_g'
  double k = 0.0, c = 0.0;
  GroundContact gc;
};

AxleSuspension axle_suspension(Axle axle, const VehicleState& x, const Terrain& terrain,
                               const VehicleParams& p) {
  AxleSuspension a;
  a.gc = ground_contact(axle, x, terrain, p);
  const double st = std::sin(x.theta), ct = std::cos(x.theta);
  if (axle == Axle::front) {
    a.dz = x.z + p.l_f * st - a.gc.z_g;
    a.dz_dot = x.z_dot + p.l_f * ct * x.theta_dot - a.gc.z_g_dot;
    a.k = p.k_f;
    a.c = p.c_f;
  } else {
    a.dz = x.z - p.l_r * st - a.gc.z_g;
    a.dz_dot = x.z_dot - p.l_r * ct * x.theta_dot - a.gc.z_g_dot;
    a.k = p.k_r;
    a.c = p.c_r;
  }
  return a;
}

NormalLoad load_from(const AxleSuspension& a, const VehicleParams& p) {
  NormalLoad n;
  n.raw = 0.5 * p.m * p.g - a.k * a.dz - a.c * a.dz_dot + p.m_w * a.gc.H_ddot;
  n.liftoff = !(n.raw > 0.0);
  n.N = n.liftoff ? 0.0 : n.raw;
  return n;
}

}  // namespace

NormalLoad normal_load(Axle axle, const VehicleState& x, const Terrain& terrain,
                       const VehicleParams& p) {
  return load_from(axle_suspension(axle, x, terrain, p), p);
}

double rolling_resistance(double P, double N, double v_l, const RollingResistance& k) {
  const double poly = k.A + k.B * v_l + k.C * v_l * v_l;
  if (poly == 0.0) return 0.0;
  return std::pow(P, k.alpha_R) * std::pow(N, k.beta_R) * poly;
}

AeroDrag aero_drag(double u, double v, const VehicleParams& p) {
  const double q = 0.5 * p.rho_air * p.C_d;
  return {q * p.A_fx * u * std::abs(u), q * p.A_fy * v * std::abs(v)};
}

WheelKinematics wheel_kinematics(Axle axle, const VehicleState& x, double delta,
                                 const VehicleParams& p) {
  if (axle == Axle::rear) return {x.u, x.v - p.l_r * x.psi_dot};
  const double lat = x.v + p.l_f * x.psi_dot;
  const double cd = std::cos(delta), sd = std::sin(delta);
  return {x.u * cd + lat * sd, -x.u * sd + lat * cd};
}

namespace {

WheelReport wheel_report(Axle axle, const VehicleState& x, const NormalLoad& load,
                         double omega, double delta, const tm::SoilParams& soil,
                         const VehicleParams& p, const tm::SinkageOptions& sink_opts,
                         double* cached_h) {
  WheelReport w;
  w.load = load;
  w.kin = wheel_kinematics(axle, x, delta, p);
  w.slip = tm::slip_ratio(omega, w.kin.v_l, p.wheel.r);
  if (load.N > 0.0) {
    tm::SinkageOptions opts = sink_opts;
    if (cached_h && *cached_h > 0.0) opts.initial_guess = *cached_h;
    w.forces = tm::wheel_forces(load.N, omega, w.kin.v_l, w.kin.v_c, soil, p.wheel, opts);
    if (cached_h) *cached_h = w.forces.h_f;
    if (w.forces.degenerate_slip) {
      w.forces.F_l = 0.0;
      w.forces.F_c = 0.0;
    }
  }
  w.f_r = rolling_resistance(p.rolling.P, load.N, w.kin.v_l, p.rolling);
  return w;
}

Evaluation evaluate_impl(const VehicleState& x, const ControlInput& in, const Terrain& terrain,
                         const tm::SoilParams& soil, const VehicleParams& p,
                         const tm::SinkageOptions& sink_opts, SinkageCache* cache) {
  const AxleSuspension sf = axle_suspension(Axle::front, x, terrain, p);
  const AxleSuspension sr = axle_suspension(Axle::rear, x, terrain, p);

  Evaluation ev;
  ev.front = wheel_report(Axle::front, x, load_from(sf, p), x.omega_f, in.delta, soil, p,
                          sink_opts, cache ? &cache->h_front : nullptr);
  ev.rear = wheel_report(Axle::rear, x, load_from(sr, p), x.omega_r, 0.0, soil, p, sink_opts,
                         cache ? &cache->h_rear : nullptr);
  ev.drag = aero_drag(x.u, x.v, p);

  // The soil's lateral reaction opposes the wheel's lateral slip, so the
  // force on the chassis is -F_c.
  const double F_lf = ev.front.forces.F_l, F_lr = ev.rear.forces.F_l;
  const double F_cf = -ev.front.forces.F_c, F_cr = -ev.rear.forces.F_c;
  const double cd = std::cos(in.delta), sd = std::sin(in.delta);
  const double ct = std::cos(x.theta), st = std::sin(x.theta);
  const double front_lat_sign = p.sign_convention == SignConvention::standard ? 1.0 : -1.0;

  const double u_dot = x.v * x.psi_dot * ct + x.z_dot * x.theta_dot +
                       (F_lf * cd - F_cf * sd + F_lr - ev.drag.f_ax) / p.m;
  const double v_dot = -x.u * x.psi_dot * ct + x.z_dot * x.theta_dot * st +
                       (F_lf * sd + front_lat_sign * F_cf * cd + F_cr - ev.drag.f_ay) / p.m;
  const double psi_ddot = (p.l_f * (F_lf * sd + F_cf * cd) - F_cr * p.l_r) / p.I_z;

  const double cs_f = sf.k * sf.dz + sf.c * sf.dz_dot;
  const double cs_r = sr.k * sr.dz + sr.c * sr.dz_dot;
  const double z_ddot = x.v * x.psi_dot * st + x.u * x.theta_dot - (cs_f + cs_r) / p.m;
  const double theta_ddot = (cs_r * p.l_r - cs_f * p.l_f) * ct / p.I_y;

  const double r = p.wheel.r;
  const double omega_r_dot = (-r * (F_lr + ev.rear.f_r) + in.tau) / p.I_wr;
  const double omega_f_dot = -r * (F_lf + ev.front.f_r) / p.I_wf;

  const double cp = std::cos(x.psi), sp = std::sin(x.psi);
  ev.xdot << u_dot, v_dot, x.psi_dot, psi_ddot, x.u * cp - x.v * sp, x.u * sp + x.v * cp,
      x.z_dot, z_ddot, x.theta_dot, theta_ddot, omega_f_dot, omega_r_dot;

  if (!ev.xdot.allFinite()) {
    std::ostringstream os;
    os.precision(17);
    os << "vehicle derivatives not finite at state [";
    const auto v = x.to_vector();
    for (int i = 0; i < v.size(); ++i) os << (i ? ", " : "") << v[i];
    os << "], input (" << in.delta << ", " << in.tau << ")";
    throw NumericalError(os.str());
  }
  return ev;
}

}  // namespace

Evaluation evaluate(const VehicleState& x, const ControlInput& in, const Terrain& terrain,
                    const tm::SoilParams& soil, const VehicleParams& p, SinkageCache* cache) {
  return evaluate_impl(x, in, terrain, soil, p, tm::SinkageOptions{}, cache);
}

VehicleState derivatives(const VehicleState& x, const ControlInput& in, const Terrain& terrain,
                         const tm::SoilParams& soil, const VehicleParams& p) {
  return VehicleState::from_vector(evaluate(x, in, terrain, soil, p).xdot);
}

std::size_t InputSignal::index_at(double t) const {
  if (samples.empty()) throw ConfigError("input signal has no samples");
  if (!(t > 0.0)) return 0;
  // Tolerate round-off so that t = k dt maps to sample k.
  const double q = t / dt;
  auto k = static_cast<std::size_t>(std::floor(q + 1e-9));
  return std::min(k, samples.size() - 1);
}

namespace {

using Vec = VehicleState::Vec;
using Stepper = ode::DormandPrince<VehicleState::kDim>;

struct EventValues {
  double front = 1.0, rear = 1.0, speed = 1.0;
};

EventValues event_values(const Vec& y, const Terrain& terrain, const VehicleParams& p,
                         const SimulationOptions& opts) {
  const VehicleState x = VehicleState::from_vector(y);
  EventValues e;
  if (opts.liftoff_event) {
    e.front = normal_load(Axle::front, x, terrain, p).raw;
    e.rear = normal_load(Axle::rear, x, terrain, p).raw;
  }
  if (opts.low_speed_event) e.speed = x.u - opts.low_speed;
  return e;
}

bool any_triggered(const EventValues& e) {
  return e.front <= 0.0 || e.rear <= 0.0 || e.speed <= 0.0;
}

}  // namespace

Trajectory simulate(const VehicleState& x0, const InputSignal& signal, const Terrain& terrain,
                    const tm::SoilParams& soil, const VehicleParams& p, double duration,
                    double dt_out, const SimulationOptions& opts) {
  if (!(duration > 0.0)) throw ConfigError("simulate: duration must be > 0");
  if (!(dt_out > 0.0)) throw ConfigError("simulate: dt_out must be > 0");
  if (!(signal.dt > 0.0) || signal.samples.empty()) throw ConfigError("simulate: empty signal");
  if (signal.covered_duration() + 1e-9 < duration) {
    throw ConfigError("simulate: input signal does not cover the requested duration");
  }
  for (const auto& s : signal.samples) {
    if (std::abs(s.delta) > opts.limits.delta_max + 1e-12 || s.tau < -1e-12 ||
        s.tau > opts.limits.tau_max + 1e-12) {
      throw ConfigError("simulate: input sample outside saturation bounds");
    }
  }
  p.validate();
  soil.validate();
  if (!x0.all_finite()) throw ConfigError("simulate: initial state not finite");

  SinkageCache cache;
  Trajectory traj;
  const auto n_out = static_cast<std::size_t>(std::floor(duration / dt_out + 1e-9));
  traj.rows.reserve(n_out + 1);

  auto emit = [&](std::size_t k, const Vec& y) {
    TrajectoryRow row;
    row.t = double(k) * dt_out;
    row.x = VehicleState::from_vector(y);
    row.in = signal.at(row.t);
    SinkageCache local = cache;
    const Evaluation ev = evaluate_impl(row.x, row.in, terrain, soil, p, opts.sinkage, &local);
    row.N_f = ev.front.load.N;
    row.N_r = ev.rear.load.N;
    row.s_f = ev.front.slip.s;
    row.s_r = ev.rear.slip.s;
    row.hf_f = ev.front.forces.h_f;
    row.hf_r = ev.rear.forces.h_f;
    if (std::abs(row.x.theta) > opts.small_angle_limit) ++traj.small_angle_violations;
    traj.rows.push_back(std::move(row));
  };

  auto terminate = [&](const std::string& reason, double t, const Vec& y) {
    traj.termination = reason;
    traj.event_time = t;
    traj.event_state = VehicleState::from_vector(y);
    if (!traj.rows.empty()) traj.rows.back().event = reason;
  };

  auto reason_of = [](const EventValues& e) -> std::string {
    if (e.front <= 0.0) return "liftoff_front";
    if (e.rear <= 0.0) return "liftoff_rear";
    return "low_speed";
  };

  Vec y = x0.to_vector();
  double t = 0.0;
  emit(0, y);
  std::size_t next_out = 1;
  {
    const EventValues e0 = event_values(y, terrain, p, opts);
    if (any_triggered(e0)) {
      terminate(reason_of(e0), 0.0, y);
      return traj;
    }
  }

  double h = -1.0;
  int collapsed = 0;
  Stepper stepper;
  const std::size_t n_intervals =
      static_cast<std::size_t>(std::ceil(duration / signal.dt - 1e-9));

  for (std::size_t j = 0; j < n_intervals; ++j) {
    const double t_end = std::min(double(j + 1) * signal.dt, duration);
    const ControlInput in = signal.samples[std::min(j, signal.samples.size() - 1)];
    auto f = [&](double, const Vec& yy) {
      return evaluate_impl(VehicleState::from_vector(yy), in, terrain, soil, p, opts.sinkage,
                           &cache)
          .xdot;
    };
    Vec k0 = f(t, y);
    if (h <= 0.0) h = ode::initial_step<VehicleState::kDim>(f, t, y, k0, opts.tol, opts.max_step);

    while (t < t_end) {
      const bool last = t + h >= t_end - 1e-12;
      double step = last ? t_end - t : std::min(h, opts.max_step);
      if (opts.max_steps > 0 && traj.steps_accepted + traj.steps_rejected >= opts.max_steps) {
        throw NumericalError("simulate: step budget exhausted at t=" + std::to_string(t) +
                             " (h=" + std::to_string(step) + ")");
      }
      collapsed = step < opts.collapse_step ? collapsed + 1 : 0;
      if (opts.collapse_count > 0 && collapsed >= opts.collapse_count) {
        throw NumericalError("simulate: step size collapse at t=" + std::to_string(t));
      }
      stepper.step(f, t, y, k0, step, opts.tol);
      if (!stepper.y1.allFinite() || stepper.error_norm > 1.0) {
        ++traj.steps_rejected;
        const double factor = stepper.y1.allFinite() ? Stepper::step_factor(stepper.error_norm)
                                                      : 0.25;
        h = step * std::min(1.0, factor);
        if (h < opts.min_step) {
          throw NumericalError("simulate: step size underflow at t=" + std::to_string(t));
        }
        continue;
      }
      ++traj.steps_accepted;
      traj.max_error_norm = std::max(traj.max_error_norm, stepper.error_norm);
      const double t_new = last ? t_end : t + step;

      const EventValues e1 = event_values(stepper.y1, terrain, p, opts);
      double t_stop = t_new;
      Vec y_stop = stepper.y1;
      const bool fired = any_triggered(e1);
      if (fired) {
        // Bisection on the dense output; the right end always satisfies the
        // event condition.
        double a = t, b = t_new;
        EventValues eb = e1;
        while (b - a > 1e-14 * std::max(1.0, b)) {
          const double mid = 0.5 * (a + b);
          const Vec ym = stepper.interpolate(mid);
          const EventValues em = event_values(ym, terrain, p, opts);
          if (any_triggered(em)) {
            b = mid;
            eb = em;
            y_stop = ym;
          } else {
            a = mid;
          }
          const double g = std::min({eb.front, eb.rear, eb.speed});
          if (g <= 0.0 && -g <= opts.event_tol && b - a < 1e-9) break;
        }
        t_stop = b;
        if (b == t_new) y_stop = stepper.y1;
        else y_stop = stepper.interpolate(b);
        for (; next_out <= n_out; ++next_out) {
          const double tk = double(next_out) * dt_out;
          if (tk > t_stop) break;
          emit(next_out, stepper.interpolate(tk));
        }
        terminate(reason_of(event_values(y_stop, terrain, p, opts)), t_stop, y_stop);
        return traj;
      }

      for (; next_out <= n_out; ++next_out) {
        const double tk = double(next_out) * dt_out;
        if (tk > t_new + 1e-12) break;
        emit(next_out, std::abs(tk - t_new) <= 1e-12 ? stepper.y1 : stepper.interpolate(tk));
      }
      t = t_new;
      y = stepper.y1;
      k0 = stepper.k[6];
      if (!last) h = step * Stepper::step_factor(stepper.error_norm);
    }
  }
  // Round-off can leave the final sample pending.
  for (; next_out <= n_out; ++next_out) emit(next_out, y);
  return traj;
}

}  // namespace terrakoop::vehicle
