#include <doctest.h>

#include <cmath>

#include "terrakoop/errors.hpp"
#include "terrakoop/ode.hpp"
#include "terrakoop/terrain.hpp"
#include "terrakoop/vehicle.hpp"

using namespace terrakoop;
using namespace terrakoop::vehicle;

namespace {

VehicleState rolling(double u) {
  VehicleState x;
  x.u = u;
  x.omega_f = x.omega_r = u / VehicleParams{}.wheel.r;
  return x;
}

InputSignal constant(double delta, double tau, double duration, double dt = 0.01) {
  InputSignal s;
  s.dt = dt;
  s.samples.assign(std::size_t(std::llround(duration / dt)) + 1, ControlInput{delta, tau});
  return s;
}

}  // namespace

TEST_SUITE("ode") {

TEST_CASE("dormand-prince step is fifth order on y' = y") {
  using DP = ode::DormandPrince<1>;
  auto f = [](double, const DP::Vec& y) { return DP::Vec(y); };
  double prev_err = 0.0;
  for (double h : {0.2, 0.1, 0.05}) {
    DP dp;
    DP::Vec y0;
    y0 << 1.0;
    dp.step(f, 0.0, y0, f(0.0, y0), h, {});
    const double err = std::abs(dp.y1[0] - std::exp(h));
    if (prev_err > 0.0) CHECK(prev_err / err > 40.0);  // about 2^6 for a local error O(h^6)
    prev_err = err;
    // Dense output reproduces the endpoints and stays accurate in between.
    CHECK(dp.interpolate(0.0)[0] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(dp.interpolate(h)[0] == doctest::Approx(dp.y1[0]).epsilon(1e-15));
    CHECK(dp.interpolate(0.5 * h)[0] == doctest::Approx(std::exp(0.5 * h)).epsilon(1e-6));
  }
}

TEST_CASE("step factor is clamped") {
  using DP = ode::DormandPrince<1>;
  CHECK(DP::step_factor(0.0) == 10.0);
  CHECK(DP::step_factor(1e12) == doctest::Approx(0.2));
  CHECK(DP::step_factor(1.0) == doctest::Approx(0.9));
}

}  // TEST_SUITE

TEST_SUITE("vehicle") {

TEST_CASE("state vector round trip") {
  VehicleState x;
  x.u = 1; x.v = 2; x.psi = 3; x.psi_dot = 4; x.X = 5; x.Y = 6;
  x.z = 7; x.z_dot = 8; x.theta = 9; x.theta_dot = 10; x.omega_f = 11; x.omega_r = 12;
  const VehicleState y = VehicleState::from_vector(x.to_vector());
  CHECK(y.to_vector() == x.to_vector());
  CHECK(state_names().size() == std::size_t(VehicleState::kDim));
}

TEST_CASE("static loads split the sprung weight on flat ground") {
  const VehicleParams p;
  const VehicleState x;
  const NormalLoad nf = normal_load(Axle::front, x, Terrain::flat(), p);
  const NormalLoad nr = normal_load(Axle::rear, x, Terrain::flat(), p);
  CHECK(nf.N == doctest::Approx(0.5 * p.m * p.g));
  CHECK(nr.N == doctest::Approx(0.5 * p.m * p.g));
  VehicleState up;
  up.z = 1.0;  // spring fully extended beyond the static load
  CHECK(normal_load(Axle::front, up, Terrain::flat(), p).liftoff);
}

TEST_CASE("wheel kinematics and drag") {
  const VehicleParams p;
  VehicleState x;
  x.u = 4.0; x.v = 0.5; x.psi_dot = 0.2;
  const WheelKinematics r = wheel_kinematics(Axle::rear, x, 0.3, p);
  CHECK(r.v_l == 4.0);
  CHECK(r.v_c == doctest::Approx(0.5 - p.l_r * 0.2));
  const WheelKinematics f0 = wheel_kinematics(Axle::front, x, 0.0, p);
  CHECK(f0.v_l == doctest::Approx(4.0));
  CHECK(f0.v_c == doctest::Approx(0.5 + p.l_f * 0.2));
  const AeroDrag d = aero_drag(3.0, -2.0, p);
  CHECK(d.f_ax > 0.0);
  CHECK(d.f_ay < 0.0);
  CHECK(rolling_resistance(1.0, 2000.0, 3.0, p.rolling) == 0.0);
}

TEST_CASE("input signal is zero-order hold") {
  InputSignal s;
  s.dt = 0.1;
  s.samples = {{0.1, 1.0}, {0.2, 2.0}, {0.3, 3.0}};
  CHECK(s.at(0.0).delta == 0.1);
  CHECK(s.at(0.099).delta == 0.1);
  CHECK(s.at(0.1).delta == 0.2);
  CHECK(s.at(10.0).delta == 0.3);
  CHECK(s.covered_duration() == doctest::Approx(0.3));
}

TEST_CASE("straight run stays laterally symmetric and rows sit on the output grid") {
  const VehicleParams p;
  const Trajectory tr = simulate(rolling(4.0), constant(0.0, 40.0, 1.0), Terrain::flat(),
                                 terramech::sandy_loam(), p, 1.0, 0.01);
  CHECK(tr.termination == "completed");
  REQUIRE(tr.rows.size() == 101);
  for (std::size_t k = 0; k < tr.rows.size(); ++k) {
    CHECK(tr.rows[k].t == doctest::Approx(0.01 * double(k)).epsilon(1e-14));
    CHECK(std::abs(tr.rows[k].x.v) < 1e-12);
    CHECK(std::abs(tr.rows[k].x.psi_dot) < 1e-12);
    CHECK(std::abs(tr.rows[k].x.Y) < 1e-12);
  }
  CHECK(tr.rows.back().x.X > 3.0);
}

TEST_CASE("steering turns the vehicle toward the steer sign") {
  const VehicleParams p;
  const Trajectory tr = simulate(rolling(4.0), constant(0.15, 40.0, 1.5), Terrain::flat(),
                                 terramech::clay(), p, 1.5, 0.01);
  CHECK(tr.termination == "completed");
  CHECK(tr.rows.back().x.psi > 0.05);
  CHECK(tr.rows.back().x.Y > 0.0);
}

TEST_CASE("crossing the low-speed threshold ends the run at the event") {
  // Unpowered wheels settle at the slip of zero drawbar pull, so coasting
  // decelerates slowly; the threshold sits just below the initial speed.
  const VehicleParams p;
  SimulationOptions opts;
  opts.low_speed = 0.2995;
  const Trajectory tr = simulate(rolling(0.3), constant(0.0, 0.0, 5.0), Terrain::flat(),
                                 terramech::clay(), p, 5.0, 0.01, opts);
  CHECK(tr.termination == "low_speed");
  CHECK(tr.truncated());
  CHECK(tr.rows.back().event == "low_speed");
  CHECK(tr.event_state.u == doctest::Approx(0.2995).epsilon(1e-7));
  CHECK(tr.event_time < 1.0);
  // The event is flagged on the last output row at or before it.
  CHECK(tr.rows.back().t <= tr.event_time);
  CHECK(tr.event_time - tr.rows.back().t < 0.01);
}

TEST_CASE("simulation is deterministic") {
  const VehicleParams p;
  const Terrain terrain = Terrain::random_field(9, 0.05);
  const Trajectory a = simulate(rolling(3.0), constant(0.1, 30.0, 0.5), terrain,
                                terramech::clay(), p, 0.5, 0.01);
  const Trajectory b = simulate(rolling(3.0), constant(0.1, 30.0, 0.5), terrain,
                                terramech::clay(), p, 0.5, 0.01);
  REQUIRE(a.rows.size() == b.rows.size());
  for (std::size_t k = 0; k < a.rows.size(); ++k) {
    CHECK(a.rows[k].x.to_vector() == b.rows[k].x.to_vector());
  }
}

TEST_CASE("random terrain stays inside its amplitude bound") {
  const Terrain t = Terrain::random_field(4, 0.1);
  CHECK(t.amplitude_bound() <= 0.1 + 1e-12);
  for (int i = 0; i < 200; ++i) {
    const double x = -50.0 + 0.5 * i, y = 30.0 - 0.3 * i;
    CHECK(std::abs(t.height(x, y)) <= t.amplitude_bound() + 1e-12);
  }
  // Gradient against central differences.
  const Terrain::Sample s = t.sample(3.0, -2.0);
  const double e = 1e-6;
  CHECK(s.grad[0] == doctest::Approx((t.height(3.0 + e, -2.0) - t.height(3.0 - e, -2.0)) / (2 * e)).epsilon(1e-6));
  CHECK(s.grad[1] == doctest::Approx((t.height(3.0, -2.0 + e) - t.height(3.0, -2.0 - e)) / (2 * e)).epsilon(1e-6));
}

TEST_CASE("invalid parameters are rejected") {
  VehicleParams p;
  p.m = -1.0;
  CHECK_THROWS_AS(p.validate(), ConfigError);
}

}  // TEST_SUITE
