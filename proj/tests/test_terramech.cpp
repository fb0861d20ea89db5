#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "terrakoop/errors.hpp"
#include "terrakoop/quadrature.hpp"
#include "terrakoop/rng.hpp"
#include "terrakoop/terramech.hpp"

using namespace terrakoop;
using namespace terrakoop::terramech;

TEST_SUITE("terramech") {

TEST_CASE("gauss-legendre integrates polynomials of degree 2n-1 exactly") {
  for (int n : {4, 16, 64}) {
    const GaussRule& g = gauss_legendre(n);
    REQUIRE(g.x.size() == std::size_t(n));
    for (int d = 0; d <= 2 * n - 1; ++d) {
      double sum = 0.0;
      for (int i = 0; i < n; ++i) sum += g.w[i] * std::pow(g.x[i], d);
      const double exact = d % 2 ? 0.0 : 2.0 / (d + 1);
      CHECK(sum == doctest::Approx(exact).epsilon(1e-13));
    }
  }
}

TEST_CASE("soil tables validate and resolve by name") {
  CHECK_NOTHROW(sandy_loam().validate());
  CHECK_NOTHROW(clay().validate());
  CHECK(soil_by_name("sandyloam").name == "sandy_loam");
  CHECK(soil_by_name("clay").k_phi == doctest::Approx(692.15e3));
  CHECK_THROWS_AS(soil_by_name("peat"), ConfigError);
  SoilParams bad = clay();
  bad.lambda_r = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("slip ratio branches") {
  const double r = 0.33;
  CHECK(slip_ratio(10.0, 3.3, r).s == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(slip_ratio(20.0, 3.3, r).s == doctest::Approx(0.5));
  CHECK(slip_ratio(5.0, 3.3, r).s == doctest::Approx(-0.5));
  CHECK(slip_ratio(0.0, 3.3, r).s == doctest::Approx(-1.0));
  CHECK(slip_ratio(10.0, 0.0, r).s == doctest::Approx(1.0));
  const SlipRatio still = slip_ratio(0.0, 0.0, r);
  CHECK(still.degenerate);
  CHECK(still.s == 0.0);
  CHECK(slip_angle(1.0, -1.0) == doctest::Approx(std::atan(1.0)));
}

TEST_CASE("contact angles") {
  const WheelGeometry w;
  const ContactAngles a = contact_angles(0.05, 0.2, clay(), w);
  CHECK(a.theta_f == doctest::Approx(std::acos(1.0 - 0.05 / w.r)));
  CHECK(a.theta_r < 0.0);
  CHECK(a.theta_m >= 0.0);
  CHECK(a.theta_m <= a.theta_f);
  CHECK_THROWS_AS(contact_angles(-1e-3, 0.0, clay(), w), DomainError);
  CHECK_THROWS_AS(contact_angles(w.r, 0.0, clay(), w), DomainError);
  // Large negative slip pushes theta_m below zero; it is clamped.
  SoilParams s = clay();
  s.a1 = 2.0;
  CHECK(contact_angles(0.05, -1.0, s, w).theta_m == 0.0);
}

TEST_CASE("stresses match the oracle pointwise and respect the Mohr-Coulomb cap") {
  const WheelGeometry w;
  Rng rng(3);
  for (const SoilParams& soil : {sandy_loam(), clay()}) {
    for (int i = 0; i < 20; ++i) {
      const double h = rng.uniform(0.005, 0.12), s = rng.uniform(-0.8, 0.8),
                   beta = rng.uniform(-0.4, 0.4);
      const ContactAngles a = contact_angles(h, s, soil, w);
      const oracle::StressIntegral o(h, s, beta, soil, w);
      for (int k = 0; k <= 10; ++k) {
        const double th = a.theta_r + (a.theta_f - a.theta_r) * k / 10.0;
        const double sig = normal_stress(th, a, soil, w);
        CHECK(sig >= 0.0);
        CHECK(sig == doctest::Approx(o.sigma(th)).epsilon(1e-12));
        const ShearStress tau = shear_stresses(th, a, s, beta, soil, w);
        const double cap = soil.c + sig * std::tan(soil.phi);
        CHECK(tau.tau_t == doctest::Approx(o.tau_t(th)).epsilon(1e-12).scale(cap));
        CHECK(tau.tau_c == doctest::Approx(o.tau_c(th)).epsilon(1e-12).scale(cap));
        CHECK(std::abs(tau.tau_t) <= cap * (1 + 1e-14));
        CHECK(std::abs(tau.tau_c) <= cap * (1 + 1e-14));
      }
    }
  }
}

TEST_CASE("normal stress vanishes at the patch edges") {
  const WheelGeometry w;
  const ContactAngles a = contact_angles(0.04, 0.1, sandy_loam(), w);
  CHECK(normal_stress(a.theta_f, a, sandy_loam(), w) == doctest::Approx(0.0));
  CHECK(normal_stress(a.theta_r, a, sandy_loam(), w) == doctest::Approx(0.0));
  CHECK_THROWS_AS(normal_stress(a.theta_f + 0.01, a, sandy_loam(), w), DomainError);
}

TEST_CASE("force integrals agree with an independent quadrature") {
  const WheelGeometry w;
  Rng rng(11);
  for (const SoilParams& soil : {sandy_loam(), clay()}) {
    for (int i = 0; i < 15; ++i) {
      const double h = rng.uniform(0.002, 0.5 * w.r), s = rng.uniform(-0.9, 0.9),
                   beta = rng.uniform(-0.5, 0.5);
      const WheelForces f = integrate_forces(h, {s, beta, 0.0}, soil, w);
      const oracle::Forces o = oracle::StressIntegral(h, s, beta, soil, w).integrate();
      CHECK(f.F_l == doctest::Approx(o.F_l).epsilon(1e-6));
      CHECK(f.F_c == doctest::Approx(o.F_c).epsilon(1e-6));
      CHECK(f.F_z == doctest::Approx(o.F_z).epsilon(1e-6));
    }
  }
}

TEST_CASE("zero slip angle gives no cornering force and F_c is odd in beta") {
  const WheelGeometry w;
  const WheelForces f0 = integrate_forces(0.03, {0.2, 0.0, 0.0}, clay(), w);
  CHECK(f0.F_c == 0.0);
  const WheelForces fp = integrate_forces(0.03, {0.2, 0.15, 0.0}, clay(), w);
  const WheelForces fm = integrate_forces(0.03, {0.2, -0.15, 0.0}, clay(), w);
  CHECK(fp.F_c == doctest::Approx(-fm.F_c).epsilon(1e-12));
  CHECK(fp.F_z == doctest::Approx(fm.F_z).epsilon(1e-12));
}

TEST_CASE("drawbar pull increases with slip at fixed sinkage") {
  const WheelGeometry w;
  double prev = -1e300;
  for (int k = 0; k <= 10; ++k) {
    const double s = -0.5 + 0.1 * k;
    const WheelForces f = integrate_forces(0.03, {s, 0.0, 0.0}, sandy_loam(), w);
    CHECK(f.F_l > prev);
    prev = f.F_l;
  }
}

TEST_CASE("as-printed vertical integrand differs from the standard one") {
  const WheelGeometry w;
  QuadratureOptions q;
  q.vertical = VerticalIntegrand::as_printed;
  const WheelForces a = integrate_forces(0.03, {0.1, 0.0, 0.0}, clay(), w, q);
  const WheelForces b = integrate_forces(0.03, {0.1, 0.0, 0.0}, clay(), w);
  CHECK(a.F_z != doctest::Approx(b.F_z));
  CHECK(a.F_l == doctest::Approx(b.F_l));
}

TEST_CASE("sinkage equilibrium matches a bisection oracle") {
  const WheelGeometry w;
  Rng rng(5);
  for (const SoilParams& soil : {sandy_loam(), clay()}) {
    for (int i = 0; i < 3; ++i) {
      const double N = rng.uniform(200.0, 4000.0), s = rng.uniform(-0.5, 0.5),
                   beta = rng.uniform(-0.3, 0.3);
      const double h = solve_sinkage(N, s, beta, soil, w);
      CHECK(std::abs(integrate_forces(h, {s, beta, N}, soil, w).F_z - N) <= 1e-6 * N);
      CHECK(h == doctest::Approx(oracle::bisect_sinkage(N, s, beta, soil, w)).epsilon(1e-7));
    }
  }
}

TEST_CASE("sinkage grows with load and zero load gives zero sinkage") {
  const WheelGeometry w;
  CHECK(solve_sinkage(0.0, 0.1, 0.0, clay(), w) == 0.0);
  double prev = 0.0;
  for (double N : {300.0, 1000.0, 2000.0, 4000.0}) {
    const double h = solve_sinkage(N, 0.1, 0.0, clay(), w);
    CHECK(h > prev);
    prev = h;
  }
  CHECK_THROWS_AS(solve_sinkage(-1.0, 0.0, 0.0, clay(), w), DomainError);
  CHECK_THROWS_AS(solve_sinkage(1e9, 0.0, 0.0, clay(), w), NumericalError);
}

TEST_CASE("wheel_forces runs the full pipeline") {
  const WheelGeometry w;
  const WheelForces f = wheel_forces(2000.0, 5.0 / w.r * 1.1, 5.0, 0.3, clay(), w);
  CHECK(f.F_z == doctest::Approx(2000.0).epsilon(1e-8));
  CHECK(f.F_l > 0.0);
  CHECK(f.F_c != 0.0);
  CHECK_FALSE(f.degenerate_slip);
  CHECK(wheel_forces(2000.0, 0.0, 0.0, 0.0, clay(), w).degenerate_slip);
}

}  // TEST_SUITE
