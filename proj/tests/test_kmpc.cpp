#include <doctest.h>

#include <cmath>
#include <numbers>

#include "oracles.hpp"
#include "terrakoop/errors.hpp"
#include "terrakoop/kmpc.hpp"
#include "terrakoop/rng.hpp"

using namespace terrakoop;
using namespace terrakoop::kmpc;

namespace {

// Speed-like latent model at dt_mpc: tau drives u, delta couples into v and
// psi_dot through a lightly damped mode.
ssid::KoopmanModel toy_model(double dt = 0.1) {
  ssid::KoopmanModel m;
  m.r = 3;
  m.p = 3;
  m.m = 2;
  m.dt = dt;
  m.A.resize(3, 3);
  m.A << 0.97, 0.0, 0.0, 0.0, 0.85, 0.2, 0.0, -0.2, 0.85;
  m.B.resize(3, 2);
  m.B << 0.0, 0.004, 1.5, 0.0, 0.4, 0.0;
  m.C.resize(3, 3);
  m.C << 1.0, 0.3, 0.0, 0.0, 0.5, 0.1, 0.0, 0.2, 0.6;
  return m;
}

// Heading dynamics removed: v and psi_dot rows of C are zero.
ssid::KoopmanModel frozen_model() {
  ssid::KoopmanModel m = toy_model();
  m.C.row(1).setZero();
  m.C.row(2).setZero();
  return m;
}

MatrixXd interior_inputs(int Np) {
  MatrixXd U(2, Np);
  for (int k = 0; k < Np; ++k) U.col(k) << 0.1 * std::sin(0.4 * k), 60.0 + 15.0 * std::cos(0.3 * k);
  return U;
}

}  // namespace

TEST_SUITE("kmpc") {

TEST_CASE("resampling: q = 1 is the identity and scalar A gives a geometric series") {
  ssid::KoopmanModel m = toy_model(0.1);
  const ssid::KoopmanModel same = resample_model(m, 0.1);
  CHECK(same.A == m.A);
  CHECK(same.B == m.B);
  ssid::KoopmanModel s = toy_model(0.01);
  s.A = 0.9 * MatrixXd::Identity(3, 3);
  const ssid::KoopmanModel r = resample_model(s, 0.1);
  CHECK((r.A - std::pow(0.9, 10) * MatrixXd::Identity(3, 3)).norm() <= 1e-14);
  CHECK((r.B - (1 - std::pow(0.9, 10)) / (1 - 0.9) * s.B).norm() <= 1e-13);
  CHECK(r.dt == doctest::Approx(0.1));
  CHECK_THROWS_AS(resample_model(s, 0.015), ConfigError);
}

TEST_CASE("resampled one-step equals q steps of the original under held inputs") {
  const ssid::KoopmanModel fine = toy_model(0.01);
  const ssid::KoopmanModel coarse = resample_model(fine, 0.1);
  MpcConfig cfg;
  cfg.Np = 6;
  const MatrixXd U = interior_inputs(cfg.Np);
  const VectorXd z0 = Eigen::Vector3d(1.0, -0.2, 0.3);
  VectorXd z = z0;
  for (int k = 0; k < cfg.Np; ++k) {
    for (int i = 0; i < 10; ++i) z = fine.A * z + fine.B * U.col(k);
  }
  VectorXd zc = z0;
  for (int k = 0; k < cfg.Np; ++k) zc = coarse.A * zc + coarse.B * U.col(k);
  CHECK((z - zc).norm() <= 1e-10 * (1 + z.norm()));
}

TEST_CASE("horizon kinematics examples") {
  ssid::KoopmanModel m = toy_model();
  m.A.setIdentity();
  m.B.setZero();
  MpcConfig cfg;
  cfg.Np = 5;
  const MatrixXd U = MatrixXd::Zero(2, 5);
  // Zero body velocities keep the pose.
  MatrixXd y = predict_horizon(m, VectorXd::Zero(3), Pose(1, 2, 0.5), U, cfg);
  for (int k = 0; k <= 5; ++k) CHECK((y.col(k).head<3>() - Eigen::Vector3d(1, 2, 0.5)).norm() == 0.0);
  // u = 1, v = 0 moves along the heading by dt per step.
  m.C.setZero();
  m.C(0, 0) = 1.0;
  const VectorXd z1 = Eigen::Vector3d(1, 0, 0);
  y = predict_horizon(m, z1, Pose(0, 0, 0), U, cfg);
  for (int k = 0; k <= 5; ++k) {
    CHECK(y(0, k) == doctest::Approx(0.1 * k));
    CHECK(y(1, k) == doctest::Approx(0.0));
  }
  y = predict_horizon(m, z1, Pose(0, 0, std::numbers::pi / 2), U, cfg);
  for (int k = 0; k <= 5; ++k) {
    CHECK(y(0, k) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(y(1, k) == doctest::Approx(0.1 * k));
  }
}

TEST_CASE("cost examples") {
  MpcConfig cfg;
  cfg.Np = 3;
  const MatrixXd ref = MatrixXd::Zero(6, 3);
  const MatrixXd U = MatrixXd::Zero(2, 3);
  MatrixXd yt = MatrixXd::Zero(6, 4);
  CHECK(horizon_cost(yt, ref, U, Vector2d::Zero(), cfg) == 0.0);
  yt(0, 1) = 1.0;
  CHECK(horizon_cost(yt, ref, U, Vector2d::Zero(), cfg) == doctest::Approx(15.0));
  yt.setRandom();
  const double J = horizon_cost(yt, ref, U, Vector2d::Zero(), cfg);
  CHECK(horizon_cost(2.0 * yt, ref, U, Vector2d::Zero(), cfg) ==
        doctest::Approx(4.0 * J).epsilon(1e-12));
  // Heading error is wrapped.
  MatrixXd shifted = ref;
  shifted.row(2).array() += 2.0 * std::numbers::pi;
  CHECK(horizon_cost(yt, shifted, U, Vector2d::Zero(), cfg) == doctest::Approx(J).epsilon(1e-12));
  // Input and rate terms, du_0 against u_prev.
  MatrixXd U1 = MatrixXd::Zero(2, 3);
  U1(1, 0) = 10.0;
  const double expect = 1e-6 * 100.0 + 1.0 * 100.0 + 1.0 * 100.0;
  CHECK(horizon_cost(MatrixXd::Zero(6, 3), ref, U1, Vector2d::Zero(), cfg) ==
        doctest::Approx(expect));
}

TEST_CASE("wrap_angle range") {
  CHECK(wrap_angle(std::numbers::pi) == doctest::Approx(std::numbers::pi));
  CHECK(wrap_angle(-std::numbers::pi) == doctest::Approx(std::numbers::pi));
  CHECK(wrap_angle(3 * std::numbers::pi / 2) == doctest::Approx(-std::numbers::pi / 2));
  CHECK(wrap_angle(0.25) == 0.25);
}

TEST_CASE("adjoint gradient matches central differences") {
  const ssid::KoopmanModel m = toy_model();
  MpcConfig cfg;
  cfg.Np = 8;
  cfg.c_c = Eigen::Vector3d(0.1, -0.05, 0.02);
  Rng rng(3);
  const VectorXd z0 = Eigen::Vector3d(2.0, 0.3, -0.1);
  const Pose pose(1.0, -0.5, 0.7);
  MatrixXd ref(6, cfg.Np);
  for (int i = 0; i < ref.size(); ++i) ref.data()[i] = rng.normal();
  const MatrixXd U = interior_inputs(cfg.Np);
  const Vector2d u_prev(0.05, 50.0);
  MatrixXd G;
  const double J = cost_and_gradient(m, z0, pose, ref, U, u_prev, cfg, &G);
  CHECK(J == doctest::Approx(horizon_cost(predict_horizon(m, z0, pose, U, cfg), ref, U, u_prev, cfg)));
  for (int k = 0; k < cfg.Np; ++k) {
    for (int c = 0; c < 2; ++c) {
      const double e = c == 0 ? 1e-6 : 1e-4;
      MatrixXd Up = U, Um = U;
      Up(c, k) += e;
      Um(c, k) -= e;
      const double fd = (cost_and_gradient(m, z0, pose, ref, Up, u_prev, cfg, nullptr) -
                         cost_and_gradient(m, z0, pose, ref, Um, u_prev, cfg, nullptr)) / (2 * e);
      CHECK(G(c, k) == doctest::Approx(fd).epsilon(1e-5).scale(1e-3));
    }
  }
}

TEST_CASE("frozen heading: solution matches the dense QP oracle") {
  const ssid::KoopmanModel m = frozen_model();
  MpcConfig cfg;
  const VectorXd z0 = Eigen::Vector3d(4.0, 0.0, 0.0);
  const Pose pose(0.0, 0.0, 0.0);
  const MatrixXd U_true = interior_inputs(cfg.Np);
  MatrixXd ref = predict_horizon(m, z0, pose, U_true, cfg).leftCols(cfg.Np);
  ref.row(0).array() += 0.05;  // pull slightly ahead of the nominal path
  ref.row(1).setConstant(0.3); // constant Y offset, unreachable with psi frozen
  ref.row(2).setZero();
  const Vector2d u_prev(0.0, 60.0);
  const MatrixXd U_qp = oracle::frozen_heading_qp(m, z0, pose, ref, u_prev, cfg);
  // The oracle is unconstrained; the case is only meaningful if it is interior.
  for (int k = 0; k < cfg.Np; ++k) {
    REQUIRE(U_qp(0, k) > cfg.u_lo[0]);
    REQUIRE(U_qp(0, k) < cfg.u_hi[0]);
    REQUIRE(U_qp(1, k) > cfg.u_lo[1]);
    REQUIRE(U_qp(1, k) < cfg.u_hi[1]);
  }
  const MatrixXd warm = MatrixXd::Constant(2, cfg.Np, 0.0).colwise() + u_prev;
  const MpcSolution sol = solve_mpc(m, z0, pose, ref, u_prev, warm, cfg);
  const Vector2d span = cfg.u_hi - cfg.u_lo;
  const double err = ((sol.U - U_qp).array().colwise() / span.array()).abs().maxCoeff();
  CHECK(err <= 1e-5);
  CHECK(sol.cost <= sol.warm_cost);
}

TEST_CASE("zero-input reference is solved by zero inputs") {
  const ssid::KoopmanModel m = toy_model();
  MpcConfig cfg;
  cfg.u_lo = Vector2d(-0.35, 0.0);
  const VectorXd z0 = Eigen::Vector3d(3.0, 0.1, -0.1);
  const Pose pose(0.0, 0.0, 0.2);
  const MatrixXd Z = MatrixXd::Zero(2, cfg.Np);
  const MatrixXd ref = predict_horizon(m, z0, pose, Z, cfg).leftCols(cfg.Np);
  const MpcSolution sol = solve_mpc(m, z0, pose, ref, Vector2d::Zero(), Z, cfg);
  const double J0 = cost_and_gradient(m, z0, pose, ref, Z, Vector2d::Zero(), cfg, nullptr);
  CHECK(J0 == doctest::Approx(0.0));
  CHECK(sol.cost <= J0 + 1e-6);
}

TEST_CASE("demanding references saturate torque exactly at the bound") {
  const ssid::KoopmanModel m = toy_model();
  MpcConfig cfg;
  const VectorXd z0 = Eigen::Vector3d(3.0, 0.0, 0.0);
  const Pose pose(0.0, 0.0, 0.0);
  MatrixXd ref = MatrixXd::Zero(6, cfg.Np);
  for (int k = 0; k < cfg.Np; ++k) ref.col(k) << 5.0 * k, 0, 0, 40.0, 0, 0;
  const MatrixXd warm = MatrixXd::Zero(2, cfg.Np);
  const MpcSolution sol = solve_mpc(m, z0, pose, ref, Vector2d::Zero(), warm, cfg);
  CHECK(sol.U.row(1).maxCoeff() == 130.0);
  CHECK((sol.U.row(0).array() >= -0.35).all());
  CHECK((sol.U.row(0).array() <= 0.35).all());
  CHECK((sol.U.row(1).array() >= 0.0).all());
  CHECK(sol.cost <= sol.warm_cost);
}

TEST_CASE("warm start shifts and pads") {
  MatrixXd U(2, 5);
  U << 0, 1, 2, 3, 4, 10, 11, 12, 13, 14;
  const MatrixXd W = shift_warm_start(U, 2);
  MatrixXd expect(2, 5);
  expect << 2, 3, 4, 4, 4, 12, 13, 14, 14, 14;
  CHECK(W == expect);
}

TEST_CASE("reference interpolation, window and path construction") {
  Reference r;
  r.dt = 0.5;
  r.y = MatrixXd::Zero(6, 3);
  r.y.row(0) << 0, 1, 2;
  CHECK(r.duration() == doctest::Approx(1.0));
  CHECK(r.at(0.25)[0] == doctest::Approx(0.5));
  CHECK(r.at(7.0)[0] == 2.0);
  const MatrixXd w = r.window(0.0, 4, 0.25);
  CHECK(w(0, 3) == doctest::Approx(1.5));

  MatrixXd XY(2, 50);
  VectorXd speed = VectorXd::Constant(50, 2.0);
  for (int k = 0; k < 50; ++k) XY.col(k) << 0.1 * k, 0.1 * k;
  const Reference p = reference_from_path(XY, speed, 0.05, vehicle::VehicleState{});
  CHECK(p.y(2, 10) == doctest::Approx(std::numbers::pi / 4));
  CHECK(p.y(3, 10) == doctest::Approx(2.0));
  CHECK(p.y(5, 10) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("config validation") {
  MpcConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.Nc = cfg.Np + 1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  MpcConfig b;
  b.u_lo = b.u_hi + Vector2d(0.1, 0.0);
  CHECK_THROWS_AS(b.validate(), ConfigError);
}

TEST_CASE("closed loop on the plant it was built from") {
  // Short fishhook against clay with a model that tracks speed only; checks
  // the loop contract rather than tracking quality.
  Plant plant;
  plant.soil = terramech::clay();
  FishhookSpec fh;
  fh.duration = 1.0;
  const Reference ref = fishhook_reference(plant, fh);
  CHECK(ref.y.cols() == 101);
  CHECK(ref.u_trim[1] == doctest::Approx(fh.tau));
  ssid::KoopmanModel m = toy_model(0.01);
  lifting::LiftingMap lift;
  lift.p = 3;
  lift.r = 3;
  lift.X = MatrixXd::Zero(3, 1);
  // One training point: the posterior mean is a constant shift, fine for this check.
  lifting::Coordinate c;
  c.length_scales = VectorXd::Ones(3);
  c.alpha = VectorXd::Zero(1);
  lift.coords.assign(3, c);
  lift.training_rmse = VectorXd::Zero(3);
  MpcConfig cfg;
  const ClosedLoopLog log = run_closed_loop(plant, {m, lift}, cfg, ref);
  CHECK(log.inputs_within_bounds);
  CHECK(log.monotone);
  CHECK(log.solves.size() == 2);
  for (const auto& row : log.rows) {
    CHECK(std::abs(row.delta) <= 0.35);
    CHECK(row.tau >= 0.0);
    CHECK(row.tau <= 130.0);
  }
  const std::string csv = log_csv(log, true);
  CHECK(csv.rfind("t,X,Y,psi,u,v,psi_dot,X_ref,Y_ref,psi_ref,delta,tau,cost,solve_ms,saturated\n", 0) == 0);
  CHECK(csv == log_csv(run_closed_loop(plant, {m, lift}, cfg, ref), true));
}

}  // TEST_SUITE
