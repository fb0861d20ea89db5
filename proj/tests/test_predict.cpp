#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "terrakoop/errors.hpp"
#include "terrakoop/predict.hpp"
#include "terrakoop/rng.hpp"

using namespace terrakoop;
using namespace terrakoop::predict;

namespace {

// Square LTI model with invertible C, so the exact lift is C^-1 y.
struct Square {
  ssid::KoopmanModel model;
  Lifter lift;
};

Square square_model(Rng& rng) {
  oracle::Lti sys;
  for (;;) {
    sys = oracle::random_lti(rng, 3, 2, 3);
    if (std::abs(sys.C.determinant()) > 0.1) break;
  }
  Square s;
  s.model.A = sys.A;
  s.model.B = sys.B;
  s.model.C = sys.C;
  s.model.r = 3;
  s.model.p = 3;
  s.model.m = 2;
  s.model.dt = 0.01;
  const MatrixXd Cinv = sys.C.inverse();
  s.lift = [Cinv](const VectorXd& y) { return VectorXd(Cinv * y); };
  return s;
}

}  // namespace

TEST_SUITE("predict") {

TEST_CASE("exact model and lift predict perfectly at every refresh") {
  Rng rng(1);
  const Square s = square_model(rng);
  oracle::Lti sys{s.model.A, s.model.B, s.model.C};
  const ssid::IoRecord rec = oracle::simulate_lti(sys, rng, 300);
  for (double refresh : {0.01, 0.25, 1.0, 2.5}) {
    const PredictionRun run = rollout(s.model, s.lift, rec, refresh);
    CHECK(run.rmse.maxCoeff() <= 1e-10 * rec.y.cwiseAbs().maxCoeff());
  }
}

TEST_CASE("refresh = dt gives one-step predictions") {
  Rng rng(2);
  Square s = square_model(rng);
  oracle::Lti sys{s.model.A, s.model.B, s.model.C};
  const ssid::IoRecord rec = oracle::simulate_lti(sys, rng, 40);
  s.model.A *= 0.9;  // a wrong model, so carried-over predictions are visible
  const PredictionRun run = rollout(s.model, s.lift, rec, 0.01);
  CHECK(run.refresh_steps == 1);
  for (int t = 0; t + 1 < 40; ++t) {
    const VectorXd expect =
        s.model.C * (s.model.A * s.lift(rec.y.col(t)) + s.model.B * rec.u.col(t));
    CHECK((run.yhat.col(t + 1) - expect).norm() <= 1e-12 * (1 + expect.norm()));
  }
  CHECK(run.lift_calls == 39);
}

TEST_CASE("lift calls follow the refresh period") {
  Rng rng(3);
  const Square s = square_model(rng);
  oracle::Lti sys{s.model.A, s.model.B, s.model.C};
  const ssid::IoRecord rec = oracle::simulate_lti(sys, rng, 101);
  CHECK(rollout(s.model, s.lift, rec, 0.25).lift_calls == 4);
  CHECK_THROWS_AS(rollout(s.model, s.lift, rec, 0.015), ConfigError);
}

TEST_CASE("rmse and set statistics") {
  PredictionRun a;
  a.y = MatrixXd::Zero(2, 4);
  a.yhat = MatrixXd::Zero(2, 4);
  a.yhat.row(0) << 1, -1, 1, -1;
  a.yhat.row(1) << 2, 0, 0, 0;
  const VectorXd r = rmse(a);
  CHECK(r[0] == doctest::Approx(1.0));
  CHECK(r[1] == doctest::Approx(1.0));
  PredictionRun b = a;
  b.yhat *= 3.0;
  a.rmse = rmse(a);
  b.rmse = rmse(b);
  const SetRmse set = rmse_set({a, b});
  CHECK(set.trajectories == 2);
  CHECK(set.mean_of_rmse[0] == doctest::Approx(2.0));
  CHECK(set.pooled[0] == doctest::Approx(std::sqrt(5.0)));
}

TEST_CASE("normalized rmse and percent change") {
  VectorXd m1(3), m2(3);
  m1 << 1, 4, 2;
  m2 << 2, 2, 2;
  const MatrixXd n = n_rmse({m1, m2});
  CHECK(n(0, 0) == doctest::Approx(0.5));
  CHECK(n(0, 1) == doctest::Approx(1.0));
  CHECK(n(1, 0) == doctest::Approx(1.0));
  CHECK(n(1, 1) == doctest::Approx(0.5));
  CHECK(n(2, 0) == doctest::Approx(1.0));
  const VectorXd pct = pct_rmse(m1, m2);
  CHECK(pct[0] == doctest::Approx(-50.0));
  CHECK(pct[1] == doctest::Approx(100.0));
  CHECK(pct[2] == doctest::Approx(0.0));
}

TEST_CASE("error growth folds by refresh segment") {
  PredictionRun a;
  a.y = MatrixXd::Zero(1, 6);
  a.yhat.resize(1, 6);
  a.yhat << 0, 1, 2, 0, 1, 2;
  const MatrixXd full = rmse_t({a});
  CHECK(full.cols() == 6);
  const MatrixXd folded = rmse_t({a}, 3);
  // Offsets 1..3 after each refresh; sample 3 closes the first segment.
  REQUIRE(folded.cols() == 4);
  CHECK(folded(0, 1) == doctest::Approx(1.0));
  CHECK(folded(0, 2) == doctest::Approx(2.0));
  CHECK(folded(0, 3) == doctest::Approx(0.0));
}

TEST_CASE("spectrum ordering and stability flag") {
  MatrixXd A(2, 2);
  A << 0.5, 0, 0, -1.0;
  const Spectrum s = spectrum(A);
  CHECK(s.max_modulus == doctest::Approx(1.0));
  CHECK(s.stable);
  CHECK(std::abs(s.eigenvalues[0]) >= std::abs(s.eigenvalues[1]));
  CHECK_FALSE(spectrum(1.01 * A).stable);
}

TEST_CASE("metrics CSV layout") {
  std::vector<MetricRow> rows;
  SetRmse m;
  m.pooled = Eigen::Vector3d(0.1, 0.2, 0.3);
  m.mean_of_rmse = Eigen::Vector3d(0.1, 0.2, 0.3);
  m.trajectories = 4;
  append_set_rmse(rows, "clay", "clay", 5, 1.25, m, {"u", "v", "psi_dot"});
  const std::string csv = metrics_csv(rows);
  CHECK(csv.rfind("model,soil,order,refresh,output,metric,value\n", 0) == 0);
  CHECK(csv.find("clay,clay,5,1.25,v,") != std::string::npos);
}

}  // TEST_SUITE
