#include <doctest.h>

#include <cmath>
#include <numbers>

#include "oracles.hpp"
#include "terrakoop/errors.hpp"
#include "terrakoop/rng.hpp"
#include "terrakoop/ssid.hpp"

using namespace terrakoop;
using namespace terrakoop::ssid;

namespace {

std::vector<IoRecord> lti_records(const oracle::Lti& sys, Rng& rng, int count, int n) {
  std::vector<IoRecord> recs;
  for (int i = 0; i < count; ++i) recs.push_back(oracle::simulate_lti(sys, rng, n));
  return recs;
}

oracle::Lti minimal_lti(Rng& rng, int r) {
  for (;;) {
    oracle::Lti s = oracle::random_lti(rng, r, 2, 3);
    if (oracle::minimal(s)) return s;
  }
}

// Explicit projector I - U^T (U U^T)^-1 U.
MatrixXd projector(const MatrixXd& U) {
  const MatrixXd UUt = U * U.transpose();
  return MatrixXd::Identity(U.cols(), U.cols()) - U.transpose() * UUt.ldlt().solve(U);
}

}  // namespace

TEST_SUITE("ssid") {

TEST_CASE("hankel layout") {
  MatrixXd seq(2, 6);
  for (int t = 0; t < 6; ++t) seq.col(t) << t, 10 + t;
  const MatrixXd H = build_hankel(seq, 3);
  REQUIRE(H.rows() == 6);
  REQUIRE(H.cols() == 4);
  CHECK(H(0, 0) == 0);
  CHECK(H(2, 0) == 1);   // block row 1, column 0 -> sample 1
  CHECK(H(5, 3) == 15);  // block row 2, column 3 -> sample 5, channel 1
  const MatrixXd Hu = build_input_hankel(seq, 3);
  CHECK(Hu.rows() == 4);
  CHECK(Hu.cols() == 4);
  CHECK(Hu(2, 3) == 4);
}

TEST_CASE("compressed matrix equals the explicit projection") {
  Rng rng(8);
  MatrixXd Y(6, 50), U(4, 50);
  for (int i = 0; i < Y.size(); ++i) Y.data()[i] = rng.normal();
  for (int i = 0; i < U.size(); ++i) U.data()[i] = rng.normal();
  const MatrixXd P = projector(U);
  const MatrixXd Xi = compressed_matrix(Y, U);
  const MatrixXd expect = Y * P * Y.transpose();
  CHECK((Xi - expect).norm() <= 1e-10 * expect.norm());
  // Projected rows are orthogonal to U's row space.
  CHECK((project_orthogonal(Y, U) * U.transpose()).norm() <= 1e-9 * Y.norm());
}

TEST_CASE("order by energy") {
  VectorXd s(4);
  s << 10, 1, 0.1, 0.01;
  CHECK(order_by_energy(s, 0.98, 4) == 1);
  CHECK(order_by_energy(s, 0.9999, 4) == 2);   // (100 + 1) / 101.0101 = 0.99990001
  CHECK(order_by_energy(s, 0.99999, 4) == 3);
  CHECK(order_by_energy(s, 0.99999, 2) == 2);
}

TEST_CASE("grassmann distance properties") {
  Rng rng(9);
  MatrixXd G(8, 3);
  for (int i = 0; i < G.size(); ++i) G.data()[i] = rng.normal();
  MatrixXd T(3, 3);
  for (int i = 0; i < T.size(); ++i) T.data()[i] = rng.normal();
  T += 3 * MatrixXd::Identity(3, 3);
  CHECK(grassmann_distance(G, G * T) <= 1e-7);
  MatrixXd E1 = MatrixXd::Zero(4, 2), E2 = MatrixXd::Zero(4, 2);
  E1(0, 0) = E1(1, 1) = 1;
  E2(2, 0) = E2(3, 1) = 1;
  CHECK(grassmann_distance(E1, E2) == doctest::Approx(std::numbers::pi / 2 * std::sqrt(2.0)));
  MatrixXd R = E1;
  R(0, 0) = std::cos(0.3);
  R(2, 0) = std::sin(0.3);
  const VectorXd ang = principal_angles(E1, R);
  CHECK(ang[0] == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(ang[1] == doctest::Approx(0.3));
  MatrixXd other(8, 3);
  for (int i = 0; i < other.size(); ++i) other.data()[i] = rng.normal();
  CHECK(grassmann_distance(G, other) == doctest::Approx(grassmann_distance(other, G)));
}

TEST_CASE("recursive accumulation equals the batch compressed matrix") {
  Rng rng(10);
  const oracle::Lti sys = minimal_lti(rng, 4);
  const auto recs = lti_records(sys, rng, 4, 200);
  const int l = 8;
  SsidAccumulator acc = SsidAccumulator::from_record(hankel_pair(recs[0], l));
  for (std::size_t i = 1; i < recs.size(); ++i) acc.absorb(hankel_pair(recs[i], l));
  const HankelPair all = mosaic(recs, l);
  const MatrixXd Xb = compressed_matrix(all.Y, all.U);
  CHECK((acc.Xi() - Xb).norm() <= 1e-8 * Xb.norm());
  CHECK((acc.YU() - all.Y * all.U.transpose()).norm() <= 1e-10 * acc.YU().norm());
}

TEST_CASE("noise-free LTI data is recovered up to similarity") {
  Rng rng(12);
  for (int r : {2, 4, 6}) {
    const oracle::Lti sys = minimal_lti(rng, r);
    const auto recs = lti_records(sys, rng, 6, 300);
    IdentifyConfig cfg;
    cfg.l = 12;
    cfg.r = 0;  // energy selection should find the true order
    cfg.energy = 1.0 - 1e-12;
    cfg.epsilon = 0.0;
    const Identification id = identify(recs, cfg);
    CHECK(id.model.r == r);
    const double err = markov_relative_error(markov_parameters(id.model.A, id.model.B, id.model.C, 21),
                                             markov_parameters(sys.A, sys.B, sys.C, 21));
    CHECK(err <= 1e-6);
    CHECK(id.model.spectral_radius() < 1.0);
    cfg.r = r;
    cfg.b.solver = BSolver::exact;
    const Identification ex = identify(recs, cfg);
    CHECK(markov_relative_error(markov_parameters(ex.model.A, ex.model.B, ex.model.C, 21),
                                markov_parameters(sys.A, sys.B, sys.C, 21)) <= 1e-6);
  }
}

TEST_CASE("shift solve on an exact observability matrix") {
  Rng rng(13);
  const oracle::Lti sys = minimal_lti(rng, 3);
  const MatrixXd O = observability(sys.A, sys.C, 6);
  CHECK(O.rows() == 18);
  const ShiftSolution sh = extract_AC(O, 3, 6);
  CHECK((sh.A - sys.A).norm() <= 1e-10 * sys.A.norm());
  CHECK((sh.C - sys.C).norm() <= 1e-12 * sys.C.norm());
  CHECK_FALSE(sh.ill_conditioned);
}

TEST_CASE("latent initial states reproduce the data") {
  Rng rng(14);
  const oracle::Lti sys = minimal_lti(rng, 3);
  const auto recs = lti_records(sys, rng, 3, 120);
  IdentifyConfig cfg;
  cfg.l = 8;
  cfg.r = 3;
  cfg.epsilon = 0.0;
  const Identification id = identify(recs, cfg);
  CHECK(id.b.objective <= 1e-12 * id.b.objective_zero);
  REQUIRE(id.latent.ranges.size() == 3);
  // Column j of Z0 propagates to the output window starting at column j.
  const ColumnRange& rg = id.latent.ranges[1];
  VectorXd z = id.latent.Z0.col(rg.first + 5);
  const IoRecord& rec = recs[std::size_t(rg.record)];
  for (int t = 5; t < 12; ++t) {
    CHECK((id.model.C * z - rec.y.col(t)).norm() <= 1e-6 * rec.y.col(t).norm() + 1e-9);
    z = id.model.A * z + id.model.B * rec.u.col(t);
  }
}

TEST_CASE("a duplicated record has zero distance and is rejected") {
  Rng rng(15);
  const oracle::Lti sys = minimal_lti(rng, 3);
  auto recs = lti_records(sys, rng, 3, 200);
  recs.push_back(recs[2]);
  // Duplicate data is already inside the accumulated span.
  IdentifyConfig cfg;
  cfg.l = 8;
  cfg.r = 3;
  cfg.epsilon = 1e-6;
  const Accumulation acc = accumulate(recs, cfg);
  REQUIRE(acc.log.size() == 4);
  CHECK(acc.log[3].G <= 1e-8);
  CHECK_FALSE(acc.log[3].accepted);
}

TEST_CASE("non-positive epsilon accepts everything") {
  Rng rng(16);
  const oracle::Lti sys = minimal_lti(rng, 2);
  auto recs = lti_records(sys, rng, 3, 150);
  recs.push_back(recs[0]);
  IdentifyConfig cfg;
  cfg.l = 6;
  cfg.r = 2;
  cfg.epsilon = 0.0;
  const Accumulation acc = accumulate(recs, cfg);
  CHECK(acc.accepted.size() == 4);
  CHECK(cfg.epsilon_for(4) == 0.0);
  IdentifyConfig def;
  CHECK(def.epsilon_for(4) == doctest::Approx(0.05 * 2.0 * std::numbers::pi / 2));
}

TEST_CASE("spectrum clipping moves only the unstable modes") {
  MatrixXd A(3, 3);
  A << 1.2, 0.0, 0.0, 0.0, 0.5, 0.3, 0.0, -0.3, 0.5;
  MatrixXd T(3, 3);
  T << 1, 2, 0, 0, 1, 1, 1, 0, 1;
  const MatrixXd At = T * A * T.inverse();
  const auto clipped = clip_spectrum(At, 1.0);
  REQUIRE(clipped.has_value());
  Eigen::EigenSolver<MatrixXd> es(*clipped);
  std::vector<double> mods;
  for (int i = 0; i < 3; ++i) mods.push_back(std::abs(es.eigenvalues()[i]));
  std::sort(mods.begin(), mods.end());
  CHECK(mods[2] == doctest::Approx(1.0));
  CHECK(mods[0] == doctest::Approx(std::hypot(0.5, 0.3)));
  CHECK(mods[1] == doctest::Approx(std::hypot(0.5, 0.3)));
  // A stable matrix is returned unchanged.
  const MatrixXd S = 0.5 * MatrixXd::Identity(2, 2);
  CHECK((clip_spectrum(S, 1.0).value() - S).norm() <= 1e-14);
  // A defective (Jordan) block has no trustworthy eigenbasis.
  MatrixXd J(2, 2);
  J << 1.5, 1.0, 0.0, 1.5;
  CHECK_FALSE(clip_spectrum(J, 1.0).has_value());
}

TEST_CASE("model JSON round trip and validation") {
  Rng rng(17);
  const oracle::Lti sys = minimal_lti(rng, 3);
  KoopmanModel m;
  m.A = sys.A;
  m.B = sys.B;
  m.C = sys.C;
  m.r = 3;
  m.p = 3;
  m.m = 2;
  m.l = 10;
  m.soil = "clay";
  m.acceptance_log = {{0, 0.0, true}, {1, 0.25, false}};
  const KoopmanModel back = model_from_json(model_to_json(m));
  CHECK(back.A == m.A);
  CHECK(back.B == m.B);
  CHECK(back.C == m.C);
  CHECK(back.soil == "clay");
  CHECK(back.acceptance_log.size() == 2);
  CHECK(model_to_json(back) == model_to_json(m));
  KoopmanModel bad = m;
  bad.B.resize(2, 2);
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK_THROWS(model_from_json("{\"format_version\": 1}"));
}

TEST_CASE("order above the numerical rank is refused") {
  Rng rng(18);
  const oracle::Lti sys = minimal_lti(rng, 2);
  const auto recs = lti_records(sys, rng, 2, 200);
  const HankelPair h = mosaic(recs, 6);
  const MatrixXd Xi = compressed_matrix(h.Y, h.U);
  CHECK_NOTHROW(subspace_from_xi(Xi, 2));
  CHECK_THROWS_AS(subspace_from_xi(Xi, 5), NumericalError);
}

}  // TEST_SUITE
