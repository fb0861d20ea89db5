#include <doctest.h>

#include <cmath>

#include "terrakoop/errors.hpp"
#include "terrakoop/lifting.hpp"
#include "terrakoop/rng.hpp"

using namespace terrakoop;
using namespace terrakoop::lifting;

namespace {

// Smooth map from 3 outputs to 2 latent coordinates.
void smooth_pairs(Rng& rng, int n, MatrixXd& Y, MatrixXd& Z) {
  Y.resize(3, n);
  Z.resize(2, n);
  for (int j = 0; j < n; ++j) {
    const double a = rng.uniform(2, 8), b = rng.uniform(-1, 1), c = rng.uniform(-0.5, 0.5);
    Y.col(j) << a, b, c;
    Z.col(j) << std::sin(0.5 * a) + b * c, 0.3 * a - std::cos(b);
  }
}

}  // namespace

TEST_SUITE("lifting") {

TEST_CASE("marginal likelihood gradient matches central differences") {
  Rng rng(1);
  MatrixXd X(3, 40);
  VectorXd z(40);
  for (int i = 0; i < X.size(); ++i) X.data()[i] = rng.normal();
  for (int i = 0; i < 40; ++i) z[i] = std::sin(X(0, i)) + 0.1 * X(1, i);
  VectorXd theta(5);
  theta << 0.1, -0.3, 0.5, 0.2, -4.0;
  VectorXd g;
  const double f = neg_log_marginal(X, z, theta, 1e-8, &g);
  CHECK(std::isfinite(f));
  REQUIRE(g.size() == 5);
  for (int k = 0; k < 5; ++k) {
    const double e = 1e-5;
    VectorXd tp = theta, tm = theta;
    tp[k] += e;
    tm[k] -= e;
    const double fd = (neg_log_marginal(X, z, tp, 1e-8, nullptr) -
                       neg_log_marginal(X, z, tm, 1e-8, nullptr)) / (2 * e);
    CHECK(g[k] == doctest::Approx(fd).epsilon(1e-5));
  }
}

TEST_CASE("posterior mean interpolates a smooth map") {
  Rng rng(2);
  MatrixXd Y, Z;
  smooth_pairs(rng, 300, Y, Z);
  LiftingConfig cfg;
  cfg.ml_subsample = 150;
  const LiftingMap m = fit_lifting(Y, Z, cfg);
  CHECK(m.p == 3);
  CHECK(m.r == 2);
  CHECK(m.training_rmse.maxCoeff() < 1e-2);
  MatrixXd Yt, Zt;
  smooth_pairs(rng, 50, Yt, Zt);
  const MatrixXd pred = m.lift_all(Yt);
  const double rel = (pred - Zt).norm() / Zt.norm();
  CHECK(rel < 0.05);
  CHECK((m.lift(Yt.col(3)) - pred.col(3)).norm() <= 1e-12);
}

TEST_CASE("fit does not depend on column order") {
  Rng rng(3);
  MatrixXd Y, Z;
  smooth_pairs(rng, 120, Y, Z);
  LiftingConfig cfg;
  cfg.hyper = Hyper::median;
  const LiftingMap a = fit_lifting(Y, Z, cfg);
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(120);
  perm.setIdentity();
  for (int i = 119; i > 0; --i) std::swap(perm.indices()[i], perm.indices()[rng.index(std::uint64_t(i) + 1)]);
  const LiftingMap b = fit_lifting(Y * perm, Z * perm, cfg);
  const VectorXd q(Eigen::Vector3d(5.0, 0.2, -0.1));
  CHECK((a.lift(q) - b.lift(q)).norm() <= 1e-12 * a.lift(q).norm());
  CHECK(lifting_to_json(a) == lifting_to_json(b));
}

TEST_CASE("JSON round trip preserves predictions exactly") {
  Rng rng(4);
  MatrixXd Y, Z;
  smooth_pairs(rng, 60, Y, Z);
  LiftingConfig cfg;
  cfg.hyper = Hyper::median;
  cfg.noise_variance = 1e-6;
  const LiftingMap m = fit_lifting(Y, Z, cfg);
  for (const auto& c : m.coords) CHECK(c.noise_variance == 1e-6);
  const LiftingMap back = lifting_from_json(lifting_to_json(m));
  CHECK(back.X == m.X);
  CHECK(back.lift(Y.col(7)) == m.lift(Y.col(7)));
  CHECK(lifting_to_json(back) == lifting_to_json(m));
}

TEST_CASE("shape errors") {
  MatrixXd Y = MatrixXd::Ones(3, 10), Z = MatrixXd::Ones(2, 9);
  CHECK_THROWS_AS(fit_lifting(Y, Z), ConfigError);
  LiftingMap m;
  CHECK_THROWS(m.validate());
}

}  // TEST_SUITE
