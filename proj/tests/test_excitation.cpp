#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "terrakoop/errors.hpp"
#include "terrakoop/excitation.hpp"
#include "terrakoop/rng.hpp"

using namespace terrakoop;
using namespace terrakoop::excitation;

namespace {

SignalSpec spec_for(Family f) {
  SignalSpec s;
  s.family = f;
  s.amplitude = 0.2;
  s.level = 0.25;
  s.frequency_pool = {0.1, 0.3, 0.7};
  s.countersteer = 0.2;
  s.seed = 17;
  return s;
}

}  // namespace

TEST_SUITE("excitation") {

TEST_CASE("family names round trip") {
  for (Family f : all_families()) CHECK(family_from_string(to_string(f)) == f);
  CHECK_THROWS_AS(family_from_string("sawtooth"), ConfigError);
}

TEST_CASE("every family respects the caps, including dither") {
  for (Family f : all_families()) {
    SignalSpec s = spec_for(f);
    s.dither = 0.2;  // large enough to push past the caps
    const auto v = make_signal(s, 10.0, 0.01);
    CHECK(v.size() == 1001);
    for (double x : v) {
      CHECK(x >= s.lo);
      CHECK(x <= s.hi);
    }
  }
}

TEST_CASE("signals are seed-deterministic") {
  for (Family f : all_families()) {
    SignalSpec s = spec_for(f);
    s.dither = 0.01;
    CHECK(make_signal(s, 5.0, 0.01) == make_signal(s, 5.0, 0.01));
  }
  SignalSpec a = spec_for(Family::multisine), b = a;
  b.seed = 18;
  CHECK(make_signal(a, 5.0, 0.01) != make_signal(b, 5.0, 0.01));
}

TEST_CASE("straight, circle and fishhook shapes") {
  const auto zero = make_signal(spec_for(Family::straight), 2.0, 0.01);
  CHECK(std::all_of(zero.begin(), zero.end(), [](double x) { return x == 0.0; }));
  const auto circ = make_signal(spec_for(Family::circle), 2.0, 0.01);
  CHECK(std::all_of(circ.begin(), circ.end(), [](double x) { return x == 0.25; }));

  SignalSpec fh = spec_for(Family::fishhook);
  fh.rate = 0.5;
  fh.dwell = 1.0;
  fh.t_start = 0.5;
  const auto v = make_signal(fh, 6.0, 0.01);
  CHECK(v[40] == 0.0);                                       // before onset
  CHECK(v[100] == doctest::Approx(0.25));                    // ramp end at 0.5 + 0.5 s
  CHECK(v[150] == doctest::Approx(0.25));                    // holding
  CHECK(v[200] == doctest::Approx(0.25));                    // hold ends at 1.0 + 1.0 s
  CHECK(v[250] == doctest::Approx(0.25 - 0.5 * 0.5));       // countersteer ramp
  CHECK(v.back() == doctest::Approx(-0.2));                  // countersteer hold
}

TEST_CASE("prbs switches only at dwell boundaries") {
  SignalSpec s = spec_for(Family::prbs);
  s.dwell = 0.2;
  const auto v = make_signal(s, 10.0, 0.01);
  for (std::size_t k = 1; k < v.size(); ++k) {
    if (v[k] != v[k - 1]) CHECK(k % 20 == 0);
    CHECK(std::abs(std::abs(v[k]) - 0.25) < 1e-15);
  }
}

TEST_CASE("deterministic parts leaving the caps are rejected") {
  SignalSpec s = spec_for(Family::circle);
  s.level = 0.5;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  SignalSpec m = spec_for(Family::multisine);
  m.frequency_pool.clear();
  CHECK_THROWS_AS(make_signal(m, 1.0, 0.01), ConfigError);
  CHECK_THROWS_AS(make_signal(spec_for(Family::straight), 1.0, 0.0), ConfigError);
}

TEST_CASE("saturate clamps elementwise") {
  CHECK(saturate({-2.0, 0.1, 2.0}, -1.0, 1.0) == std::vector<double>{-1.0, 0.1, 1.0});
  CHECK_THROWS_AS(saturate({0.0}, 1.0, 1.0), ConfigError);
}

TEST_CASE("PE rank: white noise is exciting, a constant is not") {
  Rng rng(1);
  Eigen::MatrixXd u(2, 400);
  for (int i = 0; i < u.size(); ++i) u.data()[i] = rng.normal();
  const PeResult white = pe_rank_check(u, 20);
  CHECK(white.rank == 40);
  CHECK(white.persistently_exciting);
  const PeResult flat = pe_rank_check(Eigen::MatrixXd::Ones(2, 400), 20);
  CHECK(flat.rank == 1);
  CHECK_FALSE(flat.persistently_exciting);
  // A single sinusoid has rank 2 per channel regardless of depth.
  Eigen::MatrixXd s(1, 400);
  for (int t = 0; t < 400; ++t) s(0, t) = std::sin(0.3 * t);
  CHECK(pe_rank_check(s, 10).rank == 2);
  CHECK_THROWS_AS(pe_rank_check(u, 300), ConfigError);
}

}  // TEST_SUITE
