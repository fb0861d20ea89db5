#include "terrakoop/excitation.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "terrakoop/errors.hpp"
#include "terrakoop/rng.hpp"

namespace terrakoop::excitation {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

struct Named {
  Family f;
  const char* name;
};
constexpr Named kNames[] = {{Family::straight, "straight"}, {Family::circle, "circle"},
                            {Family::multisine, "multisine"}, {Family::slalom, "slalom"},
                            {Family::fishhook, "fishhook"},   {Family::prbs, "prbs"},
                            {Family::chirp, "chirp"},         {Family::ramp, "ramp"}};

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError("signal spec: " + msg);
}

bool within(double x, double lo, double hi) { return x >= lo - 1e-12 && x <= hi + 1e-12; }

struct Tone {
  double a, f, phi;
};

std::vector<Tone> pick_tones(const std::vector<double>& pool, int count, double amplitude,
                             Rng& rng) {
  std::vector<double> remaining = pool;
  const int n = std::min<int>(count, int(remaining.size()));
  std::vector<Tone> tones;
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto k = rng.index(remaining.size());
    const double w = rng.uniform(0.5, 1.0);
    tones.push_back({w, remaining[k], rng.uniform(0.0, kTwoPi)});
    total += w;
    remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(k));
  }
  for (auto& t : tones) t.a *= amplitude / total;
  return tones;
}

double tone_sum(const std::vector<Tone>& tones, double t) {
  double s = 0.0;
  for (const auto& tone : tones) s += tone.a * std::sin(kTwoPi * tone.f * t + tone.phi);
  return s;
}

// Value at t of a ramp from `from` to `to` at `rate` starting at t0. The
// arrival time is written to t_done.
double ramp_toward(double from, double to, double rate, double t0, double t, double* t_done) {
  const double dur = std::abs(to - from) / rate;
  *t_done = t0 + dur;
  if (t >= *t_done) return to;
  return from + std::copysign(rate * (t - t0), to - from);
}

double fishhook_value(const SignalSpec& s, double t) {
  if (t < s.t_start) return s.offset;
  const double sgn = s.level >= 0.0 ? 1.0 : -1.0;
  const double hold = s.offset + s.level;
  const double counter = s.offset - sgn * s.countersteer;
  double t1;
  const double v1 = ramp_toward(s.offset, hold, s.rate, s.t_start, t, &t1);
  if (t < t1) return v1;
  if (t < t1 + s.dwell) return hold;
  double t2;
  return ramp_toward(hold, counter, s.rate, t1 + s.dwell, t, &t2);
}

double ramp_value(const SignalSpec& s, double t) {
  const double leg = std::abs(s.level - s.offset) / s.rate;
  const double period = 2.0 * (leg + s.dwell);
  if (period <= 0.0) return s.offset;
  const double tau = std::fmod(t, period);
  if (tau < leg) return s.offset + (s.level - s.offset) * (tau / leg);
  if (tau < leg + s.dwell) return s.level;
  if (tau < 2.0 * leg + s.dwell) {
    return s.level + (s.offset - s.level) * ((tau - leg - s.dwell) / leg);
  }
  return s.offset;
}

}  // namespace

std::string to_string(Family f) {
  for (const auto& n : kNames) {
    if (n.f == f) return n.name;
  }
  return "unknown";
}

Family family_from_string(const std::string& s) {
  for (const auto& n : kNames) {
    if (s == n.name) return n.f;
  }
  throw ConfigError("unknown signal family '" + s + "'");
}

const std::vector<Family>& all_families() {
  static const std::vector<Family> f{Family::straight, Family::circle, Family::multisine,
                                     Family::slalom,   Family::fishhook, Family::prbs,
                                     Family::chirp,    Family::ramp};
  return f;
}

void SignalSpec::validate() const {
  require(lo < hi, "lo must be < hi");
  require(dither >= 0.0, "dither must be >= 0");
  require(amplitude >= 0.0, "amplitude must be >= 0");
  switch (family) {
    case Family::straight:
      require(within(0.0, lo, hi), "straight requires 0 inside the caps");
      break;
    case Family::circle:
      require(within(level, lo, hi), "circle level outside caps");
      break;
    case Family::multisine:
    case Family::slalom:
      require(!frequency_pool.empty(), "empty frequency pool");
      require(tones >= 1, "tones must be >= 1");
      for (double f : frequency_pool) require(f > 0.0, "frequencies must be > 0");
      [[fallthrough]];
    case Family::chirp:
      require(within(offset - amplitude, lo, hi) && within(offset + amplitude, lo, hi),
              "offset +/- amplitude outside caps");
      if (family == Family::chirp) require(f0 > 0.0 && f1 > 0.0, "chirp frequencies must be > 0");
      break;
    case Family::fishhook: {
      require(rate > 0.0 && dwell >= 0.0 && countersteer >= 0.0, "fishhook shape parameters");
      const double sgn = level >= 0.0 ? 1.0 : -1.0;
      require(within(offset, lo, hi) && within(offset + level, lo, hi) &&
                  within(offset - sgn * countersteer, lo, hi),
              "fishhook levels outside caps");
      break;
    }
    case Family::prbs:
      require(dwell > 0.0, "prbs dwell must be > 0");
      require(within(offset - std::abs(level), lo, hi) && within(offset + std::abs(level), lo, hi),
              "prbs levels outside caps");
      break;
    case Family::ramp:
      require(rate > 0.0 && dwell >= 0.0, "ramp shape parameters");
      require(within(offset, lo, hi) && within(level, lo, hi), "ramp levels outside caps");
      break;
  }
}

std::vector<double> make_signal(const SignalSpec& spec, double duration, double dt) {
  if (!(dt > 0.0)) throw ConfigError("make_signal: dt must be > 0");
  if (!(duration >= dt)) throw ConfigError("make_signal: duration must be >= dt");
  spec.validate();
  const auto n = static_cast<std::size_t>(std::floor(duration / dt + 1e-9)) + 1;
  std::vector<double> out(n, 0.0);
  Rng rng(spec.seed);

  switch (spec.family) {
    case Family::straight:
      break;
    case Family::circle:
      std::fill(out.begin(), out.end(), spec.level);
      break;
    case Family::multisine: {
      const auto tones = pick_tones(spec.frequency_pool, spec.tones, spec.amplitude, rng);
      for (std::size_t k = 0; k < n; ++k) out[k] = spec.offset + tone_sum(tones, double(k) * dt);
      break;
    }
    case Family::slalom: {
      // Lower half of the pool, slowly amplitude-modulated.
      std::vector<double> pool = spec.frequency_pool;
      std::sort(pool.begin(), pool.end());
      pool.resize(std::max<std::size_t>(1, (pool.size() + 1) / 2));
      const auto tones = pick_tones(pool, spec.tones, spec.amplitude, rng);
      const double f_env = rng.uniform(0.05, 0.2);
      const double phi_env = rng.uniform(0.0, kTwoPi);
      for (std::size_t k = 0; k < n; ++k) {
        const double t = double(k) * dt;
        const double env = 0.5 + 0.5 * std::sin(kTwoPi * f_env * t + phi_env);
        out[k] = spec.offset + env * tone_sum(tones, t);
      }
      break;
    }
    case Family::fishhook:
      for (std::size_t k = 0; k < n; ++k) out[k] = fishhook_value(spec, double(k) * dt);
      break;
    case Family::prbs: {
      const auto hold = std::max<std::size_t>(1, std::size_t(std::llround(spec.dwell / dt)));
      double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
      for (std::size_t k = 0; k < n; ++k) {
        if (k > 0 && k % hold == 0 && rng.uniform() < 0.5) sign = -sign;
        out[k] = spec.offset + sign * std::abs(spec.level);
      }
      break;
    }
    case Family::chirp: {
      const double T = double(n - 1) * dt;
      for (std::size_t k = 0; k < n; ++k) {
        const double t = double(k) * dt;
        const double phase = kTwoPi * (spec.f0 * t + (spec.f1 - spec.f0) * t * t / (2.0 * T));
        out[k] = spec.offset + spec.amplitude * std::sin(phase);
      }
      break;
    }
    case Family::ramp:
      for (std::size_t k = 0; k < n; ++k) out[k] = ramp_value(spec, double(k) * dt);
      break;
  }

  if (spec.dither > 0.0) {
    Rng noise(derive_seed(spec.seed, 1));
    for (auto& v : out) v += noise.uniform(-spec.dither, spec.dither);
  }
  return saturate(std::move(out), spec.lo, spec.hi);
}

std::vector<double> saturate(std::vector<double> seq, double lo, double hi) {
  if (!(lo < hi)) throw ConfigError("saturate: lo must be < hi");
  for (auto& v : seq) v = std::clamp(v, lo, hi);
  return seq;
}

PeResult pe_rank_check(const Eigen::MatrixXd& u, int l) {
  if (l < 1) throw ConfigError("pe_rank_check: depth must be >= 1");
  const Eigen::Index m = u.rows(), n = u.cols();
  if (n < 2 * l) throw ConfigError("pe_rank_check: sequence shorter than 2 l");
  const Eigen::Index cols = n - l + 1;
  Eigen::MatrixXd H(l * m, cols);
  for (int i = 0; i < l; ++i) H.middleRows(i * m, m) = u.middleCols(i, cols);
  const Eigen::VectorXd ev = Eigen::BDCSVD<Eigen::MatrixXd>(H).singularValues();
  PeResult res;
  const double smax = ev.size() ? ev.maxCoeff() : 0.0;
  if (smax > 0.0) {
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
      if (ev[i] > 1e-10 * smax) ++res.rank;
    }
  }
  res.persistently_exciting = res.rank == int(l * m);
  return res;
}

}  // namespace terrakoop::excitation
