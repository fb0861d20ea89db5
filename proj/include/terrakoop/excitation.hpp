#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace terrakoop::excitation {

enum class Family { straight, circle, multisine, slalom, fishhook, prbs, chirp, ramp };

std::string to_string(Family f);
Family family_from_string(const std::string& s);
const std::vector<Family>& all_families();

/// Parameters of one scalar excitation channel. Fields a family does not use
/// are ignored. lo/hi are the channel's saturation caps.
struct SignalSpec {
  Family family = Family::straight;
  double lo = -0.35;
  double hi = 0.35;
  double offset = 0.0;     // mean level for oscillating families
  double amplitude = 0.0;  // peak deviation from offset (multisine, slalom, chirp)
  double level = 0.0;      // circle value, prbs half-swing, fishhook hold, ramp target
  std::vector<double> frequency_pool;  // [Hz]
  int tones = 3;
  double f0 = 0.05, f1 = 1.0;  // chirp sweep [Hz]
  double rate = 0.5;           // fishhook / ramp slope [unit/s]
  double dwell = 1.0;          // hold time [s]
  double countersteer = 0.0;   // fishhook countersteer magnitude
  double t_start = 0.5;        // fishhook onset [s]
  double dither = 0.0;         // uniform overlay half-width, drawn per sample
  std::uint64_t seed = 0;

  /// Throws ConfigError if the deterministic part can leave [lo, hi].
  void validate() const;
};

/// Sample k is the value at t = k dt, k = 0 .. floor(duration/dt).
std::vector<double> make_signal(const SignalSpec& spec, double duration, double dt);

std::vector<double> saturate(std::vector<double> seq, double lo, double hi);

struct PeResult {
  int rank = 0;
  bool persistently_exciting = false;
};

/// Rank of the depth-l block-Hankel of u (m channels x n samples), counting
/// singular values above 1e-10 sigma_max.
PeResult pe_rank_check(const Eigen::MatrixXd& u, int l);

}  // namespace terrakoop::excitation
