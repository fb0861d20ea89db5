#pragma once

#include <algorithm>
#include <array>
#include <cmath>

#include <Eigen/Dense>

namespace terrakoop::ode {

struct Tolerances {
  double atol = 1e-8;
  double rtol = 1e-6;
};

/// One Dormand-Prince 5(4) step with its dense-output polynomial.
/// The 5th-order solution is propagated; the embedded 4th-order solution only
/// drives the error estimate.
template <int N>
struct DormandPrince {
  using Vec = Eigen::Matrix<double, N, 1>;

  static constexpr std::array<double, 7> c{0.0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0};
  static constexpr double a21 = 1.0 / 5;
  static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                          a54 = -212.0 / 729;
  static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                          a64 = 49.0 / 176, a65 = -5103.0 / 18656;
  static constexpr std::array<double, 7> b{35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192,
                                           -2187.0 / 6784, 11.0 / 84, 0.0};
  // b - b_hat
  static constexpr std::array<double, 7> e{-71.0 / 57600, 0.0, 71.0 / 16695, -71.0 / 1920,
                                           17253.0 / 339200, -22.0 / 525, 1.0 / 40};
  // Continuous extension, y(t + x h) = y + h sum_i k_i sum_j P[i][j] x^(j+1).
  static constexpr double P[7][4] = {
      {1.0, -8048581381.0 / 2820520608, 8663915743.0 / 2820520608,
       -12715105075.0 / 11282082432},
      {0.0, 0.0, 0.0, 0.0},
      {0.0, 131558114200.0 / 32700410799, -68118460800.0 / 10900136933,
       87487479700.0 / 32700410799},
      {0.0, -1754552775.0 / 470086768, 14199869525.0 / 1410260304,
       -10690763975.0 / 1880347072},
      {0.0, 127303824393.0 / 49829197408, -318862633887.0 / 49829197408,
       701980252875.0 / 199316789632},
      {0.0, -282668133.0 / 205662961, 2019193451.0 / 616988883, -1453857185.0 / 822651844},
      {0.0, 40617522.0 / 29380423, -110615467.0 / 29380423, 69997945.0 / 29380423}};

  double t0 = 0.0, h = 0.0;
  Vec y0, y1;
  std::array<Vec, 7> k;
  double error_norm = 0.0;  // RMS of err / (atol + rtol max(|y0|, |y1|))

  /// Takes a trial step from (t, y) with slope k0 = f(t, y) already known.
  template <class F>
  void step(F&& f, double t, const Vec& y, const Vec& k0, double step_size,
            const Tolerances& tol) {
    t0 = t;
    h = step_size;
    y0 = y;
    k[0] = k0;
    k[1] = f(t + c[1] * h, Vec(y + h * (a21 * k[0])));
    k[2] = f(t + c[2] * h, Vec(y + h * (a31 * k[0] + a32 * k[1])));
    k[3] = f(t + c[3] * h, Vec(y + h * (a41 * k[0] + a42 * k[1] + a43 * k[2])));
    k[4] = f(t + c[4] * h, Vec(y + h * (a51 * k[0] + a52 * k[1] + a53 * k[2] + a54 * k[3])));
    k[5] = f(t + c[5] * h,
             Vec(y + h * (a61 * k[0] + a62 * k[1] + a63 * k[2] + a64 * k[3] + a65 * k[4])));
    y1 = y + h * (b[0] * k[0] + b[2] * k[2] + b[3] * k[3] + b[4] * k[4] + b[5] * k[5]);
    k[6] = f(t + h, y1);
    Vec err = h * (e[0] * k[0] + e[2] * k[2] + e[3] * k[3] + e[4] * k[4] + e[5] * k[5] +
                   e[6] * k[6]);
    Vec scale = (tol.atol + tol.rtol * y0.cwiseAbs().cwiseMax(y1.cwiseAbs()).array()).matrix();
    error_norm = std::sqrt((err.cwiseQuotient(scale)).squaredNorm() / double(err.size()));
  }

  /// Dense output at t in [t0, t0 + h].
  Vec interpolate(double t) const {
    const double x = h == 0.0 ? 0.0 : (t - t0) / h;
    const double p[4] = {x, x * x, x * x * x, x * x * x * x};
    Vec acc = Vec::Zero(y0.size());
    for (int i = 0; i < 7; ++i) {
      const double w = P[i][0] * p[0] + P[i][1] * p[1] + P[i][2] * p[2] + P[i][3] * p[3];
      if (w != 0.0) acc += w * k[i];
    }
    return y0 + h * acc;
  }

  /// Step-size factor for the next attempt.
  static double step_factor(double err_norm) {
    if (err_norm == 0.0) return 10.0;
    return std::clamp(0.9 * std::pow(err_norm, -0.2), 0.2, 10.0);
  }
};

/// Initial step heuristic (Hairer, Norsett, Wanner).
template <int N, class F>
double initial_step(F&& f, double t, const Eigen::Matrix<double, N, 1>& y,
                    const Eigen::Matrix<double, N, 1>& f0, const Tolerances& tol,
                    double max_step) {
  using Vec = Eigen::Matrix<double, N, 1>;
  Vec scale = (tol.atol + tol.rtol * y.cwiseAbs().array()).matrix();
  const double n = double(y.size());
  const double d0 = std::sqrt(y.cwiseQuotient(scale).squaredNorm() / n);
  const double d1 = std::sqrt(f0.cwiseQuotient(scale).squaredNorm() / n);
  double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
  h0 = std::min(h0, max_step);
  Vec f1 = f(t + h0, Vec(y + h0 * f0));
  const double d2 = std::sqrt((f1 - f0).cwiseQuotient(scale).squaredNorm() / n) / h0;
  const double h1 = std::max(d1, d2) <= 1e-15 ? std::max(1e-6, h0 * 1e-3)
                                              : std::pow(0.01 / std::max(d1, d2), 0.2);
  return std::min({100.0 * h0, h1, max_step});
}

}  // namespace terrakoop::ode
