#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

namespace terrakoop {

/// Smooth analytic height field H(x, y) built from a small set of primitives.
/// The amplitude bound (sum of component amplitudes) is an upper bound on
/// |H| everywhere.
class Terrain {
 public:
  struct Bump {  // a exp(-|p - c|^2 / (2 w^2))
    double amplitude = 0.0;
    double x0 = 0.0, y0 = 0.0;
    double width = 1.0;
  };
  struct Undulation {  // a sin(kx x + ky y + phase)
    double amplitude = 0.0;
    double kx = 0.0, ky = 0.0;
    double phase = 0.0;
  };
  struct Sample {
    double h = 0.0;
    Eigen::Vector2d grad = Eigen::Vector2d::Zero();
    Eigen::Matrix2d hess = Eigen::Matrix2d::Zero();
  };

  Terrain() = default;

  static Terrain flat() { return Terrain{}; }
  static Terrain single_bump(double amplitude, double x0, double y0, double width);
  /// Random undulating field whose peak-to-mean excursion is bounded by
  /// max_amplitude. Wavelengths are drawn from [min_wavelength, max_wavelength].
  static Terrain random_field(std::uint64_t seed, double max_amplitude, int components = 6,
                              double min_wavelength = 6.0, double max_wavelength = 30.0);

  void add(const Bump& b) { bumps_.push_back(b); }
  void add(const Undulation& u) { waves_.push_back(u); }

  bool is_flat() const { return bumps_.empty() && waves_.empty(); }
  double amplitude_bound() const;

  Sample sample(double x, double y) const;
  double height(double x, double y) const { return sample(x, y).h; }

  const std::vector<Bump>& bumps() const { return bumps_; }
  const std::vector<Undulation>& undulations() const { return waves_; }

 private:
  std::vector<Bump> bumps_;
  std::vector<Undulation> waves_;
};

}  // namespace terrakoop
