#include "terrakoop/terrain.hpp"

#include <cmath>
#include <numbers>

#include "terrakoop/errors.hpp"
#include "terrakoop/rng.hpp"

namespace terrakoop {

Terrain Terrain::single_bump(double amplitude, double x0, double y0, double width) {
  if (!(width > 0.0)) throw ConfigError("terrain bump width must be > 0");
  Terrain t;
  t.add(Bump{amplitude, x0, y0, width});
  return t;
}

Terrain Terrain::random_field(std::uint64_t seed, double max_amplitude, int components,
                              double min_wavelength, double max_wavelength) {
  if (!(max_amplitude >= 0.0) || components < 1 || !(min_wavelength > 0.0) ||
      max_wavelength < min_wavelength) {
    throw ConfigError("terrain random_field: invalid parameters");
  }
  Rng rng(seed);
  std::vector<double> weights(components);
  double total = 0.0;
  for (auto& w : weights) {
    w = rng.uniform(0.2, 1.0);
    total += w;
  }
  Terrain t;
  for (int i = 0; i < components; ++i) {
    const double wavelength = rng.uniform(min_wavelength, max_wavelength);
    const double heading = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double k = 2.0 * std::numbers::pi / wavelength;
    Undulation u;
    u.amplitude = max_amplitude * weights[i] / total;
    u.kx = k * std::cos(heading);
    u.ky = k * std::sin(heading);
    u.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    t.add(u);
  }
  return t;
}

double Terrain::amplitude_bound() const {
  double a = 0.0;
  for (const auto& b : bumps_) a += std::abs(b.amplitude);
  for (const auto& w : waves_) a += std::abs(w.amplitude);
  return a;
}

Terrain::Sample Terrain::sample(double x, double y) const {
  Sample s;
  for (const auto& b : bumps_) {
    const double dx = x - b.x0, dy = y - b.y0;
    const double w2 = b.width * b.width;
    const double e = b.amplitude * std::exp(-(dx * dx + dy * dy) / (2.0 * w2));
    s.h += e;
    s.grad += Eigen::Vector2d(-dx / w2, -dy / w2) * e;
    s.hess(0, 0) += e * (dx * dx / (w2 * w2) - 1.0 / w2);
    s.hess(1, 1) += e * (dy * dy / (w2 * w2) - 1.0 / w2);
    s.hess(0, 1) += e * dx * dy / (w2 * w2);
  }
  for (const auto& w : waves_) {
    const double arg = w.kx * x + w.ky * y + w.phase;
    const double sn = std::sin(arg), cs = std::cos(arg);
    s.h += w.amplitude * sn;
    s.grad += Eigen::Vector2d(w.kx, w.ky) * (w.amplitude * cs);
    s.hess(0, 0) -= w.amplitude * sn * w.kx * w.kx;
    s.hess(1, 1) -= w.amplitude * sn * w.ky * w.ky;
    s.hess(0, 1) -= w.amplitude * sn * w.kx * w.ky;
  }
  s.hess(1, 0) = s.hess(0, 1);
  return s;
}

}  // namespace terrakoop
