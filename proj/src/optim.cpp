#include "terrakoop/optim.hpp"

#include <cmath>
#include <sstream>

#include "terrakoop/errors.hpp"

namespace terrakoop::optim {

VectorXd project(const VectorXd& x, const VectorXd& lo, const VectorXd& hi) {
  return x.cwiseMax(lo).cwiseMin(hi);
}

namespace {

[[noreturn]] void non_finite(const VectorXd& x, double f) {
  std::ostringstream os;
  os << "minimize_box: non-finite objective " << f << " at x = [";
  for (Eigen::Index i = 0; i < x.size(); ++i) os << (i ? ", " : "") << x[i];
  os << "]";
  throw NumericalError(os.str());
}

}  // namespace

BoxResult minimize_box(const Objective& fun, const VectorXd& x0, const VectorXd& lo,
                       const VectorXd& hi, const BoxOptions& opts) {
  const Eigen::Index n = x0.size();
  if (lo.size() != n || hi.size() != n) throw ConfigError("minimize_box: bound sizes");
  if ((lo.array() > hi.array()).any()) throw ConfigError("minimize_box: lo > hi");

  BoxResult res;
  VectorXd x = project(x0, lo, hi);
  VectorXd g(n), g_new(n);
  double f = fun(x, g);
  ++res.evaluations;
  if (!std::isfinite(f) || !g.allFinite()) non_finite(x, f);
  res.f0 = f;

  Eigen::MatrixXd H = Eigen::MatrixXd::Identity(n, n);
  bool fresh_metric = true;
  VectorXd d(n), x_new(n);
  res.status = "max_iterations";
  int it = 0;
  for (; it < opts.max_iterations; ++it) {
    res.pg_norm = n ? (x - project(x - g, lo, hi)).cwiseAbs().maxCoeff() : 0.0;
    if (res.pg_norm < opts.pg_tol) {
      res.converged = true;
      res.status = "pg_tol";
      break;
    }
    // Variables held at a bound by the gradient are fixed for this step.
    Eigen::Array<bool, Eigen::Dynamic, 1> fixed(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      fixed[i] = (x[i] <= lo[i] && g[i] > 0.0) || (x[i] >= hi[i] && g[i] < 0.0);
    }
    VectorXd gf = g;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (fixed[i]) gf[i] = 0.0;
    }
    d = -(H * gf);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (fixed[i]) d[i] = 0.0;
    }
    if (!(g.dot(d) < 0.0)) {
      H.setIdentity();
      fresh_metric = true;
      d = -gf;
    }
    double alpha = 1.0;
    if (fresh_metric) {
      const double dn = d.cwiseAbs().maxCoeff();
      if (dn > 1.0) alpha = 1.0 / dn;
    }

    bool accepted = false;
    double f_new = f;
    for (int bt = 0; bt < opts.max_backtracks; ++bt, alpha *= 0.5) {
      x_new = project(x + alpha * d, lo, hi);
      const VectorXd step = x_new - x;
      if (step.cwiseAbs().maxCoeff() == 0.0) break;
      f_new = fun(x_new, g_new);
      ++res.evaluations;
      if (!std::isfinite(f_new) || !g_new.allFinite()) non_finite(x_new, f_new);
      if (f_new <= f + opts.armijo * g.dot(step)) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      if (!fresh_metric) {
        H.setIdentity();
        fresh_metric = true;
        continue;
      }
      res.status = "line_search";
      break;
    }

    const VectorXd s = x_new - x;
    const VectorXd y = g_new - g;
    const double sy = s.dot(y);
    const double gain = f - f_new;
    x = x_new;
    g = g_new;
    f = f_new;
    if (sy > 1e-12 * s.norm() * y.norm() && sy > 0.0) {
      if (fresh_metric) H *= sy / y.squaredNorm();
      const double rho = 1.0 / sy;
      const VectorXd Hy = H * y;
      H += (rho * rho * y.dot(Hy) + rho) * s * s.transpose() -
           rho * (Hy * s.transpose() + s * Hy.transpose());
      fresh_metric = false;
    }
    if (opts.f_rel_tol > 0.0 && gain <= opts.f_rel_tol * std::max(std::abs(f), 1e-300)) {
      ++it;
      res.status = "f_rel_tol";
      res.converged = true;
      break;
    }
  }
  res.iterations = it;
  res.x = x;
  res.f = f;
  if (res.status != "pg_tol") {
    res.pg_norm = n ? (x - project(x - g, lo, hi)).cwiseAbs().maxCoeff() : 0.0;
    if (res.pg_norm < opts.pg_tol) {
      res.converged = true;
      res.status = "pg_tol";
    }
  }
  return res;
}

}  // namespace terrakoop::optim
