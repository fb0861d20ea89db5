#pragma once

#include <functional>
#include <string>

#include <Eigen/Dense>

namespace terrakoop::optim {

using Eigen::VectorXd;

/// Returns f(x) and writes the gradient into grad (already sized).
using Objective = std::function<double(const VectorXd& x, VectorXd& grad)>;

struct BoxOptions {
  int max_iterations = 200;
  double pg_tol = 1e-6;          // infinity norm of x - P(x - g)
  double f_rel_tol = 0.0;        // stop when a step gains less than this relative amount
  int max_backtracks = 40;
  double armijo = 1e-4;
};

struct BoxResult {
  VectorXd x;
  double f = 0.0;
  double f0 = 0.0;       // objective at the projected start point
  double pg_norm = 0.0;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  std::string status;    // "pg_tol" | "f_rel_tol" | "max_iterations" | "line_search"
};

/// Projection onto [lo, hi].
VectorXd project(const VectorXd& x, const VectorXd& lo, const VectorXd& hi);

/// Projected quasi-Newton (inverse BFGS on the free variables) with Armijo
/// backtracking along the projection arc. Iterates stay feasible and the
/// objective never increases, so the result is no worse than the projected
/// start. A non-finite objective throws NumericalError with the iterate.
BoxResult minimize_box(const Objective& f, const VectorXd& x0, const VectorXd& lo,
                       const VectorXd& hi, const BoxOptions& opts = {});

}  // namespace terrakoop::optim
