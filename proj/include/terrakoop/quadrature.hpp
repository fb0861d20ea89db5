#pragma once

#include <vector>

namespace terrakoop {

/// Gauss-Legendre nodes and weights on [-1, 1].
struct GaussRule {
  std::vector<double> x;
  std::vector<double> w;
};

/// Cached per node count; safe to call concurrently.
const GaussRule& gauss_legendre(int n);

}  // namespace terrakoop
