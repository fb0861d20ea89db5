#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace terrakoop::lifting {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Squared-exponential ARD regressor for one latent coordinate:
/// k(a, b) = sf2 exp(-1/2 sum_d ((a_d - b_d) / ell_d)^2), zero prior mean.
struct Coordinate {
  VectorXd length_scales;
  double signal_variance = 1.0;
  double noise_variance = 1e-4;
  VectorXd alpha;  // (K + (noise + jitter) I)^-1 z
};

struct LiftingMap {
  int format_version = 1;
  int p = 0, r = 0;
  std::vector<std::string> input_labels{"u", "v", "psi_dot"};
  MatrixXd X;  // p x n shared training inputs
  std::vector<Coordinate> coords;
  double jitter = 1e-8;
  VectorXd training_rmse;  // per coordinate, on the training pairs

  /// Stacked posterior means.
  VectorXd lift(const VectorXd& y) const;
  /// Column-wise lift of a p x k matrix.
  MatrixXd lift_all(const MatrixXd& Y) const;
  void validate() const;
};

enum class Hyper { marginal_likelihood, median };

struct LiftingConfig {
  int max_pairs = 2000;     // uniform-stride cap on kernel training pairs
  int ml_subsample = 300;   // pairs used for hyperparameter optimization
  Hyper hyper = Hyper::marginal_likelihood;
  int ml_iterations = 100;
  /// Fixes the noise variance of every coordinate instead of fitting it.
  std::optional<double> noise_variance;
  double jitter = 1e-8;
  int workers = 1;
  std::vector<std::string> input_labels{"u", "v", "psi_dot"};
};

/// Y is p x N (measured outputs), Z is r x N (aligned latent states).
/// Pairs are put in a canonical order first, so the fit does not depend on
/// the order of the columns.
LiftingMap fit_lifting(const MatrixXd& Y, const MatrixXd& Z, const LiftingConfig& cfg = {});

/// Negative log marginal likelihood and its gradient with respect to
/// theta = [log ell_1..p, log sf2, log sn2]. Exposed for tests.
double neg_log_marginal(const MatrixXd& X, const VectorXd& z, const VectorXd& theta,
                        double jitter, VectorXd* grad);

std::string lifting_to_json(const LiftingMap& m);
LiftingMap lifting_from_json(const std::string& text);
void save_lifting(const std::string& path, const LiftingMap& m);
LiftingMap load_lifting(const std::string& path);

}  // namespace terrakoop::lifting
