#include "terrakoop/lifting.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include <json.hpp>

#include "terrakoop/dataset.hpp"
#include "terrakoop/errors.hpp"
#include "terrakoop/json_io.hpp"
#include "terrakoop/optim.hpp"

namespace terrakoop::lifting {

using json = nlohmann::json;

namespace {

MatrixXd se_kernel(const MatrixXd& A, const MatrixXd& B, const VectorXd& ell, double sf2) {
  const VectorXd inv = ell.cwiseInverse();
  const MatrixXd As = inv.asDiagonal() * A;
  const MatrixXd Bs = inv.asDiagonal() * B;
  MatrixXd K = -2.0 * As.transpose() * Bs;
  K.colwise() += As.colwise().squaredNorm().transpose();
  K.rowwise() += Bs.colwise().squaredNorm();
  return sf2 * (-0.5 * K.cwiseMax(0.0)).array().exp().matrix();
}

// Cholesky of K + (sn2 + jitter) I, growing the jitter if the factorization
// fails in floating point.
Eigen::LLT<MatrixXd> factor(MatrixXd K, double sn2, double jitter, double scale) {
  double extra = sn2 + jitter;
  for (int attempt = 0; attempt < 8; ++attempt) {
    MatrixXd Ky = K;
    Ky.diagonal().array() += extra;
    Eigen::LLT<MatrixXd> llt(Ky);
    if (llt.info() == Eigen::Success) return llt;
    extra = std::max(extra * 10.0, 1e-10 * scale);
  }
  throw NumericalError("lifting: kernel matrix is not positive definite");
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + long(mid), v.end());
  return v[mid];
}

std::vector<Eigen::Index> stride_select(Eigen::Index n, int cap) {
  std::vector<Eigen::Index> idx;
  const Eigen::Index stride = cap > 0 && n > cap ? (n + cap - 1) / cap : 1;
  for (Eigen::Index i = 0; i < n; i += stride) idx.push_back(i);
  return idx;
}

MatrixXd take_cols(const MatrixXd& M, const std::vector<Eigen::Index>& idx) {
  MatrixXd out(M.rows(), Eigen::Index(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) out.col(Eigen::Index(k)) = M.col(idx[k]);
  return out;
}

}  // namespace

double neg_log_marginal(const MatrixXd& X, const VectorXd& z, const VectorXd& theta,
                        double jitter, VectorXd* grad) {
  const Eigen::Index p = X.rows(), n = X.cols();
  const VectorXd ell = theta.head(p).array().exp();
  const double sf2 = std::exp(theta[p]);
  const double sn2 = std::exp(theta[p + 1]);
  const MatrixXd K = se_kernel(X, X, ell, sf2);
  MatrixXd Ky = K;
  Ky.diagonal().array() += sn2 + jitter;
  Eigen::LLT<MatrixXd> llt(Ky);
  if (llt.info() != Eigen::Success) return std::numeric_limits<double>::infinity();
  const VectorXd alpha = llt.solve(z);
  const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  const double f = 0.5 * z.dot(alpha) + 0.5 * logdet +
                   0.5 * double(n) * std::log(2.0 * std::numbers::pi);
  if (grad) {
    grad->resize(p + 2);
    MatrixXd W = llt.solve(MatrixXd::Identity(n, n));
    W -= alpha * alpha.transpose();
    const MatrixXd WK = W.cwiseProduct(K);
    for (Eigen::Index d = 0; d < p; ++d) {
      const VectorXd xd = X.row(d).transpose() / ell[d];
      MatrixXd D2 = -2.0 * xd * xd.transpose();
      D2.colwise() += xd.cwiseAbs2();
      D2.rowwise() += xd.cwiseAbs2().transpose();
      (*grad)[d] = 0.5 * WK.cwiseProduct(D2).sum();
    }
    (*grad)[p] = 0.5 * WK.sum();
    (*grad)[p + 1] = 0.5 * sn2 * W.trace();
  }
  return f;
}

VectorXd LiftingMap::lift(const VectorXd& y) const {
  if (y.size() != p) throw ConfigError("lift: output dimension mismatch");
  if (!y.allFinite()) throw ConfigError("lift: non-finite output");
  VectorXd z(r);
  for (int k = 0; k < r; ++k) {
    const Coordinate& c = coords[std::size_t(k)];
    const VectorXd inv = c.length_scales.cwiseInverse();
    const MatrixXd D = inv.asDiagonal() * (X.colwise() - y);
    const VectorXd kv =
        c.signal_variance * (-0.5 * D.colwise().squaredNorm().transpose()).array().exp().matrix();
    z[k] = kv.dot(c.alpha);
  }
  return z;
}

MatrixXd LiftingMap::lift_all(const MatrixXd& Y) const {
  MatrixXd Z(r, Y.cols());
  for (Eigen::Index j = 0; j < Y.cols(); ++j) Z.col(j) = lift(Y.col(j));
  return Z;
}

void LiftingMap::validate() const {
  if (p < 1 || r < 1) throw ConfigError("lifting: dimensions must be >= 1");
  if (X.rows() != p || X.cols() < 1) throw ConfigError("lifting: training inputs have wrong shape");
  if (coords.size() != std::size_t(r)) throw ConfigError("lifting: regressor count differs from r");
  for (const auto& c : coords) {
    if (c.length_scales.size() != p || (c.length_scales.array() <= 0.0).any()) {
      throw ConfigError("lifting: length scales must be positive, one per input");
    }
    if (c.alpha.size() != X.cols()) throw ConfigError("lifting: dual weight count mismatch");
    if (!(c.signal_variance > 0.0) || !(c.noise_variance >= 0.0)) {
      throw ConfigError("lifting: variances out of range");
    }
  }
}

LiftingMap fit_lifting(const MatrixXd& Y, const MatrixXd& Z, const LiftingConfig& cfg) {
  const Eigen::Index p = Y.rows(), N = Y.cols(), r = Z.rows();
  if (Z.cols() != N) throw ConfigError("fit_lifting: output and latent counts differ");
  if (p < 1 || r < 1) throw ConfigError("fit_lifting: empty dimensions");
  if (N < 10 * p) throw ConfigError("fit_lifting: need at least 10 p training pairs");
  if (!Y.allFinite() || !Z.allFinite()) throw ConfigError("fit_lifting: non-finite data");
  for (Eigen::Index d = 0; d < p; ++d) {
    const double mean = Y.row(d).mean();
    if ((Y.row(d).array() - mean).abs().maxCoeff() == 0.0) {
      const std::string name = std::size_t(d) < cfg.input_labels.size()
                                   ? cfg.input_labels[std::size_t(d)]
                                   : std::to_string(d);
      throw ConfigError("fit_lifting: input channel '" + name + "' has zero variance");
    }
  }

  // Canonical (lexicographic) pair order.
  std::vector<Eigen::Index> order(static_cast<std::size_t>(N));
  std::iota(order.begin(), order.end(), Eigen::Index(0));
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    for (Eigen::Index d = 0; d < p; ++d) {
      if (Y(d, a) != Y(d, b)) return Y(d, a) < Y(d, b);
    }
    for (Eigen::Index k = 0; k < r; ++k) {
      if (Z(k, a) != Z(k, b)) return Z(k, a) < Z(k, b);
    }
    return false;
  });
  const MatrixXd Ys = take_cols(Y, order), Zs = take_cols(Z, order);
  const auto train_idx = stride_select(N, cfg.max_pairs);
  const MatrixXd X = take_cols(Ys, train_idx);
  const MatrixXd Zt = take_cols(Zs, train_idx);
  const auto ml_idx = stride_select(X.cols(), cfg.ml_subsample);
  const MatrixXd Xml = take_cols(X, ml_idx);

  // Median of pairwise distances per input dimension.
  VectorXd ell0(p);
  for (Eigen::Index d = 0; d < p; ++d) {
    std::vector<double> dist;
    for (Eigen::Index i = 0; i < Xml.cols(); ++i) {
      for (Eigen::Index j = i + 1; j < Xml.cols(); ++j) {
        dist.push_back(std::abs(Xml(d, i) - Xml(d, j)));
      }
    }
    double m = median(dist);
    if (!(m > 0.0)) {
      const double mean = X.row(d).mean();
      m = std::sqrt((X.row(d).array() - mean).square().mean());
    }
    ell0[d] = m;
  }

  LiftingMap map;
  map.p = int(p);
  map.r = int(r);
  map.input_labels = cfg.input_labels;
  map.X = X;
  map.jitter = cfg.jitter;
  map.coords.resize(std::size_t(r));
  map.training_rmse.resize(r);

  dataset::parallel_for(int(r), cfg.workers, [&](int k) {
    const VectorXd z = Zt.row(k).transpose();
    const double ms = z.squaredNorm() / double(z.size());
    const double sf2_0 = ms > 0.0 ? ms : 1.0;
    const double sn2_0 = cfg.noise_variance ? *cfg.noise_variance : 1e-4 * sf2_0;
    VectorXd theta(p + 2);
    theta.head(p) = ell0.array().log();
    theta[p] = std::log(sf2_0);
    theta[p + 1] = std::log(std::max(sn2_0, 1e-300));
    if (cfg.hyper == Hyper::marginal_likelihood && ms > 0.0) {
      VectorXd lo(p + 2), hi(p + 2);
      lo.head(p) = theta.head(p).array() - std::log(1e3);
      hi.head(p) = theta.head(p).array() + std::log(1e3);
      lo[p] = theta[p] - std::log(1e4);
      hi[p] = theta[p] + std::log(1e4);
      if (cfg.noise_variance) {
        lo[p + 1] = hi[p + 1] = theta[p + 1];
      } else {
        lo[p + 1] = std::log(1e-10 * sf2_0);
        hi[p + 1] = std::log(sf2_0);
      }
      const VectorXd zml = take_cols(Zt.row(k), ml_idx).transpose();
      optim::BoxOptions bo;
      bo.max_iterations = cfg.ml_iterations;
      bo.f_rel_tol = 1e-10;
      bo.pg_tol = 1e-5;
      // Rejects steps into a non-factorizable region by reporting a large value.
      const auto obj = [&](const VectorXd& th, VectorXd& g) {
        const double f = neg_log_marginal(Xml, zml, th, cfg.jitter, &g);
        if (!std::isfinite(f)) {
          g.setZero();
          return 1e300;
        }
        return f;
      };
      theta = optim::minimize_box(obj, theta, lo, hi, bo).x;
    }
    Coordinate& c = map.coords[std::size_t(k)];
    c.length_scales = theta.head(p).array().exp();
    c.signal_variance = std::exp(theta[p]);
    c.noise_variance = cfg.noise_variance ? *cfg.noise_variance : std::exp(theta[p + 1]);
    const MatrixXd K = se_kernel(X, X, c.length_scales, c.signal_variance);
    const auto llt = factor(K, c.noise_variance, cfg.jitter, c.signal_variance);
    c.alpha = llt.solve(z);
    const VectorXd pred = K * c.alpha;
    map.training_rmse[k] = std::sqrt((pred - z).squaredNorm() / double(z.size()));
  });
  return map;
}

namespace {

std::vector<double> to_vec(const VectorXd& v) { return {v.data(), v.data() + v.size()}; }

VectorXd vec_from(const json& a) {
  const auto v = a.get<std::vector<double>>();
  return Eigen::Map<const VectorXd>(v.data(), Eigen::Index(v.size()));
}

}  // namespace

std::string lifting_to_json(const LiftingMap& m) {
  json coords = json::array();
  for (const auto& c : m.coords) {
    coords.push_back(json{{"length_scales", to_vec(c.length_scales)},
                          {"signal_variance", c.signal_variance},
                          {"noise_variance", c.noise_variance},
                          {"alpha", to_vec(c.alpha)}});
  }
  json X = json::array();
  for (Eigen::Index j = 0; j < m.X.cols(); ++j) {
    X.push_back(to_vec(m.X.col(j)));
  }
  json j{{"format_version", m.format_version},
         {"p", m.p},
         {"r", m.r},
         {"input_labels", m.input_labels},
         {"jitter", m.jitter},
         {"training_inputs", X},
         {"coordinates", coords},
         {"training_rmse", to_vec(m.training_rmse)}};
  return j.dump(1) + "\n";
}

LiftingMap lifting_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("lifting: ") + e.what());
  }
  const std::string w = "lifting";
  json_io::check_keys(j, {"format_version", "p", "r", "input_labels", "jitter", "training_inputs",
                          "coordinates", "training_rmse"},
                      w);
  LiftingMap m;
  json_io::read_opt(j, "format_version", m.format_version, w);
  if (m.format_version != 1) throw ConfigError("lifting: unsupported format_version");
  json_io::read_opt(j, "p", m.p, w);
  json_io::read_opt(j, "r", m.r, w);
  json_io::read_opt(j, "input_labels", m.input_labels, w);
  json_io::read_opt(j, "jitter", m.jitter, w);
  try {
    const json& X = j.at("training_inputs");
    m.X.resize(m.p, Eigen::Index(X.size()));
    for (std::size_t c = 0; c < X.size(); ++c) {
      const VectorXd col = vec_from(X[c]);
      if (col.size() != m.p) throw ConfigError("lifting: training input has wrong length");
      m.X.col(Eigen::Index(c)) = col;
    }
    for (const auto& cj : j.at("coordinates")) {
      json_io::check_keys(cj, {"length_scales", "signal_variance", "noise_variance", "alpha"},
                          "lifting.coordinates[]");
      Coordinate c;
      c.length_scales = vec_from(cj.at("length_scales"));
      c.signal_variance = cj.at("signal_variance").get<double>();
      c.noise_variance = cj.at("noise_variance").get<double>();
      c.alpha = vec_from(cj.at("alpha"));
      m.coords.push_back(std::move(c));
    }
    if (j.contains("training_rmse")) m.training_rmse = vec_from(j.at("training_rmse"));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("lifting: ") + e.what());
  }
  m.validate();
  return m;
}

void save_lifting(const std::string& path, const LiftingMap& m) {
  json_io::write_file(path, lifting_to_json(m));
}

LiftingMap load_lifting(const std::string& path) {
  return lifting_from_json(json_io::read_file(path));
}

}  // namespace terrakoop::lifting
