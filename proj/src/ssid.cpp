#include "terrakoop/ssid.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <json.hpp>

#include "terrakoop/errors.hpp"
#include "terrakoop/json_io.hpp"

namespace terrakoop::ssid {

using json = nlohmann::json;

MatrixXd build_hankel(const MatrixXd& seq, int l) {
  if (l < 1) throw ConfigError("build_hankel: depth must be >= 1");
  const Eigen::Index ch = seq.rows(), n1 = seq.cols();
  if (n1 < l + 1) throw ConfigError("build_hankel: sequence shorter than depth + 1");
  const Eigen::Index s = n1 - l + 1;
  MatrixXd H(l * ch, s);
  for (int i = 0; i < l; ++i) H.middleRows(i * ch, ch) = seq.middleCols(i, s);
  return H;
}

MatrixXd build_input_hankel(const MatrixXd& u, int l) {
  if (l < 2) throw ConfigError("build_input_hankel: depth must be >= 2");
  const Eigen::Index m = u.rows(), n1 = u.cols();
  if (n1 < l + 1) throw ConfigError("build_input_hankel: sequence shorter than depth + 1");
  const Eigen::Index s = n1 - l + 1;
  MatrixXd H((l - 1) * m, s);
  for (int i = 0; i < l - 1; ++i) H.middleRows(i * m, m) = u.middleCols(i, s);
  return H;
}

HankelPair hankel_pair(const IoRecord& rec, int l) {
  if (rec.u.cols() != rec.y.cols()) throw ConfigError("hankel_pair: u/y length mismatch");
  HankelPair h;
  h.Y = build_hankel(rec.y, l);
  h.U = build_input_hankel(rec.u, l);
  h.l = l;
  h.s = int(h.Y.cols());
  h.p = int(rec.y.rows());
  h.m = int(rec.u.rows());
  return h;
}

HankelPair mosaic(const std::vector<IoRecord>& recs, int l) {
  if (recs.empty()) throw ConfigError("mosaic: no records");
  std::vector<HankelPair> parts;
  Eigen::Index total = 0;
  for (const auto& r : recs) {
    parts.push_back(hankel_pair(r, l));
    total += parts.back().s;
  }
  HankelPair out;
  out.l = l;
  out.p = parts[0].p;
  out.m = parts[0].m;
  out.s = int(total);
  out.Y.resize(parts[0].Y.rows(), total);
  out.U.resize(parts[0].U.rows(), total);
  Eigen::Index c = 0;
  for (const auto& h : parts) {
    if (h.p != out.p || h.m != out.m) throw ConfigError("mosaic: channel counts differ");
    out.Y.middleCols(c, h.s) = h.Y;
    out.U.middleCols(c, h.s) = h.U;
    c += h.s;
  }
  return out;
}

namespace {

// Regularized (U U^T + lambda I)^-1 when the Gram matrix is ill-conditioned.
struct GramInverse {
  MatrixXd inv;
  bool regularized = false;
};

GramInverse gram_inverse(const MatrixXd& U, const ProjectionOptions& opts) {
  const Eigen::Index q = U.rows();
  MatrixXd G = MatrixXd::Zero(q, q);
  G.selfadjointView<Eigen::Lower>().rankUpdate(U);
  G = G.selfadjointView<Eigen::Lower>();
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(G);
  const double lmax = es.eigenvalues().maxCoeff();
  const double lmin = es.eigenvalues().minCoeff();
  GramInverse out;
  if (!(lmax > 0.0)) throw NumericalError("input Gram matrix is zero");
  if (!(lmin > 0.0) || lmax / lmin > opts.cond_limit) {
    if (!opts.regularize) throw NumericalError("input Hankel is rank deficient");
    const double lambda = 1e-10 * G.trace() / double(q);
    G.diagonal().array() += lambda;
    out.regularized = true;
  }
  out.inv = G.llt().solve(MatrixXd::Identity(q, q));
  return out;
}

bool all_zero(const MatrixXd& M) { return M.size() == 0 || M.cwiseAbs().maxCoeff() == 0.0; }

}  // namespace

MatrixXd project_orthogonal(const MatrixXd& Y, const MatrixXd& U, const ProjectionOptions& opts) {
  if (Y.cols() != U.cols()) throw ConfigError("project_orthogonal: column counts differ");
  if (all_zero(U)) return Y;
  const Eigen::Index q = U.rows();
  MatrixXd G = MatrixXd::Zero(q, q);
  G.selfadjointView<Eigen::Lower>().rankUpdate(U);
  G = G.selfadjointView<Eigen::Lower>();
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(G, Eigen::EigenvaluesOnly);
  const double lmax = es.eigenvalues().maxCoeff();
  const double lmin = es.eigenvalues().minCoeff();
  if (lmin > 0.0 && lmax / lmin <= opts.cond_limit) {
    // Well conditioned: residual of the least-squares fit of Y^T on U^T via QR.
    Eigen::HouseholderQR<MatrixXd> qr(U.transpose());
    MatrixXd Q = qr.householderQ() * MatrixXd::Identity(U.cols(), q);
    MatrixXd Yt = Y.transpose();
    Yt -= Q * (Q.transpose() * Yt);
    return Yt.transpose();
  }
  const GramInverse gi = gram_inverse(U, opts);
  return Y - (Y * U.transpose()) * gi.inv * U;
}

MatrixXd compressed_matrix(const MatrixXd& Y, const MatrixXd& U, const ProjectionOptions& opts) {
  const MatrixXd E = project_orthogonal(Y, U, opts);
  MatrixXd Xi = MatrixXd::Zero(Y.rows(), Y.rows());
  Xi.selfadjointView<Eigen::Lower>().rankUpdate(E);
  return Xi.selfadjointView<Eigen::Lower>();
}

Subspace subspace_from_xi(const MatrixXd& Xi, int r) {
  if (Xi.rows() != Xi.cols()) throw ConfigError("subspace_from_xi: Xi must be square");
  if (r < 1 || r > Xi.rows()) throw ConfigError("subspace_from_xi: order out of range");
  const MatrixXd S = 0.5 * (Xi + Xi.transpose());
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(S);
  const Eigen::Index n = S.rows();
  Subspace sub;
  sub.r = r;
  sub.singular.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    sub.singular[i] = std::sqrt(std::max(0.0, es.eigenvalues()[n - 1 - i]));
  }
  const double lmax = es.eigenvalues()[n - 1];
  int rank = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (lmax > 0.0 && es.eigenvalues()[n - 1 - i] > 1e-14 * lmax) ++rank;
  }
  if (r > rank) {
    throw NumericalError("order-too-high: requested order " + std::to_string(r) +
                         " exceeds numerical rank " + std::to_string(rank));
  }
  sub.Gamma.resize(n, r);
  for (int k = 0; k < r; ++k) {
    sub.Gamma.col(k) = es.eigenvectors().col(n - 1 - k) * std::sqrt(sub.singular[k]);
  }
  return sub;
}

Subspace batch_observability(const MatrixXd& Y, const MatrixXd& U, int r,
                             const ProjectionOptions& opts) {
  const MatrixXd E = project_orthogonal(Y, U, opts);
  if (all_zero(E)) throw NumericalError("batch_observability: projected data matrix is zero");
  Eigen::BDCSVD<MatrixXd> svd(E, Eigen::ComputeThinU);
  const VectorXd& sv = svd.singularValues();
  int rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    if (sv[i] > 1e-12 * sv[0]) ++rank;
  }
  if (r < 1 || r > rank) {
    throw NumericalError("order-too-high: requested order " + std::to_string(r) +
                         " exceeds numerical rank " + std::to_string(rank));
  }
  Subspace sub;
  sub.r = r;
  sub.singular = sv;
  sub.Gamma = svd.matrixU().leftCols(r) * sv.head(r).cwiseSqrt().asDiagonal();
  return sub;
}

int order_by_energy(const VectorXd& singular, double energy, int r_max) {
  const double total = singular.squaredNorm();
  if (!(total > 0.0)) throw NumericalError("order_by_energy: zero singular values");
  double acc = 0.0;
  int r = 0;
  for (Eigen::Index i = 0; i < singular.size(); ++i) {
    acc += singular[i] * singular[i];
    r = int(i) + 1;
    if (acc >= energy * total) break;
  }
  return std::max(1, std::min(r, r_max));
}

SsidAccumulator SsidAccumulator::from_record(const HankelPair& h, const ProjectionOptions& opts) {
  SsidAccumulator acc;
  acc.Xi_ = compressed_matrix(h.Y, h.U, opts);
  acc.P_ = gram_inverse(h.U, opts).inv;
  acc.YU_ = h.Y * h.U.transpose();
  acc.records_accepted = 1;
  return acc;
}

SsidAccumulator SsidAccumulator::fresh(int lp, int lm, double delta) {
  SsidAccumulator acc;
  acc.Xi_ = MatrixXd::Zero(lp, lp);
  acc.P_ = MatrixXd::Identity(lm, lm) / delta;
  acc.YU_ = MatrixXd::Zero(lp, lm);
  return acc;
}

void SsidAccumulator::update(const VectorXd& u, const VectorXd& y) {
  if (u.size() != P_.rows() || y.size() != Xi_.rows()) {
    throw ConfigError("SsidAccumulator::update: column dimensions do not match");
  }
  Pu_.noalias() = P_ * u;
  const double alpha = 1.0 / (1.0 + u.dot(Pu_));
  e_ = y;
  e_.noalias() -= YU_ * Pu_;
  if (!std::isfinite(alpha) || !e_.allFinite()) {
    throw NumericalError("SsidAccumulator::update: non-finite intermediate");
  }
  Xi_.noalias() += alpha * e_ * e_.transpose();
  P_.noalias() -= alpha * Pu_ * Pu_.transpose();
  YU_.noalias() += y * u.transpose();
}

void SsidAccumulator::absorb(const HankelPair& h) {
  for (int k = 0; k < h.s; ++k) update(h.U.col(k), h.Y.col(k));
}

void SsidAccumulator::refresh(int r) { sub_ = subspace_from_xi(Xi_, r); }

namespace {

MatrixXd orthonormal_basis(const MatrixXd& G) {
  Eigen::ColPivHouseholderQR<MatrixXd> qr(G);
  qr.setThreshold(1e-12);
  if (qr.rank() < G.cols()) throw NumericalError("grassmann_distance: rank-deficient basis");
  return qr.householderQ() * MatrixXd::Identity(G.rows(), G.cols());
}

}  // namespace

VectorXd principal_angles(const MatrixXd& G1, const MatrixXd& G2) {
  if (G1.rows() != G2.rows()) throw ConfigError("principal_angles: ambient dimensions differ");
  if (G1.cols() != G2.cols()) {
    throw ConfigError("principal_angles: subspaces of different dimension are not supported");
  }
  const MatrixXd Q1 = orthonormal_basis(G1);
  const MatrixXd Q2 = orthonormal_basis(G2);
  const MatrixXd M = Q1.transpose() * Q2;
  const VectorXd cosv = Eigen::JacobiSVD<MatrixXd>(M).singularValues();  // descending
  const VectorXd sinv = Eigen::JacobiSVD<MatrixXd>(Q2 - Q1 * M).singularValues();
  const Eigen::Index r = cosv.size();
  VectorXd theta(r);
  for (Eigen::Index k = 0; k < r; ++k) {
    const double c = std::clamp(cosv[k], 0.0, 1.0);
    // Small angles are resolved from the sines, large ones from the cosines.
    const double s = std::clamp(sinv[r - 1 - k], 0.0, 1.0);
    theta[k] = c > std::numbers::sqrt2 / 2 ? std::asin(s) : std::acos(c);
  }
  return theta;
}

double grassmann_distance(const MatrixXd& G1, const MatrixXd& G2) {
  return principal_angles(G1, G2).norm();
}

MatrixXd observability(const MatrixXd& A, const MatrixXd& C, int l) {
  const Eigen::Index p = C.rows(), r = A.rows();
  MatrixXd O(l * p, r);
  MatrixXd M = C;
  for (int k = 0; k < l; ++k) {
    O.middleRows(k * p, p) = M;
    M = M * A;
  }
  return O;
}

ShiftSolution extract_AC(const MatrixXd& Gamma, int p, int l) {
  if (l < 2) throw ConfigError("extract_AC: depth must be >= 2");
  if (Gamma.rows() != Eigen::Index(l) * p) throw ConfigError("extract_AC: Gamma has wrong rows");
  const Eigen::Index n = Eigen::Index(l - 1) * p;
  ShiftSolution out;
  out.C = Gamma.topRows(p);
  Eigen::JacobiSVD<MatrixXd> svd(Gamma.topRows(n), Eigen::ComputeThinU | Eigen::ComputeThinV);
  const VectorXd& sv = svd.singularValues();
  out.condition = sv[sv.size() - 1] > 0.0 ? sv[0] / sv[sv.size() - 1]
                                         : std::numeric_limits<double>::infinity();
  out.ill_conditioned = out.condition > 1e12;
  out.A = svd.solve(Gamma.bottomRows(n));
  return out;
}

namespace {

// Zero-padded shift: A = pinv(Gamma) [Gamma(p+1:lp); 0]. Its eigenvalues lie
// in the closed unit disc.
MatrixXd stable_shift(const MatrixXd& Gamma, int p) {
  const Eigen::Index n = Gamma.rows() - p;
  MatrixXd target = MatrixXd::Zero(Gamma.rows(), Gamma.cols());
  target.topRows(n) = Gamma.bottomRows(n);
  Eigen::JacobiSVD<MatrixXd> svd(Gamma, Eigen::ComputeThinU | Eigen::ComputeThinV);
  return svd.solve(target);
}

}  // namespace

std::optional<MatrixXd> clip_spectrum(const MatrixXd& A, double radius, double cond_limit) {
  Eigen::EigenSolver<MatrixXd> es(A, true);
  if (es.info() != Eigen::Success) return std::nullopt;
  const Eigen::MatrixXcd V = es.eigenvectors();
  Eigen::VectorXcd lam = es.eigenvalues();
  Eigen::JacobiSVD<Eigen::MatrixXcd> svd(V);
  const auto& sv = svd.singularValues();
  if (!(sv.minCoeff() > 0.0) || sv.maxCoeff() / sv.minCoeff() > cond_limit) return std::nullopt;
  for (Eigen::Index i = 0; i < lam.size(); ++i) {
    const double mod = std::abs(lam[i]);
    if (mod > radius) lam[i] *= radius / mod;
  }
  const Eigen::MatrixXcd Ac = V * lam.asDiagonal() * V.inverse();
  if (Ac.imag().norm() > 1e-9 * std::max(1.0, Ac.real().norm())) return std::nullopt;
  return MatrixXd(Ac.real());
}

namespace {

double spectral_radius_of(const MatrixXd& A) {
  if (A.size() == 0) return 0.0;
  Eigen::EigenSolver<MatrixXd> es(A, false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

// Phi_j maps vec(B) to the input-driven part of Hankel column j:
// block k = sum_{i<k} u_{j+i}^T (x) C A^(k-1-i).
class PhiRecursion {
 public:
  PhiRecursion(const MatrixXd& A, const MatrixXd& C, int l, int m) : l_(l), m_(m) {
    p_ = int(C.rows());
    r_ = int(A.rows());
    M_.resize(std::max(l - 1, 1));
    M_[0] = C;
    for (int q = 1; q < l - 1; ++q) M_[q] = M_[q - 1] * A;
    cur_ = MatrixXd::Zero(Eigen::Index(l) * p_, Eigen::Index(r_) * m_);
    next_ = cur_;
  }

  // Direct evaluation for the last column of a record.
  void start(const VectorXd& ucol) {
    cur_.setZero();
    for (int k = 1; k < l_; ++k) {
      for (int i = 0; i < k; ++i) {
        add_kron(cur_, k, ucol.segment(Eigen::Index(i) * m_, m_), k - 1 - i);
      }
    }
  }

  // Phi_j from Phi_{j+1}: shift blocks down by one and add u_j terms.
  void step_back(const VectorXd& u_first) {
    const Eigen::Index rows = Eigen::Index(l_ - 1) * p_;
    next_.topRows(p_).setZero();
    next_.bottomRows(rows) = cur_.topRows(rows);
    for (int k = 1; k < l_; ++k) add_kron(next_, k, u_first, k - 1);
    cur_.swap(next_);
  }

  const MatrixXd& phi() const { return cur_; }

 private:
  void add_kron(MatrixXd& Phi, int k, const VectorXd& u, int q) const {
    auto block = Phi.middleRows(Eigen::Index(k) * p_, p_);
    for (int c = 0; c < m_; ++c) {
      if (u[c] != 0.0) block.middleCols(Eigen::Index(c) * r_, r_) += u[c] * M_[q];
    }
  }

  int l_, m_, p_ = 0, r_ = 0;
  std::vector<MatrixXd> M_;
  MatrixXd cur_, next_;
};

}  // namespace

BResult estimate_B_Z0(const MatrixXd& A, const MatrixXd& C, const std::vector<HankelPair>& blocks,
                      const BOptions& opts) {
  if (blocks.empty()) throw ConfigError("estimate_B_Z0: no data");
  const int l = blocks[0].l, m = blocks[0].m, p = int(C.rows()), r = int(A.rows());
  if (A.cols() != r || C.cols() != r) throw ConfigError("estimate_B_Z0: A/C dimensions");
  for (const auto& h : blocks) {
    if (h.l != l || h.m != m || h.p != p) throw ConfigError("estimate_B_Z0: inconsistent blocks");
  }
  const int dim = r * m;
  const MatrixXd O = observability(A, C, l);
  Eigen::HouseholderQR<MatrixXd> oqr(O);
  const MatrixXd Q = oqr.householderQ() * MatrixXd::Identity(O.rows(), r);
  const MatrixXd R = Q.transpose() * O;

  // Reduced normal equations G b = g with objective b^T G b - 2 g^T b + c.
  MatrixXd G = MatrixXd::Zero(dim, dim);
  VectorXd g = VectorXd::Zero(dim);
  double c = 0.0;
  PhiRecursion rec(A, C, l, m);
  MatrixXd PPhi(O.rows(), dim);
  VectorXd Py(O.rows());
  for (const auto& h : blocks) {
    for (int j = h.s - 1; j >= 0; --j) {
      if (j == h.s - 1) rec.start(h.U.col(j));
      else rec.step_back(h.U.col(j).head(m));
      PPhi = rec.phi();
      PPhi.noalias() -= Q * (Q.transpose() * rec.phi());
      Py = h.Y.col(j);
      Py.noalias() -= Q * (Q.transpose() * h.Y.col(j));
      G.selfadjointView<Eigen::Lower>().rankUpdate(PPhi.transpose());
      g.noalias() += PPhi.transpose() * h.Y.col(j);
      c += Py.squaredNorm();
    }
  }
  G = G.selfadjointView<Eigen::Lower>();

  // Jacobi scaling; a zero or numerically singular scaled matrix means the
  // inputs do not excite B.
  const VectorXd d = G.diagonal();
  if (!(d.minCoeff() > 0.0)) {
    throw NumericalError("insufficient-input-excitation: an input channel never excites B");
  }
  const VectorXd dinv = d.cwiseSqrt().cwiseInverse();
  const MatrixXd S = dinv.asDiagonal() * G * dinv.asDiagonal();
  const VectorXd gs = dinv.asDiagonal() * g;
  {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(S, Eigen::EigenvaluesOnly);
    if (!(es.eigenvalues().minCoeff() > 1e-14 * es.eigenvalues().maxCoeff())) {
      throw NumericalError("insufficient-input-excitation: normal matrix is singular");
    }
  }

  BResult res;
  res.objective_zero = c;
  VectorXd x = VectorXd::Zero(dim);  // scaled unknowns, b = dinv .* x
  if (opts.solver == BSolver::exact) {
    x = S.llt().solve(gs);
    res.iterations = 1;
  } else {
    // Conjugate-gradient iterations with exact line search on the scaled
    // quadratic; each step moves along a conjugated negative gradient.
    const int cap = opts.max_iterations > 0 ? opts.max_iterations : 20 * dim;
    VectorXd resid = gs;  // -(1/2) gradient at x = 0
    VectorXd dir = resid;
    double rr = resid.squaredNorm();
    const double g_norm = gs.norm();
    double f = c;
    int it = 0;
    for (; it < cap; ++it) {
      if (rr <= 0.0 || std::sqrt(rr) <= 1e-15 * g_norm) break;
      const VectorXd Sd = S * dir;
      const double curv = dir.dot(Sd);
      if (!(curv > 0.0) || !std::isfinite(curv)) {
        throw NumericalError("estimate_B_Z0: gradient iterations diverged");
      }
      const double step = rr / curv;
      x += step * dir;
      resid -= step * Sd;
      const double decrease = step * rr;
      f -= decrease;
      const double rr_new = resid.squaredNorm();
      if (decrease <= opts.rel_tol * std::max(f, 0.0)) {
        ++it;
        break;
      }
      // Periodic restart limits the loss of conjugacy.
      const double beta = (it + 1) % dim == 0 ? 0.0 : rr_new / rr;
      if (beta == 0.0) resid = gs - S * x;
      dir = resid + beta * dir;
      rr = beta == 0.0 ? resid.squaredNorm() : rr_new;
    }
    res.iterations = it;
  }
  const VectorXd b = dinv.cwiseProduct(x);
  res.objective = std::max(0.0, b.dot(G * b) - 2.0 * g.dot(b) + c);
  if (res.objective > res.objective_zero * (1.0 + 1e-12) + 1e-300) {
    throw NumericalError("estimate_B_Z0: objective increased above the zero initialization");
  }
  res.B = Eigen::Map<const MatrixXd>(b.data(), r, m);

  if (opts.compute_latent) {
    int total = 0;
    for (const auto& h : blocks) total += h.s;
    res.latent.Z0.resize(r, total);
    int offset = 0;
    VectorXd resid_col(O.rows());
    for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
      const auto& h = blocks[bi];
      res.latent.ranges.push_back({int(bi), offset, h.s});
      for (int j = h.s - 1; j >= 0; --j) {
        if (j == h.s - 1) rec.start(h.U.col(j));
        else rec.step_back(h.U.col(j).head(m));
        resid_col = h.Y.col(j);
        resid_col.noalias() -= rec.phi() * b;
        res.latent.Z0.col(offset + j) =
            R.triangularView<Eigen::Upper>().solve(Q.transpose() * resid_col);
      }
      offset += h.s;
    }
  }
  return res;
}

double KoopmanModel::spectral_radius() const { return spectral_radius_of(A); }

void KoopmanModel::validate() const {
  auto require = [](bool ok, const char* msg) {
    if (!ok) throw ConfigError(std::string("model: ") + msg);
  };
  require(r >= 1 && p >= 1 && m >= 1, "dimensions must be >= 1");
  require(A.rows() == r && A.cols() == r, "A must be r x r");
  require(B.rows() == r && B.cols() == m, "B must be r x m");
  require(C.rows() == p && C.cols() == r, "C must be p x r");
  require(dt > 0.0, "dt must be > 0");
  require(A.allFinite() && B.allFinite() && C.allFinite(), "non-finite entries");
}

namespace {

json matrix_rows(const MatrixXd& M) {
  json a = json::array();
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    for (Eigen::Index j = 0; j < M.cols(); ++j) a.push_back(M(i, j));
  }
  return a;
}

MatrixXd matrix_from(const json& a, int rows, int cols, const char* name) {
  if (!a.is_array() || a.size() != std::size_t(rows) * std::size_t(cols)) {
    throw ConfigError(std::string("model: ") + name + " has wrong size");
  }
  MatrixXd M(rows, cols);
  std::size_t k = 0;
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) M(i, j) = a.at(k++).get<double>();
  }
  return M;
}

}  // namespace

std::string model_to_json(const KoopmanModel& m) {
  json log = json::array();
  for (const auto& e : m.acceptance_log) {
    log.push_back(json{{"record", e.record}, {"G", e.G}, {"accepted", e.accepted}});
  }
  json j{{"format_version", m.format_version},
         {"r", m.r},
         {"p", m.p},
         {"m", m.m},
         {"dt", m.dt},
         {"A", matrix_rows(m.A)},
         {"B", matrix_rows(m.B)},
         {"C", matrix_rows(m.C)},
         {"soil", m.soil},
         {"l", m.l},
         {"epsilon", m.epsilon},
         {"output_labels", m.output_labels},
         {"input_labels", m.input_labels},
         {"ill_conditioned", m.ill_conditioned},
         {"stabilized", m.stabilized},
         {"acceptance_log", log}};
  return j.dump(2) + "\n";
}

KoopmanModel model_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
  const std::string w = "model";
  json_io::check_keys(j, {"format_version", "r", "p", "m", "dt", "A", "B", "C", "soil", "l",
                          "epsilon", "output_labels", "input_labels", "ill_conditioned",
                          "stabilized", "acceptance_log"},
                      w);
  KoopmanModel m;
  json_io::read_opt(j, "format_version", m.format_version, w);
  if (m.format_version != 1) throw ConfigError("model: unsupported format_version");
  json_io::read_opt(j, "r", m.r, w);
  json_io::read_opt(j, "p", m.p, w);
  json_io::read_opt(j, "m", m.m, w);
  json_io::read_opt(j, "dt", m.dt, w);
  json_io::read_opt(j, "soil", m.soil, w);
  json_io::read_opt(j, "l", m.l, w);
  json_io::read_opt(j, "epsilon", m.epsilon, w);
  json_io::read_opt(j, "output_labels", m.output_labels, w);
  json_io::read_opt(j, "input_labels", m.input_labels, w);
  json_io::read_opt(j, "ill_conditioned", m.ill_conditioned, w);
  json_io::read_opt(j, "stabilized", m.stabilized, w);
  if (m.r < 1 || m.p < 1 || m.m < 1) throw ConfigError("model: dimensions must be >= 1");
  try {
    m.A = matrix_from(j.at("A"), m.r, m.r, "A");
    m.B = matrix_from(j.at("B"), m.r, m.m, "B");
    m.C = matrix_from(j.at("C"), m.p, m.r, "C");
    if (j.contains("acceptance_log")) {
      for (const auto& e : j.at("acceptance_log")) {
        json_io::check_keys(e, {"record", "G", "accepted"}, "model.acceptance_log[]");
        m.acceptance_log.push_back(
            {e.at("record").get<int>(), e.at("G").get<double>(), e.at("accepted").get<bool>()});
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
  m.validate();
  return m;
}

void save_model(const std::string& path, const KoopmanModel& m) {
  json_io::write_file(path, model_to_json(m));
}

KoopmanModel load_model(const std::string& path) {
  return model_from_json(json_io::read_file(path));
}

double IdentifyConfig::epsilon_for(int r) const {
  if (epsilon) return *epsilon;
  return 0.05 * std::sqrt(double(r)) * std::numbers::pi / 2.0;
}

Accumulation accumulate(const std::vector<IoRecord>& records, const IdentifyConfig& cfg) {
  if (cfg.l < 2) throw ConfigError("identify: depth l must be >= 2");
  if (cfg.r < 0 || cfg.r_max < 1) throw ConfigError("identify: invalid order settings");
  const int r_bound = cfg.r > 0 ? cfg.r : cfg.r_max;

  auto eligible = [&](const IoRecord& rec) {
    const Eigen::Index s = rec.y.cols() - cfg.l + 1;
    return s > Eigen::Index(cfg.l) * rec.u.rows() + r_bound;
  };

  Accumulation out;
  std::optional<SsidAccumulator> acc;
  int r = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!eligible(records[i])) continue;
    const HankelPair h = hankel_pair(records[i], cfg.l);
    if (!acc) {
      acc = SsidAccumulator::from_record(h, cfg.projection);
      const Subspace probe = subspace_from_xi(acc->Xi(), 1);
      r = cfg.r > 0 ? cfg.r : order_by_energy(probe.singular, cfg.energy, cfg.r_max);
      acc->refresh(r);
      out.accepted.push_back(int(i));
      out.log.push_back({int(i), 0.0, true});
      continue;
    }
    const MatrixXd Xc = compressed_matrix(h.Y, h.U, cfg.projection);
    double G;
    try {
      G = grassmann_distance(acc->subspace().Gamma, subspace_from_xi(Xc, r).Gamma);
    } catch (const NumericalError&) {
      // The record alone does not span an r-dimensional subspace.
      out.log.push_back({int(i), -1.0, false});
      ++acc->records_rejected;
      continue;
    }
    const double eps = cfg.epsilon_for(r);
    const bool accept = eps <= 0.0 || G > eps;
    out.log.push_back({int(i), G, accept});
    if (!accept) {
      ++acc->records_rejected;
      continue;
    }
    acc->absorb(h);
    ++acc->records_accepted;
    out.accepted.push_back(int(i));
    if (cfg.r == 0) {
      r = order_by_energy(subspace_from_xi(acc->Xi(), 1).singular, cfg.energy, cfg.r_max);
    }
    acc->refresh(r);
  }
  if (!acc) throw ConfigError("identify: no record is long enough for depth l");
  out.Xi = acc->Xi();
  out.r = r;
  out.singular = acc->subspace().singular;
  out.all_rejected = out.accepted.size() == 1 && out.log.size() > 1;
  return out;
}

Identification realize(const Accumulation& acc, const std::vector<IoRecord>& records, int r,
                       const IdentifyConfig& cfg) {
  if (r <= 0) r = acc.r;
  const int p = int(records.at(std::size_t(acc.accepted.at(0))).y.rows());
  const Subspace sub = subspace_from_xi(acc.Xi, r);
  ShiftSolution sh = extract_AC(sub.Gamma, p, cfg.l);

  Identification id;
  id.acc = acc;
  KoopmanModel& model = id.model;
  model.A = sh.A;
  model.C = sh.C;
  model.ill_conditioned = sh.ill_conditioned;
  if (cfg.stabilize && spectral_radius_of(model.A) > 1.0 + 1e-6) {
    // Pull only the offending modes back to the unit circle. A basis too
    // ill-conditioned to trust falls back to the zero-padded shift.
    const auto clipped = clip_spectrum(model.A, 1.0);
    if (clipped && spectral_radius_of(*clipped) <= 1.0 + 1e-6) model.A = *clipped;
    else model.A = stable_shift(sub.Gamma, p);
    model.stabilized = true;
  }

  std::vector<HankelPair> blocks;
  blocks.reserve(acc.accepted.size());
  for (int i : acc.accepted) blocks.push_back(hankel_pair(records[std::size_t(i)], cfg.l));
  id.b = estimate_B_Z0(model.A, model.C, blocks, cfg.b);
  model.B = id.b.B;
  id.latent = id.b.latent;
  for (auto& range : id.latent.ranges) range.record = acc.accepted[std::size_t(range.record)];

  model.r = r;
  model.p = p;
  model.m = int(blocks[0].m);
  model.dt = cfg.dt;
  model.l = cfg.l;
  model.epsilon = cfg.epsilon_for(r);
  model.soil = cfg.soil;
  model.acceptance_log = acc.log;
  model.validate();
  return id;
}

Identification identify(const std::vector<IoRecord>& records, const IdentifyConfig& cfg) {
  return realize(accumulate(records, cfg), records, 0, cfg);
}

std::vector<MatrixXd> markov_parameters(const MatrixXd& A, const MatrixXd& B, const MatrixXd& C,
                                        int count) {
  std::vector<MatrixXd> out;
  MatrixXd X = B;
  for (int k = 0; k < count; ++k) {
    out.push_back(C * X);
    X = A * X;
  }
  return out;
}

double markov_relative_error(const std::vector<MatrixXd>& M1, const std::vector<MatrixXd>& M2) {
  if (M1.size() != M2.size() || M1.empty()) throw ConfigError("markov_relative_error: sizes");
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < M1.size(); ++k) {
    num = std::max(num, (M1[k] - M2[k]).norm());
    den = std::max(den, M2[k].norm());
  }
  return den > 0.0 ? num / den : num;
}

}  // namespace terrakoop::ssid
