#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace terrakoop::ssid {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// One experiment: u is m x (n+1), y is p x (n+1), sampled on a common grid.
/// u column t holds the input applied on [t, t+1).
struct IoRecord {
  MatrixXd u;
  MatrixXd y;
};

/// Block-Hankel of depth l over a channels x (n+1) sequence:
/// block (i, j) = seq column i + j, giving l*channels rows and n-l+1 columns.
MatrixXd build_hankel(const MatrixXd& seq, int l);

/// Input block-Hankel with l-1 block rows: column j stacks u_j .. u_{j+l-2},
/// the inputs that act between y_j and y_{j+l-1}. Same column count as the
/// output Hankel.
MatrixXd build_input_hankel(const MatrixXd& u, int l);

struct HankelPair {
  MatrixXd Y;  // lp x s
  MatrixXd U;  // (l-1)m x s
  int l = 0, s = 0, p = 0, m = 0;
};

HankelPair hankel_pair(const IoRecord& rec, int l);
/// Horizontal concatenation of per-record Hankel pairs.
HankelPair mosaic(const std::vector<IoRecord>& recs, int l);

struct ProjectionOptions {
  bool regularize = true;
  double cond_limit = 1e12;
};

/// Y Pi_perp(U), the component of Y's rows orthogonal to U's row space.
MatrixXd project_orthogonal(const MatrixXd& Y, const MatrixXd& U,
                            const ProjectionOptions& opts = {});

/// Xi = Y Pi_perp(U) Y^T.
MatrixXd compressed_matrix(const MatrixXd& Y, const MatrixXd& U,
                           const ProjectionOptions& opts = {});

struct Subspace {
  MatrixXd Gamma;      // lp x r, Q_r Sigma_r^(1/2)
  VectorXd singular;   // singular values of Y Pi_perp, descending
  int r = 0;
};

/// Dominant r-dimensional subspace of a compressed matrix. Throws
/// NumericalError when r exceeds the numerical rank.
Subspace subspace_from_xi(const MatrixXd& Xi, int r);

/// SVD route on the projected data matrix.
Subspace batch_observability(const MatrixXd& Y, const MatrixXd& U, int r,
                             const ProjectionOptions& opts = {});

/// Smallest r with sum_{i<=r} s_i^2 / sum s_i^2 >= energy, capped at r_max.
int order_by_energy(const VectorXd& singular, double energy, int r_max);

/// Recursion state for the compressed data matrix.
class SsidAccumulator {
 public:
  /// Initialization from one record: Xi = Y Pi Y^T, P = (U U^T)^-1, YU = Y U^T.
  static SsidAccumulator from_record(const HankelPair& h, const ProjectionOptions& opts = {});
  /// Start with no data: Xi = 0, YU = 0, P = I / delta.
  static SsidAccumulator fresh(int lp, int lm, double delta = 1e-8);

  /// One column: alpha = 1/(1 + u^T P u), e = y - YU P u, Xi += alpha e e^T,
  /// P -= alpha P u u^T P, YU += y u^T.
  void update(const VectorXd& u, const VectorXd& y);
  /// Streams every column of h through update().
  void absorb(const HankelPair& h);

  const MatrixXd& Xi() const { return Xi_; }
  const MatrixXd& P() const { return P_; }
  const MatrixXd& YU() const { return YU_; }

  const Subspace& subspace() const { return sub_; }
  /// Recomputes Gamma from the current Xi.
  void refresh(int r);

  int records_accepted = 0;
  int records_rejected = 0;

 private:
  MatrixXd Xi_, P_, YU_;
  Subspace sub_;
  VectorXd Pu_, e_;
};

/// Root-sum-square of principal angles between the column spans. Bases are
/// orthonormalized internally; equal column counts are required.
double grassmann_distance(const MatrixXd& G1, const MatrixXd& G2);

/// Principal angles, ascending.
VectorXd principal_angles(const MatrixXd& G1, const MatrixXd& G2);

struct ShiftSolution {
  MatrixXd A, C;
  double condition = 0.0;
  bool ill_conditioned = false;  // condition > 1e12
};

/// C = first p rows; A = pinv(Gamma without last p rows) * Gamma without first p rows.
ShiftSolution extract_AC(const MatrixXd& Gamma, int p, int l);

/// A with every eigenvalue of modulus above `radius` scaled back onto it,
/// other modes untouched. Empty when the eigenvector basis is too
/// ill-conditioned for the reconstruction to be trusted.
std::optional<MatrixXd> clip_spectrum(const MatrixXd& A, double radius,
                                      double cond_limit = 1e8);

/// Extended observability matrix [C; CA; ...; CA^(l-1)].
MatrixXd observability(const MatrixXd& A, const MatrixXd& C, int l);

enum class BSolver { gradient, exact };

struct BOptions {
  BSolver solver = BSolver::gradient;
  double rel_tol = 1e-10;   // relative objective decrease
  int max_iterations = 0;   // 0: 20 * r * m
  bool compute_latent = true;
};

struct ColumnRange {
  int record = 0;   // index into the record list passed in
  int first = 0;    // first column in the latent matrix
  int count = 0;
};

struct LatentRealization {
  MatrixXd Z0;  // r x (total columns); column j is the latent state at its column's start
  std::vector<ColumnRange> ranges;
};

struct BResult {
  MatrixXd B;
  LatentRealization latent;
  double objective = 0.0;       // ||Y - Gamma Z0 - H(B) U||^2 at the solution
  double objective_zero = 0.0;  // same with B = 0
  int iterations = 0;
};

/// Joint least squares over B and the per-column initial states with D = 0.
/// Z0 is eliminated exactly, leaving a quadratic in B. `blocks` are per-record
/// Hankel pairs (their concatenation is the mosaic). Throws NumericalError
/// "insufficient-input-excitation" when the reduced normal matrix is singular.
BResult estimate_B_Z0(const MatrixXd& A, const MatrixXd& C, const std::vector<HankelPair>& blocks,
                      const BOptions& opts = {});

struct KoopmanModel {
  int format_version = 1;
  MatrixXd A, B, C;
  int r = 0, p = 0, m = 0;
  double dt = 0.01;
  int l = 0;
  double epsilon = 0.0;
  std::string soil;
  std::vector<std::string> output_labels{"u", "v", "psi_dot"};
  std::vector<std::string> input_labels{"delta", "tau"};
  bool ill_conditioned = false;
  bool stabilized = false;
  struct LogEntry {
    int record = 0;
    double G = 0.0;
    bool accepted = false;
  };
  std::vector<LogEntry> acceptance_log;

  double spectral_radius() const;
  void validate() const;
};

std::string model_to_json(const KoopmanModel& m);
KoopmanModel model_from_json(const std::string& text);
void save_model(const std::string& path, const KoopmanModel& m);
KoopmanModel load_model(const std::string& path);

struct IdentifyConfig {
  int l = 40;
  int r = 0;          // 0 selects by singular energy
  int r_max = 40;
  double energy = 0.9999;
  std::optional<double> epsilon;  // default 0.05 sqrt(r) pi/2; <= 0 accepts everything
  double dt = 0.01;
  ProjectionOptions projection;
  BOptions b;
  /// If the shift solve gives eigenvalues outside the unit circle, clip their
  /// moduli to 1 (zero-padded shift when the eigenbasis is ill-conditioned).
  bool stabilize = true;
  std::string soil;

  double epsilon_for(int r) const;
};

/// Compressed-matrix stream with Grassmannian data selection.
struct Accumulation {
  MatrixXd Xi;
  std::vector<int> accepted;  // record indices, in stream order
  std::vector<KoopmanModel::LogEntry> log;
  int r = 0;                  // order in force at the end of the stream
  bool all_rejected = false;  // nothing accepted after the first record
  VectorXd singular;          // of the final Xi
};

Accumulation accumulate(const std::vector<IoRecord>& records, const IdentifyConfig& cfg);

struct Identification {
  KoopmanModel model;
  LatentRealization latent;  // ranges index into the original record list
  Accumulation acc;
  BResult b;
};

/// Model of order r (0: the accumulation's order) from an accumulation.
Identification realize(const Accumulation& acc, const std::vector<IoRecord>& records, int r,
                       const IdentifyConfig& cfg);

/// accumulate followed by realize.
Identification identify(const std::vector<IoRecord>& records, const IdentifyConfig& cfg);

/// Markov parameters C A^k B, k = 0 .. count-1.
std::vector<MatrixXd> markov_parameters(const MatrixXd& A, const MatrixXd& B, const MatrixXd& C,
                                        int count);
/// max_k ||M1_k - M2_k||_F / max_k ||M2_k||_F.
double markov_relative_error(const std::vector<MatrixXd>& M1, const std::vector<MatrixXd>& M2);

}  // namespace terrakoop::ssid
