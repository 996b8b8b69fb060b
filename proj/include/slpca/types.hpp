#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace slpca {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;
using MaskMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Bad inputs or broken invariants detectable from arguments alone.
class validation_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Numerical degeneracy the solver could not recover from.
class degenerate_factor_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File-level failures (missing, unreadable, malformed beyond cell level).
class io_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ColKind : std::uint8_t { binary, continuous };
enum class Link : std::uint8_t { logit, probit };
enum class Bound : std::uint8_t { uniform, tight };

inline const char* to_string(Link link) { return link == Link::logit ? "logit" : "probit"; }
inline const char* to_string(Bound bound) { return bound == Bound::uniform ? "uniform" : "tight"; }

/// An n x d data matrix of binary (0/1) cells, optionally mixed with
/// real-valued columns, plus an explicit missingness mask.  Missing cells
/// are flagged in the mask; their stored value is ignored.  Immutable
/// after construction.
class BinaryDataMatrix {
 public:
  BinaryDataMatrix(Matrix values, MaskMatrix missing,
                   std::vector<ColKind> col_kinds = {},
                   std::vector<std::string> col_names = {})
      : values_(std::move(values)),
        missing_(std::move(missing)),
        col_kinds_(std::move(col_kinds)),
        col_names_(std::move(col_names)) {
    if (values_.rows() < 1 || values_.cols() < 1)
      throw validation_error("data matrix must have at least one row and one column");
    if (missing_.rows() != values_.rows() || missing_.cols() != values_.cols())
      throw validation_error("missingness mask dimensions do not match data");
    if (col_kinds_.empty()) col_kinds_.assign(static_cast<std::size_t>(values_.cols()), ColKind::binary);
    if (static_cast<Index>(col_kinds_.size()) != values_.cols())
      throw validation_error("column kind vector length does not match column count");
    if (!col_names_.empty() && static_cast<Index>(col_names_.size()) != values_.cols())
      throw validation_error("column name vector length does not match column count");
    n_missing_ = 0;
    for (Index j = 0; j < values_.cols(); ++j) {
      const bool binary = col_kinds_[static_cast<std::size_t>(j)] == ColKind::binary;
      for (Index i = 0; i < values_.rows(); ++i) {
        if (missing_(i, j)) {
          ++n_missing_;
          continue;
        }
        const double v = values_(i, j);
        if (!std::isfinite(v))
          throw validation_error("non-finite cell at row " + std::to_string(i + 1) +
                                 ", col " + std::to_string(j + 1));
        if (binary && v != 0.0 && v != 1.0)
          throw validation_error("binary cell must be 0 or 1 at row " + std::to_string(i + 1) +
                                 ", col " + std::to_string(j + 1));
      }
    }
    has_continuous_ = false;
    for (ColKind k : col_kinds_)
      if (k == ColKind::continuous) has_continuous_ = true;
  }

  /// Complete-data convenience constructor (empty mask).
  explicit BinaryDataMatrix(Matrix values, std::vector<ColKind> col_kinds = {},
                            std::vector<std::string> col_names = {})
      : BinaryDataMatrix(std::move(values),
                         MaskMatrix::Constant(values.rows(), values.cols(), false),
                         std::move(col_kinds), std::move(col_names)) {}

  Index rows() const { return values_.rows(); }
  Index cols() const { return values_.cols(); }

  const Matrix& values() const { return values_; }
  const MaskMatrix& mask() const { return missing_; }
  const std::vector<ColKind>& col_kinds() const { return col_kinds_; }
  const std::vector<std::string>& col_names() const { return col_names_; }

  double value(Index i, Index j) const { return values_(i, j); }
  bool is_missing(Index i, Index j) const { return missing_(i, j); }
  ColKind col_kind(Index j) const { return col_kinds_[static_cast<std::size_t>(j)]; }

  bool has_missing() const { return n_missing_ > 0; }
  Index n_missing() const { return n_missing_; }
  bool has_continuous() const { return has_continuous_; }

  Index n_continuous_cols() const {
    Index c = 0;
    for (ColKind k : col_kinds_)
      if (k == ColKind::continuous) ++c;
    return c;
  }

  /// Signed response q = 2y - 1 for an observed binary cell.  Derived on
  /// the fly; never stored.
  double q(Index i, Index j) const { return 2.0 * values_(i, j) - 1.0; }

 private:
  Matrix values_;
  MaskMatrix missing_;
  std::vector<ColKind> col_kinds_;
  std::vector<std::string> col_names_;
  Index n_missing_ = 0;
  bool has_continuous_ = false;
};

/// Fitted model: intercept mu (logit scale), orthonormal score matrix A,
/// sparse loading matrix B, link, per-component penalties, and the
/// residual variance of continuous columns when present.
struct SlpcaModel {
  Vector mu;           // d
  Matrix A;            // n x k, orthonormal columns
  Matrix B;            // d x k, exact zeros where shrinkage produced them
  Link link = Link::logit;
  Vector lambda;       // k, nonnegative
  std::optional<double> sigma2;  // continuous-column residual variance

  Index k() const { return B.cols(); }
};

/// Algorithm controls for a single fit.
struct FitConfig {
  Index k = 1;
  Bound bound = Bound::uniform;
  Link link = Link::logit;
  Vector lambda = Vector::Zero(1);  // length k, or length 1 broadcast
  double tol = 1e-6;                // relative objective change
  int max_iter = 2000;
  int restarts = 1;
  std::uint64_t seed = 0;
  double zero_eps = 1e-10;          // loadings below this snap to exact 0
  double prob_clamp = 1e-12;        // probability clamp inside the likelihood

  void validate() const {
    if (k < 1) throw validation_error("k must be >= 1");
    if (!(tol > 0)) throw validation_error("tol must be > 0");
    if (max_iter < 1) throw validation_error("max_iter must be >= 1");
    if (restarts < 1) throw validation_error("restarts must be >= 1");
    if (!(zero_eps > 0)) throw validation_error("zero_eps must be > 0");
    if (!(prob_clamp > 0.0 && prob_clamp < 0.5))
      throw validation_error("prob_clamp must be in (0, 0.5)");
    if (lambda.size() != 1 && lambda.size() != k)
      throw validation_error("lambda must be scalar or length k");
    for (Index l = 0; l < lambda.size(); ++l)
      if (!(lambda[l] >= 0)) throw validation_error("lambda entries must be >= 0");
  }

  /// Length-k penalty vector, broadcasting a scalar lambda.
  Vector lambda_vector() const {
    if (lambda.size() == k) return lambda;
    return Vector::Constant(k, lambda[0]);
  }
};

/// Outcome of fit(): the model plus the per-iteration penalized objective.
struct FitResult {
  SlpcaModel model;
  std::vector<double> objective_trace;  // length iterations + 1
  int iterations = 0;
  bool converged = false;
  Index nnz = 0;  // nonzero loadings in B

  double final_objective() const { return objective_trace.back(); }
};

}  // namespace slpca
