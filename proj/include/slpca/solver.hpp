#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <utility>

#include "slpca/objective.hpp"
#include "slpca/rng.hpp"
#include "slpca/types.hpp"

namespace slpca {

/// Structure of the surrogate weights: a single constant (uniform-logit,
/// probit), constant within each column (mixed binary/continuous), or a
/// full per-cell matrix (tight bound).  The block updates pick their fast
/// path from this tag.
enum class WeightKind { scalar, per_column, per_cell };

/// Working response X and weights W of the quadratic surrogate at the
/// current iterate.  Cells flagged missing are left NaN in X until
/// impute_missing fills them with the fitted canonical values.
struct WorkingValues {
  Matrix X;
  Matrix W;
  WeightKind kind = WeightKind::scalar;
};

namespace detail {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Curvature of the tight logistic bound, {2 pi(t) - 1} / (4 t).  The sign
// of q cancels, so only |theta| matters; near the origin the analytic
// limit 1/8 removes the 0/0.
inline double tight_weight(double theta) {
  if (std::abs(theta) < 1e-4) return 0.125;
  return std::tanh(0.5 * theta) / (4.0 * theta);
}

inline WorkingValues compute_working_values(const Matrix& theta, const BinaryDataMatrix& data,
                                            Link link, Bound bound, double sigma2) {
  const Index n = data.rows(), d = data.cols();
  if (theta.rows() != n || theta.cols() != d)
    throw validation_error("theta dimensions do not match data");
  if (!theta.allFinite()) throw validation_error("theta must be finite");

  WorkingValues wv;
  wv.X = Matrix::Constant(n, d, kNaN);
  wv.W = Matrix(n, d);

  const bool tight = link == Link::logit && bound == Bound::tight;
  if (tight) {
    wv.kind = WeightKind::per_cell;
  } else if (data.has_continuous()) {
    wv.kind = WeightKind::per_column;
  } else {
    wv.kind = WeightKind::scalar;
  }

  for (Index j = 0; j < d; ++j) {
    if (data.col_kind(j) == ColKind::continuous) {
      if (!(sigma2 > 0)) throw validation_error("sigma2 must be > 0");
      const double w = 1.0 / sigma2;
      for (Index i = 0; i < n; ++i) {
        wv.W(i, j) = w;
        if (!data.is_missing(i, j)) wv.X(i, j) = data.value(i, j);
      }
      continue;
    }
    for (Index i = 0; i < n; ++i) {
      const double t = theta(i, j);
      double w;
      if (link == Link::probit) {
        w = 0.5;
      } else if (tight) {
        w = tight_weight(t);
      } else {
        w = 0.125;
      }
      wv.W(i, j) = w;
      if (data.is_missing(i, j)) continue;
      const double q = data.q(i, j);
      const double qt = q * t;
      if (link == Link::probit) {
        wv.X(i, j) = t + q * mills_ratio(qt);
      } else {
        const double tail = inverse_logit(-qt);  // 1 - pi(q theta)
        wv.X(i, j) = tight ? t + q * tail / (2.0 * w) : t + 4.0 * q * tail;
      }
    }
  }
  return wv;
}

// Solve G x = rhs for symmetric positive semidefinite G, with the
// ridge-and-retry policy for transient rank deficiency.
inline Matrix solve_psd(Matrix G, const Matrix& rhs) {
  if (G.norm() == 0.0) return Matrix::Zero(G.rows(), rhs.cols());
  Eigen::LDLT<Matrix> ldlt(G);
  Matrix sol = ldlt.solve(rhs);
  const double scale = G.norm() * sol.norm() + rhs.norm();
  if (sol.allFinite() && (G.selfadjointView<Eigen::Lower>() * sol - rhs).norm() <= 1e-8 * scale)
    return sol;
  G.diagonal().array() += 1e-10;
  ldlt.compute(G);
  sol = ldlt.solve(rhs);
  if (!sol.allFinite())
    throw degenerate_factor_error("rank-deficient factor system; ridge fallback failed");
  return sol;
}

}  // namespace detail

/// Working values for the uniform logit bound: x = theta + 4 q {1 - pi(q theta)},
/// w = 1/8.  Continuous columns, if any, carry the Gaussian rule.
inline WorkingValues working_values_uniform(const Matrix& theta, const BinaryDataMatrix& data,
                                            double sigma2 = 1.0) {
  return detail::compute_working_values(theta, data, Link::logit, Bound::uniform, sigma2);
}

/// Working values for the tight logit bound: w = {2 pi(theta) - 1} / (4 theta)
/// (limit 1/8 at the origin), x = theta + q {1 - pi(q theta)} / (2 w).
inline WorkingValues working_values_tight(const Matrix& theta, const BinaryDataMatrix& data,
                                          double sigma2 = 1.0) {
  return detail::compute_working_values(theta, data, Link::logit, Bound::tight, sigma2);
}

/// Working values for the probit link: w = 1/2, x = theta + q phi(q theta)/Phi(q theta).
inline WorkingValues working_values_probit(const Matrix& theta, const BinaryDataMatrix& data,
                                           double sigma2 = 1.0) {
  return detail::compute_working_values(theta, data, Link::probit, Bound::uniform, sigma2);
}

/// Working values of one continuous column: x = y, w = 1/sigma2.
inline std::pair<Vector, Vector> working_values_gaussian(const BinaryDataMatrix& data, Index col,
                                                         double sigma2) {
  if (col < 0 || col >= data.cols()) throw validation_error("column index out of range");
  if (data.col_kind(col) != ColKind::continuous)
    throw validation_error("working_values_gaussian requires a continuous column");
  if (!(sigma2 > 0)) throw validation_error("sigma2 must be > 0");
  Vector x = Vector::Constant(data.rows(), detail::kNaN);
  Vector w = Vector::Constant(data.rows(), 1.0 / sigma2);
  for (Index i = 0; i < data.rows(); ++i)
    if (!data.is_missing(i, col)) x[i] = data.value(i, col);
  return {std::move(x), std::move(w)};
}

/// Dispatcher used by fit(); applies the bound per link and the Gaussian
/// rule per column kind.
inline WorkingValues working_values(const Matrix& theta, const BinaryDataMatrix& data, Link link,
                                    Bound bound, double sigma2 = 1.0) {
  return detail::compute_working_values(theta, data, link, bound, sigma2);
}

/// Fill masked cells of X with the fitted canonical values (the z working
/// variables of the missing-data algorithm).  No-op for an empty mask.
inline void impute_missing(Matrix& X, const Matrix& theta, const MaskMatrix& mask) {
  if (X.rows() != mask.rows() || X.cols() != mask.cols() || theta.rows() != mask.rows() ||
      theta.cols() != mask.cols())
    throw validation_error("impute_missing: dimension mismatch");
  for (Index j = 0; j < X.cols(); ++j)
    for (Index i = 0; i < X.rows(); ++i)
      if (mask(i, j)) X(i, j) = theta(i, j);
}

/// Intercept update: weighted column means of X - A B^T (plain means for
/// constant weights).
inline Vector update_intercept(const WorkingValues& wv, const Matrix& A, const Matrix& B) {
  const Matrix xdag = wv.X - A * B.transpose();
  if (wv.kind != WeightKind::per_cell)
    return xdag.colwise().mean();  // within-column weights constant: they cancel
  Vector mu(xdag.cols());
  for (Index j = 0; j < xdag.cols(); ++j) {
    double num = 0.0, den = 0.0;
    for (Index i = 0; i < xdag.rows(); ++i) {
      num += wv.W(i, j) * xdag(i, j);
      den += wv.W(i, j);
    }
    if (den <= 0.0) throw degenerate_factor_error("zero total weight in a column");
    mu[j] = num / den;
  }
  return mu;
}

/// Score update: row-wise weighted least squares against B, followed by
/// QR orthonormalization with the R factor absorbed into B so that A B^T
/// is unchanged.  Exact zeros of B survive the absorption.
inline void update_scores(const WorkingValues& wv, const Vector& mu, Matrix& A, Matrix& B) {
  const Index n = wv.X.rows(), k = B.cols();
  const Matrix xstar = wv.X.rowwise() - mu.transpose();

  Matrix ahat(n, k);
  if (wv.kind == WeightKind::scalar) {
    // constant weight cancels: A = X* B (B^T B)^-1
    ahat = detail::solve_psd(B.transpose() * B, (xstar * B).transpose()).transpose();
  } else if (wv.kind == WeightKind::per_column) {
    const Vector w = wv.W.row(0).transpose();
    const Matrix wb = w.asDiagonal() * B;
    ahat = detail::solve_psd(B.transpose() * wb, (xstar * wb).transpose()).transpose();
  } else {
    for (Index i = 0; i < n; ++i) {
      const Vector wi = wv.W.row(i).transpose();
      const Matrix wb = wi.asDiagonal() * B;
      ahat.row(i) = detail::solve_psd(B.transpose() * wb, wb.transpose() * xstar.row(i).transpose())
                        .transpose();
    }
  }

  Eigen::HouseholderQR<Matrix> qr(ahat);
  Matrix Q = qr.householderQ() * Matrix::Identity(n, k);
  Matrix R = qr.matrixQR().topRows(k).triangularView<Eigen::Upper>();
  for (Index l = 0; l < k; ++l) {
    if (R(l, l) < 0) {
      Q.col(l) = -Q.col(l);
      R.row(l) = -R.row(l);
    }
  }
  Matrix bnew = B * R.transpose();
  for (Index l = 0; l < k; ++l)
    for (Index j = 0; j < B.rows(); ++j)
      if (B(j, l) == 0.0) bnew(j, l) = 0.0;
  A = std::move(Q);
  B = std::move(bnew);
}

/// Loading update, anchored at the current iterate B_m.  Constant weights
/// give the component-wise shrinkage b = |b_m| c / (|b_m| + n lambda / (2w));
/// per-cell weights solve the j-wise k x k ridge system
/// (A^T W_j A + n D_j) b_j = A^T W_j x*_j with D_j = diag(lambda_l / (2 |b_m,jl|)).
/// Anchors below zero_eps force an exact zero (the absorbing state), and
/// penalized outputs below zero_eps snap to exact zero; lambda_l = 0
/// disables shrinkage and absorption for that component.
inline Matrix update_loadings(const WorkingValues& wv, const Vector& mu, const Matrix& A,
                              const Matrix& B_anchor, const Vector& lambda, double zero_eps) {
  const Index n = wv.X.rows(), d = wv.X.cols(), k = A.cols();
  if (lambda.size() != k) throw validation_error("lambda length must equal k");
  const Matrix xstar = wv.X.rowwise() - mu.transpose();
  Matrix B = Matrix::Zero(d, k);

  if (wv.kind != WeightKind::per_cell) {
    const Matrix C = xstar.transpose() * A;
    for (Index l = 0; l < k; ++l) {
      for (Index j = 0; j < d; ++j) {
        const double c = C(j, l);
        if (lambda[l] == 0.0) {
          B(j, l) = c;
          continue;
        }
        const double anchor = std::abs(B_anchor(j, l));
        if (anchor < zero_eps) continue;  // stays exactly 0
        const double w = wv.kind == WeightKind::scalar ? wv.W(0, 0) : wv.W(0, j);
        const double b = anchor * c / (anchor + static_cast<double>(n) * lambda[l] / (2.0 * w));
        B(j, l) = std::abs(b) < zero_eps ? 0.0 : b;
      }
    }
    return B;
  }

  std::vector<Index> active;
  active.reserve(static_cast<std::size_t>(k));
  for (Index j = 0; j < d; ++j) {
    active.clear();
    for (Index l = 0; l < k; ++l)
      if (lambda[l] == 0.0 || std::abs(B_anchor(j, l)) >= zero_eps) active.push_back(l);
    if (active.empty()) continue;
    const Vector wj = wv.W.col(j);
    const Matrix wa = wj.asDiagonal() * A;
    const Index ka = static_cast<Index>(active.size());
    Matrix G(ka, ka);
    Vector rhs(ka);
    for (Index p = 0; p < ka; ++p) {
      for (Index s = 0; s <= p; ++s) {
        G(p, s) = A.col(active[static_cast<std::size_t>(p)]).dot(wa.col(active[static_cast<std::size_t>(s)]));
        G(s, p) = G(p, s);
      }
      const Index l = active[static_cast<std::size_t>(p)];
      if (lambda[l] > 0.0)
        G(p, p) += static_cast<double>(n) * lambda[l] / (2.0 * std::abs(B_anchor(j, l)));
      rhs[p] = wa.col(l).dot(xstar.col(j));
    }
    const Vector sol = detail::solve_psd(G, rhs);
    for (Index p = 0; p < ka; ++p) {
      const Index l = active[static_cast<std::size_t>(p)];
      B(j, l) = lambda[l] > 0.0 && std::abs(sol[p]) < zero_eps ? 0.0 : sol[p];
    }
  }
  return B;
}

namespace detail {

inline Vector initial_intercept(const BinaryDataMatrix& data) {
  Vector mu(data.cols());
  for (Index j = 0; j < data.cols(); ++j) {
    double sum = 0.0;
    Index cnt = 0;
    for (Index i = 0; i < data.rows(); ++i) {
      if (data.is_missing(i, j)) continue;
      sum += data.value(i, j);
      ++cnt;
    }
    if (data.col_kind(j) == ColKind::binary) {
      const double p = cnt > 0 ? std::clamp(sum / static_cast<double>(cnt), 0.05, 0.95) : 0.5;
      mu[j] = logit(p);
    } else {
      mu[j] = cnt > 0 ? sum / static_cast<double>(cnt) : 0.0;
    }
  }
  return mu;
}

inline FitResult fit_single(const BinaryDataMatrix& data, const FitConfig& config,
                            const Vector& lambda, Rng rng, const SlpcaModel* warm) {
  const Index n = data.rows(), d = data.cols(), k = config.k;

  SlpcaModel model;
  model.link = config.link;
  model.lambda = lambda;
  if (warm) {
    if (warm->mu.size() != d || warm->A.rows() != n || warm->A.cols() != k ||
        warm->B.rows() != d || warm->B.cols() != k)
      throw validation_error("warm-start model dimensions do not match");
    model.mu = warm->mu;
    model.A = warm->A;
    model.B = warm->B;
    if (data.has_continuous()) model.sigma2 = warm->sigma2.value_or(1.0);
  } else {
    model.mu = initial_intercept(data);
    Matrix a0(n, k);
    for (Index l = 0; l < k; ++l)
      for (Index i = 0; i < n; ++i) a0(i, l) = rng.normal();
    Eigen::HouseholderQR<Matrix> qr(a0);
    model.A = qr.householderQ() * Matrix::Identity(n, k);
    model.B = Matrix(d, k);
    for (Index l = 0; l < k; ++l)
      for (Index j = 0; j < d; ++j) model.B(j, l) = 0.1 * rng.normal();
    if (data.has_continuous()) model.sigma2 = 1.0;
  }

  auto refresh_sigma2 = [&](SlpcaModel& mdl) {
    if (!data.has_continuous()) return;
    const Matrix theta_new = canonical_matrix(mdl);
    CompensatedSum rss;
    Index cnt = 0;
    for (Index j = 0; j < d; ++j) {
      if (data.col_kind(j) != ColKind::continuous) continue;
      for (Index i = 0; i < n; ++i) {
        if (data.is_missing(i, j)) continue;
        const double r = data.value(i, j) - theta_new(i, j);
        rss.add(r * r);
        ++cnt;
      }
    }
    if (cnt > 0) mdl.sigma2 = std::max(rss.value() / static_cast<double>(cnt), 1e-8);
  };

  FitResult result;
  result.objective_trace.push_back(penalized_objective(data, model, config.prob_clamp));

  for (int m = 1; m <= config.max_iter; ++m) {
    const Matrix theta = canonical_matrix(model);
    WorkingValues wv =
        working_values(theta, data, config.link, config.bound, model.sigma2.value_or(1.0));
    impute_missing(wv.X, theta, data.mask());

    // The shrinkage anchors at the iterate entering this cycle; the
    // QR-absorbed B inside update_scores keeps the state consistent but is
    // not the majorization reference.
    const Matrix a_m = model.A;
    const Matrix b_m = model.B;
    model.mu = update_intercept(wv, a_m, b_m);
    update_scores(wv, model.mu, model.A, model.B);
    model.B = update_loadings(wv, model.mu, model.A, b_m, lambda, config.zero_eps);
    refresh_sigma2(model);

    double s = penalized_objective(data, model, config.prob_clamp);
    const double prev = result.objective_trace.back();
    if (s > prev) {
      // Monotone safeguard.  The QR reparameterization is penalty-blind
      // (||B R^T||_1 != ||B||_1), which can cost more than the score
      // update gains; in that case redo the cycle with the scores frozen,
      // a pure surrogate step that cannot ascend.
      model.A = a_m;
      model.B = update_loadings(wv, model.mu, a_m, b_m, lambda, config.zero_eps);
      refresh_sigma2(model);
      s = penalized_objective(data, model, config.prob_clamp);
    }

    result.objective_trace.push_back(s);
    result.iterations = m;
    if (std::abs(prev - s) / (std::abs(prev) + 1.0) < config.tol) {
      result.converged = true;
      break;
    }
  }

  result.nnz = (model.B.array() != 0.0).count();
  result.model = std::move(model);
  return result;
}

}  // namespace detail

/// Fit a sparse logistic PCA model by alternating the closed-form block
/// updates of the quadratic surrogate until the relative change of the
/// penalized objective drops below tol.  With restarts > 1 the best of
/// independently seeded runs is returned (ties broken by lowest restart
/// index).  Non-convergence is reported through the flag, not an error.
inline FitResult fit(const BinaryDataMatrix& data, const FitConfig& config) {
  config.validate();
  if (config.k > std::min(data.rows(), data.cols()))
    throw validation_error("k must not exceed min(n, d)");
  const Vector lambda = config.lambda_vector();
  std::optional<FitResult> best;
  for (int r = 0; r < config.restarts; ++r) {
    FitResult res = detail::fit_single(data, config, lambda,
                                       Rng::derive(config.seed, static_cast<std::uint64_t>(r)),
                                       nullptr);
    if (!best || res.final_objective() < best->final_objective()) best = std::move(res);
  }
  return *best;
}

/// Fit continuing from a previous model (single run; restarts ignored).
inline FitResult fit(const BinaryDataMatrix& data, const FitConfig& config,
                     const SlpcaModel& warm_start) {
  config.validate();
  if (config.k > std::min(data.rows(), data.cols()))
    throw validation_error("k must not exceed min(n, d)");
  const Vector lambda = config.lambda_vector();
  return detail::fit_single(data, config, lambda, Rng::derive(config.seed, 0), &warm_start);
}

}  // namespace slpca
