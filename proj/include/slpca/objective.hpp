#pragma once

#include <cmath>

#include "slpca/link.hpp"
#include "slpca/types.hpp"

namespace slpca {

/// Canonical parameter matrix Theta = 1 mu^T + A B^T.
inline Matrix canonical_matrix(const SlpcaModel& model) {
  Matrix theta = model.A * model.B.transpose();
  theta.rowwise() += model.mu.transpose();
  return theta;
}

/// Elementwise link-inverse of the canonical matrix (unclamped).
inline Matrix probabilities(const SlpcaModel& model) {
  Matrix theta = canonical_matrix(model);
  if (model.link == Link::logit) {
    for (Index j = 0; j < theta.cols(); ++j)
      for (Index i = 0; i < theta.rows(); ++i) theta(i, j) = inverse_logit(theta(i, j));
  } else {
    for (Index j = 0; j < theta.cols(); ++j)
      for (Index i = 0; i < theta.rows(); ++i) theta(i, j) = normal_cdf(theta(i, j));
  }
  return theta;
}

namespace detail {
inline void check_dimensions(const BinaryDataMatrix& data, const SlpcaModel& model) {
  if (model.mu.size() != data.cols() || model.A.rows() != data.rows() ||
      model.B.rows() != data.cols() || model.A.cols() != model.B.cols())
    throw validation_error("model dimensions do not match data");
}

inline double gaussian_log_density(double y, double theta, double sigma2) {
  static const double log_2pi = 1.8378770664093454836;
  const double r = y - theta;
  return -0.5 * (log_2pi + std::log(sigma2) + r * r / sigma2);
}
}  // namespace detail

/// Observed-data log likelihood.  Binary cells contribute log pi(q theta)
/// (logit) or log Phi(q theta) (probit) with per-cell probabilities
/// clamped to [clamp, 1-clamp]; continuous cells contribute the Gaussian
/// log density with variance model.sigma2.  Missing cells are skipped.
inline double log_likelihood(const BinaryDataMatrix& data, const SlpcaModel& model,
                             double prob_clamp = 1e-12) {
  detail::check_dimensions(data, model);
  const Matrix theta = canonical_matrix(model);
  CompensatedSum acc;
  for (Index j = 0; j < data.cols(); ++j) {
    const bool binary = data.col_kind(j) == ColKind::binary;
    const double sigma2 = model.sigma2.value_or(1.0);
    for (Index i = 0; i < data.rows(); ++i) {
      if (data.is_missing(i, j)) continue;
      if (binary) {
        acc.add(log_link_cdf_clamped(data.q(i, j) * theta(i, j), model.link, prob_clamp));
      } else {
        acc.add(detail::gaussian_log_density(data.value(i, j), theta(i, j), sigma2));
      }
    }
  }
  return acc.value();
}

/// L1 penalty sum_l lambda_l ||b_l||_1.
inline double penalty_value(const Matrix& B, const Vector& lambda) {
  if (lambda.size() != B.cols()) throw validation_error("lambda length must equal loading columns");
  for (Index l = 0; l < lambda.size(); ++l)
    if (!(lambda[l] >= 0)) throw validation_error("lambda entries must be >= 0");
  CompensatedSum acc;
  for (Index l = 0; l < B.cols(); ++l) {
    if (lambda[l] == 0.0) continue;
    for (Index j = 0; j < B.rows(); ++j) acc.add(lambda[l] * std::abs(B(j, l)));
  }
  return acc.value();
}

/// The criterion the solver minimizes.  For all-binary data this is the
/// penalized negative log likelihood -l + n P(B), switching automatically
/// to the observed-data likelihood when the mask is nonempty.  Continuous
/// columns contribute (y - theta)^2 / sigma2 + log sigma2 per observed
/// cell, the scaled-deviance form matching the solver's 1/sigma2 weights
/// so that the descent guarantee covers the sigma2 update as well.
inline double penalized_objective(const BinaryDataMatrix& data, const SlpcaModel& model,
                                  double prob_clamp = 1e-12) {
  detail::check_dimensions(data, model);
  const Matrix theta = canonical_matrix(model);
  CompensatedSum acc;
  for (Index j = 0; j < data.cols(); ++j) {
    const bool binary = data.col_kind(j) == ColKind::binary;
    const double sigma2 = model.sigma2.value_or(1.0);
    const double log_s2 = binary ? 0.0 : std::log(sigma2);
    for (Index i = 0; i < data.rows(); ++i) {
      if (data.is_missing(i, j)) continue;
      if (binary) {
        acc.add(-log_link_cdf_clamped(data.q(i, j) * theta(i, j), model.link, prob_clamp));
      } else {
        const double r = data.value(i, j) - theta(i, j);
        acc.add(r * r / sigma2 + log_s2);
      }
    }
  }
  return acc.value() + static_cast<double>(data.rows()) * penalty_value(model.B, model.lambda);
}

}  // namespace slpca
