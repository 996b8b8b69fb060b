#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <set>
#include <utility>
#include <vector>

#include "slpca/objective.hpp"
#include "slpca/rng.hpp"
#include "slpca/solver.hpp"
#include "slpca/threading.hpp"

namespace slpca {

struct SubspaceAngle {
  double degrees = 0.0;  // in [0, 90]
};

namespace detail {

inline Matrix orthonormal_basis(const Matrix& B, const char* name) {
  if (B.rows() < 1 || B.cols() < 1) throw validation_error("empty matrix in principal_angle");
  Eigen::ColPivHouseholderQR<Matrix> qr(B);
  if (qr.rank() < B.cols())
    throw validation_error(std::string("rank-deficient input to principal_angle: ") + name);
  return qr.householderQ() * Matrix::Identity(B.rows(), B.cols());
}

}  // namespace detail

/// Principal angle between the column spans of two loading matrices:
/// acos of the smallest singular value of Q_hat^T Q_true, in degrees.
/// The true basis may have fewer columns than the estimated one.
inline SubspaceAngle principal_angle(const Matrix& B_hat, const Matrix& B_true) {
  if (B_hat.rows() != B_true.rows())
    throw validation_error("principal_angle: row dimensions differ");
  const Matrix q1 = detail::orthonormal_basis(B_hat, "B_hat");
  const Matrix q2 = detail::orthonormal_basis(B_true, "B_true");
  Eigen::JacobiSVD<Matrix> svd(q1.transpose() * q2);
  const auto& sv = svd.singularValues();
  double rho = sv[sv.size() - 1];
  rho = std::clamp(rho, 0.0, 1.0);
  return {std::acos(rho) * 180.0 / 3.14159265358979323846};
}

enum class FpDenominator { estimated_nonzeros, true_zeros };

/// Percentage of estimated nonzero loadings that fall outside the true
/// support.  The default denominator is the estimated nonzero count; the
/// true-zero-count convention is available as an option.
inline double false_positive_rate(const Matrix& B_hat,
                                  const std::set<std::pair<Index, Index>>& true_support,
                                  FpDenominator denom = FpDenominator::estimated_nonzeros) {
  Index nnz = 0, fp = 0;
  for (Index l = 0; l < B_hat.cols(); ++l) {
    for (Index j = 0; j < B_hat.rows(); ++j) {
      if (B_hat(j, l) == 0.0) continue;
      ++nnz;
      if (!true_support.count({j, l})) ++fp;
    }
  }
  if (nnz == 0) throw validation_error("false_positive_rate: all-zero loading matrix");
  if (denom == FpDenominator::estimated_nonzeros)
    return 100.0 * static_cast<double>(fp) / static_cast<double>(nnz);
  const Index true_zeros = B_hat.rows() * B_hat.cols() - static_cast<Index>(true_support.size());
  if (true_zeros == 0) return 0.0;
  return 100.0 * static_cast<double>(fp) / static_cast<double>(true_zeros);
}

/// Pearson residuals (y - pi) / sqrt(pi (1 - pi)) over observed binary
/// cells; excluded cells are NaN.
inline Matrix pearson_residuals(const BinaryDataMatrix& data, const SlpcaModel& model,
                                double prob_clamp = 1e-12) {
  detail::check_dimensions(data, model);
  const Matrix pi = probabilities(model);
  Matrix r = Matrix::Constant(data.rows(), data.cols(), detail::kNaN);
  for (Index j = 0; j < data.cols(); ++j) {
    if (data.col_kind(j) != ColKind::binary) continue;
    for (Index i = 0; i < data.rows(); ++i) {
      if (data.is_missing(i, j)) continue;
      const double p = std::clamp(pi(i, j), prob_clamp, 1.0 - prob_clamp);
      r(i, j) = (data.value(i, j) - p) / std::sqrt(p * (1.0 - p));
    }
  }
  return r;
}

struct PairwiseCorrelations {
  std::vector<double> correlations;
  Index skipped = 0;  // pairs dropped for zero variance or too few shared rows
};

/// Pearson correlation over rows for every within-group column pair,
/// using pairwise-complete observations.
inline PairwiseCorrelations residual_pairwise_correlations(
    const Matrix& residuals, const std::vector<std::vector<Index>>& groups) {
  PairwiseCorrelations out;
  for (const auto& cols : groups) {
    if (cols.size() < 2) throw validation_error("each column group needs at least two columns");
    for (std::size_t p = 0; p < cols.size(); ++p) {
      for (std::size_t s = p + 1; s < cols.size(); ++s) {
        const Index j1 = cols[p], j2 = cols[s];
        double sx = 0, sy = 0;
        Index m = 0;
        for (Index i = 0; i < residuals.rows(); ++i) {
          const double a = residuals(i, j1), b = residuals(i, j2);
          if (std::isnan(a) || std::isnan(b)) continue;
          sx += a;
          sy += b;
          ++m;
        }
        if (m < 2) {
          ++out.skipped;
          continue;
        }
        const double mx = sx / static_cast<double>(m), my = sy / static_cast<double>(m);
        double sxx = 0, syy = 0, sxy = 0;
        for (Index i = 0; i < residuals.rows(); ++i) {
          const double a = residuals(i, j1), b = residuals(i, j2);
          if (std::isnan(a) || std::isnan(b)) continue;
          sxx += (a - mx) * (a - mx);
          syy += (b - my) * (b - my);
          sxy += (a - mx) * (b - my);
        }
        const double tiny = 1e-24 * static_cast<double>(m);
        if (sxx <= tiny * (1.0 + mx * mx) || syy <= tiny * (1.0 + my * my)) {
          ++out.skipped;
          continue;
        }
        out.correlations.push_back(sxy / std::sqrt(sxx * syy));
      }
    }
  }
  return out;
}

struct BootstrapEnvelope {
  std::vector<std::pair<Index, Index>> cells;  // (i, j), sorted by point estimate
  Vector point;                                // fitted probabilities, same order
  Vector lower;                                // 5% quantiles
  Vector upper;                                // 95% quantiles
  int n_boot = 0;
  int n_failures = 0;

  double mean_width() const { return (upper - lower).mean(); }
};

namespace detail {

// R type-7 quantile of an already-sorted sample.
inline double sorted_quantile(const std::vector<double>& v, double q) {
  const double h = q * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= v.size()) return v.back();
  return v[lo] + (h - static_cast<double>(lo)) * (v[lo + 1] - v[lo]);
}

}  // namespace detail

/// Parametric bootstrap of the probability estimates: draw n_boot data
/// sets from Bernoulli(pi_hat) (missing cells stay missing), refit each
/// with the same configuration, and return per-cell 5%/95% quantiles
/// ordered by the original point estimates.  Refits default to warm
/// starts from the original model.
inline BootstrapEnvelope bootstrap_envelope(const BinaryDataMatrix& data, const SlpcaModel& model,
                                            const FitConfig& config, int n_boot,
                                            std::uint64_t seed, bool warm = true) {
  if (n_boot < 2) throw validation_error("n_boot must be >= 2");
  detail::check_dimensions(data, model);

  const Matrix pi_hat = probabilities(model);
  const Matrix theta_hat = canonical_matrix(model);
  const double sd = std::sqrt(model.sigma2.value_or(1.0));

  std::vector<std::pair<Index, Index>> cells;
  for (Index j = 0; j < data.cols(); ++j) {
    if (data.col_kind(j) != ColKind::binary) continue;
    for (Index i = 0; i < data.rows(); ++i) cells.emplace_back(i, j);
  }

  std::vector<std::optional<Matrix>> pi_by_rep(static_cast<std::size_t>(n_boot));
  detail::parallel_for(n_boot, [&](Index b) {
    Rng rng = Rng::derive(seed, static_cast<std::uint64_t>(b));
    Matrix values(data.rows(), data.cols());
    for (Index j = 0; j < data.cols(); ++j) {
      const bool binary = data.col_kind(j) == ColKind::binary;
      for (Index i = 0; i < data.rows(); ++i) {
        values(i, j) = binary ? (rng.bernoulli(pi_hat(i, j)) ? 1.0 : 0.0)
                              : theta_hat(i, j) + sd * rng.normal();
        if (data.is_missing(i, j)) values(i, j) = 0.0;
      }
    }
    BinaryDataMatrix synth(std::move(values), data.mask(), data.col_kinds());
    FitConfig cfg = config;
    cfg.seed = detail::splitmix64(seed + static_cast<std::uint64_t>(b) + 1);
    try {
      const FitResult res = warm ? fit(synth, cfg, model) : fit(synth, cfg);
      pi_by_rep[static_cast<std::size_t>(b)] = probabilities(res.model);
    } catch (const std::exception&) {
      // counted below; the envelope is formed over the successes
    }
  });

  std::vector<std::vector<double>> draws(cells.size());
  int failures = 0;
  for (int b = 0; b < n_boot; ++b) {
    const auto& pi_b = pi_by_rep[static_cast<std::size_t>(b)];
    if (!pi_b) {
      ++failures;
      continue;
    }
    for (std::size_t c = 0; c < cells.size(); ++c)
      draws[c].push_back((*pi_b)(cells[c].first, cells[c].second));
  }
  const int successes = n_boot - failures;
  if (successes < static_cast<int>(std::ceil(0.8 * n_boot)))
    throw degenerate_factor_error("bootstrap: more than 20% of refits failed (" +
                                  std::to_string(failures) + " of " + std::to_string(n_boot) +
                                  ")");

  std::vector<std::size_t> order(cells.size());
  for (std::size_t c = 0; c < order.size(); ++c) order[c] = c;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double pa = pi_hat(cells[a].first, cells[a].second);
    const double pb = pi_hat(cells[b].first, cells[b].second);
    if (pa != pb) return pa < pb;
    return cells[a] < cells[b];
  });

  BootstrapEnvelope env;
  env.n_boot = n_boot;
  env.n_failures = failures;
  env.point.resize(static_cast<Index>(cells.size()));
  env.lower.resize(static_cast<Index>(cells.size()));
  env.upper.resize(static_cast<Index>(cells.size()));
  env.cells.reserve(cells.size());
  for (std::size_t r = 0; r < order.size(); ++r) {
    const std::size_t c = order[r];
    std::vector<double>& v = draws[c];
    std::sort(v.begin(), v.end());
    env.cells.push_back(cells[c]);
    env.point[static_cast<Index>(r)] = pi_hat(cells[c].first, cells[c].second);
    env.lower[static_cast<Index>(r)] = detail::sorted_quantile(v, 0.05);
    env.upper[static_cast<Index>(r)] = detail::sorted_quantile(v, 0.95);
  }
  return env;
}

namespace detail {

inline double beta_cont_fraction(double a, double b, double x) {
  constexpr int max_iter = 300;
  constexpr double eps = 3e-16, fpmin = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < fpmin) d = fpmin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= max_iter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < fpmin) d = fpmin;
    c = 1.0 + aa / c;
    if (std::abs(c) < fpmin) c = fpmin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < fpmin) d = fpmin;
    c = 1.0 + aa / c;
    if (std::abs(c) < fpmin) c = fpmin;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < eps) break;
  }
  return h;
}

/// Regularized incomplete beta I_x(a, b).
inline double incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double lbeta = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b);
  const double front = std::exp(lbeta + a * std::log(x) + b * std::log1p(-x));
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_cont_fraction(a, b, x) / a;
  return 1.0 - front * beta_cont_fraction(b, a, 1.0 - x) / b;
}

inline double f_upper_tail(double f, double d1, double d2) {
  if (f <= 0.0) return 1.0;
  return incomplete_beta(0.5 * d2, 0.5 * d1, d2 / (d2 + d1 * f));
}

}  // namespace detail

struct FTestResult {
  double f = 0.0;
  double p = 1.0;
};

/// One-way ANOVA F test of scores on group labels, with the upper-tail
/// p-value on (g-1, n-g) degrees of freedom.
inline FTestResult group_f_test(const Vector& scores, const std::vector<int>& labels) {
  const Index n = scores.size();
  if (static_cast<Index>(labels.size()) != n)
    throw validation_error("labels length must match scores");
  std::vector<int> ids(labels);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  const std::size_t g = ids.size();
  if (g < 2) throw validation_error("group_f_test needs at least two groups");
  if (n <= static_cast<Index>(g)) throw validation_error("group_f_test needs n > #groups");

  std::vector<double> sum(g, 0.0);
  std::vector<Index> cnt(g, 0);
  auto gid = [&](int lab) {
    return static_cast<std::size_t>(std::lower_bound(ids.begin(), ids.end(), lab) - ids.begin());
  };
  for (Index i = 0; i < n; ++i) {
    const std::size_t gi = gid(labels[static_cast<std::size_t>(i)]);
    sum[gi] += scores[i];
    ++cnt[gi];
  }
  const double grand = scores.mean();
  double sst = 0.0, ssw = 0.0;
  for (Index i = 0; i < n; ++i) {
    const std::size_t gi = gid(labels[static_cast<std::size_t>(i)]);
    const double gm = sum[gi] / static_cast<double>(cnt[gi]);
    sst += (scores[i] - grand) * (scores[i] - grand);
    ssw += (scores[i] - gm) * (scores[i] - gm);
  }
  if (sst <= 1e-24 * static_cast<double>(n) * (1.0 + grand * grand)) return {0.0, 1.0};
  const double ssb = sst - ssw;
  if (ssw <= 1e-14 * sst)
    throw validation_error("group_f_test: zero within-group variance");
  const double d1 = static_cast<double>(g) - 1.0;
  const double d2 = static_cast<double>(n) - static_cast<double>(g);
  const double f = (ssb / d1) / (ssw / d2);
  return {f, detail::f_upper_tail(f, d1, d2)};
}

}  // namespace slpca
