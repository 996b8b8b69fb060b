#pragma once

#include <algorithm>
#include <cmath>

#include "slpca/types.hpp"

namespace slpca {

/// Inverse logit pi(theta) = 1 / (1 + exp(-theta)).  Unclamped; the
/// probability clamp applies only inside likelihood evaluation.
inline double inverse_logit(double theta) {
  if (!std::isfinite(theta)) throw validation_error("inverse_logit: non-finite input");
  if (theta >= 0) {
    return 1.0 / (1.0 + std::exp(-theta));
  }
  const double e = std::exp(theta);
  return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

/// log pi(theta), evaluated without overflow for any finite theta.
inline double log_inverse_logit(double theta) {
  if (theta >= 0) return -std::log1p(std::exp(-theta));
  return theta - std::log1p(std::exp(theta));
}

inline double normal_pdf(double x) {
  static const double inv_sqrt_2pi = 0.3989422804014326779;
  return inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x * 0.70710678118654752440); }

/// log Phi(x); switches to log1p of the upper tail where Phi is near 1.
inline double log_normal_cdf(double x) {
  if (x > 5.0) return std::log1p(-0.5 * std::erfc(x * 0.70710678118654752440));
  const double c = normal_cdf(x);
  return std::log(c);  // -inf for deep-tail underflow; callers clamp
}

/// Mills ratio phi(x)/Phi(x).  Direct evaluation is accurate down to
/// x ~ -8; below that Phi underflows relative to phi and the Laplace
/// continued fraction for the upper-tail ratio is used instead.
inline double mills_ratio(double x) {
  if (x > -8.0) return normal_pdf(x) / normal_cdf(x);
  const double s = -x;
  // phi(s)/Q(s) = s + 1/(s + 2/(s + 3/(s + ...)))
  double cf = 0.0;
  for (int level = 40; level >= 1; --level) cf = static_cast<double>(level) / (s + cf);
  return s + cf;
}

/// Per-cell log likelihood of a signed response: log pi(t) or log Phi(t),
/// with the probability clamped to [clamp, 1 - clamp].
inline double log_link_cdf_clamped(double t, Link link, double clamp) {
  const double lp = link == Link::logit ? log_inverse_logit(t) : log_normal_cdf(t);
  const double lo = std::log(clamp);
  const double hi = std::log1p(-clamp);
  return std::clamp(lp, lo, hi);
}

/// Numerically careful running sum (Neumaier variant of Kahan summation).
/// Objective traces need ~1e-9 relative fidelity even on large matrices.
class CompensatedSum {
 public:
  void add(double v) {
    const double t = sum_ + v;
    if (std::abs(sum_) >= std::abs(v)) {
      comp_ += (sum_ - t) + v;
    } else {
      comp_ += (v - t) + sum_;
    }
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

}  // namespace slpca
