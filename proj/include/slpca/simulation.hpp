#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "slpca/evaluation.hpp"
#include "slpca/selection.hpp"
#include "slpca/threading.hpp"

namespace slpca {

/// Planted-model experiment description: dimensions, per-component SNR,
/// loading support, replication count, the rank handed to the fitter
/// ("select" = staged BIC search), and the master seed.
struct SimulationSpec {
  Index n = 100;
  Index d = 200;
  Index k_true = 2;
  std::vector<double> snr;                   // length k_true
  std::vector<std::vector<Index>> support;   // 0-based column indices per component
  int replicates = 20;
  int k_fit = 0;  // 0 = select via BIC, otherwise a fixed rank
  std::uint64_t seed = 0;

  void validate() const {
    if (n < 1 || d < 1 || k_true < 1) throw validation_error("simulation dimensions must be >= 1");
    if (static_cast<Index>(snr.size()) != k_true)
      throw validation_error("snr length must equal k_true");
    for (double s : snr)
      if (!(s > 0)) throw validation_error("snr entries must be > 0");
    if (static_cast<Index>(support.size()) != k_true)
      throw validation_error("one support set per component required");
    std::set<Index> seen;
    for (const auto& cols : support) {
      if (cols.empty()) throw validation_error("support sets must be nonempty");
      for (Index j : cols) {
        if (j < 0 || j >= d) throw validation_error("support index out of range");
        if (!seen.insert(j).second) throw validation_error("support sets must be disjoint");
      }
    }
    if (replicates < 1) throw validation_error("replicates must be >= 1");
  }

  std::set<std::pair<Index, Index>> support_cells() const {
    std::set<std::pair<Index, Index>> s;
    for (Index l = 0; l < k_true; ++l)
      for (Index j : support[static_cast<std::size_t>(l)]) s.insert({j, l});
    return s;
  }

  /// Variables loading on any component; used for the false-positive
  /// convention where fitted component order is arbitrary.
  std::set<Index> active_variables() const {
    std::set<Index> s;
    for (const auto& cols : support) s.insert(cols.begin(), cols.end());
    return s;
  }
};

namespace detail {
constexpr std::uint64_t kBaselineStream = 0x6261736570886911ULL;
constexpr std::uint64_t kReplicateStream = 0x7265706c69636174ULL;
}  // namespace detail

/// Baseline noise level for (n, d, k): fit nonregularized logistic PCA to
/// pure Bernoulli(1/2) matrices, form scale-carrying scores U D from the
/// thin SVD of the fitted A B^T, and average the k score variances over
/// n_rep replicates.
inline double baseline_noise_level(Index n, Index d, int k, int n_rep, std::uint64_t seed,
                                   const FitConfig& base = {}) {
  if (n_rep < 1) throw validation_error("baseline replicates must be >= 1");
  if (k < 1 || k > std::min(n, d)) throw validation_error("baseline k out of range");
  CompensatedSum acc;
  int completed = 0;
  for (int r = 0; r < n_rep; ++r) {
    Rng rng = Rng::derive(seed, 2 * static_cast<std::uint64_t>(r));
    Matrix y(n, d);
    for (Index j = 0; j < d; ++j)
      for (Index i = 0; i < n; ++i) y(i, j) = rng.bernoulli(0.5) ? 1.0 : 0.0;
    BinaryDataMatrix data(std::move(y));

    FitConfig cfg = base;
    cfg.k = k;
    cfg.lambda = Vector::Zero(1);
    cfg.link = Link::logit;
    cfg.bound = Bound::uniform;
    cfg.restarts = 1;
    cfg.seed = detail::splitmix64(seed ^ (2 * static_cast<std::uint64_t>(r) + 1));
    FitResult res;
    try {
      res = fit(data, cfg);
    } catch (const std::exception& e) {
      throw degenerate_factor_error("baseline fit failed at replicate " + std::to_string(r) +
                                    " after " + std::to_string(completed) + " successes: " +
                                    e.what());
    }

    const Matrix theta_c = res.model.A * res.model.B.transpose();
    Eigen::BDCSVD<Matrix> svd(theta_c, Eigen::ComputeThinU);
    const Matrix scores =
        svd.matrixU().leftCols(k) * svd.singularValues().head(k).asDiagonal();
    double v = 0.0;
    for (Index l = 0; l < k; ++l) {
      const double m = scores.col(l).mean();
      v += (scores.col(l).array() - m).square().sum() / static_cast<double>(n - 1);
    }
    acc.add(v / static_cast<double>(k));
    ++completed;
  }
  return acc.value() / static_cast<double>(n_rep);
}

struct GeneratedData {
  BinaryDataMatrix data;
  Matrix A;   // true scores
  Matrix B;   // true loadings (unit entries on the support)
  Vector mu;  // zeros
};

/// Draw one planted data set: B from the support sets (unit loadings), A
/// columns i.i.d. Gaussian, mu = 0, and y ~ Bernoulli(pi(A B^T)).  The
/// score variance is SNR_l * baseline expressed in the same scale-carrying
/// units as the baseline: a component with unit loadings on s columns has
/// U D score variance s * Var(a_l), so Var(a_l) = SNR_l * baseline / s.
inline GeneratedData generate_dataset(const SimulationSpec& spec, double baseline,
                                      int replicate = 0) {
  spec.validate();
  if (!(baseline > 0)) throw validation_error("baseline noise level must be > 0");
  Rng rng = Rng::derive(spec.seed ^ detail::kReplicateStream,
                        static_cast<std::uint64_t>(replicate));

  Matrix B = Matrix::Zero(spec.d, spec.k_true);
  for (Index l = 0; l < spec.k_true; ++l)
    for (Index j : spec.support[static_cast<std::size_t>(l)]) B(j, l) = 1.0;

  Matrix A(spec.n, spec.k_true);
  for (Index l = 0; l < spec.k_true; ++l) {
    const double s = static_cast<double>(spec.support[static_cast<std::size_t>(l)].size());
    const double sd = std::sqrt(spec.snr[static_cast<std::size_t>(l)] * baseline / s);
    for (Index i = 0; i < spec.n; ++i) A(i, l) = sd * rng.normal();
  }

  const Matrix theta = A * B.transpose();
  Matrix y(spec.n, spec.d);
  for (Index j = 0; j < spec.d; ++j)
    for (Index i = 0; i < spec.n; ++i)
      y(i, j) = rng.bernoulli(inverse_logit(theta(i, j))) ? 1.0 : 0.0;

  return {BinaryDataMatrix(std::move(y)), std::move(A), std::move(B),
          Vector::Zero(spec.d)};
}

enum class RankChoice { k_true, k_large, k_select };

struct ExperimentMode {
  bool regularized = true;
  RankChoice rank = RankChoice::k_true;

  std::string label() const {
    std::string s = regularized ? "regularized" : "nonregularized";
    switch (rank) {
      case RankChoice::k_true: s += ":k_true"; break;
      case RankChoice::k_large: s += ":k_large"; break;
      case RankChoice::k_select: s += ":k_select"; break;
    }
    return s;
  }
};

struct ExperimentOptions {
  SelectionConfig selection;                         // solver controls + staged-search grids
  std::vector<double> lambda_grid = default_fine_grid();  // penalty grid at fixed rank
  int baseline_replicates = 100;
  Index k_large = 30;
  FpDenominator fp_denominator = FpDenominator::estimated_nonzeros;
};

struct ModeSummary {
  std::string label;
  int n_angle = 0;
  double mean_angle = 0.0, se_angle = 0.0;
  int n_fp = 0;
  double mean_fp = 0.0, se_fp = 0.0;
  std::vector<double> angles;  // per-replicate values, replicate order
  std::vector<double> fps;
  std::vector<Index> selected_k;  // per replicate, k_select modes only
  int failures = 0;
};

struct ExperimentResult {
  double baseline = 0.0;
  std::vector<ModeSummary> modes;
  std::map<Index, int> k_frequency;  // pooled over k_select modes
  int trace_violations = 0;          // nonmonotone objective traces observed

  const ModeSummary& mode(const std::string& label) const {
    for (const auto& m : modes)
      if (m.label == label) return m;
    throw validation_error("unknown mode label: " + label);
  }
};

namespace detail {

inline void summarize(ModeSummary& m) {
  auto mean_se = [](const std::vector<double>& v, double& mean, double& se, int& cnt) {
    cnt = static_cast<int>(v.size());
    if (v.empty()) return;
    double s = 0;
    for (double x : v) s += x;
    mean = s / static_cast<double>(v.size());
    if (v.size() < 2) return;
    double ss = 0;
    for (double x : v) ss += (x - mean) * (x - mean);
    se = std::sqrt(ss / static_cast<double>(v.size() - 1)) /
         std::sqrt(static_cast<double>(v.size()));
  };
  mean_se(m.angles, m.mean_angle, m.se_angle, m.n_angle);
  mean_se(m.fps, m.mean_fp, m.se_fp, m.n_fp);
}

inline bool trace_is_monotone(const std::vector<double>& trace, double rel_slack = 1e-9) {
  for (std::size_t i = 1; i < trace.size(); ++i)
    if (trace[i] > trace[i - 1] + rel_slack * std::abs(trace[i - 1])) return false;
  return true;
}

inline Matrix drop_zero_columns(const Matrix& B) {
  std::vector<Index> keep;
  for (Index l = 0; l < B.cols(); ++l)
    if ((B.col(l).array() != 0.0).any()) keep.push_back(l);
  Matrix out(B.rows(), static_cast<Index>(keep.size()));
  for (std::size_t l = 0; l < keep.size(); ++l) out.col(static_cast<Index>(l)) = B.col(keep[l]);
  return out;
}

}  // namespace detail

/// Run the full planted-model protocol: compute the baseline noise level,
/// generate `replicates` data sets, fit every requested mode (lambda by
/// BIC for regularized modes, lambda = 0 otherwise), and aggregate
/// principal angles, false-positive percentages and selected-k counts.
inline ExperimentResult run_experiment(const SimulationSpec& spec,
                                       const std::vector<ExperimentMode>& modes,
                                       const ExperimentOptions& options = {}) {
  spec.validate();
  if (modes.empty()) throw validation_error("run_experiment needs at least one mode");

  ExperimentResult out;
  out.baseline = baseline_noise_level(
      spec.n, spec.d, static_cast<int>(spec.k_true), options.baseline_replicates,
      detail::splitmix64(spec.seed ^ detail::kBaselineStream), options.selection.base);

  const std::set<Index> active = spec.active_variables();
  out.modes.resize(modes.size());
  for (std::size_t m = 0; m < modes.size(); ++m) out.modes[m].label = modes[m].label();

  struct PerMode {
    std::optional<double> angle, fp;
    std::optional<Index> selected_k;
    bool trace_violation = false;
    int failures = 0;
  };
  std::vector<std::vector<PerMode>> outcomes(static_cast<std::size_t>(spec.replicates),
                                             std::vector<PerMode>(modes.size()));

  detail::parallel_for(spec.replicates, [&](Index r) {
    const GeneratedData gen = generate_dataset(spec, out.baseline, static_cast<int>(r));

    for (std::size_t mi = 0; mi < modes.size(); ++mi) {
      const ExperimentMode& mode = modes[mi];
      PerMode& res = outcomes[static_cast<std::size_t>(r)][mi];
      try {
        SelectionConfig sel = options.selection;
        sel.base.seed = detail::splitmix64(spec.seed ^ (detail::kReplicateStream + mi) ^
                                           (static_cast<std::uint64_t>(r) * 0x9e3779b97f4a7c15ULL));
        sel.k_init = std::min(options.k_large, std::min(spec.n, spec.d));

        FitResult fitted;
        if (mode.rank == RankChoice::k_select) {
          if (!mode.regularized)
            throw validation_error("k selection requires the regularized mode");
          const StagedSelection staged = select_k(gen.data, sel);
          res.selected_k = staged.k;
          fitted = staged.final_fit();
        } else {
          const Index k = mode.rank == RankChoice::k_true
                              ? spec.k_true
                              : std::min(options.k_large, std::min(spec.n, spec.d));
          if (mode.regularized) {
            const SelectionReport rep = select_lambda(gen.data, k, options.lambda_grid, sel);
            fitted = *rep.chosen_fit;
          } else {
            FitConfig cfg = sel.base;
            cfg.k = k;
            cfg.lambda = Vector::Zero(1);
            fitted = fit(gen.data, cfg);
          }
        }

        res.trace_violation = !detail::trace_is_monotone(fitted.objective_trace);

        const Matrix bnz = detail::drop_zero_columns(fitted.model.B);
        if (bnz.cols() > 0) {
          res.angle = principal_angle(bnz, gen.B).degrees;
        } else {
          ++res.failures;
        }

        if (mode.regularized && fitted.nnz > 0) {
          std::set<std::pair<Index, Index>> support;
          for (Index j : active)
            for (Index l = 0; l < fitted.model.B.cols(); ++l) support.insert({j, l});
          res.fp = false_positive_rate(fitted.model.B, support, options.fp_denominator);
        }
      } catch (const std::exception&) {
        ++res.failures;
      }
    }
  });

  for (int r = 0; r < spec.replicates; ++r) {
    for (std::size_t mi = 0; mi < modes.size(); ++mi) {
      const PerMode& res = outcomes[static_cast<std::size_t>(r)][mi];
      ModeSummary& sum = out.modes[mi];
      if (res.angle) sum.angles.push_back(*res.angle);
      if (res.fp) sum.fps.push_back(*res.fp);
      if (res.selected_k) {
        sum.selected_k.push_back(*res.selected_k);
        ++out.k_frequency[*res.selected_k];
      }
      if (res.trace_violation) ++out.trace_violations;
      sum.failures += res.failures;
    }
  }

  for (auto& m : out.modes) detail::summarize(m);
  return out;
}

}  // namespace slpca
