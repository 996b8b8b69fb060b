#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "slpca/solver.hpp"

namespace slpca {

inline std::vector<double> default_rough_grid() {
  std::vector<double> g{0.0};
  for (int e = 18; e >= 10; --e) g.push_back(std::pow(1.5, -e));
  return g;
}

inline std::vector<double> default_fine_grid() {
  std::vector<double> g;
  for (int i = 0; i <= 20; ++i) g.push_back(static_cast<double>(i) * 0.0005);
  return g;
}

struct SelectionGridRow {
  double value = 0.0;  // lambda (or k in the rank-scan stage)
  double bic = 0.0;
  Index nnz = 0;
  double log_lik = 0.0;
};

struct SelectionReport {
  std::vector<SelectionGridRow> grid;  // ascending in value
  double chosen = 0.0;
  int stage = 0;  // 1..3 within the staged search, 0 standalone
  int fits_performed = 0;
  std::optional<FitResult> chosen_fit;
};

/// Raised when a grid fit fails; carries whatever was completed.
class selection_aborted : public std::runtime_error {
 public:
  selection_aborted(const std::string& msg, SelectionReport partial)
      : std::runtime_error(msg), partial_report(std::move(partial)) {}
  SelectionReport partial_report;
};

struct StagedSelection {
  Index k = 0;
  double lambda = 0.0;
  SelectionReport stage1, stage2, stage3;
  int total_fits() const {
    return stage1.fits_performed + stage2.fits_performed + stage3.fits_performed;
  }
  const FitResult& final_fit() const { return *stage3.chosen_fit; }
};

struct SelectionConfig {
  FitConfig base;  // k and lambda are overridden per grid point
  Index k_init = 30;
  Index k_max = 10;
  std::vector<double> rough_grid = default_rough_grid();
  std::vector<double> fine_grid = default_fine_grid();
  bool warm_start = true;  // warm along the lambda grid; fresh mode refits from scratch
};

/// m(lambda) = d + nk + |nonzero loadings|.
inline Index degrees_of_freedom(const SlpcaModel& model, Index n) {
  const Index nnz = (model.B.array() != 0.0).count();
  return model.B.rows() + n * model.k() + nnz;
}

/// BIC = -2 l + log(n) m(lambda), with l the observed-data log likelihood.
inline double bic(const BinaryDataMatrix& data, const FitResult& result,
                  double prob_clamp = 1e-12) {
  const double ll = log_likelihood(data, result.model, prob_clamp);
  return -2.0 * ll +
         std::log(static_cast<double>(data.rows())) *
             static_cast<double>(degrees_of_freedom(result.model, data.rows()));
}

/// Grid search for the penalty at fixed rank.  Fits are run in descending
/// lambda order, each warm-started from the previous fit unless
/// config.warm_start is false; the report is re-sorted ascending.  Ties in
/// BIC go to the largest lambda (the sparsest model).
inline SelectionReport select_lambda(const BinaryDataMatrix& data, Index k,
                                     const std::vector<double>& grid,
                                     const SelectionConfig& config) {
  if (grid.empty()) throw validation_error("lambda grid must be nonempty");
  for (double l : grid)
    if (!(l >= 0)) throw validation_error("lambda grid entries must be >= 0");

  std::vector<double> order(grid);
  std::sort(order.begin(), order.end(), std::greater<>());

  SelectionReport report;
  std::optional<SlpcaModel> prev;
  double best_bic = std::numeric_limits<double>::infinity();

  for (double lam : order) {
    FitConfig cfg = config.base;
    cfg.k = k;
    cfg.lambda = Vector::Constant(1, lam);
    FitResult res;
    try {
      if (config.warm_start && prev) {
        res = fit(data, cfg, *prev);
      } else {
        res = fit(data, cfg);
      }
    } catch (const std::exception& e) {
      std::sort(report.grid.begin(), report.grid.end(),
                [](const auto& a, const auto& b) { return a.value < b.value; });
      throw selection_aborted(std::string("fit failed at lambda=") + std::to_string(lam) + ": " +
                                  e.what(),
                              std::move(report));
    }
    ++report.fits_performed;
    const double ll = log_likelihood(data, res.model, cfg.prob_clamp);
    const double b = -2.0 * ll +
                     std::log(static_cast<double>(data.rows())) *
                         static_cast<double>(degrees_of_freedom(res.model, data.rows()));
    report.grid.push_back({lam, b, res.nnz, ll});
    if (config.warm_start) prev = res.model;
    if (b < best_bic) {  // descending scan: ties keep the larger lambda
      best_bic = b;
      report.chosen = lam;
      report.chosen_fit = std::move(res);
    }
  }
  std::sort(report.grid.begin(), report.grid.end(),
            [](const auto& a, const auto& b) { return a.value < b.value; });
  return report;
}

/// The staged rank-and-penalty search: (1) rough lambda grid at a large
/// fixed rank, (2) rank scan 1..k_max at the stage-1 lambda, (3) fine
/// lambda grid at the stage-2 rank.  BIC ties go to the smallest k.
inline StagedSelection select_k(const BinaryDataMatrix& data, const SelectionConfig& config) {
  const Index k_cap = std::min(data.rows(), data.cols());
  if (config.k_max < 1 || config.k_max > k_cap)
    throw validation_error("k_max must be in [1, min(n, d)]");
  const Index k_init = std::min(config.k_init, k_cap);

  StagedSelection out;
  out.stage1 = select_lambda(data, k_init, config.rough_grid, config);
  out.stage1.stage = 1;
  const double lambda1 = out.stage1.chosen;

  out.stage2.stage = 2;
  double best_bic = std::numeric_limits<double>::infinity();
  for (Index k = 1; k <= config.k_max; ++k) {
    FitConfig cfg = config.base;
    cfg.k = k;
    cfg.lambda = Vector::Constant(1, lambda1);
    FitResult res;
    try {
      res = fit(data, cfg);
    } catch (const std::exception& e) {
      throw selection_aborted(
          std::string("fit failed at k=") + std::to_string(k) + ": " + e.what(), out.stage2);
    }
    ++out.stage2.fits_performed;
    const double ll = log_likelihood(data, res.model, cfg.prob_clamp);
    const double b = -2.0 * ll +
                     std::log(static_cast<double>(data.rows())) *
                         static_cast<double>(degrees_of_freedom(res.model, data.rows()));
    out.stage2.grid.push_back({static_cast<double>(k), b, res.nnz, ll});
    if (b < best_bic) {  // ascending scan: ties keep the smaller k
      best_bic = b;
      out.stage2.chosen = static_cast<double>(k);
      out.stage2.chosen_fit = std::move(res);
    }
  }
  out.k = static_cast<Index>(out.stage2.chosen);

  out.stage3 = select_lambda(data, out.k, config.fine_grid, config);
  out.stage3.stage = 3;
  out.lambda = out.stage3.chosen;
  return out;
}

}  // namespace slpca
