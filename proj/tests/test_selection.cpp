#include <catch2/catch_amalgamated.hpp>

#include "test_helpers.hpp"

using namespace slpca;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

TEST_CASE("degrees_of_freedom counts") {
  SlpcaModel model;
  model.mu = Vector::Zero(200);
  model.A = Matrix::Zero(100, 2);
  model.B = Matrix::Zero(200, 2);
  model.lambda = Vector::Zero(2);
  REQUIRE(degrees_of_freedom(model, 100) == 400);

  Rng rng(5);
  for (int t = 0; t < 40; ++t) model.B(rng.next_u64() % 200, rng.next_u64() % 2) = 1.0;
  const Index nnz = (model.B.array() != 0.0).count();
  REQUIRE(degrees_of_freedom(model, 100) == 400 + nnz);

  model.B.setConstant(0.3);  // dense: all d*k loadings
  REQUIRE(degrees_of_freedom(model, 100) == 800);
}

TEST_CASE("bic formula") {
  // l = 0 is impossible for real data; check the arithmetic directly
  REQUIRE_THAT(400.0 * std::log(100.0), WithinAbs(1842.0680743952365, 1e-9));

  const BinaryDataMatrix data = testing::random_binary(25, 10, 3);
  FitConfig cfg;
  cfg.k = 2;
  cfg.lambda = Vector::Constant(1, 0.01);
  cfg.seed = 1;
  cfg.max_iter = 120;
  const FitResult res = fit(data, cfg);
  const double expect = -2.0 * log_likelihood(data, res.model) +
                        std::log(25.0) * static_cast<double>(degrees_of_freedom(res.model, 25));
  REQUIRE_THAT(bic(data, res), WithinRel(expect, 1e-12));
}

TEST_CASE("default grids match the documented values") {
  const auto rough = default_rough_grid();
  REQUIRE(rough.size() == 10);
  REQUIRE(rough[0] == 0.0);
  for (int e = 18, i = 1; e >= 10; --e, ++i) REQUIRE(rough[static_cast<std::size_t>(i)] == std::pow(1.5, -e));

  const auto fine = default_fine_grid();
  REQUIRE(fine.size() == 21);
  REQUIRE(fine[0] == 0.0);
  REQUIRE_THAT(fine[1], WithinAbs(0.0005, 1e-18));
  REQUIRE_THAT(fine[20], WithinAbs(0.0100, 1e-15));
  for (std::size_t i = 1; i < fine.size(); ++i)
    REQUIRE_THAT(fine[i] - fine[i - 1], WithinAbs(0.0005, 1e-15));
}

TEST_CASE("select_lambda report consistency and tie-breaking") {
  const BinaryDataMatrix data = testing::random_binary(30, 12, 9);
  SelectionConfig cfg;
  cfg.base.seed = 4;
  cfg.base.max_iter = 150;

  const std::vector<double> grid{0.0, 0.001, 0.004, 0.02};
  const SelectionReport rep = select_lambda(data, 2, grid, cfg);

  REQUIRE(rep.fits_performed == 4);
  REQUIRE(rep.grid.size() == 4);
  // rows ascend in lambda and stay internally consistent
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < rep.grid.size(); ++i) {
    if (i) REQUIRE(rep.grid[i].value > rep.grid[i - 1].value);
    const auto& row = rep.grid[i];
    const double m = 12.0 + 30.0 * 2.0 + static_cast<double>(row.nnz);
    REQUIRE_THAT(row.bic, WithinRel(-2.0 * row.log_lik + std::log(30.0) * m, 1e-9));
    best = std::min(best, row.bic);
  }
  bool chosen_found = false;
  for (const auto& row : rep.grid)
    if (row.value == rep.chosen) {
      REQUIRE_THAT(row.bic, WithinRel(best, 1e-12));
      chosen_found = true;
    }
  REQUIRE(chosen_found);
  REQUIRE(rep.chosen_fit.has_value());

  // singleton grid: that point wins
  const SelectionReport single = select_lambda(data, 2, {0.003}, cfg);
  REQUIRE(single.chosen == 0.003);
  REQUIRE(single.fits_performed == 1);

  REQUIRE_THROWS_AS(select_lambda(data, 2, {}, cfg), validation_error);
  REQUIRE_THROWS_AS(select_lambda(data, 2, {-0.1}, cfg), validation_error);
}

TEST_CASE("select_lambda warm starts give nonincreasing support along the grid") {
  // statistical check pooled over planted data sets: at least 95% of
  // adjacent grid pairs have nonincreasing support in lambda
  int ok = 0, total = 0;
  for (std::uint64_t seed : {77u, 78u, 79u}) {
    SimulationSpec spec;
    spec.n = 40;
    spec.d = 30;
    spec.k_true = 2;
    spec.snr = {4.0, 3.0};
    spec.support = {{0, 1, 2, 3, 4, 5}, {6, 7, 8, 9, 10, 11}};
    spec.replicates = 1;
    spec.seed = seed;
    const GeneratedData gen = generate_dataset(spec, 30.0, 0);

    SelectionConfig cfg;
    cfg.base.seed = 6;
    cfg.base.max_iter = 3000;
    cfg.base.tol = 1e-9;  // run each grid point to rest so decaying
                          // loadings die at their own lambda
    cfg.warm_start = true;
    const SelectionReport rep = select_lambda(gen.data, 2, default_fine_grid(), cfg);
    for (std::size_t i = 1; i < rep.grid.size(); ++i) {
      ++total;
      if (rep.grid[i].nnz <= rep.grid[i - 1].nnz) ++ok;
    }
  }
  REQUIRE(ok * 100 >= total * 95);
}

TEST_CASE("fresh-start mode refits every grid point independently") {
  const BinaryDataMatrix data = testing::random_binary(20, 10, 13);
  SelectionConfig cfg;
  cfg.base.seed = 2;
  cfg.base.max_iter = 100;
  cfg.warm_start = false;

  const std::vector<double> grid{0.0, 0.002};
  const SelectionReport rep = select_lambda(data, 1, grid, cfg);

  FitConfig f = cfg.base;
  f.k = 1;
  f.lambda = Vector::Zero(1);
  const FitResult zero = fit(data, f);
  for (const auto& row : rep.grid)
    if (row.value == 0.0) REQUIRE(row.log_lik == log_likelihood(data, zero.model));
}

TEST_CASE("select_k runs the three stages with the contracted fit counts") {
  // planted rank-2 signal so the scan has something to find
  SimulationSpec spec;
  spec.n = 50;
  spec.d = 40;
  spec.k_true = 2;
  spec.snr = {3.0, 2.0};
  spec.support = {{0, 1, 2, 3, 4, 5, 6, 7}, {8, 9, 10, 11, 12, 13, 14, 15}};
  spec.replicates = 1;
  spec.seed = 404;
  const GeneratedData gen = generate_dataset(spec, 4.0, 0);

  SelectionConfig cfg;
  cfg.base.seed = 8;
  cfg.base.max_iter = 150;
  cfg.k_init = 8;
  cfg.k_max = 4;
  cfg.rough_grid = {0.0, 0.002, 0.008};
  cfg.fine_grid = {0.001, 0.002, 0.003, 0.004};

  const StagedSelection sel = select_k(gen.data, cfg);
  REQUIRE(sel.stage1.stage == 1);
  REQUIRE(sel.stage2.stage == 2);
  REQUIRE(sel.stage3.stage == 3);
  REQUIRE(sel.stage1.fits_performed == 3);
  REQUIRE(sel.stage2.fits_performed == 4);
  REQUIRE(sel.stage3.fits_performed == 4);
  REQUIRE(sel.total_fits() == 3 + 4 + 4);
  REQUIRE(sel.k >= 1);
  REQUIRE(sel.k <= 4);
  REQUIRE(sel.stage2.grid.size() == 4);
  for (std::size_t i = 0; i < sel.stage2.grid.size(); ++i)
    REQUIRE(sel.stage2.grid[i].value == static_cast<double>(i + 1));
  REQUIRE(sel.lambda == sel.stage3.chosen);
  REQUIRE_NOTHROW(sel.final_fit());

  // k_max = 1: singleton scan picks k = 1
  cfg.k_max = 1;
  const StagedSelection tiny = select_k(gen.data, cfg);
  REQUIRE(tiny.k == 1);

  cfg.k_max = 100;  // > min(n, d)
  REQUIRE_THROWS_AS(select_k(gen.data, cfg), validation_error);
}

TEST_CASE("select_lambda aborts with the partial report attached") {
  const BinaryDataMatrix data = testing::random_binary(6, 4, 2);
  SelectionConfig cfg;
  cfg.base.seed = 1;
  try {
    select_lambda(data, 9, {0.0, 0.01}, cfg);  // k > min(n, d): every fit throws
    FAIL("expected selection_aborted");
  } catch (const selection_aborted& e) {
    REQUIRE(e.partial_report.fits_performed == 0);
    REQUIRE(e.partial_report.grid.empty());
  }
}

TEST_CASE("bic prefers sparse fits on pure-noise data") {
  Rng rng(31);
  const Index n = 60, d = 60;
  Matrix y(n, d);
  for (Index j = 0; j < d; ++j)
    for (Index i = 0; i < n; ++i) y(i, j) = rng.bernoulli(0.5) ? 1 : 0;
  const BinaryDataMatrix data(y);

  SelectionConfig cfg;
  cfg.base.seed = 11;
  cfg.base.max_iter = 250;
  // grid extended past the shrinkage threshold of pure noise so the BIC
  // can reach near-empty supports
  std::vector<double> grid{0.0, 0.001, 0.002, 0.005, 0.01, 0.02, 0.03, 0.05, 0.08, 0.12};
  const SelectionReport rep = select_lambda(data, 2, grid, cfg);
  REQUIRE(rep.chosen > 0.0);
  const Index nnz = rep.chosen_fit->nnz;
  REQUIRE(nnz <= (d * 2) / 20);  // support <= 5% of d*k
}
