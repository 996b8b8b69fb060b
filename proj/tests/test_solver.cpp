#include <catch2/catch_amalgamated.hpp>

#include "test_helpers.hpp"

using namespace slpca;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

BinaryDataMatrix cell(double y) { return BinaryDataMatrix(Matrix::Constant(1, 1, y)); }

double neg_log_pi(double t) { return -log_inverse_logit(t); }

}  // namespace

TEST_CASE("uniform working values") {
  const BinaryDataMatrix y1 = cell(1.0), y0 = cell(0.0);
  Matrix theta = Matrix::Zero(1, 1);

  auto wv = working_values_uniform(theta, y1);
  REQUIRE(wv.X(0, 0) == 2.0);
  REQUIRE(wv.W(0, 0) == 0.125);
  REQUIRE(wv.kind == WeightKind::scalar);

  wv = working_values_uniform(theta, y0);
  REQUIRE(wv.X(0, 0) == -2.0);

  theta(0, 0) = 2.0;
  wv = working_values_uniform(theta, y1);
  REQUIRE_THAT(wv.X(0, 0), WithinAbs(2.4768116880884702, 1e-12));
}

TEST_CASE("tight working values") {
  const BinaryDataMatrix y1 = cell(1.0);

  // near-origin limit matches the uniform curvature
  Matrix theta = Matrix::Constant(1, 1, 1e-6);
  auto wv = working_values_tight(theta, y1);
  REQUIRE(wv.W(0, 0) == 0.125);
  REQUIRE(wv.kind == WeightKind::per_cell);

  theta(0, 0) = 2.0;
  wv = working_values_tight(theta, y1);
  REQUIRE_THAT(wv.W(0, 0), WithinAbs(0.09519926949447061, 1e-13));
  REQUIRE_THAT(wv.X(0, 0), WithinAbs(2.6260705709986626, 1e-12));

  // curvature never exceeds the uniform 1/8, and q cancels in w
  Rng rng(7);
  const BinaryDataMatrix y0 = cell(0.0);
  for (int i = 0; i < 2000; ++i) {
    theta(0, 0) = -30.0 + 60.0 * rng.uniform();
    const double w1 = working_values_tight(theta, y1).W(0, 0);
    const double w0 = working_values_tight(theta, y0).W(0, 0);
    REQUIRE(w1 <= 0.125);
    REQUIRE(w1 > 0.0);
    REQUIRE(w1 == w0);
  }
}

TEST_CASE("probit working values") {
  const BinaryDataMatrix y1 = cell(1.0), y0 = cell(0.0);
  Matrix theta = Matrix::Zero(1, 1);

  auto wv = working_values_probit(theta, y1);
  REQUIRE(wv.W(0, 0) == 0.5);
  REQUIRE_THAT(wv.X(0, 0), WithinAbs(0.7978845608028654, 1e-12));
  wv = working_values_probit(theta, y0);
  REQUIRE_THAT(wv.X(0, 0), WithinAbs(-0.7978845608028654, 1e-12));

  // deep tail stays finite through the Mills ratio
  theta(0, 0) = -10.0;
  wv = working_values_probit(theta, y1);
  REQUIRE(std::isfinite(wv.X(0, 0)));
  REQUIRE_THAT(wv.X(0, 0), WithinAbs(0.0980932339625120, 1e-10));

  theta(0, 0) = -38.0;
  wv = working_values_probit(theta, y1);
  REQUIRE(std::isfinite(wv.X(0, 0)));
}

TEST_CASE("Mills ratio against asymptotic-series oracle") {
  // phi(t)/Phi(t) ~ -t / (1 - 1/t^2 + 3/t^4 - 15/t^6 + 105/t^8) for t << 0;
  // the truncation error is ~945/t^10, so the check starts where that is
  // below the tolerance
  for (double t : {-16.0, -20.0, -30.0, -40.0}) {
    const double t2 = t * t;
    const double series = 1.0 - 1.0 / t2 + 3.0 / (t2 * t2) - 15.0 / (t2 * t2 * t2) +
                          105.0 / (t2 * t2 * t2 * t2);
    REQUIRE_THAT(mills_ratio(t), WithinRel(-t / series, 1e-7));
  }
  // frozen high-precision references
  REQUIRE_THAT(mills_ratio(-8.5), WithinAbs(8.614595320165173, 1e-9));
  REQUIRE_THAT(mills_ratio(-10.0), WithinAbs(10.098093233962512, 1e-9));
  REQUIRE_THAT(mills_ratio(-14.0), WithinAbs(14.070717632184743, 1e-9));
  REQUIRE_THAT(mills_ratio(-20.0), WithinAbs(20.049753068527851, 1e-9));
  REQUIRE_THAT(mills_ratio(-30.0), WithinAbs(30.033259667433677, 1e-9));
}

TEST_CASE("gaussian working values") {
  Matrix v(2, 2);
  v << 0, 3.2, 1, -0.7;
  BinaryDataMatrix data(v, std::vector<ColKind>{ColKind::binary, ColKind::continuous});

  auto [x, w] = working_values_gaussian(data, 1, 1.0);
  REQUIRE(x[0] == 3.2);
  REQUIRE(w[0] == 1.0);
  auto [x4, w4] = working_values_gaussian(data, 1, 4.0);
  REQUIRE(w4[0] == 0.25);
  REQUIRE(w4[1] == 0.25);

  REQUIRE_THROWS_AS(working_values_gaussian(data, 0, 1.0), validation_error);
  REQUIRE_THROWS_AS(working_values_gaussian(data, 1, 0.0), validation_error);

  // mixed matrix: binary columns keep w = 1/8, continuous carry 1/sigma2
  const Matrix theta = Matrix::Zero(2, 2);
  auto wv = working_values(theta, data, Link::logit, Bound::uniform, 4.0);
  REQUIRE(wv.kind == WeightKind::per_column);
  REQUIRE(wv.W(0, 0) == 0.125);
  REQUIRE(wv.W(0, 1) == 0.25);
  REQUIRE(wv.X(0, 1) == 3.2);
}

TEST_CASE("impute_missing") {
  Matrix x(2, 2);
  x << 1, 2, 3, 4;
  Matrix theta(2, 2);
  theta << 9, 8, 7, 1.3;

  MaskMatrix none = MaskMatrix::Constant(2, 2, false);
  Matrix x1 = x;
  impute_missing(x1, theta, none);
  REQUIRE((x1.array() == x.array()).all());

  MaskMatrix all = MaskMatrix::Constant(2, 2, true);
  Matrix x2 = x;
  impute_missing(x2, theta, all);
  REQUIRE((x2.array() == theta.array()).all());

  MaskMatrix one = none;
  one(1, 1) = true;
  Matrix x3 = x;
  impute_missing(x3, theta, one);
  REQUIRE(x3(1, 1) == 1.3);
  REQUIRE(x3(0, 0) == 1.0);
}

TEST_CASE("update_intercept") {
  WorkingValues wv;
  wv.kind = WeightKind::scalar;
  wv.X = Matrix::Constant(3, 2, 5.5);
  wv.W = Matrix::Constant(3, 2, 0.125);
  const Matrix a0 = Matrix::Zero(3, 1);
  const Matrix b0 = Matrix::Zero(2, 1);
  const Vector mu = update_intercept(wv, a0, b0);
  REQUIRE(mu[0] == 5.5);
  REQUIRE(mu[1] == 5.5);

  WorkingValues wv2;
  wv2.kind = WeightKind::scalar;
  wv2.X = Matrix(2, 1);
  wv2.X << 1, 3;
  wv2.W = Matrix::Constant(2, 1, 0.125);
  REQUIRE(update_intercept(wv2, Matrix::Zero(2, 1), Matrix::Zero(1, 1))[0] == 2.0);

  // weighted mean: weights (1, 3) on values (1, 3) -> 2.5
  wv2.kind = WeightKind::per_cell;
  wv2.W << 1, 3;
  REQUIRE_THAT(update_intercept(wv2, Matrix::Zero(2, 1), Matrix::Zero(1, 1))[0],
               WithinAbs(2.5, 1e-15));
}

TEST_CASE("update_scores single-column projection") {
  WorkingValues wv;
  wv.kind = WeightKind::scalar;
  wv.X = Matrix(3, 2);
  wv.X << 2, 0, -1, 0, 0.5, 0;
  wv.W = Matrix::Constant(3, 2, 0.125);
  Matrix A = testing::random_orthonormal(3, 1, 5);
  Matrix B = Matrix::Zero(2, 1);
  B(0, 0) = 1.0;  // e_1
  update_scores(wv, Vector::Zero(2), A, B);
  REQUIRE_THAT(A.col(0).norm(), WithinAbs(1.0, 1e-12));
  Vector expect(3);
  expect << 2, -1, 0.5;
  expect.normalize();
  REQUIRE_THAT(std::abs(A.col(0).dot(expect)), WithinAbs(1.0, 1e-12));
}

TEST_CASE("update_scores recovers a planted span and preserves A B^T") {
  const Index n = 20, d = 12, k = 2;
  const Matrix a_true = testing::random_orthonormal(n, k, 11);
  Rng rng(12);
  Matrix b_true(d, k);
  for (Index l = 0; l < k; ++l)
    for (Index j = 0; j < d; ++j) b_true(j, l) = rng.normal();

  WorkingValues wv;
  wv.kind = WeightKind::scalar;
  wv.X = a_true * b_true.transpose();
  wv.W = Matrix::Constant(n, d, 0.125);

  Matrix A = testing::random_orthonormal(n, k, 13);
  Matrix B = b_true;
  const Matrix ab_before = A * B.transpose();
  update_scores(wv, Vector::Zero(d), A, B);

  REQUIRE_THAT(principal_angle(A, a_true).degrees, WithinAbs(0.0, 1e-8));
  REQUIRE_THAT((A.transpose() * A - Matrix::Identity(k, k)).norm(), WithinAbs(0.0, 1e-12));

  // the Remark's identity: the absorbed pair reproduces the pre-QR product
  WorkingValues wv2 = wv;
  Matrix A2 = testing::random_orthonormal(n, k, 14);
  Matrix B2 = b_true;
  const Matrix xstar = wv2.X;
  const Matrix ahat = xstar * B2 * (B2.transpose() * B2).inverse();
  const Matrix expect_ab = ahat * B2.transpose();
  update_scores(wv2, Vector::Zero(d), A2, B2);
  REQUIRE_THAT((A2 * B2.transpose() - expect_ab).norm(), WithinAbs(0.0, 1e-12));
}

TEST_CASE("update_scores survives an all-zero B") {
  WorkingValues wv;
  wv.kind = WeightKind::scalar;
  wv.X = Matrix::Random(6, 4);
  wv.W = Matrix::Constant(6, 4, 0.125);
  Matrix A = testing::random_orthonormal(6, 2, 17);
  Matrix B = Matrix::Zero(4, 2);
  update_scores(wv, Vector::Zero(4), A, B);
  REQUIRE((B.array() == 0.0).all());
  REQUIRE_THAT((A.transpose() * A - Matrix::Identity(2, 2)).norm(), WithinAbs(0.0, 1e-12));
}

TEST_CASE("update_loadings shrinkage formula") {
  // |b_m| = 1, c = 2, n = 10, lambda = 0.05 -> 2/3
  const Index n = 10, d = 1, k = 1;
  const Matrix A = Matrix::Constant(n, k, 1.0 / std::sqrt(10.0));
  WorkingValues wv;
  wv.kind = WeightKind::scalar;
  wv.W = Matrix::Constant(n, d, 0.125);
  wv.X = 2.0 * A;  // c = a^T x* = 2

  Matrix anchor = Matrix::Constant(1, 1, 1.0);
  Matrix B = update_loadings(wv, Vector::Zero(1), A, anchor, Vector::Constant(1, 0.05), 1e-10);
  REQUIRE_THAT(B(0, 0), WithinRel(2.0 / 3.0, 1e-12));

  // lambda = 0: no shrinkage
  B = update_loadings(wv, Vector::Zero(1), A, anchor, Vector::Zero(1), 1e-10);
  REQUIRE_THAT(B(0, 0), WithinRel(2.0, 1e-12));

  // zero anchor absorbs
  anchor(0, 0) = 0.0;
  B = update_loadings(wv, Vector::Zero(1), A, anchor, Vector::Constant(1, 0.05), 1e-10);
  REQUIRE(B(0, 0) == 0.0);

  // probit weight 1/2: denominator |b| + n lambda
  wv.W.setConstant(0.5);
  anchor(0, 0) = 1.0;
  B = update_loadings(wv, Vector::Zero(1), A, anchor, Vector::Constant(1, 0.1), 1e-10);
  REQUIRE_THAT(B(0, 0), WithinRel(2.0 / (1.0 + 10.0 * 0.1), 1e-12));
}

TEST_CASE("update_loadings per-cell path agrees with shrinkage for constant weights") {
  const Index n = 15, d = 6, k = 2;
  const Matrix A = testing::random_orthonormal(n, k, 23);
  Rng rng(24);
  WorkingValues wv;
  wv.X = Matrix(n, d);
  for (Index j = 0; j < d; ++j)
    for (Index i = 0; i < n; ++i) wv.X(i, j) = rng.normal();
  wv.W = Matrix::Constant(n, d, 0.125);
  Matrix anchor(d, k);
  for (Index l = 0; l < k; ++l)
    for (Index j = 0; j < d; ++j) anchor(j, l) = rng.normal();
  const Vector lam = Vector::Constant(k, 0.02);
  const Vector mu = Vector::Zero(d);

  wv.kind = WeightKind::scalar;
  const Matrix b_fast = update_loadings(wv, mu, A, anchor, lam, 1e-10);
  wv.kind = WeightKind::per_cell;
  const Matrix b_gen = update_loadings(wv, mu, A, anchor, lam, 1e-10);
  REQUIRE_THAT((b_fast - b_gen).norm(), WithinAbs(0.0, 1e-9));
}

TEST_CASE("one-step shrinkage magnitude is nonincreasing in lambda") {
  const Index n = 12, d = 5, k = 2;
  const Matrix A = testing::random_orthonormal(n, k, 33);
  Rng rng(34);
  WorkingValues wv;
  wv.kind = WeightKind::scalar;
  wv.X = Matrix(n, d);
  for (Index j = 0; j < d; ++j)
    for (Index i = 0; i < n; ++i) wv.X(i, j) = 2.0 * rng.normal();
  wv.W = Matrix::Constant(n, d, 0.125);
  Matrix anchor(d, k);
  for (Index l = 0; l < k; ++l)
    for (Index j = 0; j < d; ++j) anchor(j, l) = rng.normal();
  const Vector mu = Vector::Zero(d);

  Matrix prev;
  bool first = true;
  for (double lam : {0.0, 0.001, 0.01, 0.1, 1.0}) {
    const Matrix b = update_loadings(wv, mu, A, anchor, Vector::Constant(k, lam), 1e-10);
    if (!first)
      for (Index l = 0; l < k; ++l)
        for (Index j = 0; j < d; ++j)
          REQUIRE(std::abs(b(j, l)) <= std::abs(prev(j, l)) + 1e-12);
    prev = b;
    first = false;
  }
}

TEST_CASE("majorization inequalities on random sweeps") {
  Rng rng(55);
  auto logpi = [](double t) { return log_inverse_logit(t); };
  for (int i = 0; i < 10000; ++i) {
    const double x = -30.0 + 60.0 * rng.uniform();
    const double y = -30.0 + 60.0 * rng.uniform();
    const double lhs = neg_log_pi(x);
    const double lin = -(1.0 - inverse_logit(y)) * (x - y);
    const double uniform = neg_log_pi(y) + lin + 0.125 * (x - y) * (x - y);
    const double wt = std::abs(y) < 1e-4 ? 0.125 : std::tanh(0.5 * y) / (4.0 * y);
    const double tight = neg_log_pi(y) + lin + wt * (x - y) * (x - y);
    REQUIRE(lhs <= uniform + 1e-9);
    REQUIRE(lhs <= tight + 1e-9);
    REQUIRE(tight <= uniform + 1e-12);

    // probit bound
    const double pl = -log_normal_cdf(x);
    const double pr = -log_normal_cdf(y) - mills_ratio(y) * (x - y) + 0.5 * (x - y) * (x - y);
    REQUIRE(pl <= pr + 1e-9);

    // absolute-value bound, y != 0
    const double ay = std::abs(y) + 1e-3;
    REQUIRE(std::abs(x) <= (x * x + ay * ay) / (2.0 * ay) + 1e-12);
    (void)logpi;
  }

  // equality at the tangent point
  for (int i = 0; i < 200; ++i) {
    const double y = -25.0 + 50.0 * rng.uniform();
    const double lhs = neg_log_pi(y);
    REQUIRE_THAT(lhs, WithinAbs(neg_log_pi(y) + 0.0, 1e-12));
    const double ay = std::abs(y) + 1e-3;
    REQUIRE_THAT((ay * ay + ay * ay) / (2.0 * ay), WithinAbs(ay, 1e-12));
  }
}

namespace {

// Evaluate the quadratic surrogate at its own tangent point together with
// the constant discarded when completing the square; their sum must equal
// the penalized objective there.
void check_tangency(const BinaryDataMatrix& data, const SlpcaModel& model, Bound bound) {
  const Matrix theta = canonical_matrix(model);
  WorkingValues wv = working_values(theta, data, model.link, bound, model.sigma2.value_or(1.0));
  impute_missing(wv.X, theta, data.mask());

  const Index n = data.rows();
  double quad = 0.0, constant = 0.0;
  for (Index j = 0; j < data.cols(); ++j) {
    for (Index i = 0; i < n; ++i) {
      const double w = wv.W(i, j);
      quad += w * (theta(i, j) - wv.X(i, j)) * (theta(i, j) - wv.X(i, j));
      if (data.is_missing(i, j)) continue;  // imputed cells contribute zero at tangency
      if (data.col_kind(j) == ColKind::binary) {
        const double qt = data.q(i, j) * theta(i, j);
        const double grad = model.link == Link::logit ? 1.0 - inverse_logit(qt) : mills_ratio(qt);
        const double nll = model.link == Link::logit ? -log_inverse_logit(qt) : -log_normal_cdf(qt);
        constant += nll - grad * grad / (4.0 * w);
      } else {
        constant += std::log(*model.sigma2);  // deviance form keeps its log term
      }
    }
  }
  double pen_quad = 0.0, pen_const = 0.0;
  for (Index l = 0; l < model.k(); ++l) {
    for (Index j = 0; j < data.cols(); ++j) {
      const double b = std::abs(model.B(j, l));
      if (model.lambda[l] == 0.0 || b == 0.0) continue;
      pen_quad += model.lambda[l] * b / 2.0;   // b^T D b at the anchor
      pen_const += model.lambda[l] * b / 2.0;  // the discarded anchor half
    }
  }
  const double g_at = quad + static_cast<double>(n) * pen_quad;
  const double total = g_at + constant + static_cast<double>(n) * pen_const;
  const double s = penalized_objective(data, model);
  REQUIRE_THAT(total, WithinRel(s, 1e-9));
}

}  // namespace

TEST_CASE("surrogate tangency at the iterate") {
  for (std::uint64_t seed : {3u, 4u, 5u}) {
    const BinaryDataMatrix data = testing::random_binary(14, 9, seed, 0.4, seed == 5u ? 0.2 : 0.0);
    for (Link link : {Link::logit, Link::probit}) {
      for (Bound bound : {Bound::uniform, Bound::tight}) {
        SlpcaModel model = testing::random_model(14, 9, 2, seed + 10, link, 0.01);
        check_tangency(data, model, bound);
      }
    }
  }

  // mixed-type data
  Rng rng(91);
  Matrix v(10, 4);
  for (Index i = 0; i < 10; ++i) {
    v(i, 0) = rng.bernoulli(0.5) ? 1 : 0;
    v(i, 1) = rng.bernoulli(0.3) ? 1 : 0;
    v(i, 2) = rng.normal();
    v(i, 3) = 2.0 + rng.normal();
  }
  BinaryDataMatrix mixed(v, std::vector<ColKind>{ColKind::binary, ColKind::binary,
                                                 ColKind::continuous, ColKind::continuous});
  SlpcaModel model = testing::random_model(10, 4, 2, 92, Link::logit, 0.01);
  model.sigma2 = 1.7;
  check_tangency(mixed, model, Bound::uniform);
}

TEST_CASE("fit: monotone descent across links, bounds, missingness and penalties") {
  int checked = 0;
  for (std::uint64_t seed : {1u, 2u}) {
    for (Link link : {Link::logit, Link::probit}) {
      for (Bound bound : {Bound::uniform, Bound::tight}) {
        for (double miss : {0.0, 0.3}) {
          for (double lam : {0.0, 0.01}) {
            const BinaryDataMatrix data = testing::random_binary(25, 14, seed * 7 + 1, 0.35, miss);
            FitConfig cfg;
            cfg.k = 2;
            cfg.lambda = Vector::Constant(1, lam);
            cfg.link = link;
            cfg.bound = bound;
            cfg.seed = seed;
            cfg.max_iter = 250;
            const FitResult res = fit(data, cfg);
            REQUIRE(testing::trace_monotone(res.objective_trace));
            REQUIRE_THAT((res.model.A.transpose() * res.model.A -
                          Matrix::Identity(cfg.k, cfg.k)).norm(),
                         WithinAbs(0.0, 1e-8));
            REQUIRE(static_cast<int>(res.objective_trace.size()) == res.iterations + 1);
            ++checked;
          }
        }
      }
    }
  }
  REQUIRE(checked == 32);
}

TEST_CASE("fit: mixed binary/continuous data descends and estimates sigma2") {
  Rng rng(123);
  const Index n = 30, d = 8;
  Matrix v(n, d);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < 6; ++j) v(i, j) = rng.bernoulli(0.5) ? 1 : 0;
    v(i, 6) = 0.5 * rng.normal();
    v(i, 7) = 1.0 + 0.5 * rng.normal();
  }
  std::vector<ColKind> kinds(8, ColKind::binary);
  kinds[6] = kinds[7] = ColKind::continuous;
  BinaryDataMatrix data(v, kinds);

  FitConfig cfg;
  cfg.k = 2;
  cfg.lambda = Vector::Constant(1, 0.005);
  cfg.seed = 9;
  cfg.max_iter = 200;
  const FitResult res = fit(data, cfg);
  REQUIRE(testing::trace_monotone(res.objective_trace));
  REQUIRE(res.model.sigma2.has_value());
  REQUIRE(*res.model.sigma2 > 0.0);
  REQUIRE(*res.model.sigma2 < 2.0);
}

TEST_CASE("fit: empty mask is bitwise identical to the complete-data path") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const BinaryDataMatrix complete = testing::random_binary(15, 8, 100 + seed);
    const BinaryDataMatrix masked(complete.values(), MaskMatrix::Constant(15, 8, false));
    FitConfig cfg;
    cfg.k = 2;
    cfg.lambda = Vector::Constant(1, 0.002);
    cfg.seed = seed;
    cfg.max_iter = 60;
    const FitResult a = fit(complete, cfg);
    const FitResult b = fit(masked, cfg);
    REQUIRE(a.objective_trace.size() == b.objective_trace.size());
    for (std::size_t m = 0; m < a.objective_trace.size(); ++m)
      REQUIRE(a.objective_trace[m] == b.objective_trace[m]);
    REQUIRE((a.model.B.array() == b.model.B.array()).all());
  }
}

TEST_CASE("fit: zeros are absorbing across iterations") {
  const BinaryDataMatrix data = testing::random_binary(30, 20, 777);
  FitConfig cfg;
  cfg.k = 2;
  cfg.lambda = Vector::Constant(1, 0.02);
  cfg.seed = 3;
  cfg.max_iter = 400;

  // replay the fit manually to watch the support at every iterate
  const Vector lambda = cfg.lambda_vector();
  SlpcaModel model = fit(data, cfg).model;  // start from a converged state
  MaskMatrix was_zero = (model.B.array() == 0.0).matrix();
  REQUIRE(was_zero.any());
  for (int m = 0; m < 25; ++m) {
    const Matrix theta = canonical_matrix(model);
    WorkingValues wv = working_values(theta, data, cfg.link, cfg.bound, 1.0);
    impute_missing(wv.X, theta, data.mask());
    const Matrix b_anchor = model.B;
    model.mu = update_intercept(wv, model.A, model.B);
    update_scores(wv, model.mu, model.A, model.B);
    model.B = update_loadings(wv, model.mu, model.A, b_anchor, lambda, cfg.zero_eps);
    for (Index l = 0; l < 2; ++l)
      for (Index j = 0; j < 20; ++j)
        if (was_zero(j, l)) REQUIRE(model.B(j, l) == 0.0);
    was_zero = (model.B.array() == 0.0).matrix();
  }
}

TEST_CASE("fit: huge lambda zeroes every loading and leaves empirical logits") {
  Rng rng(42);
  const Index n = 20, d = 10;
  Matrix y(n, d);
  for (Index j = 0; j < d; ++j)
    for (Index i = 0; i < n; ++i) y(i, j) = rng.bernoulli(0.5) ? 1.0 : 0.0;
  const BinaryDataMatrix data(y);

  FitConfig cfg;
  cfg.k = 1;
  cfg.lambda = Vector::Constant(1, 1000.0);
  cfg.seed = 3;
  cfg.tol = 1e-12;
  const FitResult res = fit(data, cfg);
  REQUIRE(res.nnz == 0);
  REQUIRE((res.model.B.array() == 0.0).all());
  for (Index j = 0; j < d; ++j)
    REQUIRE_THAT(res.model.mu[j], WithinAbs(logit(y.col(j).mean()), 1e-4));

  double entropy_fit = 0.0;
  for (Index j = 0; j < d; ++j) {
    const double p = y.col(j).mean();
    for (Index i = 0; i < n; ++i) entropy_fit -= std::log(y(i, j) > 0.5 ? p : 1.0 - p);
  }
  REQUIRE_THAT(res.final_objective(), WithinRel(entropy_fit, 1e-6));
}

TEST_CASE("fit: restarts return the best objective with deterministic ties") {
  const BinaryDataMatrix data = testing::random_binary(20, 10, 31);
  FitConfig cfg;
  cfg.k = 2;
  cfg.lambda = Vector::Constant(1, 0.005);
  cfg.seed = 17;
  cfg.max_iter = 150;

  cfg.restarts = 4;
  const FitResult multi = fit(data, cfg);
  for (int r = 0; r < 4; ++r) {
    FitConfig single = cfg;
    single.restarts = 1;
    // restart r uses the derived stream (seed, r); emulate by refitting each
    const FitResult one =
        detail::fit_single(data, single, single.lambda_vector(),
                           Rng::derive(cfg.seed, static_cast<std::uint64_t>(r)), nullptr);
    REQUIRE(multi.final_objective() <= one.final_objective() + 1e-12);
  }

  // repeated calls are bitwise-deterministic
  const FitResult again = fit(data, cfg);
  REQUIRE(again.final_objective() == multi.final_objective());
  REQUIRE((again.model.B.array() == multi.model.B.array()).all());
}

TEST_CASE("fit: rank-one planted model, penalty recovers support") {
  // ~ the rank-one illustration: d >> n cells driven by 20 active columns
  const Index n = 60, d = 80;
  Rng rng(2024);
  Matrix a(n, 1), b = Matrix::Zero(d, 1);
  for (Index i = 0; i < n; ++i) a(i, 0) = 2.2 * rng.normal();
  for (Index j = 0; j < 16; ++j) b(j, 0) = 1.0;
  const Matrix theta = a * b.transpose();
  Matrix y(n, d);
  for (Index j = 0; j < d; ++j)
    for (Index i = 0; i < n; ++i) y(i, j) = rng.bernoulli(inverse_logit(theta(i, j))) ? 1 : 0;
  const BinaryDataMatrix data(y);

  FitConfig cfg;
  cfg.k = 1;
  cfg.seed = 5;
  cfg.max_iter = 500;
  cfg.lambda = Vector::Constant(1, 0.04);
  const FitResult reg = fit(data, cfg);
  cfg.lambda = Vector::Zero(1);
  const FitResult unreg = fit(data, cfg);

  Index zero_on_noise = 0, kept_on_support = 0;
  for (Index j = 0; j < d; ++j) {
    if (j < 16 && reg.model.B(j, 0) != 0.0) ++kept_on_support;
    if (j >= 16 && reg.model.B(j, 0) == 0.0) ++zero_on_noise;
  }
  REQUIRE(kept_on_support >= 14);             // nearly all true support retained
  REQUIRE(zero_on_noise >= 52);               // most noise columns zeroed
  REQUIRE(unreg.nnz == d);                    // lambda = 0 keeps everything
  REQUIRE(reg.nnz < unreg.nnz);
}

TEST_CASE("fit: config validation") {
  const BinaryDataMatrix data = testing::random_binary(6, 4, 3);
  FitConfig cfg;
  cfg.k = 5;  // > min(n, d)
  REQUIRE_THROWS_AS(fit(data, cfg), validation_error);
  cfg.k = 0;
  REQUIRE_THROWS_AS(fit(data, cfg), validation_error);
  cfg.k = 1;
  cfg.tol = 0.0;
  REQUIRE_THROWS_AS(fit(data, cfg), validation_error);
  cfg.tol = 1e-6;
  cfg.lambda = Vector::Constant(1, -0.5);
  REQUIRE_THROWS_AS(fit(data, cfg), validation_error);
  cfg.lambda = Vector::Zero(3);  // neither scalar nor length k
  REQUIRE_THROWS_AS(fit(data, cfg), validation_error);
  cfg.lambda = Vector::Zero(1);
  cfg.prob_clamp = 0.7;
  REQUIRE_THROWS_AS(fit(data, cfg), validation_error);
}
