#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <set>

#include "ape/pilot.hpp"
#include "ape/rng.hpp"
#include "oracles/prox_grad.hpp"

using namespace ape;

namespace {

// Logistic design with an optional dense-decay signal, for exercising the
// solver on realistic shapes without depending on the simulation module.
Dataset make_logistic_data(Index n, Index p, const Vecd& theta, uint64_t seed) {
  Dataset d;
  d.X.resize(n, p);
  RngStream xs(seed, stream_id(streams::design_x));
  xs.fill_normal(d.X.data(), n * p);
  RngStream ys(seed, stream_id(streams::response));
  d.Y.resize(n);
  const Vecd eta = d.X * theta;
  for (Index i = 0; i < n; ++i)
    d.Y[i] = ys.uniform() < eval_link(LinkKind::logistic, eta[i]).Psi ? 1.0 : 0.0;
  return d;
}

Vecd sparse_theta(Index p, std::initializer_list<std::pair<int, double>> entries) {
  Vecd t = Vecd::Zero(p);
  for (auto [k, v] : entries) t[k] = v;
  return t;
}

}  // namespace

TEST_CASE("lambda at or above the path head produces the zero fit") {
  const Vecd theta = sparse_theta(20, {{0, 1.0}, {3, -0.8}});
  const Dataset d = make_logistic_data(120, 20, theta, 7);
  const LambdaPath path = lambda_path(d, LinkKind::logistic, 40);
  CHECK(!path.degenerate);
  for (Index i = 1; i < path.values.size(); ++i)
    CHECK(path.values[i] < path.values[i - 1]);

  for (double lam : {path.values[0], path.values[0] * 1.5}) {
    const PilotFit fit = fit_pilot(d, LinkKind::logistic, lam);
    CHECK(fit.converged);
    CHECK(fit.theta.lpNorm<Eigen::Infinity>() == 0.0);
    CHECK(fit.support.empty());
  }
}

TEST_CASE("single column, lambda 0: logistic MLE matches the closed form") {
  // With x_i = 1 for all i the MLE solves Psi(theta) = mean(y).
  Dataset d;
  d.X = Matd::Ones(50, 1);
  d.Y.resize(50);
  for (Index i = 0; i < 50; ++i) d.Y[i] = i < 15 ? 1.0 : 0.0;
  PilotOptions tight;
  tight.kkt_tol = 1e-12;
  const PilotFit fit = fit_pilot(d, LinkKind::logistic, 0.0, tight);
  const double ybar = 0.3;
  CHECK(fit.theta[0] == doctest::Approx(std::log(ybar / (1 - ybar))).epsilon(1e-8));
  CHECK(fit.converged);
}

TEST_CASE("identity link, lambda 0 reproduces least squares") {
  RngStream rs(21, 0);
  Matd X(40, 3);
  rs.fill_normal(X.data(), X.size());
  X *= 0.1;
  const Vecd beta = (Vecd(3) << 0.8, -0.5, 0.2).finished();
  Dataset d;
  d.X = X;
  Vecd noise(40);
  rs.fill_normal(noise);
  d.Y = (X * beta + 0.01 * noise).cwiseMax(0.0).cwiseMin(1.0);
  PilotOptions tight;
  tight.kkt_tol = 1e-12;
  const PilotFit fit = fit_pilot(d, LinkKind::identity, 0.0, tight);
  const Vecd ols = (X.transpose() * X).ldlt().solve(X.transpose() * d.Y);
  CHECK((fit.theta - ols).lpNorm<Eigen::Infinity>() < 1e-8);
}

TEST_CASE("KKT certificate holds across links and designs") {
  RngStream pick(3, 0);
  for (const LinkKind link : {LinkKind::logistic, LinkKind::probit, LinkKind::identity}) {
    for (int rep = 0; rep < 4; ++rep) {
      const Index n = 80 + 20 * rep;
      const Index p = 30 + 10 * rep;
      const Vecd theta = sparse_theta(p, {{1, 0.9}, {4, -0.7}, {9, 0.5}});
      Dataset d = make_logistic_data(n, p, theta, 100 + static_cast<uint64_t>(rep));
      if (link == LinkKind::identity) {
        // keep responses in [0, 1] for the quasi-likelihood domain
        const Vecd eta = d.X * theta;
        for (Index i = 0; i < n; ++i)
          d.Y[i] = std::clamp(0.5 + 0.1 * eta[i], 0.0, 1.0);
      }
      const LambdaPath path = lambda_path(d, link, 10);
      const double lam = path.values[path.values.size() / 2];
      const PilotFit fit = fit_pilot(d, link, lam);
      CHECK(fit.converged);
      CHECK(fit.kkt_violation <= 1e-6);
      CHECK(fit.objective == doctest::Approx(fit.objective));  // finite
    }
  }
}

TEST_CASE("objective agrees with the proximal-gradient reference") {
  for (int rep = 0; rep < 5; ++rep) {
    const Index n = 100, p = 50;
    const Vecd theta = sparse_theta(p, {{0, 1.2}, {7, -0.9}, {20, 0.6}});
    const Dataset d = make_logistic_data(n, p, theta, 500 + static_cast<uint64_t>(rep));
    const LambdaPath path = lambda_path(d, LinkKind::logistic, 8);
    const double lam = path.values[4];
    const PilotFit fit = fit_pilot(d, LinkKind::logistic, lam);
    const auto ref = oracle::prox_grad_reference(d.X, d.Y, LinkKind::logistic, lam);
    CHECK(std::abs(fit.objective - ref.objective) < 1e-8);
  }
}

TEST_CASE("path fits match cold fits and screening changes nothing") {
  const Index n = 120, p = 60;
  const Vecd theta = sparse_theta(p, {{2, 1.0}, {11, -0.8}, {30, 0.5}});
  const Dataset d = make_logistic_data(n, p, theta, 42);
  const LambdaPath path = lambda_path(d, LinkKind::logistic, 12);
  const auto fits = fit_pilot_path(d, LinkKind::logistic, path.values);
  REQUIRE(fits.size() == 12);
  for (size_t t = 0; t < fits.size(); t += 3) {
    CHECK(fits[t].kkt_violation <= 1e-6);
    const PilotFit cold = fit_pilot(d, LinkKind::logistic, path.values[static_cast<Index>(t)]);
    CHECK(std::abs(fits[t].objective - cold.objective) < 1e-9);
  }
}

TEST_CASE("cross-validated support contains strong true signals") {
  const Index n = 200, p = 50;
  const Vecd theta = sparse_theta(p, {{0, 1.5}, {9, 1.5}, {19, -1.5}, {29, 1.5}, {39, -1.5}});
  const Dataset d = make_logistic_data(n, p, theta, 11);
  PilotOptions opts;
  opts.n_lambdas = 50;
  const PilotFit fit = fit_pilot_cv(d, LinkKind::logistic, 202, opts);
  const std::set<Index> got(fit.support.begin(), fit.support.end());
  for (Index k : {0, 9, 19, 29, 39}) CHECK(got.count(k) == 1);
}

TEST_CASE("cross-validation is deterministic and validates its arguments") {
  const Vecd theta = sparse_theta(10, {{0, 1.0}});
  const Dataset d = make_logistic_data(60, 10, theta, 9);
  PilotOptions opts;
  opts.n_lambdas = 20;
  const CvSelection a = select_lambda_cv(d, LinkKind::logistic, 5, 77, opts);
  const CvSelection b = select_lambda_cv(d, LinkKind::logistic, 5, 77, opts);
  CHECK(a.lambda == b.lambda);
  CHECK((a.mean_deviance - b.mean_deviance).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK_THROWS_AS(select_lambda_cv(d, LinkKind::logistic, 1, 0, opts), std::invalid_argument);
  CHECK_THROWS_AS(select_lambda_cv(d, LinkKind::logistic, 61, 0, opts), std::invalid_argument);
}

TEST_CASE("degenerate path: zero gradient at zero is flagged") {
  Dataset d;
  d.X.resize(6, 3);
  d.X << 1, 0, 1, -1, 0, -1, 2, 1, 0, -2, -1, 0, 0.5, 1, -1, -0.5, -1, 1;
  d.Y = Vecd::Constant(6, 0.5);
  // identity link at eta = 0: gradient is -X^T y / n = -0.5 * colsum(X) / n = 0
  const LambdaPath path = lambda_path(d, LinkKind::identity, 30);
  CHECK(path.degenerate);
  CHECK(path.values.size() == 1);
  CHECK(path.values[0] == 0.0);
}

TEST_CASE("invalid arguments are rejected") {
  const Vecd theta = sparse_theta(5, {{0, 1.0}});
  const Dataset d = make_logistic_data(30, 5, theta, 1);
  CHECK_THROWS_AS(fit_pilot(d, LinkKind::logistic, -0.1), std::invalid_argument);
  CHECK_THROWS_AS(fit_pilot(d, LinkKind::logistic, std::nan("")), std::invalid_argument);
  CHECK_THROWS_AS(lambda_path(d, LinkKind::logistic, 0), std::invalid_argument);
  Dataset bad = d;
  bad.Y[0] = 1.5;
  CHECK_THROWS_AS(fit_pilot(bad, LinkKind::logistic, 0.1), std::invalid_argument);
}

TEST_CASE("unpenalized intercept centers the score") {
  const Vecd theta = sparse_theta(15, {{0, 1.0}, {5, -0.6}});
  Dataset d = make_logistic_data(150, 15, theta, 55);
  // shift the class balance so the intercept matters
  for (Index i = 0; i < 30; ++i) d.Y[i] = 1.0;
  PilotOptions opts;
  opts.intercept = true;
  const LambdaPath path = lambda_path(d, LinkKind::logistic, 10, opts);
  const PilotFit fit = fit_pilot(d, LinkKind::logistic, path.values[3], opts);
  CHECK(fit.converged);
  Vecd eta = d.X * fit.theta;
  eta.array() += fit.intercept;
  Vecd d1, w;
  loss_derivs_array(LinkKind::logistic, eta, d.Y, d1, w);
  CHECK(std::abs(d1.mean()) <= 1e-6);
  // at the path head theta is zero but the intercept still fits the base rate
  const PilotFit zero = fit_pilot(d, LinkKind::logistic, path.values[0] * 1.01, opts);
  CHECK(zero.theta.lpNorm<Eigen::Infinity>() == 0.0);
  CHECK(eval_link(LinkKind::logistic, zero.intercept).Psi ==
        doctest::Approx(d.Y.mean()).epsilon(1e-6));
}

TEST_CASE("column scaling maps coefficients back to the original scale") {
  const Index n = 100, p = 12;
  const Vecd theta = sparse_theta(p, {{1, 0.8}, {6, -0.5}});
  Dataset d = make_logistic_data(n, p, theta, 31);
  d.X.col(3) *= 40.0;  // wildly different scale
  PilotOptions scaled;
  scaled.standardize = true;
  const LambdaPath path = lambda_path(d, LinkKind::logistic, 10, scaled);
  const PilotFit fit = fit_pilot(d, LinkKind::logistic, path.values[4], scaled);

  // manual equivalent: scale the columns, fit unscaled, divide back
  Dataset man = d;
  Vecd s(p);
  for (Index k = 0; k < p; ++k) {
    s[k] = std::sqrt(man.X.col(k).squaredNorm() / n);
    if (s[k] > 0) man.X.col(k) /= s[k];
  }
  const PilotFit raw = fit_pilot(man, LinkKind::logistic, path.values[4]);
  for (Index k = 0; k < p; ++k) {
    const double want = s[k] > 0 ? raw.theta[k] / s[k] : 0.0;
    CHECK(fit.theta[k] == doctest::Approx(want).epsilon(1e-6));
  }
}
