#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "ape/balance.hpp"
#include "ape/glm_loss.hpp"
#include "ape/link.hpp"
#include "ape/pilot.hpp"
#include "ape/rng.hpp"
#include "ape/types.hpp"

namespace ape {

// Inverse standard normal CDF (Wichura's high-precision rational
// approximations; relative error below 1e-15 across the domain).
inline double normal_quantile(double prob) {
  if (!(prob > 0.0 && prob < 1.0))
    throw std::invalid_argument("normal_quantile: probability must be in (0, 1)");
  static const double A[8] = {3.3871328727963666080e0, 1.3314166789178437745e+2,
                              1.9715909503065514427e+3, 1.3731693765509461125e+4,
                              4.5921953931549871457e+4, 6.7265770927008700853e+4,
                              3.3430575583588128105e+4, 2.5090809287301226727e+3};
  static const double B[8] = {1.0, 4.2313330701600911252e+1, 6.8718700749205790830e+2,
                              5.3941960214247511077e+3, 2.1213794301586595867e+4,
                              3.9307895800092710610e+4, 2.8729085735721942674e+4,
                              5.2264952788528545610e+3};
  static const double C[8] = {1.42343711074968357734e0, 4.63033784615654529590e0,
                              5.76949722146069140550e0, 3.64784832476320460504e0,
                              1.27045825245236838258e0, 2.41780725177450611770e-1,
                              2.27238449892691845833e-2, 7.74545014278341407640e-4};
  static const double D[8] = {1.0, 2.05319162663775882187e0, 1.67638483018380384940e0,
                              6.89767334985100004550e-1, 1.48103976427480074590e-1,
                              1.51986665636164571966e-2, 5.47593808499534494600e-4,
                              1.05075007164441684324e-9};
  static const double E[8] = {6.65790464350110377720e0, 5.46378491116411436990e0,
                              1.78482653991729133580e0, 2.96560571828504891230e-1,
                              2.65321895265761230930e-2, 1.24266094738807843860e-3,
                              2.71155556874348757815e-5, 2.01033439929228813265e-7};
  static const double F[8] = {1.0, 5.99832206555887937690e-1, 1.36929880922735805310e-1,
                              1.48753612908506148525e-2, 7.86869131145613259100e-4,
                              1.84631831751005468180e-5, 1.42151175831644588870e-7,
                              2.04426310338993978564e-15};
  const auto poly = [](const double* c, double x) {
    double r = c[7];
    for (int i = 6; i >= 0; --i) r = r * x + c[i];
    return r;
  };
  const double q = prob - 0.5;
  if (std::abs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    return q * poly(A, r) / poly(B, r);
  }
  double r = q < 0 ? prob : 1.0 - prob;
  r = std::sqrt(-std::log(r));
  double value;
  if (r <= 5.0) {
    r -= 1.6;
    value = poly(C, r) / poly(D, r);
  } else {
    r -= 5.0;
    value = poly(E, r) / poly(F, r);
  }
  return q < 0 ? -value : value;
}

struct EstimateConfig {
  int folds = 5;
  double alpha = 0.05;
  uint64_t seed = 0;
  bool augment = true;  // false: gamma = 0, plug-in behavior with fold pilots
  LambdaRule lambda_rule = LambdaRule::cv;
  double fixed_lambda = 0.0;
  PilotOptions pilot;
  BalanceOptions balance;
  std::optional<Vecd> pilot_override;              // use these coefficients as-is
  std::optional<std::vector<int>> fold_assignment; // externally supplied labels
};

struct FoldDiagnostics {
  int fold = 0;
  Index n_train = 0;
  Index n_test = 0;
  double lambda = 0.0;
  Index support_size = 0;
  double pilot_kkt = 0.0;
  double imbalance = 0.0;
  double gamma_l2 = 0.0;
  double balance_objective = 0.0;
  double balance_kkt = 0.0;
  int balance_iterations = 0;
  double cert_violation = 0.0;
  SolveStatus balance_status = SolveStatus::optimal;
};

struct ApeEstimate {
  double tau_hat = 0.0;
  double se = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double alpha = 0.05;
  double plugin_part = 0.0;        // mean of theta_focal psi(eta)
  double augmentation_part = 0.0;  // mean of gamma (y - Psi(eta))
  int folds = 1;
  Vecd influence;
  std::vector<FoldDiagnostics> fold_diagnostics;
};

// Influence values for a single coefficient vector and weight vector:
//   iota_i = theta_focal psi(eta_i) - tau_hat + gamma_i (y_i - Psi(eta_i)).
inline Vecd influence_values(const Dataset& data, const Vecd& theta, const Vecd& gamma,
                             LinkKind link, Index focal, double tau_hat) {
  data.validate();
  if (theta.size() != data.p())
    throw std::invalid_argument("influence_values: theta length != p");
  if (gamma.size() != data.n())
    throw std::invalid_argument("influence_values: gamma length != n");
  if (focal < 0 || focal >= data.p())
    throw std::invalid_argument("influence_values: focal index out of range");
  const Vecd eta = data.X * theta;
  Vecd out(data.n());
  for (Index i = 0; i < data.n(); ++i) {
    const LinkValues v = eval_link(link, eta[i]);
    out[i] = theta[focal] * v.psi - tau_hat + gamma[i] * (data.Y[i] - v.Psi);
  }
  return out;
}

inline std::pair<double, double> confidence_interval(double tau_hat, double se,
                                                     double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0))
    throw std::invalid_argument("confidence_interval: alpha must be in (0, 1)");
  const double z = normal_quantile(1.0 - alpha / 2.0);
  return {tau_hat - z * se, tau_hat + z * se};
}

// Cross-fitted estimate of the average partial effect of the focal
// coordinate: in each fold the index coefficients come from a penalized fit
// on the other folds, the fold's own rows get balancing weights, and every
// observation contributes theta_focal psi(eta_i) + gamma_i (y_i - Psi(eta_i)).
inline ApeEstimate estimate_ape(const Dataset& data, LinkKind link, Index focal,
                                const EstimateConfig& config = {}) {
  data.validate();
  const Index n = data.n();
  const Index p = data.p();
  if (focal < 0 || focal >= p)
    throw std::invalid_argument("estimate_ape: focal index out of range");
  if (config.folds < 1) throw std::invalid_argument("estimate_ape: folds must be >= 1");
  if (config.folds >= 2 && n < 2 * static_cast<Index>(config.folds))
    throw std::invalid_argument("estimate_ape: need at least 2 observations per fold");
  if (!(config.alpha > 0.0 && config.alpha < 1.0))
    throw std::invalid_argument("estimate_ape: alpha must be in (0, 1)");
  if (config.pilot.intercept)
    throw std::invalid_argument(
        "estimate_ape: the moment construction has no intercept; fit the pilot "
        "without one");
  if (config.pilot_override && config.pilot_override->size() != p)
    throw std::invalid_argument("estimate_ape: pilot_override length != p");
  if (config.lambda_rule == LambdaRule::fixed &&
      (!std::isfinite(config.fixed_lambda) || config.fixed_lambda < 0.0))
    throw std::invalid_argument("estimate_ape: fixed lambda must be finite and >= 0");

  std::vector<int> fold_of;
  if (config.fold_assignment) {
    fold_of = *config.fold_assignment;
    if (static_cast<Index>(fold_of.size()) != n)
      throw std::invalid_argument("estimate_ape: fold assignment length != n");
    for (int f : fold_of)
      if (f < 0 || f >= config.folds)
        throw std::invalid_argument("estimate_ape: fold label out of range");
  } else if (config.folds == 1) {
    fold_of.assign(static_cast<size_t>(n), 0);
  } else {
    fold_of = assign_folds(n, config.folds,
                           RngStream(config.seed, stream_id(streams::folds)));
  }

  Vecd plugin_contrib(n), aug_contrib(n);
  ApeEstimate est;
  est.folds = config.folds;
  est.alpha = config.alpha;

  for (int f = 0; f < config.folds; ++f) {
    std::vector<Index> test_idx, train_idx;
    for (Index i = 0; i < n; ++i)
      (fold_of[static_cast<size_t>(i)] == f ? test_idx : train_idx).push_back(i);
    if (test_idx.empty())
      throw std::invalid_argument("estimate_ape: fold " + std::to_string(f) +
                                  " is empty");
    const bool self_fit = train_idx.empty();  // folds == 1: no held-out split
    const Dataset test = data.rows(test_idx);

    FoldDiagnostics diag;
    diag.fold = f;
    diag.n_train = static_cast<Index>(train_idx.size());
    diag.n_test = static_cast<Index>(test_idx.size());

    Vecd theta_f;
    if (config.pilot_override) {
      theta_f = *config.pilot_override;
    } else {
      const Dataset train = self_fit ? data : data.rows(train_idx);
      PilotFit fit;
      if (config.lambda_rule == LambdaRule::cv) {
        const uint64_t pilot_seed = splitmix64(config.seed) + static_cast<uint64_t>(f);
        fit = fit_pilot_cv(train, link, pilot_seed, config.pilot);
      } else {
        fit = fit_pilot(train, link, config.fixed_lambda, config.pilot);
      }
      if (!fit.converged)
        throw NumericError("estimate_ape: pilot fit did not converge in fold " +
                           std::to_string(f) +
                           " (kkt = " + std::to_string(fit.kkt_violation) + ")");
      theta_f = fit.theta;
      diag.lambda = fit.lambda;
      diag.support_size = static_cast<Index>(fit.support.size());
      diag.pilot_kkt = fit.kkt_violation;
    }

    Vecd gamma = Vecd::Zero(test.n());
    if (config.augment) {
      const BalanceProblem prob = build_problem(test, theta_f, link, focal);
      const WeightSolution sol = solve_weights(prob, config.balance);
      if (sol.status != SolveStatus::optimal)
        throw NumericError("estimate_ape: weight solve failed in fold " +
                           std::to_string(f) + " (" + solve_status_name(sol.status) +
                           ")");
      gamma = sol.gamma;
      diag.imbalance = sol.imbalance;
      diag.gamma_l2 = sol.gamma_l2;
      diag.balance_objective = sol.objective;
      diag.balance_kkt = sol.kkt_residual;
      diag.balance_iterations = sol.iterations;
      diag.cert_violation = sol.cert_violation;
      diag.balance_status = sol.status;
    }

    const Vecd eta = test.X * theta_f;
    for (Index i = 0; i < test.n(); ++i) {
      const LinkValues v = eval_link(link, eta[i]);
      const Index row = test_idx[static_cast<size_t>(i)];
      plugin_contrib[row] = theta_f[focal] * v.psi;
      aug_contrib[row] = gamma[i] * (test.Y[i] - v.Psi);
    }
    est.fold_diagnostics.push_back(diag);
  }

  est.plugin_part = plugin_contrib.mean();
  est.augmentation_part = aug_contrib.mean();
  // Exact split: the reported estimate is the sum of its two parts.
  est.tau_hat = est.plugin_part + est.augmentation_part;
  est.influence = plugin_contrib + aug_contrib;
  est.influence.array() -= est.tau_hat;
  const double vhat = est.influence.squaredNorm() / static_cast<double>(n);
  est.se = std::sqrt(vhat / static_cast<double>(n));
  const auto [lo, hi] = confidence_interval(est.tau_hat, est.se, config.alpha);
  est.ci_low = lo;
  est.ci_high = hi;
  return est;
}

// Exact finite-sample decomposition of the gap between the plug-in value at
// reference coefficients theta_ref and the augmented estimate at theta_hat:
//   linear    moment mismatch paired with the coefficient error (first order)
//   noise     weighted response noise around the reference index
//   remainder everything second-order and beyond
// total = linear + noise + remainder reproduces tau_star - tau_hat exactly,
// and |linear| <= imbalance * ||theta_ref - theta_hat||_1 by construction.
struct ErrorDecomposition {
  double tau_star = 0.0;
  double tau_hat = 0.0;
  double total = 0.0;
  double linear_term = 0.0;
  double noise_term = 0.0;
  double remainder = 0.0;
  double imbalance = 0.0;
  double l1_error = 0.0;
  double holder_bound = 0.0;
};

inline ErrorDecomposition error_decomposition(const Dataset& data, const Vecd& theta_ref,
                                              const Vecd& theta_hat, const Vecd& gamma,
                                              LinkKind link, Index focal) {
  data.validate();
  const Index n = data.n();
  if (theta_ref.size() != data.p() || theta_hat.size() != data.p())
    throw std::invalid_argument("error_decomposition: coefficient length != p");
  if (gamma.size() != n)
    throw std::invalid_argument("error_decomposition: gamma length != n");
  if (focal < 0 || focal >= data.p())
    throw std::invalid_argument("error_decomposition: focal index out of range");

  const BalanceProblem prob = build_problem(data, theta_hat, link, focal);
  const Vecd eta_ref = data.X * theta_ref;
  const Vecd eta_hat = data.X * theta_hat;

  ErrorDecomposition dec;
  double noise = 0.0;
  for (Index i = 0; i < n; ++i) {
    const LinkValues vr = eval_link(link, eta_ref[i]);
    const LinkValues vh = eval_link(link, eta_hat[i]);
    dec.tau_star += theta_ref[focal] * vr.psi;
    dec.tau_hat += theta_hat[focal] * vh.psi + gamma[i] * (data.Y[i] - vh.Psi);
    noise += gamma[i] * (data.Y[i] - vr.Psi);
  }
  dec.tau_star /= static_cast<double>(n);
  dec.tau_hat /= static_cast<double>(n);
  dec.noise_term = -noise / static_cast<double>(n);

  const Vecd resid = prob.c - prob.W.transpose() * gamma / static_cast<double>(n);
  const Vecd delta = theta_ref - theta_hat;
  dec.linear_term = resid.dot(delta);
  dec.total = dec.tau_star - dec.tau_hat;
  dec.remainder = dec.total - dec.linear_term - dec.noise_term;
  dec.imbalance = resid.lpNorm<Eigen::Infinity>();
  dec.l1_error = delta.lpNorm<1>();
  dec.holder_bound = dec.imbalance * dec.l1_error;
  return dec;
}

}  // namespace ape
