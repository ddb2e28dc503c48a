#pragma once

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "ape/glm_loss.hpp"
#include "ape/link.hpp"
#include "ape/pilot.hpp"
#include "ape/rng.hpp"
#include "ape/types.hpp"

namespace ape {

// Plug-in average partial effect at an explicit coefficient vector:
//   (1/n) sum_i theta_focal psi(x_i' theta).
inline double plug_in_ape(const Vecd& theta, const Dataset& data, LinkKind link,
                          Index focal) {
  data.validate();
  if (theta.size() != data.p())
    throw std::invalid_argument("plug_in_ape: theta length != p");
  if (focal < 0 || focal >= data.p())
    throw std::invalid_argument("plug_in_ape: focal index out of range");
  const Vecd eta = data.X * theta;
  double acc = 0.0;
  for (Index i = 0; i < data.n(); ++i) acc += eval_link(link, eta[i]).psi;
  return theta[focal] * acc / static_cast<double>(data.n());
}

struct WzConfig {
  uint64_t seed = 0;
  LambdaRule lambda_rule = LambdaRule::cv;
  double fixed_lambda = 0.0;
  PilotOptions pilot;
  std::vector<Index> predetermined;  // always debiased; focal is added implicitly
  int max_halvings = 10;
};

// One-step corrected sparse fit: penalized pilot, signal set, Newton
// correction of the unpenalized quasi-likelihood restricted to that set, and
// the plug-in average partial effect at the corrected coefficients.
struct WzFit {
  Vecd theta_tilde;                // p-vector, zero off the signal set
  std::vector<Index> signal_set;   // sorted; support(pilot) + predetermined + focal
  std::vector<Index> pilot_support;
  Vecd correction;                 // |theta_tilde - theta_hat| per signal coordinate
  double tau_hat = 0.0;
  double lambda = 0.0;
  double score_before = 0.0;  // restricted score norm at the pilot
  double score_after = 0.0;   // restricted score norm at the corrected fit
  double step_size = 1.0;     // damping factor actually taken
  int halvings = 0;
  double ridge = 0.0;  // regularizer added to the Hessian block, 0 when clean
};

namespace detail {

// Mean-loss gradient over the restricted coordinates at the given index.
inline Vecd restricted_score(const Matd& XA, const Vecd& y, LinkKind link,
                             const Vecd& eta, Vecd& d1, Vecd& w) {
  loss_derivs_array(link, eta, y, d1, w);
  return XA.transpose() * d1 / static_cast<double>(XA.rows());
}

}  // namespace detail

inline WzFit estimate_wz(const Dataset& data, LinkKind link, Index focal,
                         const WzConfig& config = {}) {
  data.validate();
  const Index n = data.n();
  const Index p = data.p();
  if (focal < 0 || focal >= p)
    throw std::invalid_argument("estimate_wz: focal index out of range");
  for (Index k : config.predetermined)
    if (k < 0 || k >= p)
      throw std::invalid_argument("estimate_wz: predetermined index out of range");
  if (config.pilot.intercept)
    throw std::invalid_argument("estimate_wz: fit the pilot without an intercept");
  if (config.max_halvings < 0)
    throw std::invalid_argument("estimate_wz: max_halvings must be >= 0");

  PilotFit pilot;
  if (config.lambda_rule == LambdaRule::cv) {
    pilot = fit_pilot_cv(data, link, splitmix64(config.seed), config.pilot);
  } else {
    if (!std::isfinite(config.fixed_lambda) || config.fixed_lambda < 0.0)
      throw std::invalid_argument("estimate_wz: fixed lambda must be finite and >= 0");
    pilot = fit_pilot(data, link, config.fixed_lambda, config.pilot);
  }
  if (!pilot.converged)
    throw NumericError("estimate_wz: pilot fit did not converge (kkt = " +
                       std::to_string(pilot.kkt_violation) + ")");

  std::set<Index> signal(pilot.support.begin(), pilot.support.end());
  signal.insert(focal);
  signal.insert(config.predetermined.begin(), config.predetermined.end());

  WzFit fit;
  fit.lambda = pilot.lambda;
  fit.pilot_support = pilot.support;
  fit.signal_set.assign(signal.begin(), signal.end());
  const Index a = static_cast<Index>(fit.signal_set.size());
  if (a > n)
    throw NumericError("estimate_wz: signal set size " + std::to_string(a) +
                       " exceeds the sample size " + std::to_string(n));

  Matd XA(n, a);
  Vecd theta_a(a);
  for (Index t = 0; t < a; ++t) {
    XA.col(t) = data.X.col(fit.signal_set[static_cast<size_t>(t)]);
    theta_a[t] = pilot.theta[fit.signal_set[static_cast<size_t>(t)]];
  }

  Vecd d1(n), w(n);
  Vecd eta = XA * theta_a;
  const Vecd score0 = detail::restricted_score(XA, data.Y, link, eta, d1, w);
  fit.score_before = score0.norm();

  // Sample Hessian block of the mean loss on the signal set.
  const Matd H =
      XA.transpose() * w.asDiagonal() * XA / static_cast<double>(n);
  const Vecd rhs = -score0;  // Newton direction solves H delta = -grad

  Vecd delta;
  double ridge = 0.0;
  const double diag_scale = std::max(H.diagonal().mean(), 1e-300);
  for (int attempt = 0;; ++attempt) {
    Matd Hr = H;
    if (ridge > 0.0) Hr.diagonal().array() += ridge;
    Eigen::LDLT<Matd> ldlt(Hr);
    // A consistent singular system can still "solve"; treat rank deficiency
    // of the factorization as the trigger for regularization.
    const double dmax = ldlt.vectorD().cwiseAbs().maxCoeff();
    const double dmin = ldlt.vectorD().cwiseAbs().minCoeff();
    if (ldlt.info() == Eigen::Success && dmin > 1e-12 * dmax) {
      delta = ldlt.solve(rhs);
      const double resid = (Hr * delta - rhs).norm();
      if (delta.allFinite() && resid <= 1e-8 * std::max(1.0, rhs.norm())) break;
    }
    if (attempt >= 20)
      throw NumericError("estimate_wz: Hessian solve failed even with ridge " +
                         std::to_string(ridge));
    ridge = ridge == 0.0 ? 1e-12 * diag_scale : ridge * 100.0;
  }
  fit.ridge = ridge;

  // Damped update: accept the largest step among 1, 1/2, ... that does not
  // increase the restricted score norm; fall back to no correction if every
  // candidate increases it.
  double step = 1.0;
  Vecd theta_new = theta_a;
  fit.score_after = fit.score_before;
  fit.step_size = 0.0;
  for (int h = 0; h <= config.max_halvings; ++h) {
    const Vecd cand = theta_a + step * delta;
    eta = XA * cand;
    const double norm_cand =
        detail::restricted_score(XA, data.Y, link, eta, d1, w).norm();
    if (std::isfinite(norm_cand) && norm_cand <= fit.score_before) {
      theta_new = cand;
      fit.score_after = norm_cand;
      fit.step_size = step;
      fit.halvings = h;
      break;
    }
    step *= 0.5;
    fit.halvings = h + 1;
  }

  fit.theta_tilde = Vecd::Zero(p);
  fit.correction.resize(a);
  for (Index t = 0; t < a; ++t) {
    fit.theta_tilde[fit.signal_set[static_cast<size_t>(t)]] = theta_new[t];
    fit.correction[t] = std::abs(theta_new[t] - theta_a[t]);
  }
  fit.tau_hat = plug_in_ape(fit.theta_tilde, data, link, focal);
  return fit;
}

}  // namespace ape
