#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "ape/glm_loss.hpp"
#include "ape/link.hpp"
#include "ape/rng.hpp"
#include "ape/types.hpp"

namespace ape {

// How downstream estimators pick the pilot's penalty level.
enum class LambdaRule { cv, fixed };

struct PilotOptions {
  double kkt_tol = 1e-6;       // stationarity certificate on the full gradient
  double inner_tol = 1e-11;    // coordinate-descent stopping (scaled squared step)
  int max_outer = 200;         // proximal-Newton (IRLS) iterations
  int max_sweeps = 1000;       // CD sweeps per quadratic subproblem
  bool intercept = false;      // opt-in unpenalized intercept
  bool standardize = false;    // opt-in column scaling to unit root-mean-square
  int n_lambdas = 100;
  double lambda_min_ratio = 1e-3;
  int cv_folds = 10;
};

struct PilotFit {
  Vecd theta;
  double intercept = 0.0;
  double lambda = 0.0;
  std::vector<Index> support;
  double objective = std::numeric_limits<double>::quiet_NaN();
  double kkt_violation = std::numeric_limits<double>::quiet_NaN();
  bool converged = false;
  int iterations = 0;
};

struct LambdaPath {
  Vecd values;
  bool degenerate = false;  // all-zero gradient at theta = 0: no useful grid
};

struct CvSelection {
  double lambda = 0.0;
  Index index = 0;
  Vecd lambdas;
  Vecd mean_deviance;  // held-out deviance per observation, by grid point
  int folds = 0;
};

namespace detail {

inline double soft_threshold(double x, double t) {
  if (x > t) return x - t;
  if (x < -t) return x + t;
  return 0.0;
}

// KKT violation of the penalized stationarity conditions at theta given the
// unpenalized mean-loss gradient: off the support the gradient must lie in
// [-lambda, lambda]; on the support it must equal -lambda * sign(theta_k).
inline double kkt_violation_value(const Vecd& grad, const Vecd& theta, double lambda) {
  double v = 0.0;
  for (Index k = 0; k < grad.size(); ++k) {
    if (theta[k] != 0.0)
      v = std::max(v, std::abs(grad[k] + lambda * (theta[k] > 0 ? 1.0 : -1.0)));
    else
      v = std::max(v, std::abs(grad[k]) - lambda);
  }
  return std::max(v, 0.0);
}

// Penalized proximal-Newton solver on (X, y) for one lambda.  Warm state
// (theta, intercept) is taken from `fit` on entry.  When `restrict` is true
// the CD sweeps only touch `cand`, and coordinates whose full-gradient KKT
// check fails are promoted into the candidate set, so the certificate is
// always verified over all p columns.
inline void fit_penalized_inplace(const Matd& X, const Vecd& y, LinkKind link,
                                  double lambda, const PilotOptions& o, PilotFit& fit,
                                  bool restrict, std::vector<char>& in_cand,
                                  std::vector<Index>& cand) {
  const Index n = X.rows();
  const Index p = X.cols();
  constexpr double wmin = 1e-10;

  Vecd& theta = fit.theta;
  double& b = fit.intercept;
  Vecd eta = X * theta;
  if (o.intercept) eta.array() += b;

  if (!restrict) {
    cand.resize(static_cast<size_t>(p));
    for (Index k = 0; k < p; ++k) cand[static_cast<size_t>(k)] = k;
    in_cand.assign(static_cast<size_t>(p), 1);
  }

  Vecd d1(n), wgt(n), grad(p), r(n), vdiag(p), theta0, eta0, theta_cd, eta_cd;
  int outer = 0;
  bool converged = false;
  for (; outer < o.max_outer; ++outer) {
    loss_derivs_array(link, eta, y, d1, wgt);
    grad.noalias() = X.transpose() * d1 / static_cast<double>(n);

    double kkt = kkt_violation_value(grad, theta, lambda);
    if (o.intercept) kkt = std::max(kkt, std::abs(d1.mean()));
    if (kkt <= o.kkt_tol) {
      converged = true;
      break;
    }
    if (restrict) {
      for (Index k = 0; k < p; ++k) {
        if (!in_cand[static_cast<size_t>(k)] && std::abs(grad[k]) > lambda + o.kkt_tol) {
          in_cand[static_cast<size_t>(k)] = 1;
          cand.push_back(k);
        }
      }
    }

    for (Index i = 0; i < n; ++i) wgt[i] = std::max(wgt[i], wmin);
    r = -d1.cwiseQuotient(wgt);  // working residual z - eta at current theta
    for (Index k : cand)
      vdiag[k] = X.col(k).array().square().matrix().dot(wgt) / static_cast<double>(n);
    const double wsum = wgt.sum();

    const double F_old = mean_nll(link, eta, y) + lambda * theta.lpNorm<1>();
    theta0 = theta;
    eta0 = eta;
    const double b0 = b;

    bool any_move = false;
    for (int sweep = 0; sweep < o.max_sweeps; ++sweep) {
      double step_max = 0.0;
      if (o.intercept) {
        const double db = wgt.dot(r) / wsum;
        if (db != 0.0) {
          b += db;
          r.array() -= db;
          step_max = std::max(step_max, (wsum / n) * db * db);
          any_move = true;
        }
      }
      for (Index k : cand) {
        if (vdiag[k] <= 0.0) continue;
        const auto xk = X.col(k);
        const double s =
            (wgt.array() * xk.array() * r.array()).sum() / static_cast<double>(n) +
            vdiag[k] * theta[k];
        const double t_new = soft_threshold(s, lambda) / vdiag[k];
        const double d = t_new - theta[k];
        if (d != 0.0) {
          r -= d * xk;
          theta[k] = t_new;
          step_max = std::max(step_max, vdiag[k] * d * d);
          any_move = true;
        }
      }
      if (step_max < o.inner_tol) break;
    }
    if (!any_move) break;  // CD is stationary: nothing left to polish

    // eta at the CD solution: z - r with z = eta0 - d1 ./ wgt.
    eta_cd = eta0 - d1.cwiseQuotient(wgt) - r;
    theta_cd = theta;
    const double b_cd = b;

    // Step acceptance allows a one-ulp-scale increase so the solver can keep
    // polishing at the numerical floor; the drift is bounded by
    // max_outer * 1e-15 and cannot cause divergence.
    bool accepted = false;
    for (double t = 1.0; t > 0x1.0p-30; t *= 0.5) {
      theta = theta0 + t * (theta_cd - theta0);
      eta = eta0 + t * (eta_cd - eta0);
      b = b0 + t * (b_cd - b0);
      const double F_new = mean_nll(link, eta, y) + lambda * theta.lpNorm<1>();
      if (F_new <= F_old + 1e-15 * std::max(1.0, std::abs(F_old))) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      theta = theta0;
      eta = eta0;
      b = b0;
      break;  // numerical floor: certify whatever we have
    }
  }

  loss_derivs_array(link, eta, y, d1, wgt);
  grad.noalias() = X.transpose() * d1 / static_cast<double>(n);
  fit.kkt_violation = kkt_violation_value(grad, theta, lambda);
  if (o.intercept) fit.kkt_violation = std::max(fit.kkt_violation, std::abs(d1.mean()));
  fit.objective = mean_nll(link, eta, y) + lambda * theta.lpNorm<1>();
  fit.converged = converged || fit.kkt_violation <= o.kkt_tol;
  fit.iterations = outer;
  fit.lambda = lambda;
  fit.support.clear();
  for (Index k = 0; k < p; ++k)
    if (theta[k] != 0.0) fit.support.push_back(k);
}

}  // namespace detail

// L1-penalized quasi-likelihood pilot fit at a fixed lambda.
inline PilotFit fit_pilot(const Dataset& data, LinkKind link, double lambda,
                          const PilotOptions& options = {},
                          const PilotFit* warm = nullptr) {
  data.validate();
  if (!(lambda >= 0.0) || !std::isfinite(lambda))
    throw std::invalid_argument("fit_pilot: lambda must be finite and >= 0");

  const Index n = data.n();
  const Index p = data.p();
  Matd Xs;
  Vecd scale;
  const Matd* Xp = &data.X;
  if (options.standardize) {
    scale = (data.X.array().square().colwise().sum() / static_cast<double>(n))
                .sqrt()
                .matrix();
    Xs = data.X;
    for (Index k = 0; k < p; ++k)
      if (scale[k] > 0.0) Xs.col(k) /= scale[k];
    Xp = &Xs;
  }

  PilotFit fit;
  if (warm && warm->theta.size() == p) {
    fit.theta = warm->theta;
    if (options.standardize)
      for (Index k = 0; k < p; ++k)
        if (scale[k] > 0.0) fit.theta[k] *= scale[k];
    fit.intercept = warm->intercept;
  } else {
    fit.theta = Vecd::Zero(p);
  }

  std::vector<char> in_cand;
  std::vector<Index> cand;
  detail::fit_penalized_inplace(*Xp, data.Y, link, lambda, options, fit, false, in_cand,
                                cand);
  if (options.standardize) {
    for (Index k = 0; k < p; ++k)
      if (scale[k] > 0.0) fit.theta[k] /= scale[k];
  }
  return fit;
}

// Geometric grid from the smallest lambda that zeroes every coordinate down
// to ratio * lambda_max.
inline LambdaPath lambda_path(const Dataset& data, LinkKind link, int count,
                              const PilotOptions& options = {}) {
  data.validate();
  if (count < 1) throw std::invalid_argument("lambda_path: count must be >= 1");
  const Index n = data.n();

  double b = 0.0;
  Vecd eta = Vecd::Zero(n);
  if (options.intercept) {
    for (int it = 0; it < 50; ++it) {  // 1-D Newton for the intercept-only fit
      Vecd d1, w;
      loss_derivs_array(link, eta, data.Y, d1, w);
      const double step = d1.sum() / std::max(w.sum(), 1e-12);
      b -= step;
      eta.array() = b;
      if (std::abs(step) < 1e-12) break;
    }
  }
  Vecd d1, w;
  loss_derivs_array(link, eta, data.Y, d1, w);
  Vecd grad = data.X.transpose() * d1 / static_cast<double>(n);
  if (options.standardize) {
    // The grid lives in the scaled problem, whose gradient is grad_k / s_k.
    const Vecd scale = (data.X.array().square().colwise().sum() / static_cast<double>(n))
                           .sqrt()
                           .matrix();
    for (Index k = 0; k < grad.size(); ++k)
      if (scale[k] > 0.0) grad[k] /= scale[k];
  }
  const double lmax = grad.lpNorm<Eigen::Infinity>();

  LambdaPath path;
  if (!(lmax > 0.0)) {
    path.values = Vecd::Zero(1);
    path.degenerate = true;
    return path;
  }
  path.values.resize(count);
  if (count == 1) {
    path.values[0] = lmax;
    return path;
  }
  const double lr = std::log(options.lambda_min_ratio);
  for (int i = 0; i < count; ++i)
    path.values[i] = lmax * std::exp(lr * static_cast<double>(i) / (count - 1));
  path.values[0] = lmax;
  return path;
}

// Warm-started descent along a lambda grid with sequential screening: at each
// step the CD candidates are the previous support plus coordinates whose
// gradient at the previous solution exceeds 2*lambda_t - lambda_{t-1}.  The
// full-gradient KKT check inside the solver promotes anything the screen
// missed, so screening never changes the answer.
inline std::vector<PilotFit> fit_pilot_path(const Dataset& data, LinkKind link,
                                            const Vecd& lambdas,
                                            const PilotOptions& options = {}) {
  data.validate();
  const Index n = data.n();
  const Index p = data.p();

  Matd Xs;
  Vecd scale;
  const Matd* Xp = &data.X;
  if (options.standardize) {
    scale = (data.X.array().square().colwise().sum() / static_cast<double>(n))
                .sqrt()
                .matrix();
    Xs = data.X;
    for (Index k = 0; k < p; ++k)
      if (scale[k] > 0.0) Xs.col(k) /= scale[k];
    Xp = &Xs;
  }
  const Matd& X = *Xp;

  std::vector<PilotFit> fits(static_cast<size_t>(lambdas.size()));
  PilotFit state;
  state.theta = Vecd::Zero(p);
  Vecd d1, w, grad;
  std::vector<char> in_cand(static_cast<size_t>(p), 0);
  std::vector<Index> cand;

  double prev_lambda = std::numeric_limits<double>::infinity();
  for (Index t = 0; t < lambdas.size(); ++t) {
    const double lambda = lambdas[t];
    Vecd eta = X * state.theta;
    if (options.intercept) eta.array() += state.intercept;
    loss_derivs_array(link, eta, data.Y, d1, w);
    grad.noalias() = X.transpose() * d1 / static_cast<double>(n);

    in_cand.assign(static_cast<size_t>(p), 0);
    cand.clear();
    const double screen =
        std::isfinite(prev_lambda) ? 2.0 * lambda - prev_lambda : lambda;
    for (Index k = 0; k < p; ++k) {
      if (state.theta[k] != 0.0 || std::abs(grad[k]) >= screen) {
        in_cand[static_cast<size_t>(k)] = 1;
        cand.push_back(k);
      }
    }

    detail::fit_penalized_inplace(X, data.Y, link, lambda, options, state, true, in_cand,
                                  cand);
    fits[static_cast<size_t>(t)] = state;
    prev_lambda = lambda;
  }

  if (options.standardize) {
    for (auto& f : fits)
      for (Index k = 0; k < p; ++k)
        if (scale[k] > 0.0) f.theta[k] /= scale[k];
  }
  return fits;
}

// K-fold cross-validation over a shared grid computed on the full sample.
// Scoring is the summed held-out deviance (each observation is held out
// exactly once); ties are broken toward the larger lambda.
inline CvSelection select_lambda_cv(const Dataset& data, LinkKind link, int folds,
                                    uint64_t seed, const PilotOptions& options = {}) {
  data.validate();
  if (folds < 2) throw std::invalid_argument("select_lambda_cv: folds must be >= 2");
  if (static_cast<Index>(folds) > data.n())
    throw std::invalid_argument("select_lambda_cv: more folds than observations");

  const LambdaPath path = lambda_path(data, link, options.n_lambdas, options);
  CvSelection sel;
  sel.lambdas = path.values;
  sel.folds = folds;
  sel.mean_deviance = Vecd::Zero(path.values.size());
  if (path.degenerate) {
    sel.lambda = path.values[0];
    sel.index = 0;
    return sel;
  }

  const std::vector<int> fold_of =
      assign_folds(data.n(), folds, RngStream(seed, stream_id(streams::pilot_cv)));

  for (int f = 0; f < folds; ++f) {
    std::vector<Index> train_idx, test_idx;
    for (Index i = 0; i < data.n(); ++i)
      (fold_of[static_cast<size_t>(i)] == f ? test_idx : train_idx).push_back(i);
    const Dataset train = data.rows(train_idx);
    const Dataset test = data.rows(test_idx);
    const std::vector<PilotFit> fits = fit_pilot_path(train, link, path.values, options);
    for (size_t t = 0; t < fits.size(); ++t) {
      Vecd eta = test.X * fits[t].theta;
      if (options.intercept) eta.array() += fits[t].intercept;
      sel.mean_deviance[static_cast<Index>(t)] += deviance_sum(link, eta, test.Y);
    }
  }
  sel.mean_deviance /= static_cast<double>(data.n());

  Index best = 0;
  for (Index t = 1; t < sel.mean_deviance.size(); ++t)
    if (sel.mean_deviance[t] < sel.mean_deviance[best]) best = t;
  sel.index = best;
  sel.lambda = path.values[best];
  return sel;
}

// CV selection followed by a warm-started refit on the full sample down to
// the selected grid point.
inline PilotFit fit_pilot_cv(const Dataset& data, LinkKind link, uint64_t seed,
                             const PilotOptions& options = {}) {
  const CvSelection sel = select_lambda_cv(data, link, options.cv_folds, seed, options);
  const Vecd head = sel.lambdas.head(sel.index + 1);
  std::vector<PilotFit> fits = fit_pilot_path(data, link, head, options);
  return fits.back();
}

}  // namespace ape
