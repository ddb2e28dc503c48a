#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>
#include <vector>

#include "ape/link.hpp"
#include "ape/rng.hpp"
#include "ape/types.hpp"

namespace ape {

// Finite-sample balancing problem for the focal coordinate: find weights
// gamma minimizing  max_k |c_k - (W^T gamma)_k / n|^2 + ||gamma||^2 / n^2,
// where row i of W is psi(eta_i) X_i and c collects the target moments
// theta_focal * mean(psi'(eta) X) + mean(psi(eta)) e_focal.
struct BalanceProblem {
  Matd W;      // n x p
  Vecd c;      // p
  Index n;     // divisor for both the moment average and the ridge term
  Index focal; // tracked for diagnostics only
};

enum class SolveStatus { optimal, max_iter, infeasible_input };

inline const char* solve_status_name(SolveStatus s) {
  switch (s) {
    case SolveStatus::optimal: return "optimal";
    case SolveStatus::max_iter: return "max_iter";
    case SolveStatus::infeasible_input: return "infeasible_input";
  }
  return "?";
}

struct WeightSolution {
  Vecd gamma;
  double imbalance = 0.0;     // max_k |c_k - (W^T gamma)_k / n|
  double gamma_l2 = 0.0;      // ||gamma||_2
  double objective = 0.0;     // imbalance^2 + ||gamma||^2 / n^2
  double kkt_residual = 0.0;  // solver termination residual (see options)
  SolveStatus status = SolveStatus::optimal;
  int iterations = 0;
  double cert_violation = 0.0;  // max objective gap found by certification
  int cert_candidates = 0;
};

struct BalanceOptions {
  double eps_abs = 1e-7;  // absolute primal/dual residual target (operator splitting)
  int max_iter = 100000;
  double rho = 0.1;       // splitting penalty (adapted when adaptive_rho)
  double sigma = 1e-6;    // proximal regularization of the linear solve
  double alpha = 1.6;     // over-relaxation
  int check_every = 25;
  bool adaptive_rho = true;
  bool smoothed = false;  // use the first-order smoothed solver instead
  bool certify = false;   // compare against candidate weights after solving
  int certify_perturbations = 50;
  uint64_t certify_seed = 0xba1a9ce5eedull;
  // Called after every solve with the problem and finished solution; used to
  // stream diagnostics without coupling the solver to any output format.
  std::function<void(const BalanceProblem&, const WeightSolution&)> on_solution;
};

inline double imbalance(const BalanceProblem& prob, const Vecd& gamma) {
  return (prob.c - prob.W.transpose() * gamma / static_cast<double>(prob.n))
      .lpNorm<Eigen::Infinity>();
}

inline double objective_value(const BalanceProblem& prob, const Vecd& gamma) {
  const double nn = static_cast<double>(prob.n);
  const double i = imbalance(prob, gamma);
  return i * i + gamma.squaredNorm() / (nn * nn);
}

// Moment matrix and target for a fitted index.  Non-finite link evaluations
// report the offending row.
inline BalanceProblem build_problem(const Dataset& data, const Vecd& theta, LinkKind link,
                                    Index focal) {
  data.validate();
  if (theta.size() != data.p())
    throw std::invalid_argument("build_problem: theta length " +
                                std::to_string(theta.size()) + " != p = " +
                                std::to_string(data.p()));
  if (focal < 0 || focal >= data.p())
    throw std::invalid_argument("build_problem: focal index out of range");

  const Index n = data.n();
  const Vecd eta = data.X * theta;
  BalanceProblem prob;
  prob.n = n;
  prob.focal = focal;
  prob.W.resize(n, data.p());
  Vecd psi1(n), psi(n);
  for (Index i = 0; i < n; ++i) {
    if (!std::isfinite(eta[i]))
      throw NumericError("build_problem: non-finite index at row " + std::to_string(i));
    const LinkValues v = eval_link(link, eta[i]);
    if (!std::isfinite(v.psi) || !std::isfinite(v.psi1))
      throw NumericError("build_problem: non-finite link values at row " +
                         std::to_string(i));
    psi[i] = v.psi;
    psi1[i] = v.psi1;
  }
  prob.W = psi.asDiagonal() * data.X;
  prob.c = theta[focal] * (data.X.transpose() * psi1) / static_cast<double>(n);
  prob.c[focal] += psi.mean();
  return prob;
}

// Best objective gap found among candidate weights (zero, random
// perturbations of the solution, plus any caller-supplied candidates such as
// population weights).  Positive values mean a candidate beat the solution.
inline std::pair<double, int> certify_solution(const BalanceProblem& prob,
                                               const Vecd& gamma, int perturbations,
                                               uint64_t seed,
                                               const std::vector<Vecd>& extra = {}) {
  const double F0 = objective_value(prob, gamma);
  double violation = -std::numeric_limits<double>::infinity();
  int count = 0;
  const auto consider = [&](const Vecd& cand) {
    violation = std::max(violation, F0 - objective_value(prob, cand));
    ++count;
  };
  consider(Vecd::Zero(gamma.size()));
  RngStream rs(seed, stream_id(streams::certify));
  const double scale = 0.1 * std::max(gamma.norm(), 1.0);
  Vecd u(gamma.size());
  for (int k = 0; k < perturbations; ++k) {
    rs.fill_normal(u);
    const double norm = u.norm();
    if (norm > 0) consider(gamma + (scale / norm) * u);
  }
  for (const Vecd& cand : extra)
    if (cand.size() == gamma.size()) consider(cand);
  return {violation, count};
}

namespace detail {

// Operator-splitting solve of the epigraph form
//   min (1/2) x' P x,  P = diag((2/n^2) I_m, 2),  x = (gamma, t)
//   s.t. c_k <= (W' gamma)_k / n + t,  (W' gamma)_k / n - t <= c_k
// The constraint normal matrix M = [[A, 1], [A, -1]] has the key property
// M'M = diag(2 A'A, 2p): the x-update splits into an m x m ridge solve for
// gamma (factored once per rho) and a scalar update for t.
inline WeightSolution solve_admm(const BalanceProblem& prob, const BalanceOptions& o) {
  const Index m = prob.W.rows();
  const Index d = prob.W.cols();
  const double nn = static_cast<double>(prob.n);
  WeightSolution sol;

  const Matd B = prob.W * prob.W.transpose() / (nn * nn);  // A'A, m x m
  double rho = o.rho;
  Eigen::LLT<Matd> llt;
  const auto factor = [&]() {
    Matd S = 2.0 * rho * B;
    S.diagonal().array() += 2.0 / (nn * nn) + o.sigma;
    llt.compute(S);
    if (llt.info() != Eigen::Success)
      throw NumericError("balance: ridge system factorization failed");
  };
  factor();

  Vecd gamma = Vecd::Zero(m);
  double t = prob.c.lpNorm<Eigen::Infinity>();
  Vecd q = Vecd::Zero(d);  // W' gamma / n
  Vecd z1 = (q.array() + t).matrix().cwiseMax(prob.c);
  Vecd z2 = (q.array() - t).matrix().cwiseMin(prob.c);
  Vecd y1 = Vecd::Zero(d), y2 = Vecd::Zero(d);
  Vecd rhs(m), gt(m), qt(d), w1(d), w2(d);

  int it = 0;
  bool ok = false;
  double r_prim = 0.0, r_dual = 0.0;
  while (it < o.max_iter) {
    ++it;
    // x-update
    rhs = o.sigma * gamma +
          prob.W * (rho * (z1 + z2) - (y1 + y2)) / nn;
    gt = llt.solve(rhs);
    const double tt = (o.sigma * t + rho * (z1.sum() - z2.sum()) - (y1.sum() - y2.sum())) /
                      (2.0 + o.sigma + 2.0 * rho * static_cast<double>(d));
    qt = prob.W.transpose() * gt / nn;

    // relaxed z/y updates
    w1 = o.alpha * (qt.array() + tt).matrix() + (1.0 - o.alpha) * z1 + y1 / rho;
    w2 = o.alpha * (qt.array() - tt).matrix() + (1.0 - o.alpha) * z2 + y2 / rho;
    z1 = w1.cwiseMax(prob.c);
    z2 = w2.cwiseMin(prob.c);
    y1 = rho * (w1 - z1);
    y2 = rho * (w2 - z2);

    gamma = o.alpha * gt + (1.0 - o.alpha) * gamma;
    t = o.alpha * tt + (1.0 - o.alpha) * t;

    if (it % o.check_every == 0 || it == o.max_iter) {
      q = prob.W.transpose() * gamma / nn;
      r_prim = std::max(((q.array() + t).matrix() - z1).lpNorm<Eigen::Infinity>(),
                        ((q.array() - t).matrix() - z2).lpNorm<Eigen::Infinity>());
      r_dual = std::max(
          ((2.0 / (nn * nn)) * gamma + prob.W * (y1 + y2) / nn).lpNorm<Eigen::Infinity>(),
          std::abs(2.0 * t + y1.sum() - y2.sum()));
      if (r_prim <= o.eps_abs && r_dual <= o.eps_abs) {
        ok = true;
        break;
      }
      if (o.adaptive_rho && it % (10 * o.check_every) == 0) {
        const double ratio = (r_prim + 1e-300) / (r_dual + 1e-300);
        double next = rho;
        if (ratio > 10.0) next = std::min(rho * 2.0, 1e6);
        else if (ratio < 0.1) next = std::max(rho * 0.5, 1e-6);
        if (next != rho) {
          rho = next;
          factor();
        }
      }
    }
  }

  sol.gamma = gamma;
  sol.kkt_residual = std::max(r_prim, r_dual);
  sol.status = ok ? SolveStatus::optimal : SolveStatus::max_iter;
  sol.iterations = it;
  return sol;
}

// Smoothed first-order fallback: replaces the max-norm with a log-sum-exp
// at temperature mu, driven to small mu by continuation, minimized by
// accelerated gradient steps.  Slower and looser than the splitting solver;
// kept as an independent escape hatch.
inline WeightSolution solve_smoothed(const BalanceProblem& prob, const BalanceOptions& o) {
  const Index m = prob.W.rows();
  const Index d = prob.W.cols();
  const double nn = static_cast<double>(prob.n);
  WeightSolution sol;

  Vecd gamma = Vecd::Zero(m);
  Vecd r(d), delta(d), grad(m), gnew(m), v(m), x_prev(m);

  // smoothed objective and gradient at temperature mu
  double s_val = 0.0;
  const auto smooth_obj = [&](const Vecd& g, double mu, Vecd* grad_out) {
    r = prob.c - prob.W.transpose() * g / nn;
    const double rmax = r.cwiseAbs().maxCoeff();
    double zsum = 0.0;
    for (Index k = 0; k < d; ++k) {
      const double ep = std::exp((r[k] - rmax) / mu);
      const double en = std::exp((-r[k] - rmax) / mu);
      zsum += ep + en;
      delta[k] = ep - en;
    }
    s_val = rmax + mu * std::log(zsum);
    if (grad_out) {
      delta /= zsum;
      grad_out->noalias() = -(2.0 * s_val / nn) * (prob.W * delta);
      *grad_out += (2.0 / (nn * nn)) * g;
    }
    return s_val * s_val + g.squaredNorm() / (nn * nn);
  };

  const double mu0 = std::max(prob.c.lpNorm<Eigen::Infinity>(), 1e-3) * 0.1;
  const double mu_min = std::max(1e-10, 0.01 * o.eps_abs);
  int total_it = 0;
  double final_grad = 0.0;
  for (double mu = mu0;; mu *= 0.2) {
    mu = std::max(mu, mu_min);
    double L = 1.0 / (nn * nn) + 1.0;  // refined by backtracking
    Vecd x = gamma, y = gamma;
    double tk = 1.0;
    double Fx = smooth_obj(x, mu, nullptr);
    for (int it = 0; it < 4000 && total_it < o.max_iter; ++it, ++total_it) {
      const double Fy = smooth_obj(y, mu, &grad);
      for (;;) {
        gnew = y - grad / L;
        const double Fn = smooth_obj(gnew, mu, nullptr);
        if (Fn <= Fy - 0.5 / L * grad.squaredNorm() + 1e-16 * std::abs(Fy) || L > 1e18)
          break;
        L *= 2.0;
      }
      const double tk1 = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * tk * tk));
      x_prev = x;
      x = gnew;
      const double Fn = smooth_obj(x, mu, nullptr);
      if (Fn > Fx) {  // restart momentum
        y = x_prev;
        x = x_prev;
        tk = 1.0;
        continue;
      }
      Fx = Fn;
      y = x + ((tk - 1.0) / tk1) * (x - x_prev);
      tk = tk1;
      smooth_obj(x, mu, &grad);
      final_grad = grad.lpNorm<Eigen::Infinity>();
      if (final_grad < 0.1 * std::max(mu, o.eps_abs)) break;
    }
    gamma = x;
    if (mu <= mu_min || total_it >= o.max_iter) break;
  }

  sol.gamma = gamma;
  sol.kkt_residual = final_grad;
  sol.iterations = total_it;
  sol.status = (final_grad <= 100.0 * o.eps_abs) ? SolveStatus::optimal
                                                 : SolveStatus::max_iter;
  return sol;
}

}  // namespace detail

inline WeightSolution solve_weights(const BalanceProblem& prob,
                                    const BalanceOptions& options = {}) {
  if (prob.W.rows() == 0 || prob.W.cols() == 0 || prob.c.size() != prob.W.cols() ||
      prob.n < 1)
    throw std::invalid_argument("solve_weights: malformed problem");

  WeightSolution sol;
  if (!prob.W.allFinite() || !prob.c.allFinite()) {
    sol.gamma = Vecd::Zero(prob.W.rows());
    sol.status = SolveStatus::infeasible_input;
    sol.imbalance = std::numeric_limits<double>::quiet_NaN();
    sol.objective = std::numeric_limits<double>::quiet_NaN();
    if (options.on_solution) options.on_solution(prob, sol);
    return sol;
  }

  if (prob.c.lpNorm<Eigen::Infinity>() == 0.0) {
    sol.gamma = Vecd::Zero(prob.W.rows());  // already perfectly balanced
    sol.status = SolveStatus::optimal;
  } else {
    sol = options.smoothed ? detail::solve_smoothed(prob, options)
                           : detail::solve_admm(prob, options);
  }

  sol.imbalance = imbalance(prob, sol.gamma);
  sol.gamma_l2 = sol.gamma.norm();
  sol.objective = objective_value(prob, sol.gamma);
  if (options.certify) {
    const auto [violation, count] = certify_solution(
        prob, sol.gamma, options.certify_perturbations, options.certify_seed);
    sol.cert_violation = violation;
    sol.cert_candidates = count;
  }
  if (options.on_solution) options.on_solution(prob, sol);
  return sol;
}

// Population counterpart of the balancing weights: with
// g = E[psi^2 X X']^{-1} E[theta_focal psi' X + psi e_focal], the population
// weight function is gamma(x) = psi(x'theta) x'g.  Expectations are Monte
// Carlo averages over draws supplied by sample_row (which fills one design
// row per call).
struct OracleWeights {
  Vecd g;
  Vecd gamma_star_values;  // gamma(x) at the requested evaluation points
  long mc_draws = 0;
  double gram_rcond = 0.0;
};

template <class RowSampler>
OracleWeights oracle_weights(const Vecd& theta, LinkKind link, Index focal, long mc_draws,
                             RowSampler&& sample_row, const Matd* eval_points = nullptr) {
  const Index p = theta.size();
  if (p < 1) throw std::invalid_argument("oracle_weights: empty theta");
  if (focal < 0 || focal >= p)
    throw std::invalid_argument("oracle_weights: focal index out of range");
  if (mc_draws < 10000)
    throw std::invalid_argument("oracle_weights: need at least 10^4 draws");

  Matd G = Matd::Zero(p, p);
  Vecd b = Vecd::Zero(p);
  const Index batch = 256;
  Matd Z(p, batch);  // one draw per column
  Vecd eta, psi(batch), psi1(batch);
  long done = 0;
  while (done < mc_draws) {
    const Index bs = static_cast<Index>(std::min<long>(batch, mc_draws - done));
    for (Index i = 0; i < bs; ++i) sample_row(Z.col(i));
    eta = Z.leftCols(bs).transpose() * theta;
    for (Index i = 0; i < bs; ++i) {
      const LinkValues v = eval_link(link, eta[i]);
      psi[i] = v.psi;
      psi1[i] = v.psi1;
    }
    const Matd Zw = Z.leftCols(bs) * psi.head(bs).asDiagonal();
    G.noalias() += Zw * Zw.transpose();
    b.noalias() += Z.leftCols(bs) * (theta[focal] * psi1.head(bs));
    b[focal] += psi.head(bs).sum();
    done += bs;
  }
  G /= static_cast<double>(mc_draws);
  b /= static_cast<double>(mc_draws);

  Eigen::SelfAdjointEigenSolver<Matd> es(G);
  const Vecd evals = es.eigenvalues();
  const double lmin = evals.minCoeff();
  const double lmax = evals.maxCoeff();
  const double rcond = lmax > 0 ? lmin / lmax : 0.0;
  if (lmin <= 0.0 || rcond < 1e-13) {
    std::ostringstream msg;
    msg << "oracle_weights: estimated moment matrix is numerically singular"
        << " (rcond = " << rcond << ")";
    throw NumericError(msg.str());
  }

  OracleWeights out;
  out.mc_draws = mc_draws;
  out.gram_rcond = rcond;
  out.g = es.eigenvectors() *
          ((es.eigenvectors().transpose() * b).array() / evals.array()).matrix();
  if (eval_points) {
    if (eval_points->cols() != p)
      throw std::invalid_argument("oracle_weights: eval point width != p");
    const Vecd idx = *eval_points * theta;
    const Vecd proj = *eval_points * out.g;
    out.gamma_star_values.resize(eval_points->rows());
    for (Index i = 0; i < eval_points->rows(); ++i)
      out.gamma_star_values[i] = eval_link(link, idx[i]).psi * proj[i];
  }
  return out;
}

}  // namespace ape
