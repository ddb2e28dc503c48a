#pragma once

// Dense primal-dual interior-point reference for the balancing program in its
// epigraph form
//   min (1/2) x' P x,  x = (gamma, t),  P = diag((2/n^2) I, 2)
//   s.t. -(A gamma)_k - t <= -c_k  and  (A gamma)_k - t <= c_k,  A = W'/n.
// Everything runs in long double with explicit 2p x (m+1) constraint rows;
// no operator splitting, no factorization reuse — a completely different
// algorithm from the production solver.

#include <Eigen/Dense>

#include <cmath>

#include "ape/balance.hpp"
#include "ape/types.hpp"

namespace oracle {

using LVec = Eigen::Matrix<long double, Eigen::Dynamic, 1>;
using LMat = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;

struct QpRefResult {
  ape::Vecd gamma;
  double objective = 0.0;
  double mu_final = 0.0;
  int iterations = 0;
};

inline QpRefResult qp_reference(const ape::BalanceProblem& prob, int max_iter = 300) {
  using ape::Index;
  const Index m = prob.W.rows();
  const Index d = prob.W.cols();
  const Index nx = m + 1;
  const Index nc = 2 * d;
  const long double nn = static_cast<long double>(prob.n);

  const LMat A = (prob.W.transpose().cast<long double>()) / nn;  // d x m
  const LVec c = prob.c.cast<long double>();

  LMat G(nc, nx);
  LVec h(nc);
  G.block(0, 0, d, m) = -A;
  G.block(0, m, d, 1).setConstant(-1.0L);
  h.head(d) = -c;
  G.block(d, 0, d, m) = A;
  G.block(d, m, d, 1).setConstant(-1.0L);
  h.tail(d) = c;

  LVec Pdiag(nx);
  Pdiag.head(m).setConstant(2.0L / (nn * nn));
  Pdiag[m] = 2.0L;

  LVec x = LVec::Zero(nx);
  x[m] = c.cwiseAbs().maxCoeff() + 1.0L;
  LVec lam = LVec::Ones(nc);
  LVec s = h - G * x;

  const auto max_step = [](const LVec& v, const LVec& dv) {
    long double a = 1.0L;
    for (Index k = 0; k < v.size(); ++k)
      if (dv[k] < 0) a = std::min(a, -v[k] / dv[k]);
    return a;
  };

  QpRefResult res;
  const long double tol = 1e-16L;
  LVec x_prev = x, s_prev = s, lam_prev = lam;
  for (int it = 0; it < max_iter; ++it) {
    if (!x.allFinite() || !s.allFinite() || !lam.allFinite()) {
      x = x_prev;  // revert the last (numerically broken) step
      break;
    }
    x_prev = x;
    s_prev = s;
    lam_prev = lam;
    const LVec r_dual = Pdiag.cwiseProduct(x) + G.transpose() * lam;
    const LVec r_prim = G * x + s - h;
    const long double mu = s.dot(lam) / static_cast<long double>(nc);
    const long double scale =
        1.0L + h.cwiseAbs().maxCoeff() + x.cwiseAbs().maxCoeff() +
        lam.cwiseAbs().maxCoeff();
    res.mu_final = static_cast<double>(mu);
    res.iterations = it;
    if (r_dual.cwiseAbs().maxCoeff() < tol * scale &&
        r_prim.cwiseAbs().maxCoeff() < tol * scale && mu < 1e-24L * scale)
      break;

    LMat K = (G.transpose() * lam.cwiseQuotient(s).asDiagonal() * G);
    K.diagonal() += Pdiag;
    const Eigen::LDLT<LMat> kkt(K);
    const auto newton = [&](const LVec& r_cent, LVec& dx, LVec& ds, LVec& dlam) {
      const LVec rhs = -r_dual - G.transpose() * ((lam.cwiseProduct(r_prim) - r_cent)
                                                      .cwiseQuotient(s));
      dx = kkt.solve(rhs);
      ds = -r_prim - G * dx;
      dlam = (-r_cent - lam.cwiseProduct(ds)).cwiseQuotient(s);
    };

    // predictor (affine scaling), then Mehrotra-corrected step
    LVec dx(nx), ds(nc), dlam(nc);
    newton(lam.cwiseProduct(s), dx, ds, dlam);
    const long double ap_aff = max_step(s, ds);
    const long double ad_aff = max_step(lam, dlam);
    const long double mu_aff =
        (s + ap_aff * ds).dot(lam + ad_aff * dlam) / static_cast<long double>(nc);
    long double sigma = mu > 0 ? (mu_aff / mu) * (mu_aff / mu) * (mu_aff / mu) : 0.1L;
    sigma = std::min(std::max(sigma, (long double)1e-8), (long double)0.8);

    const LVec r_cent =
        (lam.cwiseProduct(s) + dlam.cwiseProduct(ds)).array() - sigma * mu;
    newton(r_cent, dx, ds, dlam);
    const long double ap = 0.995L * max_step(s, ds);
    const long double ad = 0.995L * max_step(lam, dlam);
    if (ap < 1e-14L && ad < 1e-14L) break;  // stalled at the numerical floor
    x += ap * dx;
    s += ap * ds;
    lam += ad * dlam;
  }
  (void)s_prev;
  (void)lam_prev;

  const LVec gamma = x.head(m);
  const LVec resid = c - A * gamma;
  const long double obj =
      resid.cwiseAbs().maxCoeff() * resid.cwiseAbs().maxCoeff() +
      gamma.squaredNorm() / (nn * nn);
  res.gamma = gamma.cast<double>();
  res.objective = static_cast<double>(obj);
  return res;
}

}  // namespace oracle
