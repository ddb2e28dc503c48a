#pragma once

#include <algorithm>
#include <cmath>

#include "ape/link.hpp"
#include "ape/types.hpp"

namespace ape {

// Per-observation negative quasi-log-likelihood in the index eta, with its
// first derivative and a positive curvature weight:
//   logistic  Bernoulli likelihood, canonical: weight = psi(eta) (exact Hessian)
//   probit    Bernoulli likelihood: weight = psi^2 / (Psi (1-Psi)) (Fisher scoring)
//   identity  Gaussian quasi-likelihood 0.5 (y - eta)^2: weight = 1
struct LossTerms {
  double value;
  double d1;
  double weight;
};

namespace detail {

inline double softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

inline LossTerms logistic_loss(double eta, double y) {
  const LinkValues v = detail::logistic_values(eta);
  return {softplus(eta) - y * eta, v.Psi - y, v.psi};
}

inline LossTerms probit_loss(double eta, double y) {
  // erfc underflows past |z| ~ 37.5/sqrt(2); clamping there costs nothing
  // because the loss is already astronomically steep.
  const double z = std::clamp(eta, -36.0, 36.0);
  const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  const double log_Psi = std::log(0.5 * std::erfc(-z * inv_sqrt2));
  const double log_one_minus_Psi = std::log(0.5 * std::erfc(z * inv_sqrt2));
  const double log_psi = -0.5 * z * z -
                         0.5 * std::log(2.0 * std::numbers::pi);
  const double r1 = std::exp(log_psi - log_Psi);            // psi / Psi
  const double r0 = std::exp(log_psi - log_one_minus_Psi);  // psi / (1 - Psi)
  LossTerms t;
  t.value = -(y * log_Psi + (1.0 - y) * log_one_minus_Psi);
  t.d1 = -y * r1 + (1.0 - y) * r0;
  t.weight = r1 * r0;
  return t;
}

inline LossTerms identity_loss(double eta, double y) {
  const double r = eta - y;
  return {0.5 * r * r, r, 1.0};
}

}  // namespace detail

inline LossTerms loss_terms(LinkKind link, double eta, double y) {
  switch (link) {
    case LinkKind::logistic: return detail::logistic_loss(eta, y);
    case LinkKind::probit: return detail::probit_loss(eta, y);
    case LinkKind::identity: return detail::identity_loss(eta, y);
  }
  throw std::invalid_argument("loss_terms: bad link kind");
}

inline double mean_nll(LinkKind link, const Vecd& eta, const Vecd& y) {
  double s = 0.0;
  for (Index i = 0; i < eta.size(); ++i) s += loss_terms(link, eta[i], y[i]).value;
  return s / static_cast<double>(eta.size());
}

inline void loss_derivs_array(LinkKind link, const Vecd& eta, const Vecd& y, Vecd& d1,
                              Vecd& w) {
  d1.resize(eta.size());
  w.resize(eta.size());
  for (Index i = 0; i < eta.size(); ++i) {
    const LossTerms t = loss_terms(link, eta[i], y[i]);
    d1[i] = t.d1;
    w[i] = t.weight;
  }
}

// Unit deviance 2 * (nll - saturated nll); used for cross-validation scoring.
inline double unit_deviance(LinkKind link, double eta, double y) {
  double sat = 0.0;
  if (link != LinkKind::identity && y > 0.0 && y < 1.0)
    sat = -(y * std::log(y) + (1.0 - y) * std::log1p(-y));
  return 2.0 * (loss_terms(link, eta, y).value - sat);
}

inline double deviance_sum(LinkKind link, const Vecd& eta, const Vecd& y) {
  double s = 0.0;
  for (Index i = 0; i < eta.size(); ++i) s += unit_deviance(link, eta[i], y[i]);
  return s;
}

}  // namespace ape
