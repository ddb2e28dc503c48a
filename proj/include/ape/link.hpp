#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <string_view>

#include "ape/types.hpp"

namespace ape {

enum class LinkKind { logistic, probit, identity };

inline const char* link_name(LinkKind k) {
  switch (k) {
    case LinkKind::logistic: return "logistic";
    case LinkKind::probit: return "probit";
    case LinkKind::identity: return "identity";
  }
  return "?";
}

inline LinkKind link_from_name(std::string_view name) {
  if (name == "logistic") return LinkKind::logistic;
  if (name == "probit") return LinkKind::probit;
  if (name == "identity") return LinkKind::identity;
  throw std::invalid_argument("unknown link '" + std::string(name) +
                              "' (expected logistic, probit, or identity)");
}

// Mean function Psi evaluated with its first three derivatives:
// psi = Psi', psi1 = Psi'', psi2 = Psi'''.
template <class Scalar>
struct LinkValuesT {
  Scalar Psi;
  Scalar psi;
  Scalar psi1;
  Scalar psi2;
};
using LinkValues = LinkValuesT<double>;

namespace detail {

// Logistic bundle via q = exp(-|z|): every quantity is a ratio of
// well-scaled terms, so nothing overflows and tails keep full relative
// accuracy.  1 - 2*Psi(z) equals -sign(z) * (1-q)/(1+q) exactly in this
// parameterization.
template <class Scalar>
LinkValuesT<Scalar> logistic_values(Scalar z) {
  using std::exp;
  const Scalar q = exp(-(z < Scalar(0) ? -z : z));
  const Scalar denom = Scalar(1) + q;
  const Scalar psi = q / (denom * denom);
  const Scalar s = (Scalar(1) - q) / denom;          // |1 - 2 Psi|
  const Scalar one_minus_two_Psi = z >= Scalar(0) ? -s : s;
  LinkValuesT<Scalar> v;
  v.Psi = z >= Scalar(0) ? Scalar(1) / denom : q / denom;
  v.psi = psi;
  v.psi1 = psi * one_minus_two_Psi;
  v.psi2 = psi * (one_minus_two_Psi * one_minus_two_Psi - Scalar(2) * psi);
  return v;
}

// Probit bundle.  Psi computed through erfc so the tails never suffer the
// cancellation of 1 - Phi(z).
template <class Scalar>
LinkValuesT<Scalar> probit_values(Scalar z) {
  using std::erfc;
  using std::exp;
  const Scalar inv_sqrt2 = Scalar(1) / std::numbers::sqrt2_v<Scalar>;
  const Scalar inv_sqrt2pi = std::numbers::inv_sqrtpi_v<Scalar> * inv_sqrt2;
  LinkValuesT<Scalar> v;
  v.Psi = Scalar(0.5) * erfc(-z * inv_sqrt2);
  v.psi = exp(Scalar(-0.5) * z * z) * inv_sqrt2pi;
  v.psi1 = -z * v.psi;
  v.psi2 = (z * z - Scalar(1)) * v.psi;
  return v;
}

}  // namespace detail

template <class Scalar>
LinkValuesT<Scalar> eval_link(LinkKind kind, Scalar z) {
  if (!std::isfinite(static_cast<double>(z)))
    throw std::domain_error("link evaluation requires finite z");
  switch (kind) {
    case LinkKind::logistic: return detail::logistic_values(z);
    case LinkKind::probit: return detail::probit_values(z);
    case LinkKind::identity: return {z, Scalar(1), Scalar(0), Scalar(0)};
  }
  throw std::invalid_argument("eval_link: bad link kind");
}

inline LinkValues eval_link(LinkKind kind, double z) { return eval_link<double>(kind, z); }

// Columnwise bundle evaluation; any null output is skipped.
inline void eval_link_array(LinkKind kind, const Vecd& z, Vecd* Psi, Vecd* psi,
                            Vecd* psi1 = nullptr, Vecd* psi2 = nullptr) {
  const Index n = z.size();
  if (Psi) Psi->resize(n);
  if (psi) psi->resize(n);
  if (psi1) psi1->resize(n);
  if (psi2) psi2->resize(n);
  for (Index i = 0; i < n; ++i) {
    const LinkValues v = eval_link(kind, z[i]);
    if (Psi) (*Psi)[i] = v.Psi;
    if (psi) (*psi)[i] = v.psi;
    if (psi1) (*psi1)[i] = v.psi1;
    if (psi2) (*psi2)[i] = v.psi2;
  }
}

}  // namespace ape
