#pragma once

#include <json.hpp>

#include <string>

#include "ape/balance.hpp"
#include "ape/comparator.hpp"
#include "ape/dgp.hpp"
#include "ape/estimator.hpp"
#include "ape/study.hpp"
#include "ape/types.hpp"

namespace ape {

// Ordered maps keep field order stable so identical inputs produce identical
// bytes on disk.
using Json = nlohmann::ordered_json;

inline constexpr int schema_version = 1;

namespace detail {

// JSON has no literal for non-finite doubles; nlohmann would emit null via
// dump(), which does not parse back.  Encode them as strings explicitly.
inline Json json_double(double x) {
  if (std::isfinite(x)) return x;
  if (std::isnan(x)) return "nan";
  return x > 0 ? "inf" : "-inf";
}

inline Json json_vector(const Vecd& v) {
  Json arr = Json::array();
  for (Index i = 0; i < v.size(); ++i) arr.push_back(json_double(v[i]));
  return arr;
}

}  // namespace detail

inline Json to_json(const FoldDiagnostics& d) {
  Json j;
  j["fold"] = d.fold;
  j["n_train"] = d.n_train;
  j["n_test"] = d.n_test;
  j["lambda"] = detail::json_double(d.lambda);
  j["support_size"] = d.support_size;
  j["pilot_kkt"] = detail::json_double(d.pilot_kkt);
  j["imbalance"] = detail::json_double(d.imbalance);
  j["gamma_l2"] = detail::json_double(d.gamma_l2);
  j["balance_objective"] = detail::json_double(d.balance_objective);
  j["balance_kkt"] = detail::json_double(d.balance_kkt);
  j["balance_iterations"] = d.balance_iterations;
  j["cert_violation"] = detail::json_double(d.cert_violation);
  j["balance_status"] = solve_status_name(d.balance_status);
  return j;
}

inline Json to_json(const ApeEstimate& est) {
  Json j;
  j["tau_hat"] = detail::json_double(est.tau_hat);
  j["se"] = detail::json_double(est.se);
  j["ci_low"] = detail::json_double(est.ci_low);
  j["ci_high"] = detail::json_double(est.ci_high);
  j["alpha"] = est.alpha;
  j["plugin_part"] = detail::json_double(est.plugin_part);
  j["augmentation_part"] = detail::json_double(est.augmentation_part);
  j["folds"] = est.folds;
  Json diags = Json::array();
  for (const FoldDiagnostics& d : est.fold_diagnostics) diags.push_back(to_json(d));
  j["fold_diagnostics"] = diags;
  j["influence"] = detail::json_vector(est.influence);
  return j;
}

inline Json to_json(const WzFit& fit) {
  Json j;
  j["tau_hat"] = detail::json_double(fit.tau_hat);
  j["lambda"] = detail::json_double(fit.lambda);
  j["signal_set"] = fit.signal_set;
  j["pilot_support"] = fit.pilot_support;
  j["correction"] = detail::json_vector(fit.correction);
  j["score_before"] = detail::json_double(fit.score_before);
  j["score_after"] = detail::json_double(fit.score_after);
  j["step_size"] = fit.step_size;
  j["halvings"] = fit.halvings;
  j["ridge"] = detail::json_double(fit.ridge);
  Json theta = Json::array();
  for (Index k = 0; k < fit.theta_tilde.size(); ++k)
    if (fit.theta_tilde[k] != 0.0) theta.push_back(Json{{"index", k}, {"value", fit.theta_tilde[k]}});
  j["theta_tilde_nonzero"] = theta;
  return j;
}

inline Json to_json(const OracleEstimate& est) {
  Json j;
  j["tau"] = detail::json_double(est.tau);
  j["mc_se"] = detail::json_double(est.mc_se);
  j["draws"] = est.draws;
  return j;
}

inline Json to_json(const ErrorDecomposition& dec) {
  Json j;
  j["tau_star"] = detail::json_double(dec.tau_star);
  j["tau_hat"] = detail::json_double(dec.tau_hat);
  j["total"] = detail::json_double(dec.total);
  j["linear_term"] = detail::json_double(dec.linear_term);
  j["noise_term"] = detail::json_double(dec.noise_term);
  j["remainder"] = detail::json_double(dec.remainder);
  j["imbalance"] = detail::json_double(dec.imbalance);
  j["l1_error"] = detail::json_double(dec.l1_error);
  j["holder_bound"] = detail::json_double(dec.holder_bound);
  return j;
}

// One line per balance solve, suitable for appending to a JSONL stream.
inline Json to_json_line(const BalanceProblem& prob, const WeightSolution& sol) {
  Json j;
  j["n"] = prob.n;
  j["p"] = prob.W.cols();
  j["focal"] = prob.focal;
  j["status"] = solve_status_name(sol.status);
  j["iterations"] = sol.iterations;
  j["imbalance"] = detail::json_double(sol.imbalance);
  j["gamma_l2"] = detail::json_double(sol.gamma_l2);
  j["objective"] = detail::json_double(sol.objective);
  j["kkt_residual"] = detail::json_double(sol.kkt_residual);
  j["cert_violation"] = detail::json_double(sol.cert_violation);
  return j;
}

}  // namespace ape
