#pragma once

#include <cmath>
#include <string>
#include <string_view>

#include "ape/link.hpp"
#include "ape/rng.hpp"
#include "ape/types.hpp"

namespace ape {

// Synthetic designs: standard normal columns, optionally with the first
// coordinate partially determined by coordinates 11..20 (1-based), keeping
// unit marginal variance:  X_1 = sqrt(1/30) * sum_{j=11..20} X_j + sqrt(2/3) e.
enum class Design { uncorrelated, correlated };

inline const char* design_name(Design d) {
  return d == Design::uncorrelated ? "uncorrelated" : "correlated";
}

inline Design design_from_name(std::string_view name) {
  if (name == "uncorrelated") return Design::uncorrelated;
  if (name == "correlated") return Design::correlated;
  throw std::invalid_argument("unknown design '" + std::string(name) + "'");
}

// Dense decaying coefficients: theta_1 = -1/10, theta_k = 20 / (5 + k)^2 for
// k >= 2 (1-based).  Approximately sparse but never exactly sparse.
inline Vecd decay_theta(Index p) {
  if (p < 1) throw std::invalid_argument("decay_theta: p must be >= 1");
  Vecd theta(p);
  theta[0] = -0.1;
  for (Index i = 1; i < p; ++i) {
    const double k = static_cast<double>(i + 1);
    theta[i] = 20.0 / ((5.0 + k) * (5.0 + k));
  }
  return theta;
}

struct DgpSpec {
  Design design = Design::uncorrelated;
  Index n = 0;
  Index p = 0;
  Vecd theta;
  LinkKind link = LinkKind::logistic;
  uint64_t seed = 0;

  // The simulation-study configuration: p = 2n and decaying coefficients.
  static DgpSpec preset(Design design, Index n, uint64_t seed) {
    DgpSpec s;
    s.design = design;
    s.n = n;
    s.p = 2 * n;
    s.theta = decay_theta(s.p);
    s.seed = seed;
    return s;
  }

  void validate() const {
    if (n < 1 || p < 1) throw std::invalid_argument("dgp: n and p must be >= 1");
    if (theta.size() != p)
      throw std::invalid_argument("dgp: theta length != p");
    if (design == Design::correlated && p < 20)
      throw std::invalid_argument("dgp: correlated design needs p >= 20");
  }
};

namespace detail {

// In-place column transform for the correlated design; draws are standard
// normal on entry with the first coordinate playing the role of the
// independent innovation.
template <class ColVector>
void correlate_first_coordinate(ColVector&& x) {
  if (x.size() < 20)
    throw std::invalid_argument("correlated design needs at least 20 coordinates");
  double s = 0.0;
  for (Index j = 10; j < 20; ++j) s += x[j];
  x[0] = std::sqrt(1.0 / 30.0) * s + std::sqrt(2.0 / 3.0) * x[0];
}

}  // namespace detail

// One design row per call; usable as the sampler for population-weight
// estimation.  Column-major draws keep the stream layout identical to
// sample_dgp.
inline auto design_sampler(Design design, RngStream stream) {
  return [design, stream](Eigen::Ref<Vecd> x) mutable {
    stream.fill_normal(x.data(), x.size());
    if (design == Design::correlated) detail::correlate_first_coordinate(x);
  };
}

// Draws a full sample: X column-major from the (seed, cell, rep) design
// stream, then Bernoulli responses from the response stream.  Identical
// arguments always reproduce the identical dataset.
inline Dataset sample_dgp(const DgpSpec& spec, uint64_t cell = 0, uint64_t rep = 0) {
  spec.validate();
  Dataset d;
  d.X.resize(spec.n, spec.p);
  RngStream xs(spec.seed, stream_id(streams::design_x, cell, rep));
  xs.fill_normal(d.X.data(), spec.n * spec.p);
  if (spec.design == Design::correlated) {
    Vecd sum10 = d.X.middleCols(10, 10).rowwise().sum();
    d.X.col(0) = std::sqrt(1.0 / 30.0) * sum10 + std::sqrt(2.0 / 3.0) * d.X.col(0);
  }

  RngStream ys(spec.seed, stream_id(streams::response, cell, rep));
  const Vecd eta = d.X * spec.theta;
  d.Y.resize(spec.n);
  for (Index i = 0; i < spec.n; ++i) {
    const double prob = std::clamp(eval_link(spec.link, eta[i]).Psi, 0.0, 1.0);
    d.Y[i] = ys.uniform() < prob ? 1.0 : 0.0;
  }
  return d;
}

// Monte Carlo evaluation of the target tau_focal = theta_focal E[psi(X'theta)]
// over fresh draws from the design law, with its own standard error.
struct OracleEstimate {
  double tau = 0.0;
  double mc_se = 0.0;
  long draws = 0;
};

inline OracleEstimate tau_oracle(const DgpSpec& spec, long mc_draws, uint64_t seed,
                                 Index focal = 0) {
  spec.validate();
  if (mc_draws < 100000)
    throw std::invalid_argument("tau_oracle: need at least 1e5 draws for a usable target");
  if (focal < 0 || focal >= spec.p)
    throw std::invalid_argument("tau_oracle: focal index out of range");

  RngStream rs(seed, stream_id(streams::oracle_mc));
  const Index batch = 512;
  Matd Z(spec.p, batch);
  double sum = 0.0, sumsq = 0.0;
  long done = 0;
  while (done < mc_draws) {
    const Index bs = static_cast<Index>(std::min<long>(batch, mc_draws - done));
    rs.fill_normal(Z.data(), spec.p * bs);
    if (spec.design == Design::correlated)
      for (Index i = 0; i < bs; ++i) detail::correlate_first_coordinate(Z.col(i));
    const Vecd eta = Z.leftCols(bs).transpose() * spec.theta;
    for (Index i = 0; i < bs; ++i) {
      const double v = spec.theta[focal] * eval_link(spec.link, eta[i]).psi;
      sum += v;
      sumsq += v * v;
    }
    done += bs;
  }
  OracleEstimate est;
  est.draws = mc_draws;
  est.tau = sum / static_cast<double>(mc_draws);
  const double var =
      std::max(0.0, sumsq / static_cast<double>(mc_draws) - est.tau * est.tau);
  est.mc_se = std::sqrt(var / static_cast<double>(mc_draws));
  return est;
}

}  // namespace ape
