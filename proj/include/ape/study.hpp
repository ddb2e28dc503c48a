#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "ape/comparator.hpp"
#include "ape/csv.hpp"
#include "ape/dgp.hpp"
#include "ape/estimator.hpp"
#include "ape/types.hpp"

namespace ape {

enum class EstimatorKind { aml, wz, plugin };

inline const char* estimator_name(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::aml: return "aml";
    case EstimatorKind::wz: return "wz";
    default: return "plugin";
  }
}

inline EstimatorKind estimator_from_name(std::string_view name) {
  if (name == "aml") return EstimatorKind::aml;
  if (name == "wz") return EstimatorKind::wz;
  if (name == "plugin") return EstimatorKind::plugin;
  throw std::invalid_argument("unknown estimator '" + std::string(name) + "'");
}

struct StudyCell {
  Design design = Design::uncorrelated;
  Index n = 0;  // p = 2n via the preset
};

struct StudyConfig {
  std::vector<StudyCell> cells;
  std::vector<EstimatorKind> estimators = {EstimatorKind::aml, EstimatorKind::wz};
  int replications = 20;
  uint64_t seed = 0;
  long oracle_draws = 1000000;
  Index focal = 0;
  EstimateConfig aml;  // seed and folds assignment are derived per replication
  WzConfig wz;         // seed is derived per replication
  int threads = 1;

  // The simulation grid used throughout: both designs at n in {200, 400, 800}.
  static StudyConfig preset(uint64_t seed) {
    StudyConfig cfg;
    cfg.seed = seed;
    for (Design d : {Design::uncorrelated, Design::correlated})
      for (Index n : {Index(200), Index(400), Index(800)}) cfg.cells.push_back({d, n});
    return cfg;
  }

  void validate() const {
    if (cells.empty()) throw std::invalid_argument("study: no cells configured");
    if (estimators.empty()) throw std::invalid_argument("study: no estimators configured");
    if (replications < 1) throw std::invalid_argument("study: replications must be >= 1");
    if (oracle_draws < 100000)
      throw std::invalid_argument("study: oracle draws must be >= 1e5");
    if (threads < 1) throw std::invalid_argument("study: threads must be >= 1");
    for (const StudyCell& c : cells) {
      DgpSpec spec = DgpSpec::preset(c.design, c.n, seed);
      spec.validate();
      if (focal < 0 || focal >= spec.p)
        throw std::invalid_argument("study: focal index out of range for n = " +
                                    std::to_string(c.n));
    }
  }
};

struct RepRecord {
  Index cell = 0;
  Design design = Design::uncorrelated;
  Index n = 0;
  EstimatorKind estimator = EstimatorKind::aml;
  int replication = 0;
  bool ok = false;
  std::string error;
  double tau_hat = std::numeric_limits<double>::quiet_NaN();
  double se = std::numeric_limits<double>::quiet_NaN();       // AML only
  double ci_low = std::numeric_limits<double>::quiet_NaN();   // AML only
  double ci_high = std::numeric_limits<double>::quiet_NaN();  // AML only
};

struct CellEstimatorSummary {
  Index cell = 0;
  Design design = Design::uncorrelated;
  Index n = 0;
  EstimatorKind estimator = EstimatorKind::aml;
  int replications = 0;  // attempted
  int failures = 0;      // recorded but excluded from the moments below
  double tau_oracle = std::numeric_limits<double>::quiet_NaN();
  double oracle_mc_se = std::numeric_limits<double>::quiet_NaN();
  double mean_tau = std::numeric_limits<double>::quiet_NaN();
  double bias = std::numeric_limits<double>::quiet_NaN();
  double variance = std::numeric_limits<double>::quiet_NaN();  // population form
  double rmse = std::numeric_limits<double>::quiet_NaN();      // sqrt(bias^2 + variance)
  double coverage = std::numeric_limits<double>::quiet_NaN();  // CI estimators only
};

struct SimReport {
  std::vector<StudyCell> cells;
  std::vector<OracleEstimate> oracles;  // per cell
  std::vector<RepRecord> records;       // cell-major, then replication, then estimator
  std::vector<CellEstimatorSummary> summaries;
  int replications = 0;
  uint64_t seed = 0;
};

namespace detail {

inline RepRecord run_one(const StudyConfig& cfg, Index cell_idx, int rep) {
  const StudyCell& cell = cfg.cells[static_cast<size_t>(cell_idx)];
  RepRecord base;
  base.cell = cell_idx;
  base.design = cell.design;
  base.n = cell.n;
  base.replication = rep;
  return base;
}

}  // namespace detail

// Runs the full replication study.  Every (cell, replication) pair draws its
// dataset and estimator seeds from derived streams, so the report is
// reproducible for a fixed master seed regardless of thread count.
inline SimReport run_study(const StudyConfig& cfg) {
  cfg.validate();
  const Index n_cells = static_cast<Index>(cfg.cells.size());
  const int n_est = static_cast<int>(cfg.estimators.size());

  SimReport report;
  report.cells = cfg.cells;
  report.replications = cfg.replications;
  report.seed = cfg.seed;
  report.oracles.resize(static_cast<size_t>(n_cells));
  report.records.resize(static_cast<size_t>(n_cells) *
                        static_cast<size_t>(cfg.replications) *
                        static_cast<size_t>(n_est));

  for (Index c = 0; c < n_cells; ++c) {
    DgpSpec spec = DgpSpec::preset(cfg.cells[static_cast<size_t>(c)].design,
                                   cfg.cells[static_cast<size_t>(c)].n, cfg.seed);
    report.oracles[static_cast<size_t>(c)] =
        tau_oracle(spec, cfg.oracle_draws, splitmix64(cfg.seed) + static_cast<uint64_t>(c),
                   cfg.focal);
  }

  const long n_tasks = static_cast<long>(n_cells) * cfg.replications;
  const auto run_task = [&](long task) {
    const Index c = static_cast<Index>(task / cfg.replications);
    const int rep = static_cast<int>(task % cfg.replications);
    const DgpSpec spec = DgpSpec::preset(cfg.cells[static_cast<size_t>(c)].design,
                                         cfg.cells[static_cast<size_t>(c)].n, cfg.seed);
    const uint64_t rep_seed =
        splitmix64(cfg.seed ^ stream_id(streams::generic, static_cast<uint64_t>(c),
                                        static_cast<uint64_t>(rep)));
    Dataset data;
    bool data_ok = true;
    std::string data_error;
    try {
      data = sample_dgp(spec, static_cast<uint64_t>(c), static_cast<uint64_t>(rep));
    } catch (const std::exception& ex) {
      data_ok = false;
      data_error = ex.what();
    }

    for (int e = 0; e < n_est; ++e) {
      RepRecord rec = detail::run_one(cfg, c, rep);
      rec.estimator = cfg.estimators[static_cast<size_t>(e)];
      if (!data_ok) {
        rec.ok = false;
        rec.error = data_error;
      } else {
        try {
          switch (rec.estimator) {
            case EstimatorKind::aml: {
              EstimateConfig est_cfg = cfg.aml;
              est_cfg.seed = rep_seed;
              const ApeEstimate est = estimate_ape(data, spec.link, cfg.focal, est_cfg);
              rec.tau_hat = est.tau_hat;
              rec.se = est.se;
              rec.ci_low = est.ci_low;
              rec.ci_high = est.ci_high;
              break;
            }
            case EstimatorKind::wz: {
              WzConfig wz_cfg = cfg.wz;
              wz_cfg.seed = rep_seed;
              rec.tau_hat = estimate_wz(data, spec.link, cfg.focal, wz_cfg).tau_hat;
              break;
            }
            case EstimatorKind::plugin: {
              PilotFit pilot;
              if (cfg.wz.lambda_rule == LambdaRule::cv)
                pilot = fit_pilot_cv(data, spec.link, splitmix64(rep_seed), cfg.wz.pilot);
              else
                pilot = fit_pilot(data, spec.link, cfg.wz.fixed_lambda, cfg.wz.pilot);
              if (!pilot.converged)
                throw NumericError("plugin: pilot fit did not converge");
              rec.tau_hat = plug_in_ape(pilot.theta, data, spec.link, cfg.focal);
              break;
            }
          }
          rec.ok = true;
        } catch (const std::exception& ex) {
          rec.ok = false;
          rec.error = ex.what();
        }
      }
      const size_t slot = (static_cast<size_t>(c) * static_cast<size_t>(cfg.replications) +
                           static_cast<size_t>(rep)) *
                              static_cast<size_t>(n_est) +
                          static_cast<size_t>(e);
      report.records[slot] = std::move(rec);
    }
  };

  if (cfg.threads == 1 || n_tasks == 1) {
    for (long task = 0; task < n_tasks; ++task) run_task(task);
  } else {
    // Records land in pre-assigned slots, so the merge is deterministic no
    // matter which worker finishes first.
    std::atomic<long> next{0};
    const int workers = static_cast<int>(
        std::min<long>(n_tasks, static_cast<long>(cfg.threads)));
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(workers));
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (long task = next.fetch_add(1); task < n_tasks; task = next.fetch_add(1))
          run_task(task);
      });
    for (std::thread& t : pool) t.join();
  }

  for (Index c = 0; c < n_cells; ++c) {
    for (int e = 0; e < n_est; ++e) {
      CellEstimatorSummary s;
      s.cell = c;
      s.design = cfg.cells[static_cast<size_t>(c)].design;
      s.n = cfg.cells[static_cast<size_t>(c)].n;
      s.estimator = cfg.estimators[static_cast<size_t>(e)];
      s.replications = cfg.replications;
      s.tau_oracle = report.oracles[static_cast<size_t>(c)].tau;
      s.oracle_mc_se = report.oracles[static_cast<size_t>(c)].mc_se;

      std::vector<double> taus;
      int covered = 0, with_ci = 0;
      for (int rep = 0; rep < cfg.replications; ++rep) {
        const size_t slot =
            (static_cast<size_t>(c) * static_cast<size_t>(cfg.replications) +
             static_cast<size_t>(rep)) *
                static_cast<size_t>(n_est) +
            static_cast<size_t>(e);
        const RepRecord& rec = report.records[slot];
        if (!rec.ok) {
          ++s.failures;
          continue;
        }
        taus.push_back(rec.tau_hat);
        if (std::isfinite(rec.ci_low) && std::isfinite(rec.ci_high)) {
          ++with_ci;
          if (rec.ci_low <= s.tau_oracle && s.tau_oracle <= rec.ci_high) ++covered;
        }
      }
      if (!taus.empty()) {
        const double m = static_cast<double>(taus.size());
        double mean = 0.0;
        for (double t : taus) mean += t;
        mean /= m;
        double var = 0.0;
        for (double t : taus) var += (t - mean) * (t - mean);
        var /= m;  // population variance so rmse^2 = bias^2 + variance exactly
        s.mean_tau = mean;
        s.bias = mean - s.tau_oracle;
        s.variance = var;
        s.rmse = std::sqrt(s.bias * s.bias + var);
      }
      if (with_ci > 0)
        s.coverage = static_cast<double>(covered) / static_cast<double>(with_ci);
      report.summaries.push_back(s);
    }
  }
  return report;
}

// Long-format table with one row per successful replication, plus a summary
// table; both CSVs have fixed, documented headers.
inline void emit_boxplot_table(const SimReport& report, const std::string& long_path,
                               const std::string& summary_path) {
  if (report.records.empty())
    throw std::invalid_argument("emit_boxplot_table: report has no records");

  std::vector<std::vector<std::string>> rows;
  for (const RepRecord& rec : report.records) {
    if (!rec.ok) continue;
    rows.push_back({design_name(rec.design), std::to_string(rec.n),
                    estimator_name(rec.estimator), std::to_string(rec.replication),
                    format_double(rec.tau_hat)});
  }
  write_csv(long_path, {"design", "n", "estimator", "replication", "tau_hat"}, rows);

  std::vector<std::vector<std::string>> srows;
  for (const CellEstimatorSummary& s : report.summaries) {
    srows.push_back({design_name(s.design), std::to_string(s.n),
                     estimator_name(s.estimator), std::to_string(s.replications),
                     std::to_string(s.failures), format_double(s.tau_oracle),
                     format_double(s.oracle_mc_se), format_double(s.mean_tau),
                     format_double(s.bias), format_double(s.variance),
                     format_double(s.rmse), format_double(s.coverage)});
  }
  write_csv(summary_path,
            {"design", "n", "estimator", "replications", "failures", "tau_oracle",
             "oracle_mc_se", "mean_tau", "bias", "variance", "rmse", "coverage"},
            srows);
}

}  // namespace ape
