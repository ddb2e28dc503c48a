// Command-line surface for average-partial-effect estimation in
// high-dimensional single-index models.
//
// Commands:
//   estimate   augmented / one-step-corrected / plug-in APE on a CSV dataset
//   simulate   replication study over the built-in designs, CSV reports
//   oracle     Monte Carlo evaluation of the population APE for a design
//   decompose  finite-sample error decomposition on one simulated dataset
//
// Exit codes: 0 success (possibly with recorded per-replication failures),
// 2 usage or configuration error, 3 numerical failure.

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "ape/comparator.hpp"
#include "ape/csv.hpp"
#include "ape/dgp.hpp"
#include "ape/estimator.hpp"
#include "ape/serialize.hpp"
#include "ape/study.hpp"

namespace {

constexpr int exit_ok = 0;
constexpr int exit_config = 2;
constexpr int exit_numeric = 3;

void write_text(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << body;
  if (!out) throw std::runtime_error("write to '" + path + "' failed");
}

void write_json(const std::string& path, const ape::Json& payload) {
  write_text(path, payload.dump(2) + "\n");
}

int report_config_errors(const std::vector<std::string>& problems) {
  std::cerr << "configuration invalid (" << problems.size() << " problem"
            << (problems.size() == 1 ? "" : "s") << "):\n";
  for (const std::string& p : problems) std::cerr << "  - " << p << "\n";
  return exit_config;
}

int default_threads(std::vector<std::string>& problems) {
  const char* env = std::getenv("APE_THREADS");
  if (!env || !*env) return 1;
  try {
    const int t = std::stoi(env);
    if (t < 1) throw std::invalid_argument("");
    return t;
  } catch (...) {
    problems.push_back(std::string("APE_THREADS='") + env +
                       "' is not a positive integer");
    return 1;
  }
}

// A balance-diagnostics sink shared by every solve of a command.
struct BalanceLog {
  std::ofstream out;
  explicit BalanceLog(const std::string& path) {
    if (path.empty()) return;
    out.open(path, std::ios::trunc | std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
  }
  void install(ape::BalanceOptions& options) {
    if (!out.is_open()) return;
    options.on_solution = [this](const ape::BalanceProblem& prob,
                                 const ape::WeightSolution& sol) {
      out << ape::to_json_line(prob, sol).dump() << "\n";
    };
  }
};

struct EstimateArgs {
  std::string input;
  std::string response;
  std::string focal;
  std::string link = "logistic";
  std::string estimator = "aml";
  int folds = 5;
  double alpha = 0.05;
  uint64_t seed = 0;
  double fixed_lambda = -1.0;  // negative: cross-validate
  std::string output = "estimate.json";
  std::string balance_log;
};

int cmd_estimate(const EstimateArgs& args) {
  std::vector<std::string> problems;
  ape::LinkKind link = ape::LinkKind::logistic;
  try {
    link = ape::link_from_name(args.link);
  } catch (const std::exception& ex) {
    problems.push_back(ex.what());
  }
  bool want_aml = false, want_wz = false, want_plugin = false;
  if (args.estimator == "all") {
    want_aml = want_wz = want_plugin = true;
  } else {
    try {
      switch (ape::estimator_from_name(args.estimator)) {
        case ape::EstimatorKind::aml: want_aml = true; break;
        case ape::EstimatorKind::wz: want_wz = true; break;
        case ape::EstimatorKind::plugin: want_plugin = true; break;
      }
    } catch (const std::exception& ex) {
      problems.push_back(std::string(ex.what()) + " (expected aml, wz, plugin, or all)");
    }
  }
  if (args.input.empty()) problems.push_back("--input is required");
  if (args.response.empty()) problems.push_back("--response is required");
  if (args.focal.empty()) problems.push_back("--focal is required");
  if (args.folds < 1) problems.push_back("--folds must be >= 1");
  if (!(args.alpha > 0.0 && args.alpha < 1.0))
    problems.push_back("--alpha must be in (0, 1)");
  if (args.output.empty()) problems.push_back("--output must not be empty");

  ape::Dataset data;
  if (problems.empty()) {
    try {
      data = ape::load_dataset(args.input, args.response);
    } catch (const std::exception& ex) {
      problems.push_back(ex.what());
    }
  }
  ape::Index focal = -1;
  if (problems.empty()) {
    for (size_t j = 0; j < data.feature_names.size(); ++j)
      if (data.feature_names[j] == args.focal) focal = static_cast<ape::Index>(j);
    if (focal < 0) {
      try {
        const ape::Index idx =
            static_cast<ape::Index>(std::stol(args.focal));
        if (idx >= 0 && idx < data.p()) focal = idx;
      } catch (...) {
      }
    }
    if (focal < 0)
      problems.push_back("focal column '" + args.focal + "' not found in '" +
                         args.input + "'");
    if (args.folds >= 2 && data.n() < 2 * static_cast<ape::Index>(args.folds))
      problems.push_back("--folds " + std::to_string(args.folds) +
                         " needs at least " + std::to_string(2 * args.folds) +
                         " rows; file has " + std::to_string(data.n()));
  }
  if (!problems.empty()) return report_config_errors(problems);

  try {
    BalanceLog blog(args.balance_log);

    ape::Json payload;
    payload["schema_version"] = ape::schema_version;
    payload["command"] = "estimate";
    ape::Json cfg;
    cfg["input"] = args.input;
    cfg["response"] = args.response;
    cfg["focal"] = args.focal;
    cfg["focal_index"] = focal;
    cfg["link"] = args.link;
    cfg["estimator"] = args.estimator;
    cfg["folds"] = args.folds;
    cfg["alpha"] = args.alpha;
    cfg["seed"] = args.seed;
    cfg["lambda_rule"] = args.fixed_lambda >= 0.0 ? "fixed" : "cv";
    if (args.fixed_lambda >= 0.0) cfg["lambda"] = args.fixed_lambda;
    payload["config"] = cfg;

    ape::Json results;
    if (want_aml) {
      ape::EstimateConfig ec;
      ec.folds = args.folds;
      ec.alpha = args.alpha;
      ec.seed = args.seed;
      if (args.fixed_lambda >= 0.0) {
        ec.lambda_rule = ape::LambdaRule::fixed;
        ec.fixed_lambda = args.fixed_lambda;
      }
      blog.install(ec.balance);
      results["aml"] = ape::to_json(ape::estimate_ape(data, link, focal, ec));
    }
    if (want_wz) {
      ape::WzConfig wc;
      wc.seed = args.seed;
      if (args.fixed_lambda >= 0.0) {
        wc.lambda_rule = ape::LambdaRule::fixed;
        wc.fixed_lambda = args.fixed_lambda;
      }
      results["wz"] = ape::to_json(ape::estimate_wz(data, link, focal, wc));
    }
    if (want_plugin) {
      ape::PilotFit pilot;
      if (args.fixed_lambda >= 0.0)
        pilot = ape::fit_pilot(data, link, args.fixed_lambda);
      else
        pilot = ape::fit_pilot_cv(data, link, ape::splitmix64(args.seed + 2));
      if (!pilot.converged)
        throw ape::NumericError("plugin: pilot fit did not converge");
      ape::Json pj;
      pj["tau_hat"] = ape::plug_in_ape(pilot.theta, data, link, focal);
      pj["lambda"] = pilot.lambda;
      pj["support_size"] = static_cast<ape::Index>(pilot.support.size());
      results["plugin"] = pj;
    }
    payload["results"] = results;
    write_json(args.output, payload);
    std::cout << "wrote " << args.output << "\n";
    return exit_ok;
  } catch (const std::exception& ex) {
    std::cerr << "estimation failed: " << ex.what() << "\n";
    return exit_numeric;
  }
}

struct SimulateArgs {
  std::vector<std::string> designs = {"uncorrelated", "correlated"};
  std::vector<long> ns = {200, 400, 800};
  std::vector<std::string> estimators = {"all"};
  int replications = 20;
  uint64_t seed = 0;
  long oracle_draws = 1000000;
  // Two folds give the largest per-fold balance samples; with p = 2n moments
  // the weight solve, not the pilot, is the binding side of the K trade-off.
  int folds = 2;
  double alpha = 0.05;
  int pilot_lambdas = 50;
  int pilot_cv_folds = 5;
  int threads = 0;  // 0: take APE_THREADS or 1
  std::string output = "study";
};

int cmd_simulate(const SimulateArgs& args) {
  std::vector<std::string> problems;
  ape::StudyConfig cfg;
  cfg.cells.clear();
  for (const std::string& dname : args.designs) {
    ape::Design design = ape::Design::uncorrelated;
    try {
      design = ape::design_from_name(dname);
    } catch (const std::exception& ex) {
      problems.push_back(ex.what());
      continue;
    }
    for (long n : args.ns) {
      if (n < 10) {
        problems.push_back("grid size n = " + std::to_string(n) + " is too small");
        continue;
      }
      cfg.cells.push_back({design, static_cast<ape::Index>(n)});
    }
  }
  cfg.estimators.clear();
  for (const std::string& ename : args.estimators) {
    if (ename == "all") {
      cfg.estimators = {ape::EstimatorKind::aml, ape::EstimatorKind::wz,
                        ape::EstimatorKind::plugin};
      break;
    }
    try {
      cfg.estimators.push_back(ape::estimator_from_name(ename));
    } catch (const std::exception& ex) {
      problems.push_back(std::string(ex.what()) + " (expected aml, wz, plugin, or all)");
    }
  }
  cfg.replications = args.replications;
  cfg.seed = args.seed;
  cfg.oracle_draws = args.oracle_draws;
  cfg.aml.folds = args.folds;
  cfg.aml.alpha = args.alpha;
  cfg.aml.pilot.n_lambdas = args.pilot_lambdas;
  cfg.aml.pilot.cv_folds = args.pilot_cv_folds;
  cfg.wz.pilot.n_lambdas = args.pilot_lambdas;
  cfg.wz.pilot.cv_folds = args.pilot_cv_folds;
  cfg.threads = args.threads > 0 ? args.threads : default_threads(problems);
  if (args.output.empty()) problems.push_back("--output must not be empty");
  try {
    cfg.validate();
  } catch (const std::exception& ex) {
    problems.push_back(ex.what());
  }
  if (!problems.empty()) return report_config_errors(problems);

  try {
    const ape::SimReport report = ape::run_study(cfg);
    int failures = 0;
    for (const ape::RepRecord& rec : report.records)
      if (!rec.ok) ++failures;
    const std::string long_path = args.output + "_long.csv";
    const std::string summary_path = args.output + "_summary.csv";
    ape::emit_boxplot_table(report, long_path, summary_path);
    std::cout << "wrote " << long_path << " and " << summary_path << "\n";
    if (failures == static_cast<int>(report.records.size())) {
      std::cerr << "all " << failures << " replication runs failed\n";
      return exit_numeric;
    }
    if (failures > 0)
      std::cout << "warning: " << failures << " of " << report.records.size()
                << " replication runs failed and were excluded (see summary)\n";
    return exit_ok;
  } catch (const std::exception& ex) {
    std::cerr << "simulation failed: " << ex.what() << "\n";
    return exit_numeric;
  }
}

struct OracleArgs {
  std::string design = "uncorrelated";
  long n = 400;
  long draws = 1000000;
  uint64_t seed = 0;
  long focal = 0;
  std::string output = "oracle.json";
};

int cmd_oracle(const OracleArgs& args) {
  std::vector<std::string> problems;
  ape::Design design = ape::Design::uncorrelated;
  try {
    design = ape::design_from_name(args.design);
  } catch (const std::exception& ex) {
    problems.push_back(ex.what());
  }
  if (args.n < 10) problems.push_back("--n must be at least 10");
  if (args.draws < 100000) problems.push_back("--draws must be at least 100000");
  if (args.output.empty()) problems.push_back("--output must not be empty");
  ape::DgpSpec spec;
  if (problems.empty()) {
    spec = ape::DgpSpec::preset(design, static_cast<ape::Index>(args.n), args.seed);
    if (args.focal < 0 || args.focal >= spec.p)
      problems.push_back("--focal out of range for p = " + std::to_string(spec.p));
    try {
      spec.validate();
    } catch (const std::exception& ex) {
      problems.push_back(ex.what());
    }
  }
  if (!problems.empty()) return report_config_errors(problems);

  try {
    const ape::OracleEstimate est = ape::tau_oracle(
        spec, args.draws, args.seed, static_cast<ape::Index>(args.focal));
    ape::Json payload;
    payload["schema_version"] = ape::schema_version;
    payload["command"] = "oracle";
    ape::Json cfg;
    cfg["design"] = args.design;
    cfg["n"] = args.n;
    cfg["p"] = spec.p;
    cfg["draws"] = args.draws;
    cfg["seed"] = args.seed;
    cfg["focal"] = args.focal;
    payload["config"] = cfg;
    payload["result"] = ape::to_json(est);
    write_json(args.output, payload);
    std::cout << "wrote " << args.output << "\n";
    return exit_ok;
  } catch (const std::exception& ex) {
    std::cerr << "oracle evaluation failed: " << ex.what() << "\n";
    return exit_numeric;
  }
}

struct DecomposeArgs {
  std::string design = "uncorrelated";
  long n = 200;
  uint64_t seed = 0;
  long rep = 0;
  double fixed_lambda = -1.0;
  std::string output = "decompose.json";
  std::string balance_log;
};

int cmd_decompose(const DecomposeArgs& args) {
  std::vector<std::string> problems;
  ape::Design design = ape::Design::uncorrelated;
  try {
    design = ape::design_from_name(args.design);
  } catch (const std::exception& ex) {
    problems.push_back(ex.what());
  }
  if (args.n < 10) problems.push_back("--n must be at least 10");
  if (args.rep < 0) problems.push_back("--rep must be >= 0");
  if (args.output.empty()) problems.push_back("--output must not be empty");
  if (!problems.empty()) return report_config_errors(problems);

  try {
    const ape::DgpSpec spec =
        ape::DgpSpec::preset(design, static_cast<ape::Index>(args.n), args.seed);
    const ape::Dataset data =
        ape::sample_dgp(spec, 0, static_cast<uint64_t>(args.rep));

    ape::PilotFit pilot;
    if (args.fixed_lambda >= 0.0)
      pilot = ape::fit_pilot(data, spec.link, args.fixed_lambda);
    else
      pilot = ape::fit_pilot_cv(data, spec.link, ape::splitmix64(args.seed));
    if (!pilot.converged)
      throw ape::NumericError("decompose: pilot fit did not converge");

    ape::BalanceOptions bopts;
    BalanceLog blog(args.balance_log);
    blog.install(bopts);
    const ape::BalanceProblem prob =
        ape::build_problem(data, pilot.theta, spec.link, 0);
    const ape::WeightSolution sol = ape::solve_weights(prob, bopts);
    if (sol.status != ape::SolveStatus::optimal)
      throw ape::NumericError(std::string("decompose: weight solve ended with status ") +
                              ape::solve_status_name(sol.status));

    const ape::ErrorDecomposition dec = ape::error_decomposition(
        data, spec.theta, pilot.theta, sol.gamma, spec.link, 0);

    ape::Json payload;
    payload["schema_version"] = ape::schema_version;
    payload["command"] = "decompose";
    ape::Json cfg;
    cfg["design"] = args.design;
    cfg["n"] = args.n;
    cfg["p"] = spec.p;
    cfg["seed"] = args.seed;
    cfg["rep"] = args.rep;
    cfg["lambda_rule"] = args.fixed_lambda >= 0.0 ? "fixed" : "cv";
    if (args.fixed_lambda >= 0.0) cfg["lambda"] = args.fixed_lambda;
    payload["config"] = cfg;
    ape::Json pj;
    pj["lambda"] = pilot.lambda;
    pj["support_size"] = static_cast<ape::Index>(pilot.support.size());
    pj["kkt_violation"] = pilot.kkt_violation;
    payload["pilot"] = pj;
    payload["result"] = ape::to_json(dec);
    write_json(args.output, payload);
    std::cout << "wrote " << args.output << "\n";
    return exit_ok;
  } catch (const std::exception& ex) {
    std::cerr << "decomposition failed: " << ex.what() << "\n";
    return exit_numeric;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Average partial effects in high-dimensional single-index models"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Read options from an INI-style config file");

  EstimateArgs est;
  CLI::App* est_cmd =
      app.add_subcommand("estimate", "Estimate the APE of a focal column from a CSV");
  est_cmd->configurable();
  est_cmd->add_option("--input", est.input, "CSV file with a header row");
  est_cmd->add_option("--response", est.response, "Response column name");
  est_cmd->add_option("--focal", est.focal, "Focal column (name or feature index)");
  est_cmd->add_option("--link", est.link, "Link: logistic, probit, identity");
  est_cmd->add_option("--estimator", est.estimator, "aml, wz, plugin, or all");
  est_cmd->add_option("--folds", est.folds, "Cross-fitting folds");
  est_cmd->add_option("--alpha", est.alpha, "CI level is 1 - alpha");
  est_cmd->add_option("--seed", est.seed, "Master seed");
  est_cmd->add_option("--lambda", est.fixed_lambda,
                      "Fixed penalty level (default: cross-validated)");
  est_cmd->add_option("--output", est.output, "Output JSON path");
  est_cmd->add_option("--balance-log", est.balance_log,
                      "Append balance-solver diagnostics as JSON lines");

  SimulateArgs sim;
  CLI::App* sim_cmd =
      app.add_subcommand("simulate", "Run the replication study and write CSV tables");
  sim_cmd->configurable();
  sim_cmd->add_option("--design", sim.designs, "uncorrelated and/or correlated");
  sim_cmd->add_option("--n", sim.ns, "Sample-size grid (p = 2n)");
  sim_cmd->add_option("--estimator", sim.estimators, "aml, wz, plugin, or all");
  sim_cmd->add_option("--replications", sim.replications, "Replications per cell");
  sim_cmd->add_option("--seed", sim.seed, "Master seed");
  sim_cmd->add_option("--oracle-draws", sim.oracle_draws, "Monte Carlo draws per cell");
  sim_cmd->add_option("--folds", sim.folds, "Cross-fitting folds (aml)");
  sim_cmd->add_option("--alpha", sim.alpha, "CI level is 1 - alpha (aml)");
  sim_cmd->add_option("--pilot-lambdas", sim.pilot_lambdas, "Pilot penalty grid size");
  sim_cmd->add_option("--pilot-cv-folds", sim.pilot_cv_folds, "Pilot CV folds");
  sim_cmd->add_option("--threads", sim.threads,
                      "Worker threads (default: APE_THREADS or 1)");
  sim_cmd->add_option("--output", sim.output, "Output prefix for the two CSVs");

  OracleArgs orc;
  CLI::App* orc_cmd =
      app.add_subcommand("oracle", "Monte Carlo population APE for a design");
  orc_cmd->configurable();
  orc_cmd->add_option("--design", orc.design, "uncorrelated or correlated");
  orc_cmd->add_option("--n", orc.n, "Sample size of the preset (p = 2n)");
  orc_cmd->add_option("--draws", orc.draws, "Monte Carlo draws (>= 1e5)");
  orc_cmd->add_option("--seed", orc.seed, "Seed");
  orc_cmd->add_option("--focal", orc.focal, "Focal coordinate index");
  orc_cmd->add_option("--output", orc.output, "Output JSON path");

  DecomposeArgs dec;
  CLI::App* dec_cmd = app.add_subcommand(
      "decompose", "Error decomposition on one simulated replication");
  dec_cmd->configurable();
  dec_cmd->add_option("--design", dec.design, "uncorrelated or correlated");
  dec_cmd->add_option("--n", dec.n, "Sample size of the preset (p = 2n)");
  dec_cmd->add_option("--seed", dec.seed, "Master seed");
  dec_cmd->add_option("--rep", dec.rep, "Replication index of the drawn dataset");
  dec_cmd->add_option("--lambda", dec.fixed_lambda,
                      "Fixed penalty level (default: cross-validated)");
  dec_cmd->add_option("--output", dec.output, "Output JSON path");
  dec_cmd->add_option("--balance-log", dec.balance_log,
                      "Append balance-solver diagnostics as JSON lines");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help / --version
    app.exit(e);
    return exit_config;
  }

  if (est_cmd->parsed()) return cmd_estimate(est);
  if (sim_cmd->parsed()) return cmd_simulate(sim);
  if (orc_cmd->parsed()) return cmd_oracle(orc);
  return cmd_decompose(dec);
}
