#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#ifndef APE_CLI_PATH
#error "APE_CLI_PATH must point at the command-line binary"
#endif

namespace {

int run(const std::string& args) {
  const std::string cmd =
      std::string(APE_CLI_PATH) + " " + args + " >cli_stdout.txt 2>cli_stderr.txt";
  const int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_toy_csv(const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  REQUIRE(out.good());
  out << "x1,x2,x3,y\n";
  // Deterministic small design with responses in {0, 1}.
  unsigned state = 12345;
  const auto next = [&] {
    state = state * 1103515245u + 12345u;
    return static_cast<double>((state >> 16) & 0x7fffu) / 32768.0;
  };
  for (int i = 0; i < 40; ++i) {
    const double x1 = next(), x2 = next(), x3 = next();
    const double eta = 0.2 * x1 + 0.3 * x2 + 0.1 * x3;
    out << x1 << ',' << x2 << ',' << x3 << ',' << (next() < eta ? 1 : 0) << "\n";
  }
}

}  // namespace

TEST_CASE("estimate command: output contract and determinism") {
  write_toy_csv("cli_toy.csv");
  const std::string base =
      "estimate --input cli_toy.csv --response y --focal x2 --link identity "
      "--estimator all --folds 2 --seed 3 ";
  REQUIRE(run(base + "--output cli_est1.json") == 0);
  REQUIRE(run(base + "--output cli_est2.json") == 0);
  CHECK(slurp("cli_est1.json") == slurp("cli_est2.json"));

  const nlohmann::json j = nlohmann::json::parse(slurp("cli_est1.json"));
  CHECK(j.at("schema_version") == 1);
  CHECK(j.at("command") == "estimate");
  CHECK(j.at("config").at("focal_index") == 1);
  const auto& aml = j.at("results").at("aml");
  const double tau = aml.at("tau_hat").get<double>();
  CHECK(tau == aml.at("plugin_part").get<double>() +
                   aml.at("augmentation_part").get<double>());
  CHECK(aml.at("influence").size() == 40);
  CHECK(aml.at("fold_diagnostics").size() == 2);
  CHECK(j.at("results").contains("wz"));
  CHECK(j.at("results").at("wz").contains("signal_set"));
  CHECK(j.at("results").contains("plugin"));
  std::remove("cli_est1.json");
  std::remove("cli_est2.json");
}

TEST_CASE("estimate command: focal by index and balance log") {
  const int rc = run(
      "estimate --input cli_toy.csv --response y --focal 0 --link identity "
      "--folds 2 --seed 1 --balance-log cli_bal.jsonl --output cli_est3.json");
  REQUIRE(rc == 0);
  const nlohmann::json j = nlohmann::json::parse(slurp("cli_est3.json"));
  CHECK(j.at("config").at("focal_index") == 0);

  std::ifstream log("cli_bal.jsonl");
  REQUIRE(log.good());
  std::string line;
  int lines = 0;
  while (std::getline(log, line)) {
    const nlohmann::json rec = nlohmann::json::parse(line);
    CHECK(rec.at("status") == "optimal");
    CHECK(rec.at("n").get<int>() == 20);
    ++lines;
  }
  CHECK(lines == 2);  // one balance solve per fold
  std::remove("cli_est3.json");
  std::remove("cli_bal.jsonl");
}

TEST_CASE("estimate command: configuration failures exit with code 2") {
  CHECK(run("estimate --input cli_toy.csv --response y --focal nope "
            "--output cli_x.json") == 2);
  CHECK(run("estimate --input missing_file.csv --response y --focal x1 "
            "--output cli_x.json") == 2);
  CHECK(run("estimate --input cli_toy.csv --response y --focal x1 --link banana "
            "--alpha 2 --output cli_x.json") == 2);
  // Aggregated report: both problems named in one pass.
  const std::string err = slurp("cli_stderr.txt");
  CHECK(err.find("banana") != std::string::npos);
  CHECK(err.find("alpha") != std::string::npos);
  CHECK(run("estimate") == 2);
  CHECK(run("bogus-command") == 2);
}

TEST_CASE("oracle command") {
  CHECK(run("oracle --design uncorrelated --n 50 --draws 99999 "
            "--output cli_orc.json") == 2);
  REQUIRE(run("oracle --design uncorrelated --n 50 --draws 100000 --seed 9 "
              "--output cli_orc1.json") == 0);
  REQUIRE(run("oracle --design uncorrelated --n 50 --draws 100000 --seed 9 "
              "--output cli_orc2.json") == 0);
  CHECK(slurp("cli_orc1.json") == slurp("cli_orc2.json"));
  const nlohmann::json j = nlohmann::json::parse(slurp("cli_orc1.json"));
  CHECK(j.at("command") == "oracle");
  CHECK(j.at("config").at("p") == 100);
  CHECK(j.at("result").at("draws") == 100000);
  CHECK(j.at("result").at("tau").get<double>() < 0.0);
  std::remove("cli_orc1.json");
  std::remove("cli_orc2.json");
}

TEST_CASE("decompose command reconstructs the estimate gap") {
  REQUIRE(run("decompose --design uncorrelated --n 60 --seed 4 --lambda 0.05 "
              "--output cli_dec.json") == 0);
  const nlohmann::json j = nlohmann::json::parse(slurp("cli_dec.json"));
  const auto& r = j.at("result");
  const double total = r.at("total").get<double>();
  const double parts = r.at("linear_term").get<double>() +
                       r.at("noise_term").get<double>() +
                       r.at("remainder").get<double>();
  CHECK(std::abs(total - parts) < 1e-12);
  CHECK(std::abs(r.at("linear_term").get<double>()) <=
        r.at("holder_bound").get<double>() + 1e-12);
  std::remove("cli_dec.json");
}

TEST_CASE("simulate command writes the documented tables") {
  const std::string base =
      "simulate --design uncorrelated --n 40 --estimator plugin --replications 2 "
      "--oracle-draws 100000 --seed 7 ";
  REQUIRE(run(base + "--output cli_sim1") == 0);
  REQUIRE(run(base + "--output cli_sim2") == 0);
  CHECK(slurp("cli_sim1_long.csv") == slurp("cli_sim2_long.csv"));
  CHECK(slurp("cli_sim1_summary.csv") == slurp("cli_sim2_summary.csv"));

  const std::string long_csv = slurp("cli_sim1_long.csv");
  CHECK(long_csv.rfind("design,n,estimator,replication,tau_hat\n", 0) == 0);
  const std::string summary = slurp("cli_sim1_summary.csv");
  CHECK(summary.rfind("design,n,estimator,replications,failures,tau_oracle,", 0) == 0);

  CHECK(run("simulate --design sideways --output cli_sim3") == 2);
  CHECK(run("simulate --estimator ols --output cli_sim3") == 2);
  std::remove("cli_sim1_long.csv");
  std::remove("cli_sim1_summary.csv");
  std::remove("cli_sim2_long.csv");
  std::remove("cli_sim2_summary.csv");
}

TEST_CASE("config file mirrors the flags") {
  {
    std::ofstream ini("cli_conf.ini", std::ios::trunc);
    ini << "[estimate]\n"
        << "input = cli_toy.csv\n"
        << "response = y\n"
        << "focal = x2\n"
        << "link = identity\n"
        << "folds = 2\n"
        << "seed = 3\n"
        << "output = cli_estc.json\n";
  }
  REQUIRE(run("--config cli_conf.ini estimate") == 0);
  REQUIRE(run("estimate --input cli_toy.csv --response y --focal x2 "
              "--link identity --folds 2 --seed 3 --output cli_estf.json") == 0);
  const std::string from_config = slurp("cli_estc.json");
  const std::string from_flags = slurp("cli_estf.json");
  // Identical except for the output path echoed inside the payload.
  nlohmann::json a = nlohmann::json::parse(from_config);
  nlohmann::json b = nlohmann::json::parse(from_flags);
  CHECK(a.at("results") == b.at("results"));
  std::remove("cli_conf.ini");
  std::remove("cli_estc.json");
  std::remove("cli_estf.json");
  std::remove("cli_toy.csv");
  std::remove("cli_stdout.txt");
  std::remove("cli_stderr.txt");
}
