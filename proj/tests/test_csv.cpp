#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <string>

#include "ape/csv.hpp"

using namespace ape;

namespace {

void put(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::trunc);
  REQUIRE(out.good());
  out << body;
}

}  // namespace

TEST_CASE("double formatting round-trips exactly") {
  for (double x : {0.0, -0.1, 1.0 / 3.0, 1e-308, -2.5e17, 0.1 + 0.2,
                   std::numeric_limits<double>::max()}) {
    CHECK(parse_double(format_double(x), "t") == x);
  }
  CHECK(format_double(0.5) == "0.5");
  CHECK_THROWS_AS((void)parse_double("1.2x", "t"), std::invalid_argument);
  CHECK_THROWS_AS((void)parse_double("", "t"), std::invalid_argument);
}

TEST_CASE("csv reading handles quoting and catches malformed rows") {
  put("csv_t1.csv", "a,\"b,1\",c\n1,2,3\n4,\"5\"\"x\",6\n");
  const StringTable t = read_csv("csv_t1.csv");
  CHECK(t.header == std::vector<std::string>{"a", "b,1", "c"});
  REQUIRE(t.rows.size() == 2);
  CHECK(t.rows[1][1] == "5\"x");
  std::remove("csv_t1.csv");

  put("csv_t2.csv", "a,b\n1,2,3\n");
  CHECK_THROWS_WITH_AS((void)read_csv("csv_t2.csv"),
                       doctest::Contains("csv_t2.csv:2"), std::invalid_argument);
  std::remove("csv_t2.csv");

  put("csv_t3.csv", "a,b\n\"unterminated,2\n");
  CHECK_THROWS_AS((void)read_csv("csv_t3.csv"), std::invalid_argument);
  std::remove("csv_t3.csv");

  CHECK_THROWS_AS((void)read_csv("does_not_exist.csv"), std::runtime_error);
  put("csv_t4.csv", "");
  CHECK_THROWS_AS((void)read_csv("csv_t4.csv"), std::invalid_argument);
  std::remove("csv_t4.csv");
}

TEST_CASE("csv writing escapes and round-trips") {
  write_csv("csv_w1.csv", {"name", "value"},
            {{"plain", "1.5"}, {"with,comma", "2"}, {"with\"quote", "3"}});
  const StringTable t = read_csv("csv_w1.csv");
  REQUIRE(t.rows.size() == 3);
  CHECK(t.rows[1][0] == "with,comma");
  CHECK(t.rows[2][0] == "with\"quote");
  std::remove("csv_w1.csv");

  CHECK_THROWS_AS(write_csv("csv_w2.csv", {"a"}, {{"1", "2"}}), std::invalid_argument);
  std::remove("csv_w2.csv");
  CHECK_THROWS_AS(write_csv("/no/such/dir/file.csv", {"a"}, {}), std::runtime_error);
}

TEST_CASE("dataset loading") {
  put("csv_d1.csv", "x1,y,x2\n0.5,1,-0.25\n0.125,0,2\n1.5,1,0\n");
  const Dataset d = load_dataset("csv_d1.csv", "y");
  CHECK(d.n() == 3);
  CHECK(d.p() == 2);
  CHECK(d.feature_names == std::vector<std::string>{"x1", "x2"});
  CHECK(d.X(0, 0) == 0.5);
  CHECK(d.X(0, 1) == -0.25);
  CHECK(d.X(2, 0) == 1.5);
  CHECK(d.Y[0] == 1.0);
  CHECK(d.Y[1] == 0.0);
  std::remove("csv_d1.csv");

  put("csv_d2.csv", "x1,y\n0.5,1\n");
  CHECK_THROWS_WITH_AS((void)load_dataset("csv_d2.csv", "resp"),
                       doctest::Contains("resp"), std::invalid_argument);
  std::remove("csv_d2.csv");

  put("csv_d3.csv", "x1,y\nab,1\n");
  CHECK_THROWS_WITH_AS((void)load_dataset("csv_d3.csv", "y"),
                       doctest::Contains("data row 1"), std::invalid_argument);
  std::remove("csv_d3.csv");

  put("csv_d4.csv", "y\n1\n");
  CHECK_THROWS_AS((void)load_dataset("csv_d4.csv", "y"), std::invalid_argument);

  std::remove("csv_d4.csv");
  put("csv_d5.csv", "x1,y\n0.5,2\n");  // response outside [0, 1]
  CHECK_THROWS_AS((void)load_dataset("csv_d5.csv", "y"), std::invalid_argument);
  std::remove("csv_d5.csv");
}
