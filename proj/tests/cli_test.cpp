// Copyright 2026 The bnshift Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <sys/wait.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

namespace {

namespace fs = std::filesystem;

struct Run {
  int code = -1;
  std::string out;
};

Run run_shell(const std::string& cmd) {
  Run r;
  FILE* p = popen((cmd + " 2>/dev/null").c_str(), "r");
  if (!p) return r;
  char buf[4096];
  for (std::size_t k; (k = std::fread(buf, 1, sizeof buf, p)) > 0;) r.out.append(buf, k);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

Run run(const std::string& args) { return run_shell(std::string(BNSHIFT_CLI_PATH) + " " + args); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::string config(const char* name) { return std::string(BNSHIFT_CONFIG_DIR) + "/" + name; }

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("bnshift_cli_test_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string out(const std::string& sub) const { return "--out " + (dir_ / sub).string(); }
  fs::path dir_;
};

TEST_F(CliTest, SymmetricOptimalLambdaIsOneHalf) {
  const auto r = run("optimal-lambda --config " + config("optimal_lambda_symmetric.json") + " " + out("a"));
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("lambda_star = 0.5\n"), std::string::npos) << r.out;
  const auto table = slurp(dir_ / "a" / "optimal-lambda.tsv");
  EXPECT_EQ(table.rfind("# seed=none\tlambda_raw\tlambda_star", 0), 0u) << table;
}

TEST_F(CliTest, CompareCdfIsByteIdenticalAcrossRunsAndWorkers) {
  const std::string base = "compare-cdf --config " + config("compare_cdf_gamma.json") + " --reps 20000 ";
  ASSERT_EQ(run(base + "--workers 1 " + out("a")).code, 0);
  ASSERT_EQ(run(base + "--workers 1 " + out("b")).code, 0);
  ASSERT_EQ(run(base + "--workers 3 " + out("c")).code, 0);
  for (const char* f : {"compare-cdf.tsv", "compare-cdf.errors.tsv", "compare-cdf.config.json"}) {
    const auto a = slurp(dir_ / "a" / f);
    EXPECT_FALSE(a.empty());
    EXPECT_EQ(a, slurp(dir_ / "b" / f)) << f;
    EXPECT_EQ(a, slurp(dir_ / "c" / f)) << f;
  }
}

TEST_F(CliTest, EchoedConfigReproducesRun) {
  ASSERT_EQ(run("simulate --config " + config("simulate_gamma.json") + " --reps 500 --seed 9 " + out("a")).code, 0);
  ASSERT_EQ(run("simulate --config " + (dir_ / "a" / "simulate.config.json").string() + " " + out("b")).code, 0);
  EXPECT_EQ(slurp(dir_ / "a" / "simulate.tsv"), slurp(dir_ / "b" / "simulate.tsv"));
  EXPECT_EQ(slurp(dir_ / "a" / "simulate.tsv").rfind("# seed=9\trep\tt\n", 0), 0u);
}

TEST_F(CliTest, BoundMatchesClosedForm) {
  ASSERT_EQ(run("bound --config " + config("bound_numeric.json") + " " + out("a")).code, 0);
  std::map<std::string, double> v;
  std::istringstream in(slurp(dir_ / "a" / "bound.tsv"));
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    const auto tab = line.find('\t');
    v[line.substr(0, tab)] = std::stod(line.substr(tab + 1));
  }
  // sigma_p^2 = 1, sigma_q^2 = 2, dmu = 0.3, k3p = 0.5, k3q = 1, n = 200, m = 50,
  // B = 4, delta = 0.1, L = gamma = 1, eps = 1e-5.
  const long double n = 200, m = 50, lg = std::log(40.0L);
  const long double a = 2 / m - 0.5L * (0.5L / std::pow(n, 1.5L) + 1 / std::pow(m, 1.5L));
  const long double vv = 0.09L + 1 / n + 2 / m;
  const long double tp = std::sqrt(2 * lg / n) + 8 * lg / (3 * n);
  const long double tq = std::sqrt(4 * lg / m) + 8 * lg / (3 * m);
  const long double le = a / vv;
  const long double skew = (le * 0.5L / std::pow(n, 1.5L) + (1 - le) / std::pow(m, 1.5L)) / (6 * std::pow(vv, 1.5L));
  const long double total = (le * (0.3L + tp) + (1 - le) * tq + skew) / std::sqrt(1 + 1e-5L);
  EXPECT_NEAR(v["a_term"], static_cast<double>(a), 1e-15);
  EXPECT_NEAR(v["v_term"], static_cast<double>(vv), 1e-15);
  EXPECT_NEAR(v["t_p"], static_cast<double>(tp), 1e-14);
  EXPECT_NEAR(v["t_q"], static_cast<double>(tq), 1e-14);
  EXPECT_NEAR(v["total_excess"], static_cast<double>(total), 1e-13);
}

TEST_F(CliTest, SetOverridesAndRowsFormat) {
  const auto r = run("optimal-lambda --config " + config("optimal_lambda_symmetric.json") +
                     " --set inputs.delta_mu=0.1 --format rows " + out("a"));
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out.rfind("# seed=none\t", 0), 0u) << r.out;
  const auto echoed = slurp(dir_ / "a" / "optimal-lambda.config.json");
  EXPECT_NE(echoed.find("\"delta_mu\": 0.1"), std::string::npos) << echoed;
}

TEST_F(CliTest, OutputDirectoryFromEnvironment) {
  const auto target = dir_ / "env";
  const auto r = run_shell("BNSHIFT_OUT_DIR=" + target.string() + " " + BNSHIFT_CLI_PATH + " optimal-lambda");
  EXPECT_EQ(r.code, 0);
  EXPECT_TRUE(fs::exists(target / "optimal-lambda.tsv"));
  EXPECT_TRUE(fs::exists(target / "optimal-lambda.config.json"));
}

TEST_F(CliTest, ExitCodes) {
  EXPECT_EQ(run("no-such-command").code, 2);
  EXPECT_EQ(run("optimal-lambda --set inputs.bogus=1 " + out("a")).code, 2);
  EXPECT_EQ(run("optimal-lambda --set inputs.n=\"ten\" " + out("a")).code, 2);
  EXPECT_EQ(run("simulate --set test.family=cauchy " + out("a")).code, 2);
  EXPECT_EQ(run("simulate --set train.variance=-1 " + out("a")).code, 2);
  EXPECT_EQ(run("saddlepoint --seed 3 " + out("a")).code, 2);
  EXPECT_EQ(run("simulate --config /nonexistent/config.json " + out("a")).code, 4);
  // No bias and no variance: the closed-form weight is undefined.
  EXPECT_EQ(run("optimal-lambda --set inputs.var_p=0 --set inputs.var_q=0 --set inputs.delta_mu=0 " + out("a")).code,
            3);
  EXPECT_EQ(run("optimal-lambda --out /dev/null/x").code, 4);
  EXPECT_FALSE(fs::exists(dir_ / "a" / "simulate.tsv"));
}

TEST_F(CliTest, EveryCommandRuns) {
  const char* cmds[] = {"simulate --reps 200",
                        "compare-cdf --reps 2000",
                        "optimal-lambda",
                        "saddlepoint",
                        "one-step --reps 200 --set m=20",
                        "bound --reps 200",
                        "rate --reps 2000 --set sizes=[[5,5],[10,10],[20,20],[40,40]]",
                        "mse-curve --reps 500"};
  for (const char* c : cmds) EXPECT_EQ(run(std::string(c) + " " + out("a")).code, 0) << c;
}

}  // namespace
