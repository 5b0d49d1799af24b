#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "reachbound/cli.hpp"

namespace reachbound {
namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
  const fs::path p = fs::path(REACHBOUND_TEST_OUT) / "cli_scratch" / name;
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string one_d(int horizon, const std::string& extra = "") {
  return R"({
    "problem": {
      "horizon": )" + std::to_string(horizon) + R"(,
      "target": {"Q": [[1]], "rho": 0.1},
      "safe": {"Q": [[1]], "rho": 1.0},
      "control": {"Q": [[1]], "rho": 0.1},
      "kernel": {"benchmark": "identity", "noise_scale": 0.001}
    },
    "bound": {"M": 6},
    "grid": {"N_s": 40, "N_u": 11},
    "eval": {"n_init": 4, "n_traj": 10},
    "validate": {"samples": 2000},
    "seed": 3)" + extra + "}";
}

int run(const std::function<int()>& f) {
  std::ostringstream err;
  return run_command(f, err);
}

TEST(CliTest, BoundWritesOneValueFilePerStep) {
  auto cfg = parse_config(one_d(5));
  cfg.output = scratch("bound").string();
  EXPECT_EQ(run([&] { return cmd_bound(cfg); }), kExitOk);
  for (int k = 0; k <= 5; ++k) EXPECT_TRUE(fs::exists(fs::path(cfg.output) / ("value_k" + std::to_string(k) + ".txt")));
  EXPECT_FALSE(fs::exists(fs::path(cfg.output) / "value_k6.txt"));
  EXPECT_NE(slurp(fs::path(cfg.output) / "manifest.json").find("\"any_fallback\": false"), std::string::npos);
}

TEST(CliTest, ZeroHorizonRejectedAtValidation) {
  EXPECT_EQ(run([&] { return cmd_bound(parse_config(one_d(0))); }), kExitConfig);
}

TEST(CliTest, MalformedConfigsRejected) {
  EXPECT_THROW(parse_config("{ not json"), ConfigError);
  EXPECT_THROW(parse_config(one_d(2, R"(, "surprise": 1)")), ConfigError);
  const std::string bad_dims = R"({"problem": {"horizon": 1,
      "target": {"Q": [[1]], "rho": 0.1}, "safe": {"Q": [[1]], "rho": 1},
      "control": {"Q": [[1]], "rho": 0.1},
      "kernel": {"components": [{"A": [[1, 0]], "B": [[1]], "Sigma": [[0.001]]}]}}})";
  EXPECT_THROW(parse_config(bad_dims), ConfigError);
  const std::string outside = R"({"problem": {"horizon": 1,
      "target": {"Q": [[1]], "rho": 2}, "safe": {"Q": [[1]], "rho": 1},
      "control": {"Q": [[1]], "rho": 0.1}, "kernel": {"benchmark": "identity"}}})";
  EXPECT_THROW(parse_config(outside), ConfigError);
}

TEST(CliTest, BoundRerunIsByteIdentical) {
  auto cfg = parse_config(one_d(3));
  cfg.output = scratch("rerun_a").string();
  ASSERT_EQ(cmd_bound(cfg), kExitOk);
  const fs::path a = cfg.output;
  cfg.output = scratch("rerun_b").string();
  ASSERT_EQ(cmd_bound(cfg), kExitOk);
  for (const char* f : {"manifest.json", "value_k0.txt", "value_k3.txt"})
    EXPECT_EQ(slurp(a / f), slurp(fs::path(cfg.output) / f)) << f;
}

TEST(CliTest, FallbackGivesExitTwo) {
  auto cfg = parse_config(one_d(2));
  cfg.bound.recursion.max_terms = 0;
  cfg.output = scratch("fallback").string();
  EXPECT_EQ(run([&] { return cmd_bound(cfg); }), kExitFallback);
}

TEST(CliTest, GridTableAndCap) {
  auto cfg = parse_config(one_d(2));
  cfg.grid.n_s = 80;
  cfg.output = scratch("grid").string();
  ASSERT_EQ(run([&] { return cmd_grid(cfg); }), kExitOk);
  const std::string table = slurp(fs::path(cfg.output) / "grid_value_k0.csv");
  EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), 81);
  EXPECT_EQ(table.rfind("x1,value\n", 0), 0u);
  cfg.grid.options.node_cap = 10;
  EXPECT_EQ(run([&] { return cmd_grid(cfg); }), kExitGridCap);
}

TEST(CliTest, ValidatePassesFlagsAndReportsMissing) {
  auto cfg = parse_config(one_d(3));
  cfg.output = scratch("validate").string();
  ASSERT_EQ(cmd_bound(cfg), kExitOk);
  EXPECT_EQ(run([&] { return cmd_validate(cfg, cfg.output); }), kExitOk);
  // Halve every weight of V̂_1 so that V̂_1 no longer dominates the next step.
  const fs::path f = fs::path(cfg.output) / "value_k1.txt";
  std::ifstream in(f);
  const ValueBound v = read_value_bound(in);
  in.close();
  std::vector<RbfTerm> terms = v.sum->terms();
  for (auto& t : terms) t.weight *= 0.5;
  std::ofstream out(f);
  write_value_bound(out, ValueBound::rbf(RbfSum(terms)));
  out.close();
  EXPECT_EQ(run([&] { return cmd_validate(cfg, cfg.output); }), kExitViolations);
  EXPECT_EQ(run([&] { return cmd_validate(cfg, scratch("nothing_here").string()); }), kExitMissingInput);
}

TEST(CliTest, CompareGridRowFields) {
  auto cfg = parse_config(one_d(2));
  cfg.output = scratch("cmp_grid").string();
  ASSERT_EQ(run([&] { return cmd_compare_grid(cfg); }), kExitOk);
  const std::string row = slurp(fs::path(cfg.output) / "compare_grid.csv");
  EXPECT_EQ(row.rfind("n,m,N_s,N_u,M,horizon,value_gap_mean,value_gap_min,xbar_nodes,policy_diff_mean", 0), 0u);
  EXPECT_EQ(std::count(row.begin(), row.end(), '\n'), 2);
  EXPECT_TRUE(fs::exists(fs::path(cfg.output) / "slice_k0.csv"));
  EXPECT_TRUE(fs::exists(fs::path(cfg.output) / "compare_grid_states.csv"));
}

std::string lqg_config(int n_traj) {
  return R"({
    "problem": {
      "horizon": 3,
      "target": {"Q": [[1,0],[0,1]], "rho": 0.1},
      "safe": {"Q": [[1,0],[0,1]], "rho": 1.0},
      "control": {"Q": [[1]], "rho": 0.1}
    },
    "lqg": {"systems": 2},
    "bound": {"M": 1, "indicator": "sdp"},
    "eval": {"n_init": 3, "n_traj": )" + std::to_string(n_traj) + R"(, "policy": "control-grid"},
    "seed": 5
  })";
}

TEST(CliTest, CompareLqgRowsAndRejection) {
  EXPECT_EQ(run([&] { return cmd_compare_lqg(parse_config(lqg_config(0))); }), kExitConfig);
  auto cfg = parse_config(lqg_config(8));
  cfg.output = scratch("cmp_lqg").string();
  ASSERT_EQ(run([&] { return cmd_compare_lqg(cfg); }), kExitOk);
  const std::string rows = slurp(fs::path(cfg.output) / "compare_lqg.csv");
  EXPECT_EQ(std::count(rows.begin(), rows.end(), '\n'), 3);
  EXPECT_NE(rows.find("\n0,2,1,"), std::string::npos);
  EXPECT_TRUE(fs::exists(fs::path(cfg.output) / "compare_lqg_summary.csv"));
}

TEST(CliTest, ExecutableExitCodes) {
  const fs::path dir = scratch("exe");
  fs::create_directories(dir);
  const fs::path cfg = dir / "c.json";
  std::ofstream(cfg) << one_d(2);
  auto call = [&](const std::string& args) {
    const std::string cmd = std::string(REACHBOUND_CLI) + " " + args + " > " + (dir / "log.txt").string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
  };
  EXPECT_EQ(call("bound --config " + cfg.string() + " --out " + (dir / "o").string()), 0);
  EXPECT_EQ(call("validate --config " + cfg.string() + " --out " + (dir / "v").string() + " --values " +
                 (dir / "o").string()),
            0);
  EXPECT_EQ(call("validate --config " + cfg.string() + " --out " + (dir / "v").string()), 66);
  EXPECT_EQ(call("bound --config " + (dir / "absent.json").string()), 66);
  EXPECT_EQ(call("bound"), 64);
  EXPECT_EQ(call("grid --config " + cfg.string() + " --out " + (dir / "g").string() + " --threads 0"), 64);
}

}  // namespace
}  // namespace reachbound
