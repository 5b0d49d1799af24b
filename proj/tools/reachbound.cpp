#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "reachbound/cli.hpp"

int main(int argc, char** argv) {
  using namespace reachbound;
  CLI::App app{"Upper bounds and controllers for stochastic reach-avoid problems"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::string values_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "Run configuration (JSON, comments allowed)")->required();
    sub->add_option("--out", out_dir, "Output directory (overrides the config)");
    sub->add_option("--seed", seed, "Root seed (overrides the config)");
    sub->add_option("--threads", threads, "Worker threads for simulation")->check(CLI::PositiveNumber);
  };
  auto* bound = app.add_subcommand("bound", "Indicator bound and the value-bound recursion");
  auto* grid = app.add_subcommand("grid", "Grid dynamic-programming oracle");
  auto* cmp_grid = app.add_subcommand("compare-grid", "Bound and policy against the grid oracle");
  auto* cmp_lqg = app.add_subcommand("compare-lqg", "Bound policy against LQG on random stable systems");
  auto* validate = app.add_subcommand("validate", "Sampled audit of stored value files");
  for (auto* s : {bound, grid, cmp_grid, cmp_lqg, validate}) add_common(s);
  validate->add_option("--values", values_dir, "Directory holding value_k<k>.txt (default: the output directory)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  return run_command([&]() -> int {
    RunConfig cfg = load_config(config_path);
    if (!out_dir.empty()) cfg.output = out_dir;
    if (seed) cfg.seed = *seed;
    if (threads) cfg.threads = *threads;
    if (bound->parsed()) return cmd_bound(cfg);
    if (grid->parsed()) return cmd_grid(cfg);
    if (cmp_grid->parsed()) return cmd_compare_grid(cfg);
    if (cmp_lqg->parsed()) return cmd_compare_lqg(cfg);
    return cmd_validate(cfg, values_dir.empty() ? cfg.output : values_dir);
  });
}
