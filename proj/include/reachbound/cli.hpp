#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "reachbound/config.hpp"
#include "reachbound/eval.hpp"

namespace reachbound {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitFallback = 2;
inline constexpr int kExitViolations = 3;
inline constexpr int kExitConfig = 64;
inline constexpr int kExitGridCap = 65;
inline constexpr int kExitMissingInput = 66;

class MissingInput : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Sub-stream labels under the root seed.
inline constexpr std::uint64_t kSeedIndicator = 1;
inline constexpr std::uint64_t kSeedCompare = 2;
inline constexpr std::uint64_t kSeedValidate = 3;
inline constexpr std::uint64_t kSeedSystem = 4;

namespace cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

inline std::ofstream open_out(const fs::path& dir, const std::string& name) {
  fs::create_directories(dir);
  std::ofstream os(dir / name);
  if (!os) throw std::runtime_error("cannot write " + (dir / name).string());
  return os;
}

inline ordered_json matrix_json(const Matrix& m) {
  ordered_json rows = ordered_json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    ordered_json r = ordered_json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(r);
  }
  return rows;
}

inline std::string value_file_name(int k) { return "value_k" + std::to_string(k) + ".txt"; }

struct BoundRun {
  ValueBoundSequence seq;
  ordered_json indicator;
};

inline BoundRun compute_bounds(const RunConfig& cfg, const ReachAvoidProblem& p, std::uint64_t indicator_seed) {
  BoundRun out;
  const auto& b = cfg.bound;
  RbfSum ind;
  if (b.indicator == IndicatorMethod::Lp) {
    std::mt19937_64 rng(indicator_seed);
    const auto centers = random_centers(p.target, b.terms, rng);
    const Grid vgrid = grid_over(p.safe, b.validation_points);
    const Matrix sigma = b.sigma_b * Matrix::Identity(p.state_dim(), p.state_dim());
    const auto r = indicator_bound_lp(p.target, centers, sigma, vgrid, b.recursion.solver, b.max_rounds);
    ind = r.bound;
    out.indicator = {{"method", "lp"},           {"requested_terms", b.terms},
                     {"terms", r.bound.size()},  {"objective", r.objective},
                     {"rounds", r.rounds},       {"constraint_points", r.constraint_points},
                     {"min_on_validation", r.min_on_validation}, {"curvature_margin", r.curvature_margin}};
  } else {
    const auto r = indicator_bound_sdp(p.target, b.terms, b.recursion);
    ind = r.bound;
    out.indicator = {{"method", "sdp"},
                     {"requested_terms", b.terms},
                     {"terms", r.bound.size()},
                     {"objective", r.solution.primal_objective},
                     {"status", to_string(r.solution.status)},
                     {"repair_shift", r.repair_shift}};
  }
  out.seq = run_recursion(p, ind, b.recursion);
  return out;
}

inline ordered_json steps_json(const ValueBoundSequence& seq) {
  ordered_json steps = ordered_json::array();
  for (const auto& s : seq.steps) {
    steps.push_back({{"k", s.k},
                     {"status", s.status},
                     {"fallback", s.fallback},
                     {"note", s.note},
                     {"objective", s.objective},
                     {"repair_shift", s.repair_shift},
                     {"iterations", s.iterations},
                     {"terms", s.terms}});
  }
  return steps;
}

inline void write_values(const fs::path& dir, const ValueBoundSequence& seq) {
  for (int k = 0; k <= seq.horizon(); ++k) {
    auto os = open_out(dir, value_file_name(k));
    write_value_bound(os, seq.values[k]);
  }
}

inline void write_timing(const fs::path& dir, const std::vector<std::pair<std::string, double>>& rows) {
  auto os = open_out(dir, "timing.csv");
  os << "stage,seconds\n";
  for (const auto& [stage, sec] : rows) os << stage << ',' << sec << '\n';
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct GridRun {
  Grid grid;
  std::vector<Vector> controls;
  std::shared_ptr<std::vector<GridValueFunction>> values;
};

inline GridRun compute_grid(const RunConfig& cfg, const ReachAvoidProblem& p) {
  GridRun g{grid_over(p.safe, cfg.grid.n_s), {}, nullptr};
  g.controls = feasible_nodes(grid_over(p.control, cfg.grid.n_u), p.control);
  g.values = std::make_shared<std::vector<GridValueFunction>>(dp_recursion(p, g.grid, g.controls, cfg.grid.options));
  return g;
}

inline CompareOptions compare_options(const RunConfig& cfg) {
  CompareOptions o;
  o.n_init = cfg.eval.n_init;
  o.n_traj = cfg.eval.n_traj;
  o.reject_threshold = cfg.eval.reject_threshold;
  o.threads = cfg.threads;
  return o;
}

}  // namespace cli

/// Indicator bound plus recursion; writes value_k<k>.txt for k = 0..T,
/// manifest.json and timing.csv.
inline int cmd_bound(const RunConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto p = cfg.problem();
  const auto run = cli::compute_bounds(cfg, p, derive_seed(cfg.seed, {kSeedIndicator}));
  const std::filesystem::path dir(cfg.output);
  cli::write_values(dir, run.seq);
  cli::ordered_json files = cli::ordered_json::array();
  for (int k = 0; k <= run.seq.horizon(); ++k) files.push_back(cli::value_file_name(k));
  const cli::ordered_json manifest = {{"command", "bound"},
                                      {"seed", cfg.seed},
                                      {"state_dim", p.state_dim()},
                                      {"control_dim", p.control_dim()},
                                      {"horizon", p.horizon},
                                      {"indicator", run.indicator},
                                      {"steps", cli::steps_json(run.seq)},
                                      {"any_fallback", run.seq.any_fallback()},
                                      {"files", files}};
  cli::open_out(dir, "manifest.json") << manifest.dump(2) << '\n';
  std::vector<std::pair<std::string, double>> timing;
  for (const auto& s : run.seq.steps) timing.emplace_back("step_k" + std::to_string(s.k), s.seconds);
  timing.emplace_back("total", cli::seconds_since(t0));
  cli::write_timing(dir, timing);
  return run.seq.any_fallback() ? kExitFallback : kExitOk;
}

/// Grid oracle; writes grid_value_k<k>.csv for k = 0..T and grid_manifest.json.
inline int cmd_grid(const RunConfig& cfg) {
  const auto p = cfg.problem();
  const auto g = cli::compute_grid(cfg, p);
  const std::filesystem::path dir(cfg.output);
  for (const auto& v : *g.values) {
    auto os = cli::open_out(dir, "grid_value_k" + std::to_string(v.k) + ".csv");
    write_grid_csv(os, g.grid, v.value);
  }
  const cli::ordered_json manifest = {{"command", "grid"},
                                      {"state_nodes", g.grid.size()},
                                      {"control_nodes", g.controls.size()},
                                      {"N_s", cfg.grid.n_s},
                                      {"N_u", cfg.grid.n_u},
                                      {"horizon", p.horizon}};
  cli::open_out(dir, "grid_manifest.json") << manifest.dump(2) << '\n';
  return kExitOk;
}

/// Bound vs grid oracle: value gap over X̄ nodes and the coupled policy
/// comparison of the bound policy against the grid-optimal policy.
inline int cmd_compare_grid(const RunConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto p = cfg.problem();
  const auto run = cli::compute_bounds(cfg, p, derive_seed(cfg.seed, {kSeedIndicator}));
  const double t_bound = cli::seconds_since(t0);
  const auto g = cli::compute_grid(cfg, p);
  const double t_grid = cli::seconds_since(t0) - t_bound;

  double gap_sum = 0.0, gap_min = std::numeric_limits<double>::infinity();
  long long gap_nodes = 0;
  const auto& v0 = g.values->front().value;
  for (long long i = 0; i < g.grid.size(); ++i) {
    const Vector x = g.grid.node(i);
    if (!p.in_xbar(x)) continue;
    const double gap = std::min(1.0, run.seq.values[0].evaluate(x)) - v0[i];
    gap_sum += gap;
    gap_min = std::min(gap_min, gap);
    ++gap_nodes;
  }
  const double gap_mean = gap_nodes ? gap_sum / gap_nodes : 0.0;

  auto policy = std::make_shared<const BoundPolicy>(p, run.seq, cfg.eval.policy);
  auto expect = std::make_shared<const GridExpectation>(p, g.grid, cfg.grid.options);
  const auto rep = compare(p, bound_controller(policy), grid_controller(expect, g.grid, g.values, g.controls),
                           cli::compare_options(cfg), derive_seed(cfg.seed, {kSeedCompare}), "sdp", "grid");
  const double t_compare = cli::seconds_since(t0) - t_bound - t_grid;

  const std::filesystem::path dir(cfg.output);
  cli::write_values(dir, run.seq);
  {
    auto os = cli::open_out(dir, "compare_grid.csv");
    os << "n,m,N_s,N_u,M,horizon,value_gap_mean,value_gap_min,xbar_nodes,policy_diff_mean,policy_diff_se,rate_sdp,"
          "rate_grid,n_init,n_traj,rejected\n";
    os << p.state_dim() << ',' << p.control_dim() << ',' << cfg.grid.n_s << ',' << cfg.grid.n_u << ','
       << run.seq.values[p.horizon].sum->size() << ',' << p.horizon << ',' << format_double(gap_mean) << ','
       << format_double(gap_min) << ',' << gap_nodes << ',' << format_double(rep.mean_diff()) << ','
       << format_double(rep.std_error()) << ',' << format_double(rep.mean_rate(true)) << ','
       << format_double(rep.mean_rate(false)) << ',' << rep.rows.size() << ',' << rep.n_traj << ',' << rep.rejected
       << '\n';
  }
  {
    auto os = cli::open_out(dir, "compare_grid_states.csv");
    write_comparison_csv(os, rep);
  }
  {
    auto os = cli::open_out(dir, "compare_grid_summary.csv");
    write_comparison_summary(os, rep);
  }
  {
    auto os = cli::open_out(dir, "slice_k0.csv");
    write_value_slice(os, g.grid, run.seq.values[0], &g.grid, &g.values->front().value);
  }
  const cli::ordered_json manifest = {{"command", "compare-grid"},
                                      {"seed", cfg.seed},
                                      {"indicator", run.indicator},
                                      {"steps", cli::steps_json(run.seq)},
                                      {"any_fallback", run.seq.any_fallback()}};
  cli::open_out(dir, "manifest.json") << manifest.dump(2) << '\n';
  cli::write_timing(dir, {{"bound", t_bound}, {"grid", t_grid}, {"compare", t_compare}});
  return run.seq.any_fallback() ? kExitFallback : kExitOk;
}

/// Random stable systems, bound policy vs projected LQG on coupled noise.
inline int cmd_compare_lqg(const RunConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  const int n = cfg.state_dim(), m = cfg.control_dim();
  Matrix noise = cfg.lqg.noise;
  if (noise.size() == 0) noise = cfg.kernel ? cfg.kernel->component(0).cov.matrix() : Matrix(0.001 * Matrix::Identity(n, n));
  const std::filesystem::path dir(cfg.output);
  auto rows = cli::open_out(dir, "compare_lqg.csv");
  rows << "system,n,m,spectral_radius,M,mean_diff,std_error,rate_sdp,rate_lqg,n_init,n_traj,rejected,fallback\n";
  auto states = cli::open_out(dir, "compare_lqg_states.csv");
  states << "system,index";
  for (int i = 0; i < n; ++i) states << ",x" << (i + 1);
  states << ",rate_sdp,rate_lqg,diff\n";
  std::vector<double> diffs;
  bool fallback = false;
  cli::ordered_json systems = cli::ordered_json::array();
  std::vector<std::pair<std::string, double>> timing;
  for (int s = 0; s < cfg.lqg.systems; ++s) {
    const auto ts = std::chrono::steady_clock::now();
    const auto sys = random_stable_system(n, m, derive_seed(cfg.seed, {kSeedSystem, static_cast<std::uint64_t>(s)}), noise);
    const auto p = cfg.problem_with(TransitionKernel::linear_gaussian(sys.a, sys.b, sys.noise));
    const auto run = cli::compute_bounds(cfg, p, derive_seed(cfg.seed, {kSeedIndicator, static_cast<std::uint64_t>(s)}));
    fallback = fallback || run.seq.any_fallback();
    auto policy = std::make_shared<const BoundPolicy>(p, run.seq, cfg.eval.policy);
    const auto rep = compare(p, bound_controller(policy), lqg_controller(p), cli::compare_options(cfg),
                             derive_seed(cfg.seed, {kSeedCompare, static_cast<std::uint64_t>(s)}), "sdp", "lqg");
    rows << s << ',' << n << ',' << m << ',' << format_double(sys.spectral_radius) << ','
         << run.seq.values[p.horizon].sum->size() << ',' << format_double(rep.mean_diff()) << ','
         << format_double(rep.std_error()) << ',' << format_double(rep.mean_rate(true)) << ','
         << format_double(rep.mean_rate(false)) << ',' << rep.rows.size() << ',' << rep.n_traj << ',' << rep.rejected
         << ',' << (run.seq.any_fallback() ? 1 : 0) << '\n';
    for (const auto& r : rep.rows) {
      states << s << ',' << r.index;
      for (int i = 0; i < n; ++i) states << ',' << format_double(r.x0(i));
      states << ',' << format_double(r.rate_a) << ',' << format_double(r.rate_b) << ',' << format_double(r.diff())
             << '\n';
      diffs.push_back(r.diff());
    }
    systems.push_back({{"system", s},
                       {"seed", sys.seed},
                       {"attempts", sys.attempts},
                       {"A", cli::matrix_json(sys.a)},
                       {"B", cli::matrix_json(sys.b)},
                       {"indicator", run.indicator},
                       {"steps", cli::steps_json(run.seq)}});
    timing.emplace_back("system_" + std::to_string(s), cli::seconds_since(ts));
  }
  double mean = 0.0, var = 0.0;
  for (double d : diffs) mean += d;
  mean /= diffs.size();
  for (double d : diffs) var += (d - mean) * (d - mean);
  const double se = diffs.size() > 1 ? std::sqrt(var / (diffs.size() - 1) / diffs.size()) : 0.0;
  {
    auto os = cli::open_out(dir, "compare_lqg_summary.csv");
    os << "key,value\nseed," << cfg.seed << "\nsystems," << cfg.lqg.systems << "\nstates," << diffs.size()
       << "\nmean_diff," << format_double(mean) << "\nstd_error," << format_double(se) << "\nci95_low,"
       << format_double(mean - 1.96 * se) << "\nci95_high," << format_double(mean + 1.96 * se) << '\n';
  }
  const cli::ordered_json manifest = {{"command", "compare-lqg"}, {"seed", cfg.seed}, {"systems", systems},
                                      {"any_fallback", fallback}};
  cli::open_out(dir, "manifest.json") << manifest.dump(2) << '\n';
  timing.emplace_back("total", cli::seconds_since(t0));
  cli::write_timing(dir, timing);
  return fallback ? kExitFallback : kExitOk;
}

inline ValueBoundSequence read_value_files(const std::filesystem::path& dir, int horizon, int n) {
  ValueBoundSequence seq;
  for (int k = 0; k <= horizon; ++k) {
    const auto path = dir / cli::value_file_name(k);
    std::ifstream in(path);
    if (!in) throw MissingInput("missing value file " + path.string());
    ValueBound v = read_value_bound(in);
    if (v.dim != n) throw std::runtime_error("value file " + path.string() + " has the wrong dimension");
    seq.values.push_back(std::move(v));
  }
  seq.steps.resize(horizon);
  for (int k = 0; k < horizon; ++k) seq.steps[k].k = k;
  return seq;
}

/// Sampled audit of value_k<k>.txt files in `values_dir`; writes validate.csv
/// and validate_summary.csv. Exit 3 when any constraint sample is violated.
inline int cmd_validate(const RunConfig& cfg, const std::string& values_dir) {
  const auto p = cfg.problem();
  const auto seq = read_value_files(values_dir, p.horizon, p.state_dim());
  std::mt19937_64 rng(derive_seed(cfg.seed, {kSeedValidate}));
  const auto audit = validate_sequence(seq, p, cfg.validate_samples, rng);
  const std::filesystem::path dir(cfg.output);
  {
    auto os = cli::open_out(dir, "validate.csv");
    os << "k,dynamics_samples,dynamics_violations,dynamics_worst,target_samples,target_violations,target_worst\n";
    for (const auto& s : audit.steps)
      os << s.k << ',' << s.dynamics_samples << ',' << s.dynamics_violations << ',' << format_double(s.dynamics_worst)
         << ',' << s.target_samples << ',' << s.target_violations << ',' << format_double(s.target_worst) << '\n';
  }
  {
    auto os = cli::open_out(dir, "validate_summary.csv");
    os << "key,value\nsamples," << cfg.validate_samples << "\nviolations," << audit.violations()
       << "\nindicator_worst," << format_double(audit.indicator_worst) << "\nsaturated_mean,"
       << format_double(audit.saturated_mean) << "\nsaturated_min," << format_double(audit.saturated_min)
       << "\nsaturated_max," << format_double(audit.saturated_max) << '\n';
  }
  return audit.violations() > 0 ? kExitViolations : kExitOk;
}

/// Runs a command body and maps failures onto the documented exit codes.
template <class F>
int run_command(F&& body, std::ostream& err = std::cerr) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const GridCapExceeded& e) {
    err << "grid too large: " << e.what() << '\n';
    return kExitGridCap;
  } catch (const MissingInput& e) {
    err << "missing input: " << e.what() << '\n';
    return kExitMissingInput;
  } catch (const std::ios_base::failure& e) {
    err << "missing input: " << e.what() << '\n';
    return kExitMissingInput;
  } catch (const std::invalid_argument& e) {
    err << "invalid input: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace reachbound
