#pragma once

// Run configuration: a JSON document (comments allowed) with problem, bound,
// grid, eval, lqg and validate blocks. Every field except the problem sets and
// horizon has a default; unknown keys are rejected.

#include <cstdint>
#include <fstream>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "reachbound/bound.hpp"
#include "reachbound/gridoracle.hpp"
#include "reachbound/policy.hpp"
#include "reachbound/problem.hpp"

namespace reachbound {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SetSpec {
  Matrix q;
  double rho = 1.0;
};

enum class IndicatorMethod { Lp, Sdp };

struct BoundSettings {
  int terms = 10;
  IndicatorMethod indicator = IndicatorMethod::Lp;
  double sigma_b = 0.0005;
  int validation_points = 80;
  int max_rounds = 20;
  BoundConfig recursion;
};

struct GridSettings {
  int n_s = 80;
  int n_u = 25;
  GridOptions options;
};

struct EvalSettings {
  int n_init = 100;
  int n_traj = 100;
  double reject_threshold = 0.1;
  PolicyConfig policy;
};

struct LqgSettings {
  int systems = 10;
  Matrix noise;  // empty means the problem kernel's first covariance
};

struct RunConfig {
  int horizon = 1;
  SetSpec target;
  SetSpec safe;
  SetSpec control;
  std::optional<TransitionKernel> kernel;
  BoundSettings bound;
  GridSettings grid;
  EvalSettings eval;
  LqgSettings lqg;
  int validate_samples = 10000;
  std::uint64_t seed = 1;
  int threads = 1;
  std::string output = "out";

  int state_dim() const { return static_cast<int>(target.q.rows()); }
  int control_dim() const { return static_cast<int>(control.q.rows()); }

  ReachAvoidProblem problem() const {
    if (!kernel) throw ConfigError("config: problem.kernel is required for this command");
    return problem_with(*kernel);
  }

  ReachAvoidProblem problem_with(const TransitionKernel& k) const {
    return ReachAvoidProblem{ellipsoid(target.q, target.rho), ellipsoid(safe.q, safe.rho),
                             ellipsoid(control.q, control.rho), k, horizon};
  }
};

namespace detail {

using nlohmann::json;

inline void allow_keys(const json& j, const std::string& where, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  const std::set<std::string> ok(keys.begin(), keys.end());
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!ok.count(it.key())) throw ConfigError(where + ": unknown key '" + it.key() + "'");
}

template <class T>
T get_or(const json& j, const char* key, const std::string& where, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + ": wrong type");
  }
}

inline const json& need(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw ConfigError(where + ": missing '" + key + "'");
  return j.at(key);
}

inline Matrix parse_matrix(const json& j, const std::string& where) {
  if (!j.is_array() || j.empty()) throw ConfigError(where + ": expected a nonempty list of rows");
  const int rows = static_cast<int>(j.size());
  if (!j[0].is_array() || j[0].empty()) throw ConfigError(where + ": rows must be nonempty lists");
  const int cols = static_cast<int>(j[0].size());
  Matrix m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    if (!j[r].is_array() || static_cast<int>(j[r].size()) != cols) throw ConfigError(where + ": ragged matrix");
    for (int c = 0; c < cols; ++c) {
      if (!j[r][c].is_number()) throw ConfigError(where + ": entries must be numbers");
      m(r, c) = j[r][c].get<double>();
    }
  }
  return m;
}

inline Vector parse_vector(const json& j, const std::string& where) {
  if (!j.is_array() || j.empty()) throw ConfigError(where + ": expected a nonempty list");
  Vector v(j.size());
  for (size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ConfigError(where + ": entries must be numbers");
    v(i) = j[i].get<double>();
  }
  return v;
}

inline SetSpec parse_set(const json& j, const std::string& where) {
  allow_keys(j, where, {"Q", "rho"});
  SetSpec s{parse_matrix(need(j, "Q", where), where + ".Q"), get_or<double>(j, "rho", where, 1.0)};
  if (s.q.rows() != s.q.cols()) throw ConfigError(where + ".Q: must be square");
  if (!is_symmetric(s.q, 1e-12) || min_eigenvalue(s.q) <= 0.0) throw ConfigError(where + ".Q: must be SPD");
  if (!(s.rho > 0.0)) throw ConfigError(where + ".rho: must be positive");
  return s;
}

/// A = 1, B = 1 with either identity or all-ones patterns, Σ = scale·I.
inline TransitionKernel benchmark_kernel(int n, int m, const std::string& pattern, double scale) {
  Matrix a, b;
  if (pattern == "identity") {
    a = Matrix::Identity(n, n);
    b = Matrix::Identity(n, m);
  } else if (pattern == "ones") {
    a = Matrix::Ones(n, n);
    b = Matrix::Ones(n, m);
  } else {
    throw ConfigError("problem.kernel.benchmark: pattern must be 'identity' or 'ones'");
  }
  return TransitionKernel::linear_gaussian(a, b, scale * Matrix::Identity(n, n));
}

inline TransitionKernel parse_kernel(const json& j, int n, int m) {
  const std::string where = "problem.kernel";
  allow_keys(j, where, {"components", "benchmark", "noise_scale"});
  if (j.contains("benchmark")) {
    if (j.contains("components")) throw ConfigError(where + ": give either 'benchmark' or 'components'");
    const double scale = get_or<double>(j, "noise_scale", where, 0.001);
    if (!(scale > 0.0)) throw ConfigError(where + ".noise_scale: must be positive");
    return benchmark_kernel(n, m, get_or<std::string>(j, "benchmark", where, "identity"), scale);
  }
  const json& comps = need(j, "components", where);
  if (!comps.is_array() || comps.empty()) throw ConfigError(where + ".components: expected a nonempty list");
  std::vector<TransitionKernel::Component> out;
  for (size_t i = 0; i < comps.size(); ++i) {
    const std::string w = where + ".components[" + std::to_string(i) + "]";
    const json& c = comps[i];
    allow_keys(c, w, {"weight", "A", "B", "c", "Sigma"});
    TransitionKernel::Component comp;
    comp.weight = get_or<double>(c, "weight", w, 1.0);
    comp.a = parse_matrix(need(c, "A", w), w + ".A");
    comp.b = parse_matrix(need(c, "B", w), w + ".B");
    comp.c = c.contains("c") ? parse_vector(c.at("c"), w + ".c") : Vector::Zero(n);
    const Matrix sigma = parse_matrix(need(c, "Sigma", w), w + ".Sigma");
    if (comp.a.rows() != n || comp.a.cols() != n) throw ConfigError(w + ".A: must be n x n with n from the sets");
    if (comp.b.rows() != n || comp.b.cols() != m) throw ConfigError(w + ".B: must be n x m");
    if (comp.c.size() != n) throw ConfigError(w + ".c: must have n entries");
    if (sigma.rows() != n || sigma.cols() != n) throw ConfigError(w + ".Sigma: must be n x n");
    try {
      comp.cov = SpdMatrix(sigma);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(w + ".Sigma: " + e.what());
    }
    out.push_back(std::move(comp));
  }
  try {
    return TransitionKernel(n, m, std::move(out));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

inline SolverConfig parse_solver(const json& j, const std::string& where) {
  allow_keys(j, where, {"gap_tol", "feas_tol", "infeas_tol", "max_iter"});
  SolverConfig s;
  s.gap_tol = get_or<double>(j, "gap_tol", where, s.gap_tol);
  s.feas_tol = get_or<double>(j, "feas_tol", where, s.feas_tol);
  s.infeas_tol = get_or<double>(j, "infeas_tol", where, s.infeas_tol);
  s.max_iter = get_or<int>(j, "max_iter", where, s.max_iter);
  if (!(s.gap_tol > 0.0 && s.feas_tol > 0.0 && s.infeas_tol > 0.0)) throw ConfigError(where + ": tolerances must be positive");
  if (s.max_iter < 1) throw ConfigError(where + ".max_iter: must be at least 1");
  return s;
}

}  // namespace detail

inline RunConfig parse_config(const std::string& text) {
  using detail::get_or;
  using detail::need;
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(text, nullptr, true, true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  detail::allow_keys(root, "config", {"problem", "bound", "grid", "eval", "lqg", "validate", "seed", "threads", "output"});
  RunConfig cfg;

  const auto& p = need(root, "problem", "config");
  detail::allow_keys(p, "problem", {"horizon", "target", "safe", "control", "kernel"});
  cfg.horizon = get_or<int>(p, "horizon", "problem", 0);
  if (cfg.horizon < 1) throw ConfigError("problem.horizon: must be at least 1");
  cfg.target = detail::parse_set(need(p, "target", "problem"), "problem.target");
  cfg.safe = detail::parse_set(need(p, "safe", "problem"), "problem.safe");
  cfg.control = detail::parse_set(need(p, "control", "problem"), "problem.control");
  if (cfg.safe.q.rows() != cfg.target.q.rows()) throw ConfigError("problem: target and safe dims differ");
  if (p.contains("kernel")) cfg.kernel = detail::parse_kernel(p.at("kernel"), cfg.state_dim(), cfg.control_dim());

  if (root.contains("bound")) {
    const auto& b = root.at("bound");
    detail::allow_keys(b, "bound", {"M", "indicator", "sigma_b", "validation_points", "max_rounds", "epsilon",
                                    "max_repair", "max_terms", "solver"});
    auto& s = cfg.bound;
    s.terms = get_or<int>(b, "M", "bound", s.terms);
    const auto method = get_or<std::string>(b, "indicator", "bound", "lp");
    if (method == "lp")
      s.indicator = IndicatorMethod::Lp;
    else if (method == "sdp")
      s.indicator = IndicatorMethod::Sdp;
    else
      throw ConfigError("bound.indicator: must be 'lp' or 'sdp'");
    s.sigma_b = get_or<double>(b, "sigma_b", "bound", s.sigma_b);
    s.validation_points = get_or<int>(b, "validation_points", "bound", s.validation_points);
    s.max_rounds = get_or<int>(b, "max_rounds", "bound", s.max_rounds);
    s.recursion.epsilon = get_or<double>(b, "epsilon", "bound", s.recursion.epsilon);
    s.recursion.max_repair = get_or<double>(b, "max_repair", "bound", s.recursion.max_repair);
    s.recursion.max_terms = get_or<int>(b, "max_terms", "bound", s.recursion.max_terms);
    if (b.contains("solver")) s.recursion.solver = detail::parse_solver(b.at("solver"), "bound.solver");
    if (s.terms < 1) throw ConfigError("bound.M: must be at least 1");
    if (!(s.sigma_b > 0.0)) throw ConfigError("bound.sigma_b: must be positive");
    if (s.validation_points < 2) throw ConfigError("bound.validation_points: must be at least 2");
    if (s.max_rounds < 1) throw ConfigError("bound.max_rounds: must be at least 1");
    if (!(s.recursion.epsilon > 0.0)) throw ConfigError("bound.epsilon: must be positive");
    if (!(s.recursion.max_repair >= 0.0)) throw ConfigError("bound.max_repair: must be nonnegative");
    if (s.recursion.max_terms < 0) throw ConfigError("bound.max_terms: must be nonnegative");
  }

  if (root.contains("grid")) {
    const auto& g = root.at("grid");
    detail::allow_keys(g, "grid", {"N_s", "N_u", "interpolation", "lattice_points", "lattice_span", "node_cap"});
    auto& s = cfg.grid;
    s.n_s = get_or<int>(g, "N_s", "grid", s.n_s);
    s.n_u = get_or<int>(g, "N_u", "grid", s.n_u);
    const auto interp = get_or<std::string>(g, "interpolation", "grid", "multilinear");
    if (interp == "multilinear")
      s.options.interpolation = Interpolation::Multilinear;
    else if (interp == "nearest")
      s.options.interpolation = Interpolation::Nearest;
    else
      throw ConfigError("grid.interpolation: must be 'multilinear' or 'nearest'");
    s.options.lattice_points = get_or<int>(g, "lattice_points", "grid", s.options.lattice_points);
    s.options.lattice_span = get_or<double>(g, "lattice_span", "grid", s.options.lattice_span);
    s.options.node_cap = get_or<long long>(g, "node_cap", "grid", s.options.node_cap);
    if (s.n_s < 2 || s.n_u < 1) throw ConfigError("grid: N_s must be at least 2 and N_u at least 1");
    if (s.options.lattice_points < 2 || !(s.options.lattice_span > 0.0))
      throw ConfigError("grid: lattice_points must be at least 2 and lattice_span positive");
    if (s.options.node_cap < 1) throw ConfigError("grid.node_cap: must be positive");
  }

  if (root.contains("eval")) {
    const auto& e = root.at("eval");
    detail::allow_keys(e, "eval", {"n_init", "n_traj", "reject_threshold", "policy", "multistart", "max_iterations",
                                   "gradient_tolerance", "control_points"});
    auto& s = cfg.eval;
    s.n_init = get_or<int>(e, "n_init", "eval", s.n_init);
    s.n_traj = get_or<int>(e, "n_traj", "eval", s.n_traj);
    s.reject_threshold = get_or<double>(e, "reject_threshold", "eval", s.reject_threshold);
    try {
      s.policy.mode = parse_policy_mode(get_or<std::string>(e, "policy", "eval", "newton"));
    } catch (const std::invalid_argument& ex) {
      throw ConfigError(std::string("eval.policy: ") + ex.what());
    }
    s.policy.multistart = get_or<int>(e, "multistart", "eval", s.policy.multistart);
    s.policy.max_iterations = get_or<int>(e, "max_iterations", "eval", s.policy.max_iterations);
    s.policy.gradient_tolerance = get_or<double>(e, "gradient_tolerance", "eval", s.policy.gradient_tolerance);
    s.policy.grid_points = get_or<int>(e, "control_points", "eval", s.policy.grid_points);
    if (s.n_init < 1) throw ConfigError("eval.n_init: must be at least 1");
    if (s.n_traj < 1) throw ConfigError("eval.n_traj: must be at least 1");
    if (!(s.reject_threshold >= 0.0 && s.reject_threshold <= 1.0))
      throw ConfigError("eval.reject_threshold: must lie in [0, 1]");
    try {
      s.policy.validate();
    } catch (const std::invalid_argument& ex) {
      throw ConfigError(std::string("eval: ") + ex.what());
    }
  }

  if (root.contains("lqg")) {
    const auto& l = root.at("lqg");
    detail::allow_keys(l, "lqg", {"systems", "noise"});
    cfg.lqg.systems = get_or<int>(l, "systems", "lqg", cfg.lqg.systems);
    if (cfg.lqg.systems < 1) throw ConfigError("lqg.systems: must be at least 1");
    if (l.contains("noise")) {
      cfg.lqg.noise = detail::parse_matrix(l.at("noise"), "lqg.noise");
      if (cfg.lqg.noise.rows() != cfg.state_dim() || cfg.lqg.noise.cols() != cfg.state_dim())
        throw ConfigError("lqg.noise: must be n x n");
      if (!is_symmetric(cfg.lqg.noise, 1e-12) || min_eigenvalue(cfg.lqg.noise) <= 0.0)
        throw ConfigError("lqg.noise: must be SPD");
    }
  }

  if (root.contains("validate")) {
    const auto& v = root.at("validate");
    detail::allow_keys(v, "validate", {"samples"});
    cfg.validate_samples = get_or<int>(v, "samples", "validate", cfg.validate_samples);
    if (cfg.validate_samples < 0) throw ConfigError("validate.samples: must be nonnegative");
  }

  cfg.seed = get_or<std::uint64_t>(root, "seed", "config", cfg.seed);
  cfg.threads = get_or<int>(root, "threads", "config", cfg.threads);
  cfg.output = get_or<std::string>(root, "output", "config", cfg.output);
  if (cfg.threads < 1) throw ConfigError("threads: must be at least 1");

  if (cfg.kernel) {
    std::mt19937_64 rng(cfg.seed);
    try {
      cfg.problem().validate(rng);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("problem: ") + e.what());
    }
  }
  return cfg;
}

/// Reads and parses a config file. A missing file is reported as std::ios_base::failure.
inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::ios_base::failure("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

}  // namespace reachbound
