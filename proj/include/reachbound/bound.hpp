#pragma once

// Backward recursion of value-function upper bounds, indicator upper bounds
// for the target set, sampled audits and value-file IO.

#include <chrono>
#include <cmath>
#include <istream>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "reachbound/dominance.hpp"
#include "reachbound/gridoracle.hpp"
#include "reachbound/problem.hpp"

namespace reachbound {

/// One entry of a value-bound sequence: an RBF sum or, after a fallback, a
/// constant function.
struct ValueBound {
  int dim = 0;
  std::optional<RbfSum> sum;
  double constant = 0.0;

  static ValueBound rbf(RbfSum s) {
    const int n = s.dim();
    return ValueBound{n, std::move(s), 0.0};
  }
  static ValueBound constant_value(int n, double c) { return ValueBound{n, std::nullopt, c}; }

  bool is_constant() const { return !sum.has_value(); }
  double evaluate(const Vector& x) const { return sum ? sum->evaluate(x) : constant; }

  /// E[V(x⁺) | x, u] under the kernel.
  double expectation(const TransitionKernel& kernel, const Vector& x, const Vector& u) const {
    if (!sum) return constant;
    return evaluate_pushforward(pushforward_params(*sum, kernel), x, u);
  }
};

struct BoundConfig {
  SolverConfig solver;
  double epsilon = 1e-6;      // Σ̂ᵢ ⪰ εI
  double max_repair = 1e-2;   // largest accepted increase of any yᵢ
  int max_terms = 200;        // hat terms per step before falling back
};

struct StepDiagnostics {
  int k = 0;
  std::string status;  // solver status, or "Carried" for constant inputs
  bool fallback = false;
  std::string note;
  double objective = 0.0;
  double repair_shift = 0.0;
  int iterations = 0;
  int terms = 0;
  double seconds = 0.0;
};

/// max(1, sup of E[V̂(x⁺)|x,u]) bounded by the sum of peak heights of the
/// pushforward terms; dominates both constraints of a step.
inline double constant_fallback(const ValueBound& prev, const TransitionKernel& kernel) {
  if (prev.is_constant()) return std::max(1.0, prev.constant);
  double peak = 0.0;
  const int n = kernel.state_dim();
  for (const auto& t : pushforward_params(*prev.sum, kernel))
    peak += t.weight * std::exp(-0.5 * (n * kLog2Pi + t.cov.log_det()));
  return std::max(1.0, peak);
}

struct StepResult {
  ValueBound value;
  StepDiagnostics diag;
};

/// One step of the recursion: V̂_k ≥ E[V̂_{k+1}] on X̄ × U and V̂_k ≥ 1 on K.
inline StepResult bound_step(const ValueBound& prev, const ReachAvoidProblem& problem, const BoundConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  StepResult r;
  auto finish = [&]() {
    r.diag.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
  };
  const int n = problem.state_dim();
  if (prev.is_constant()) {
    r.value = ValueBound::constant_value(n, constant_fallback(prev, problem.kernel));
    r.diag.status = "Carried";
    r.diag.fallback = true;
    r.diag.note = "constant input";
    r.diag.objective = r.value.constant;
    return finish();
  }
  const int terms = prev.sum->size() * problem.kernel.size();
  r.diag.terms = terms;
  auto fall_back = [&](const std::string& why) {
    r.value = ValueBound::constant_value(n, constant_fallback(prev, problem.kernel));
    r.diag.fallback = true;
    r.diag.note = why;
  };
  if (terms > cfg.max_terms) {
    r.diag.status = "Skipped";
    fall_back("term count " + std::to_string(terms) + " exceeds max_terms");
    return finish();
  }
  const BoundStepSdp step =
      build_bound_step(*prev.sum, problem.kernel, problem.state_action_set(), problem.target, cfg.epsilon);
  const ConicSolution sol = solve(step.program, cfg.solver);
  r.diag.status = to_string(sol.status);
  r.diag.iterations = sol.iterations;
  r.diag.objective = sol.primal_objective;
  if (sol.status == SolveStatus::Infeasible || sol.status == SolveStatus::Unbounded) {
    fall_back(std::string("solver reported ") + to_string(sol.status));
    return finish();
  }
  const RepairedBound rep = repair_bound(sol, step, cfg.max_repair);
  r.diag.repair_shift = rep.max_shift;
  if (!rep.bound) {
    fall_back(rep.failure);
    return finish();
  }
  r.value = ValueBound::rbf(*rep.bound);
  return finish();
}

struct ValueBoundSequence {
  std::vector<ValueBound> values;        // index k = 0..T
  std::vector<StepDiagnostics> steps;    // index k = 0..T-1

  int horizon() const { return static_cast<int>(values.size()) - 1; }
  bool any_fallback() const {
    for (const auto& s : steps)
      if (s.fallback) return true;
    return false;
  }
};

/// V̂_T = p̂_K, then V̂_k from V̂_{k+1} for k = T-1..0.
inline ValueBoundSequence run_recursion(const ReachAvoidProblem& problem, const RbfSum& indicator,
                                        const BoundConfig& cfg) {
  require(indicator.dim() == problem.state_dim(), "run_recursion: indicator bound dimension mismatch");
  indicator.require_positive_weights("run_recursion indicator");
  ValueBoundSequence seq;
  seq.values.resize(problem.horizon + 1);
  seq.steps.resize(problem.horizon);
  seq.values[problem.horizon] = ValueBound::rbf(indicator);
  for (int k = problem.horizon - 1; k >= 0; --k) {
    StepResult s = bound_step(seq.values[k + 1], problem, cfg);
    s.diag.k = k;
    seq.values[k] = std::move(s.value);
    seq.steps[k] = std::move(s.diag);
  }
  return seq;
}

// --- Indicator bounds ---------------------------------------------------------

/// `count` points drawn uniformly from K by rejection inside its bounding box.
inline std::vector<Vector> random_centers(const QuadraticSet& k, int count, std::mt19937_64& rng,
                                          int max_attempts = 100000) {
  const Box box = require_bounding_box(k, "random_centers");
  std::vector<Vector> out;
  for (int i = 0; i < count; ++i) out.push_back(sample_in_set(k, box, rng, max_attempts));
  return out;
}

struct IndicatorBound {
  RbfSum bound;
  double objective = 0.0;
  int rounds = 0;
  int constraint_points = 0;
  double min_on_validation = 0.0;
  double curvature_margin = 0.0;
};

/// Points of `grid` inside `set`.
inline std::vector<Vector> nodes_in(const Grid& grid, const QuadraticSet& set) { return feasible_nodes(grid, set); }

/// Validation grid over K's bounding box at ten times the density of `grid`.
inline Grid dense_grid_on(const QuadraticSet& k, const Grid& grid, int factor = 10) {
  const Box box = require_bounding_box(k, "dense_grid_on");
  std::vector<int> counts(k.dim());
  for (int a = 0; a < k.dim(); ++a) {
    const double width = box.upper(a) - box.lower(a);
    counts[a] = std::max(2, static_cast<int>(std::ceil(factor * width / grid.spacing(a))) + 1);
  }
  Vector lo = box.lower, hi = box.upper;
  for (int a = 0; a < k.dim(); ++a)
    if (!(lo(a) < hi(a))) hi(a) = lo(a) + 1e-12;
  return Grid(lo, hi, counts);
}

/// Nonnegative weights on fixed Gaussians minimizing Σ wᵢ subject to
/// Σ wᵢ φ(x) ≥ 1 at every node of `grid` inside K. Points of a ten-times denser
/// grid on K that fall below 1 are added as constraints and the LP is re-solved.
/// Weights below 1e-9 of the largest are dropped.
///
/// The result is finally scaled so that min over the validation points minus a
/// curvature margin equals 1. The margin (Σₐ hₐ²/8)·Σᵢ wᵢ φᵢ(μᵢ) λmax(Σᵢ⁻¹)
/// bounds how far the sum can dip below its values at the corners of a dense
/// cell, so the bound holds on every dense cell inside K; for intervals this
/// covers all of K because the interval ends are dense nodes.
inline IndicatorBound indicator_bound_lp(const QuadraticSet& k, const std::vector<Vector>& centers,
                                         const Matrix& sigma_b, const Grid& grid, const SolverConfig& solver = {},
                                         int max_rounds = 20) {
  require(!centers.empty(), "indicator_bound_lp: no centers");
  require(grid.dim() == k.dim(), "indicator_bound_lp: grid dimension mismatch");
  const SpdMatrix cov(sigma_b);
  const int nc = static_cast<int>(centers.size());
  std::vector<Vector> rows = nodes_in(grid, k);
  const Grid dense_grid = dense_grid_on(k, grid);
  const std::vector<Vector> dense = nodes_in(dense_grid, k);
  double h2 = 0.0;
  for (int a = 0; a < dense_grid.dim(); ++a) h2 += dense_grid.spacing(a) * dense_grid.spacing(a);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov.inverse());
  const double curvature_per_weight =
      h2 / 8.0 * std::exp(-0.5 * (k.dim() * kLog2Pi + cov.log_det())) * eig.eigenvalues().maxCoeff();
  require(!rows.empty() || !dense.empty(), "indicator_bound_lp: no grid point falls inside K");
  if (rows.empty()) rows.push_back(dense.front());
  auto features = [&](const Vector& x) {
    Vector f(nc);
    for (int i = 0; i < nc; ++i) f(i) = gaussian_pdf(x, centers[i], cov);
    return f;
  };
  IndicatorBound out;
  for (int round = 1; round <= max_rounds; ++round) {
    ConicProgram lp(nc);
    lp.cost.setOnes();
    const int nr = static_cast<int>(rows.size());
    ConeBlock blk = ConeBlock::nonneg(nc + nr);
    for (int r = 0; r < nr; ++r) blk.constant(nc + r, 0) = -1.0;
    std::vector<Vector> cols(nc, Vector::Zero(nc + nr));
    for (int i = 0; i < nc; ++i) cols[i](i) = 1.0;
    for (int r = 0; r < nr; ++r) {
      const Vector f = features(rows[r]);
      for (int i = 0; i < nc; ++i) cols[i](nc + r) = f(i);
    }
    for (int i = 0; i < nc; ++i) blk.add(i, cols[i]);
    lp.add_block(std::move(blk));
    const ConicSolution sol = solve(lp, solver);
    if (sol.status != SolveStatus::Optimal)
      throw std::runtime_error(std::string("indicator_bound_lp: LP ") + to_string(sol.status));
    Vector w = sol.x.cwiseMax(0.0);
    const double wmax = w.maxCoeff();
    require(wmax > 0.0, "indicator_bound_lp: all weights vanished");
    std::vector<RbfTerm> terms;
    for (int i = 0; i < nc; ++i)
      if (w(i) > 1e-9 * wmax) terms.emplace_back(w(i), centers[i], cov);
    RbfSum s(std::move(terms));
    double worst = std::numeric_limits<double>::infinity();
    std::vector<Vector> violators;
    for (const auto& x : dense) {
      const double v = s.evaluate(x);
      worst = std::min(worst, v);
      if (v < 1.0 - 1e-6) violators.push_back(x);
    }
    for (const auto& x : rows) worst = std::min(worst, s.evaluate(x));
    out.rounds = round;
    out.constraint_points = nr;
    if (violators.empty() || round == max_rounds) {
      if (!violators.empty()) throw std::runtime_error("indicator_bound_lp: dense validation failed");
      const double margin = curvature_per_weight * integral_lebesgue(s);
      require(worst - margin > 0.0, "indicator_bound_lp: curvature margin exceeds the validated minimum");
      const double scale = 1.0 / (worst - margin);
      out.bound = s.scaled(scale);
      out.objective = integral_lebesgue(out.bound);
      out.min_on_validation = worst * scale;
      out.curvature_margin = margin * scale;
      return out;
    }
    rows.insert(rows.end(), violators.begin(), violators.end());
  }
  throw std::runtime_error("indicator_bound_lp: no rounds run");
}

struct SdpIndicator {
  RbfSum bound;
  BoundStepSdp program;
  ConicSolution solution;
  double repair_shift = 0.0;
};

/// Hat-only program: M terms each at least 1/M on K, cost Σ yᵢ + ½ tr Σ̂ᵢ.
inline BoundStepSdp build_indicator_program(const QuadraticSet& k, int m, double epsilon = 1e-6) {
  require(m >= 1, "indicator program needs at least one term");
  std::vector<std::vector<DominanceRequirement>> reqs(
      m, {DominanceRequirement{log_constant(1.0 / m, k.dim()), k}});
  return assemble_hat_program(k.dim(), reqs, epsilon);
}

inline SdpIndicator indicator_bound_sdp(const QuadraticSet& k, int m, const BoundConfig& cfg = {}) {
  require(k.bounding_box().has_value(), "indicator_bound_sdp: K must be bounded");
  SdpIndicator out{RbfSum(), build_indicator_program(k, m, cfg.epsilon), {}, 0.0};
  out.solution = solve(out.program.program, cfg.solver);
  if (out.solution.status != SolveStatus::Optimal && out.solution.status != SolveStatus::IterationLimit &&
      out.solution.status != SolveStatus::IllConditioned)
    throw std::runtime_error(std::string("indicator_bound_sdp: solver reported ") + to_string(out.solution.status));
  const RepairedBound rep = repair_bound(out.solution, out.program, cfg.max_repair);
  if (!rep.bound) throw std::runtime_error("indicator_bound_sdp: " + rep.failure);
  out.bound = *rep.bound;
  out.repair_shift = rep.max_shift;
  return out;
}

// --- Audits -------------------------------------------------------------------

struct StepAudit {
  int k = 0;
  int dynamics_samples = 0;
  int dynamics_violations = 0;
  double dynamics_worst = std::numeric_limits<double>::infinity();
  int target_samples = 0;
  int target_violations = 0;
  double target_worst = std::numeric_limits<double>::infinity();
};

struct SequenceAudit {
  std::vector<StepAudit> steps;  // k = 0..T-1
  double indicator_worst = std::numeric_limits<double>::infinity();  // V̂_T − 1 on K, informational
  int xbar_samples = 0;
  double saturated_mean = 0.0;
  double saturated_min = 0.0;
  double saturated_max = 0.0;

  int violations() const {
    int v = 0;
    for (const auto& s : steps) v += s.dynamics_violations + s.target_violations;
    return v;
  }
};

/// Sampled checks, per k < T, of V̂_k(x) ≥ E[V̂_{k+1}(x⁺)|x,u] − tol on X̄ × U
/// and V̂_k(x) ≥ 1 − tol on K, plus statistics of min(V̂_0, 1) on X̄.
inline SequenceAudit validate_sequence(const ValueBoundSequence& seq, const ReachAvoidProblem& problem, int samples,
                                       std::mt19937_64& rng, double tol = 1e-9, int max_attempts = 100000) {
  SequenceAudit a;
  if (samples <= 0 || seq.values.empty()) return a;
  const int n = problem.state_dim(), m = problem.control_dim();
  const QuadraticSet s = problem.state_action_set(), xbar = problem.xbar();
  const Box sbox = require_bounding_box(s, "validate_sequence");
  const Box kbox = require_bounding_box(problem.target, "validate_sequence");
  const Box xbox = require_bounding_box(xbar, "validate_sequence");
  const int t = seq.horizon();
  for (int k = 0; k < t; ++k) {
    StepAudit st;
    st.k = k;
    const ValueBound& cur = seq.values[k];
    const ValueBound& next = seq.values[k + 1];
    std::optional<std::vector<PushforwardTerm>> push;
    if (next.sum) push = pushforward_params(*next.sum, problem.kernel);
    for (int i = 0; i < samples; ++i) {
      const Vector z = sample_in_set(s, sbox, rng, max_attempts);
      const Vector x = z.head(n), u = z.tail(m);
      const double e = push ? evaluate_pushforward(*push, x, u) : next.constant;
      const double margin = cur.evaluate(x) - e;
      st.dynamics_worst = std::min(st.dynamics_worst, margin);
      st.dynamics_violations += margin < -tol;
      ++st.dynamics_samples;
    }
    for (int i = 0; i < samples; ++i) {
      const Vector x = sample_in_set(problem.target, kbox, rng, max_attempts);
      const double margin = cur.evaluate(x) - 1.0;
      st.target_worst = std::min(st.target_worst, margin);
      st.target_violations += margin < -tol;
      ++st.target_samples;
    }
    a.steps.push_back(st);
  }
  for (int i = 0; i < samples; ++i) {
    const Vector x = sample_in_set(problem.target, kbox, rng, max_attempts);
    a.indicator_worst = std::min(a.indicator_worst, seq.values[t].evaluate(x) - 1.0);
  }
  double sum = 0.0, lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (int i = 0; i < samples; ++i) {
    const double v = std::min(1.0, seq.values[0].evaluate(sample_in_set(xbar, xbox, rng, max_attempts)));
    sum += v;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  a.xbar_samples = samples;
  a.saturated_mean = sum / samples;
  a.saturated_min = lo;
  a.saturated_max = hi;
  return a;
}

// --- Value files ----------------------------------------------------------------
//
//   rbfsum <n> <M>       followed by M term lines (see write_rbf_sum), or
//   constant <n> <c>

inline void write_value_bound(std::ostream& os, const ValueBound& v) {
  if (v.sum) {
    write_rbf_sum(os, *v.sum);
  } else {
    os << "constant " << v.dim << ' ' << format_double(v.constant) << '\n';
  }
}

inline ValueBound read_value_bound(std::istream& is) {
  std::string tag;
  if (!(is >> tag)) throw std::runtime_error("value file: empty");
  if (tag == "constant") {
    int n = 0;
    double c = 0.0;
    if (!(is >> n >> c) || n < 1) throw std::runtime_error("value file: bad constant record");
    return ValueBound::constant_value(n, c);
  }
  if (tag != "rbfsum") throw std::runtime_error("value file: unknown record " + tag);
  int n = 0, count = 0;
  if (!(is >> n >> count)) throw std::runtime_error("value file: bad rbfsum header");
  return ValueBound::rbf(read_rbf_terms(is, n, count));
}

}  // namespace reachbound
