#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "reachbound/bound.hpp"
#include "reachbound/gridoracle.hpp"
#include "reachbound/policy.hpp"
#include "reachbound/problem.hpp"

namespace reachbound {

// --- Seeds --------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Child seed for a labelled sub-stream: splitmix64 chained over the labels.
inline std::uint64_t derive_seed(std::uint64_t root, std::initializer_list<std::uint64_t> labels) {
  std::uint64_t s = splitmix64(root);
  for (auto l : labels) s = splitmix64(s ^ splitmix64(l + 0x632be59bd9b4e019ULL));
  return s;
}

// --- Simulation -----------------------------------------------------------------

/// Standard-normal vector and component selector for one transition.
struct NoiseDraw {
  double selector;
  Vector normal;
};

using NoisePath = std::vector<NoiseDraw>;

inline NoisePath draw_noise(int n, int steps, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  NoisePath path(steps);
  for (auto& d : path) {
    d.selector = unit(rng);
    d.normal.resize(n);
    for (int i = 0; i < n; ++i) d.normal(i) = gauss(rng);
  }
  return path;
}

/// Next state from pre-drawn noise: the component whose cumulative weight first
/// exceeds the selector, then mean + L z.
inline Vector next_state(const TransitionKernel& kernel, const Vector& x, const Vector& u, const NoiseDraw& d) {
  int j = 0;
  double cum = kernel.component(0).weight;
  while (j + 1 < kernel.size() && d.selector >= cum) cum += kernel.component(++j).weight;
  return kernel.component_mean(j, x, u) + kernel.component(j).cov.lower() * d.normal;
}

inline Vector sample_next(const TransitionKernel& kernel, const Vector& x, const Vector& u, std::mt19937_64& rng) {
  require(x.size() == kernel.state_dim() && u.size() == kernel.control_dim(), "sample_next: dimension mismatch");
  return next_state(kernel, x, u, draw_noise(kernel.state_dim(), 1, rng).front());
}

/// Feedback law u = π_k(x). The generator is for randomized controllers and is
/// seeded per trajectory.
using Controller = std::function<Vector(int k, const Vector& x, std::mt19937_64& rng)>;

enum class ExitReason { ReachedTarget, LeftSafe, HorizonExhausted };

inline std::string to_string(ExitReason r) {
  switch (r) {
    case ExitReason::ReachedTarget: return "reached-K";
    case ExitReason::LeftSafe: return "left-K'";
    case ExitReason::HorizonExhausted: return "horizon-exhausted";
  }
  return "?";
}

struct TrajectoryOutcome {
  bool success = false;
  std::optional<int> hitting_time;
  ExitReason reason = ExitReason::HorizonExhausted;
  std::vector<Vector> path;
};

inline TrajectoryOutcome rollout(const ReachAvoidProblem& p, const Controller& ctrl, const Vector& x0,
                                 const NoisePath& noise, std::mt19937_64& ctrl_rng, bool keep_path = false) {
  require(static_cast<int>(noise.size()) >= p.horizon, "rollout: noise path shorter than horizon");
  TrajectoryOutcome out;
  Vector x = x0;
  for (int t = 0;; ++t) {
    if (keep_path) out.path.push_back(x);
    if (p.in_target(x)) {
      out.success = true;
      out.hitting_time = t;
      out.reason = ExitReason::ReachedTarget;
      return out;
    }
    if (t == p.horizon) {
      out.reason = ExitReason::HorizonExhausted;
      return out;
    }
    if (!p.safe.contains(x)) {
      out.reason = ExitReason::LeftSafe;
      return out;
    }
    const Vector u = ctrl(t, x, ctrl_rng);
    x = next_state(p.kernel, x, u, noise[t]);
  }
}

inline TrajectoryOutcome rollout(const ReachAvoidProblem& p, const Controller& ctrl, const Vector& x0,
                                 std::mt19937_64& rng, bool keep_path = false) {
  const NoisePath noise = draw_noise(p.state_dim(), p.horizon, rng);
  return rollout(p, ctrl, x0, noise, rng, keep_path);
}

struct SuccessEstimate {
  double rate = 0.0;
  double std_error = 0.0;
  int trials = 0;
};

inline SuccessEstimate binomial_estimate(int successes, int trials) {
  require(trials >= 1, "success estimate needs at least one trial");
  const double r = static_cast<double>(successes) / trials;
  return SuccessEstimate{r, std::sqrt(r * (1.0 - r) / trials), trials};
}

inline SuccessEstimate empirical_success(const ReachAvoidProblem& p, const Controller& ctrl, const Vector& x0,
                                         int n_traj, std::mt19937_64& rng) {
  require(n_traj >= 1, "empirical_success: n_traj must be at least 1");
  int hits = 0;
  for (int i = 0; i < n_traj; ++i) hits += rollout(p, ctrl, x0, rng).success;
  return binomial_estimate(hits, n_traj);
}

// --- Baselines ------------------------------------------------------------------

/// Gains K_0..K_{T-1} of the finite-horizon LQR recursion started at P_T = Q,
/// with u_k = -K_k x_k.
inline std::vector<Matrix> lqg_gains(const Matrix& a, const Matrix& b, const Matrix& q, const Matrix& r, int horizon) {
  require(a.rows() == a.cols() && b.rows() == a.rows(), "lqg_gains: A/B shape mismatch");
  require(q.rows() == a.rows() && q.cols() == a.rows(), "lqg_gains: Q shape mismatch");
  require(r.rows() == b.cols() && r.cols() == b.cols(), "lqg_gains: R shape mismatch");
  require(horizon >= 1, "lqg_gains: horizon must be at least 1");
  std::vector<Matrix> gains(horizon);
  Matrix pmat = q;
  for (int k = horizon - 1; k >= 0; --k) {
    const Matrix s = symmetrize(r + b.transpose() * pmat * b);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(s);
    const double lo = eig.eigenvalues().minCoeff();
    const double hi = eig.eigenvalues().maxCoeff();
    if (!(lo > 0.0) || hi / lo > 1e12) throw std::runtime_error("lqg_gains: R + BᵀPB is ill-conditioned");
    gains[k] = s.llt().solve(b.transpose() * pmat * a);
    pmat = symmetrize(q + a.transpose() * pmat * a - a.transpose() * pmat * b * gains[k]);
  }
  return gains;
}

struct LqgWeights {
  Matrix q;
  Matrix r;
};

/// Q = Q_t/ρ_t², R = Q_u/ρ_u² from centered ellipsoidal target and control sets.
inline LqgWeights lqg_weights(const ReachAvoidProblem& p) {
  const auto t = centered_ellipsoid(p.target);
  const auto u = centered_ellipsoid(p.control);
  if (!t || !u) throw std::invalid_argument("LQG weights need centered ellipsoidal target and control sets");
  return LqgWeights{t->shape / (t->rho * t->rho), u->shape / (u->rho * u->rho)};
}

/// Mixture-averaged A and B.
inline std::pair<Matrix, Matrix> mean_dynamics(const TransitionKernel& k) {
  Matrix a = Matrix::Zero(k.state_dim(), k.state_dim());
  Matrix b = Matrix::Zero(k.state_dim(), k.control_dim());
  for (const auto& c : k.components()) {
    a += c.weight * c.a;
    b += c.weight * c.b;
  }
  return {a, b};
}

inline Controller lqg_controller(const ReachAvoidProblem& p, std::vector<Matrix> gains) {
  require(static_cast<int>(gains.size()) == p.horizon, "lqg_controller: one gain per time step required");
  const auto e = require_centered_ellipsoid(p.control);
  return [gains = std::move(gains), e](int k, const Vector& x, std::mt19937_64&) {
    return project_ellipsoid(Vector(-gains.at(k) * x), e.shape, e.rho);
  };
}

inline Controller lqg_controller(const ReachAvoidProblem& p) {
  const auto w = lqg_weights(p);
  const auto [a, b] = mean_dynamics(p.kernel);
  return lqg_controller(p, lqg_gains(a, b, w.q, w.r, p.horizon));
}

inline Controller bound_controller(std::shared_ptr<const BoundPolicy> policy) {
  return [policy](int k, const Vector& x, std::mt19937_64& rng) { return policy->act(k, x, rng).control; };
}

/// Grid-optimal policy from the oracle tables; states off the grid hull use the nearest node.
inline Controller grid_controller(std::shared_ptr<const GridExpectation> expect, const Grid& grid,
                                  std::shared_ptr<const std::vector<GridValueFunction>> values,
                                  std::vector<Vector> controls) {
  return [expect, grid, values, controls = std::move(controls)](int k, const Vector& x, std::mt19937_64&) {
    return grid_policy(*expect, grid, values->at(k + 1), controls, x).control;
  };
}

struct BenchmarkSystem {
  Matrix a;
  Matrix b;
  Matrix noise;
  std::uint64_t seed = 0;
  double spectral_radius = 0.0;
  int controllability_rank = 0;
  int attempts = 0;
};

inline double spectral_radius(const Matrix& a) { return Eigen::EigenSolver<Matrix>(a).eigenvalues().cwiseAbs().maxCoeff(); }

inline int controllability_rank(const Matrix& a, const Matrix& b, double tol = 1e-8) {
  const int n = static_cast<int>(a.rows());
  Matrix c(n, n * b.cols());
  Matrix blk = b;
  for (int i = 0; i < n; ++i) {
    c.middleCols(i * b.cols(), b.cols()) = blk;
    blk = a * blk;
  }
  const Vector s = Eigen::JacobiSVD<Matrix>(c).singularValues();
  int rank = 0;
  for (int i = 0; i < s.size(); ++i) rank += s(i) > tol * std::max(1.0, s(0));
  return rank;
}

/// Standard-normal A rescaled to spectral radius 0.9 and standard-normal B,
/// redrawn until [B, AB, …, A^{n-1}B] has full rank.
inline BenchmarkSystem random_stable_system(int n, int m, std::uint64_t seed, const Matrix& noise) {
  require(n >= 1 && m >= 1, "random_stable_system: dims must be positive");
  require(noise.rows() == n && noise.cols() == n, "random_stable_system: noise covariance has wrong shape");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int attempt = 1; attempt <= 100; ++attempt) {
    Matrix a(n, n), b(n, m);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) a(i, j) = g(rng);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) b(i, j) = g(rng);
    const double rad = spectral_radius(a);
    if (!(rad > 1e-12)) continue;
    a *= 0.9 / rad;
    const int rank = controllability_rank(a, b);
    if (rank < n) continue;
    return BenchmarkSystem{a, b, noise, seed, spectral_radius(a), rank, attempt};
  }
  throw std::runtime_error("random_stable_system: no controllable draw in 100 attempts");
}

// --- Coupled comparison -----------------------------------------------------------

struct ComparisonRow {
  int index = 0;
  Vector x0;
  double rate_a = 0.0;
  double rate_b = 0.0;
  double diff() const { return rate_a - rate_b; }
};

struct ComparisonReport {
  std::string label_a;
  std::string label_b;
  std::vector<ComparisonRow> rows;
  int candidates = 0;
  int rejected = 0;
  int n_traj = 0;
  double reject_threshold = 0.0;
  std::uint64_t seed = 0;

  double mean_diff() const {
    if (rows.empty()) return 0.0;
    double s = 0.0;
    for (const auto& r : rows) s += r.diff();
    return s / rows.size();
  }
  double std_error() const {
    if (rows.size() < 2) return 0.0;
    const double m = mean_diff();
    double s = 0.0;
    for (const auto& r : rows) s += (r.diff() - m) * (r.diff() - m);
    return std::sqrt(s / (rows.size() - 1) / rows.size());
  }
  double mean_rate(bool a) const {
    double s = 0.0;
    for (const auto& r : rows) s += a ? r.rate_a : r.rate_b;
    return rows.empty() ? 0.0 : s / rows.size();
  }
};

struct CompareOptions {
  int n_init = 100;
  int n_traj = 100;
  double reject_threshold = 0.1;
  int max_candidate_factor = 50;
  int threads = 1;

  void validate() const {
    require(n_init >= 1, "compare: n_init must be at least 1");
    require(n_traj >= 1, "compare: n_traj must be at least 1");
    require(reject_threshold >= 0.0 && reject_threshold <= 1.0, "compare: reject threshold must lie in [0, 1]");
    require(max_candidate_factor >= 1, "compare: candidate factor must be at least 1");
    require(threads >= 1, "compare: thread count must be at least 1");
  }
};

class TooManyRejections : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Runs f(i) for i in [0, count) on `threads` workers; f must only touch slot i.
inline void parallel_for(int count, int threads, const std::function<void(int)>& f) {
  if (threads <= 1 || count <= 1) {
    for (int i = 0; i < count; ++i) f(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr failure;
  std::mutex failure_mutex;
  for (int t = 0; t < std::min(threads, count); ++t) {
    pool.emplace_back([&] {
      for (int i = next++; i < count; i = next++) {
        try {
          f(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

namespace detail {

inline int coupled_successes(const ReachAvoidProblem& p, const Controller& ctrl, const Vector& x0,
                             std::uint64_t cell_seed, int n_traj) {
  int hits = 0;
  for (int j = 0; j < n_traj; ++j) {
    std::mt19937_64 noise_rng(derive_seed(cell_seed, {static_cast<std::uint64_t>(j), 0}));
    std::mt19937_64 ctrl_rng(derive_seed(cell_seed, {static_cast<std::uint64_t>(j), 1}));
    const NoisePath noise = draw_noise(p.state_dim(), p.horizon, noise_rng);
    hits += rollout(p, ctrl, x0, noise, ctrl_rng).success;
  }
  return hits;
}

}  // namespace detail

/// Candidate i draws x0 uniformly from X̄ and its noise paths from seeds derived
/// from (seed, i). Candidates whose baseline `b` succeeds less often than the
/// threshold are dropped; the first n_init survivors in index order are kept
/// and `a` is run on the same noise.
inline ComparisonReport compare(const ReachAvoidProblem& p, const Controller& a, const Controller& b,
                                const CompareOptions& opt, std::uint64_t seed, std::string label_a = "a",
                                std::string label_b = "b") {
  opt.validate();
  const QuadraticSet xbar = p.xbar();
  const Box box = require_bounding_box(p.safe, "compare");
  ComparisonReport rep;
  rep.label_a = std::move(label_a);
  rep.label_b = std::move(label_b);
  rep.n_traj = opt.n_traj;
  rep.reject_threshold = opt.reject_threshold;
  rep.seed = seed;
  const int max_candidates = opt.n_init * opt.max_candidate_factor;
  int examined = 0;
  while (static_cast<int>(rep.rows.size()) < opt.n_init) {
    const int need = opt.n_init - static_cast<int>(rep.rows.size());
    const int batch = std::min(std::max(need, opt.threads), max_candidates - examined);
    if (batch <= 0) throw TooManyRejections("compare: too many initial states rejected by the baseline threshold");
    std::vector<ComparisonRow> cand(batch);
    std::vector<char> keep(batch, 0);
    const int first = examined;
    parallel_for(batch, opt.threads, [&](int i) {
      const int idx = first + i;
      const std::uint64_t cell = derive_seed(seed, {static_cast<std::uint64_t>(idx)});
      std::mt19937_64 state_rng(derive_seed(cell, {0xffffffffULL}));
      cand[i].index = idx;
      cand[i].x0 = sample_in_set(xbar, box, state_rng, 1000000);
      const int hb = detail::coupled_successes(p, b, cand[i].x0, cell, opt.n_traj);
      cand[i].rate_b = static_cast<double>(hb) / opt.n_traj;
      if (cand[i].rate_b < opt.reject_threshold) return;
      keep[i] = 1;
      cand[i].rate_a = static_cast<double>(detail::coupled_successes(p, a, cand[i].x0, cell, opt.n_traj)) / opt.n_traj;
    });
    examined += batch;
    for (int i = 0; i < batch && static_cast<int>(rep.rows.size()) < opt.n_init; ++i) {
      ++rep.candidates;
      if (keep[i])
        rep.rows.push_back(cand[i]);
      else
        ++rep.rejected;
    }
  }
  return rep;
}

// --- Reports ----------------------------------------------------------------------

inline void write_comparison_csv(std::ostream& os, const ComparisonReport& r) {
  const int n = r.rows.empty() ? 0 : static_cast<int>(r.rows.front().x0.size());
  os << "index";
  for (int i = 0; i < n; ++i) os << ",x" << (i + 1);
  os << ",rate_" << r.label_a << ",rate_" << r.label_b << ",diff\n";
  for (const auto& row : r.rows) {
    os << row.index;
    for (int i = 0; i < n; ++i) os << ',' << format_double(row.x0(i));
    os << ',' << format_double(row.rate_a) << ',' << format_double(row.rate_b) << ',' << format_double(row.diff())
       << '\n';
  }
}

inline void write_comparison_summary(std::ostream& os, const ComparisonReport& r) {
  os << "key,value\n";
  os << "label_a," << r.label_a << "\nlabel_b," << r.label_b << '\n';
  os << "seed," << r.seed << '\n';
  os << "n_init," << r.rows.size() << "\nn_traj," << r.n_traj << '\n';
  os << "reject_threshold," << format_double(r.reject_threshold) << '\n';
  os << "candidates," << r.candidates << "\nrejected," << r.rejected << '\n';
  os << "mean_rate_a," << format_double(r.mean_rate(true)) << '\n';
  os << "mean_rate_b," << format_double(r.mean_rate(false)) << '\n';
  os << "mean_diff," << format_double(r.mean_diff()) << '\n';
  os << "std_error," << format_double(r.std_error()) << '\n';
  os << "ci95_low," << format_double(r.mean_diff() - 1.96 * r.std_error()) << '\n';
  os << "ci95_high," << format_double(r.mean_diff() + 1.96 * r.std_error()) << '\n';
}

/// V̂ (raw and saturated at 1) and, when given, the oracle table interpolated
/// onto the nodes of `where`.
inline void write_value_slice(std::ostream& os, const Grid& where, const ValueBound& vhat, const Grid* oracle_grid,
                              const std::vector<double>* oracle_values) {
  for (int a = 0; a < where.dim(); ++a) os << 'x' << (a + 1) << ',';
  os << "vhat,vhat_saturated";
  if (oracle_grid) os << ",vgrid";
  os << '\n';
  for (long long i = 0; i < where.size(); ++i) {
    const Vector x = where.node(i);
    for (int a = 0; a < where.dim(); ++a) os << format_double(x(a)) << ',';
    const double v = vhat.evaluate(x);
    os << format_double(v) << ',' << format_double(std::min(1.0, v));
    if (oracle_grid)
      os << ',' << format_double(interpolate(*oracle_grid, *oracle_values, x, Interpolation::Multilinear));
    os << '\n';
  }
}

}  // namespace reachbound
