#pragma once

#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "reachbound/bound.hpp"
#include "reachbound/geometry.hpp"
#include "reachbound/rbf.hpp"

namespace reachbound {

enum class PolicyMode { Newton, ControlGrid };

inline std::string to_string(PolicyMode m) { return m == PolicyMode::Newton ? "newton" : "control-grid"; }

inline PolicyMode parse_policy_mode(const std::string& s) {
  if (s == "newton") return PolicyMode::Newton;
  if (s == "control-grid") return PolicyMode::ControlGrid;
  throw std::invalid_argument("unknown policy mode '" + s + "'");
}

struct PolicyConfig {
  PolicyMode mode = PolicyMode::Newton;
  int multistart = 8;
  int max_iterations = 50;
  double gradient_tolerance = 1e-8;
  int grid_points = 20;
  long long grid_cap = 1000000;

  void validate() const {
    require(multistart >= 1, "policy multistart must be at least 1");
    require(max_iterations >= 1, "policy iteration cap must be at least 1");
    require(gradient_tolerance > 0.0, "policy gradient tolerance must be positive");
    require(grid_points >= 1, "control grid needs at least one point per axis");
  }
};

/// Radial scaling onto {u : uᵀQu <= rho²}.
inline Vector project_ellipsoid(const Vector& u, const Matrix& q, double rho) {
  const double r2 = u.dot(q * u);
  if (r2 <= rho * rho) return u;
  Vector out = u * (rho / std::sqrt(r2));
  // Rounding can leave the scaled point a hair outside; shrink until it is a member.
  while (out.dot(q * out) > rho * rho) out *= 1.0 - 1e-15;
  return out;
}

inline EllipsoidParams require_centered_ellipsoid(const QuadraticSet& u_set) {
  auto e = centered_ellipsoid(u_set);
  if (!e) throw std::invalid_argument("control set must be a single centered ellipsoid");
  return *e;
}

/// u ↦ E[V(x⁺) | x, u] for a fixed state, with the affine parts folded in once.
class ControlObjective {
 public:
  ControlObjective(const std::vector<PushforwardTerm>& terms, const Vector& x) {
    for (const auto& t : terms) {
      if (t.weight <= 0.0) continue;
      const Matrix l = t.cov.lower();
      const int n = static_cast<int>(t.mean.size());
      Piece p;
      p.offset = l.triangularView<Eigen::Lower>().solve(Vector(t.a * x + t.c - t.mean));
      p.lb = l.triangularView<Eigen::Lower>().solve(t.b);
      p.log_coef = std::log(t.weight) - 0.5 * n * std::log(2.0 * M_PI) - 0.5 * t.cov.log_det();
      pieces_.push_back(std::move(p));
    }
  }

  bool empty() const { return pieces_.empty(); }

  double value(const Vector& u) const {
    double acc = 0.0;
    for (const auto& p : pieces_) {
      const double e = p.log_coef - 0.5 * (p.offset + p.lb * u).squaredNorm();
      if (e >= kExpFloor) acc += std::exp(e);
    }
    return acc;
  }

  /// Log-value with gradient and Hessian in u; finite even where value() underflows.
  ValueGradHess log_derivatives(const Vector& u) const {
    const int m = static_cast<int>(u.size());
    ValueGradHess out{-std::numeric_limits<double>::infinity(), Vector::Zero(m), Matrix::Zero(m, m)};
    if (pieces_.empty()) return out;
    std::vector<double> e(pieces_.size());
    std::vector<Vector> g(pieces_.size());
    double best = -std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < pieces_.size(); ++i) {
      const Vector r = pieces_[i].offset + pieces_[i].lb * u;
      e[i] = pieces_[i].log_coef - 0.5 * r.squaredNorm();
      g[i] = -(pieces_[i].lb.transpose() * r);
      best = std::max(best, e[i]);
    }
    double total = 0.0;
    Matrix second = Matrix::Zero(m, m);
    for (size_t i = 0; i < pieces_.size(); ++i) {
      const double p = std::exp(e[i] - best);
      total += p;
      out.gradient += p * g[i];
      second += p * (g[i] * g[i].transpose() - pieces_[i].lb.transpose() * pieces_[i].lb);
    }
    out.value = best + std::log(total);
    out.gradient /= total;
    out.hessian = second / total - out.gradient * out.gradient.transpose();
    return out;
  }

 private:
  struct Piece {
    Vector offset;
    Matrix lb;
    double log_coef;
  };
  std::vector<Piece> pieces_;
};

struct Action {
  Vector control;
  double objective = 0.0;
  long long evaluations = 0;
  bool undefined_state = false;
};

namespace detail {

struct LocalRun {
  Vector u;
  double log_value;
};

inline LocalRun newton_ascent(const ControlObjective& f, Vector u, const EllipsoidParams& e, const PolicyConfig& cfg,
                              long long& evals) {
  auto d0 = f.log_derivatives(u);
  ++evals;
  double cur = d0.value;
  const double diameter = 2.0 * e.rho / std::sqrt(std::max(min_eigenvalue(e.shape), 1e-300));
  for (int it = 0; it < cfg.max_iterations; ++it) {
    const auto d = it == 0 ? d0 : f.log_derivatives(u);
    if (it > 0) ++evals;
    cur = d.value;
    Vector dir;
    Eigen::LLT<Matrix> llt(-d.hessian);
    if (llt.info() == Eigen::Success && min_eigenvalue(-d.hessian) > 0.0) {
      dir = llt.solve(d.gradient);
    } else {
      dir = d.gradient;
    }
    const double len = dir.norm();
    if (len > diameter) dir *= diameter / len;
    bool moved = false;
    double t = 1.0;
    for (int ls = 0; ls < 60; ++ls, t *= 0.5) {
      const Vector cand = project_ellipsoid(u + t * dir, e.shape, e.rho);
      const double val = f.log_derivatives(cand).value;
      ++evals;
      if (val > cur) {
        moved = (cand - u).norm() > 0.0;
        u = cand;
        cur = val;
        break;
      }
    }
    if (!moved) break;
    // Interior stationarity, or a boundary point whose ascent direction points outward.
    const auto after = f.log_derivatives(u);
    ++evals;
    cur = after.value;
    const Vector step = project_ellipsoid(u + after.gradient, e.shape, e.rho) - u;
    if (after.gradient.norm() <= cfg.gradient_tolerance || step.norm() <= cfg.gradient_tolerance) break;
  }
  return LocalRun{u, cur};
}

}  // namespace detail

/// Local maximizer of u ↦ E[V(x⁺)] over the centered ellipsoid `u_set`, best of
/// a run from u = 0 and `multistart - 1` runs from uniform draws in the set.
inline Action act_newton(const RbfSum& v_next, const TransitionKernel& kernel, const QuadraticSet& u_set,
                         const Vector& x, const PolicyConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  v_next.require_positive_weights("act_newton");
  const auto e = require_centered_ellipsoid(u_set);
  const int m = kernel.control_dim();
  const ControlObjective f(pushforward_params(v_next, kernel), x);
  Action best{Vector::Zero(m), 0.0, 0, false};
  if (f.empty()) return best;
  const Box box = require_bounding_box(u_set, "act_newton");
  double best_log = -std::numeric_limits<double>::infinity();
  for (int s = 0; s < cfg.multistart; ++s) {
    const Vector start = s == 0 ? Vector::Zero(m) : sample_in_set(u_set, box, rng, 100000);
    const auto run = detail::newton_ascent(f, start, e, cfg, best.evaluations);
    if (run.log_value > best_log) {
      best_log = run.log_value;
      best.control = run.u;
    }
  }
  best.objective = f.value(best.control);
  return best;
}

/// Evenly spaced points spanning the control set's bounding box, first axis
/// slowest, keeping only members of the set.
inline std::vector<Vector> control_grid(const QuadraticSet& u_set, int per_axis, long long cap) {
  const Box box = require_bounding_box(u_set, "control_grid");
  const int m = u_set.dim();
  long long total = 1;
  for (int i = 0; i < m; ++i) {
    total *= per_axis;
    if (total > cap) throw std::invalid_argument("control grid exceeds the node cap");
  }
  std::vector<Vector> nodes;
  Vector u(m);
  for (long long idx = 0; idx < total; ++idx) {
    long long rest = idx;
    for (int i = m - 1; i >= 0; --i) {
      const int k = static_cast<int>(rest % per_axis);
      rest /= per_axis;
      u(i) = per_axis == 1 ? 0.5 * (box.lower(i) + box.upper(i))
                           : box.lower(i) + (box.upper(i) - box.lower(i)) * k / (per_axis - 1);
    }
    if (u_set.contains(u)) nodes.push_back(u);
  }
  if (nodes.empty()) throw std::invalid_argument("no control grid node lies in the control set");
  return nodes;
}

/// Argmax over precomputed control nodes; the first node wins ties.
inline Action act_grid(const RbfSum& v_next, const TransitionKernel& kernel, const std::vector<Vector>& nodes,
                       const Vector& x) {
  require(!nodes.empty(), "act_grid: no control nodes");
  const ControlObjective f(pushforward_params(v_next, kernel), x);
  Action best{nodes.front(), -1.0, 0, false};
  for (const auto& u : nodes) {
    const double val = f.value(u);
    ++best.evaluations;
    if (val > best.objective) {
      best.objective = val;
      best.control = u;
    }
  }
  return best;
}

inline Action act_grid(const RbfSum& v_next, const TransitionKernel& kernel, const QuadraticSet& u_set,
                       const Vector& x, const PolicyConfig& cfg) {
  cfg.validate();
  return act_grid(v_next, kernel, control_grid(u_set, cfg.grid_points, cfg.grid_cap), x);
}

/// Feedback law k, x ↦ u built from a bound sequence. States outside X̄ get
/// u = 0 with the flag set; constant bounds give u = 0.
class BoundPolicy {
 public:
  BoundPolicy(const ReachAvoidProblem& problem, const ValueBoundSequence& seq, PolicyConfig cfg)
      : problem_(problem), seq_(seq), cfg_(cfg) {
    cfg_.validate();
    require(seq_.horizon() == problem_.horizon, "policy: bound sequence horizon differs from problem");
    if (cfg_.mode == PolicyMode::ControlGrid)
      nodes_ = control_grid(problem_.control, cfg_.grid_points, cfg_.grid_cap);
    else
      require_centered_ellipsoid(problem_.control);
  }

  Action act(int k, const Vector& x, std::mt19937_64& rng) const {
    require(k >= 0 && k < problem_.horizon, "policy: time index out of range");
    const int m = problem_.control_dim();
    if (!problem_.in_xbar(x)) return Action{Vector::Zero(m), 0.0, 0, true};
    const ValueBound& next = seq_.values[k + 1];
    if (next.is_constant()) return Action{Vector::Zero(m), next.constant, 0, false};
    if (cfg_.mode == PolicyMode::ControlGrid) return act_grid(*next.sum, problem_.kernel, nodes_, x);
    return act_newton(*next.sum, problem_.kernel, problem_.control, x, cfg_, rng);
  }

  const PolicyConfig& config() const { return cfg_; }

 private:
  const ReachAvoidProblem& problem_;
  const ValueBoundSequence& seq_;
  PolicyConfig cfg_;
  std::vector<Vector> nodes_;
};

}  // namespace reachbound
