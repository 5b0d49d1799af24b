#pragma once

#include <random>

#include "reachbound/geometry.hpp"
#include "reachbound/rbf.hpp"

namespace reachbound {

/// Finite-horizon reach-avoid problem: reach `target` within `horizon` steps
/// while staying in `safe` beforehand, with controls restricted to `control`.
struct ReachAvoidProblem {
  QuadraticSet target;
  QuadraticSet safe;
  QuadraticSet control;
  TransitionKernel kernel;
  int horizon = 1;

  int state_dim() const { return kernel.state_dim(); }
  int control_dim() const { return kernel.control_dim(); }

  /// safe minus the open interior of the target.
  QuadraticSet xbar() const { return ring(safe, target); }
  QuadraticSet state_action_set() const { return product(xbar(), control); }

  bool in_target(const Vector& x) const { return target.contains(x); }
  bool in_xbar(const Vector& x) const { return safe.contains(x) && !target.contains(x); }

  /// Throws std::invalid_argument on inconsistent dimensions, a nonpositive
  /// horizon, or a sampled target point outside the safe set.
  void validate(std::mt19937_64& rng, int samples = 1000) const {
    require(horizon >= 1, "horizon must be at least 1");
    require(target.dim() == state_dim() && safe.dim() == state_dim(), "target/safe dims differ from kernel state dim");
    require(control.dim() == control_dim(), "control set dim differs from kernel control dim");
    require(target.size() == 1, "target must be a single quadratic form");
    const auto box = target.bounding_box();
    if (!box) return;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Vector x(state_dim());
    for (int s = 0; s < samples; ++s) {
      for (int i = 0; i < state_dim(); ++i) x(i) = box->lower(i) + (box->upper(i) - box->lower(i)) * unit(rng);
      if (target.contains(x)) require(safe.contains(x, 1e-12), "target set is not contained in the safe set");
    }
  }
};

/// The benchmark used throughout the examples: centered balls for target,
/// safe and control sets and x⁺ = A x + B u + ω.
inline ReachAvoidProblem ball_problem(const Matrix& a, const Matrix& b, const Matrix& noise, double rho_t,
                                      double rho_s, double rho_u, int horizon) {
  const int n = static_cast<int>(a.rows());
  const int m = static_cast<int>(b.cols());
  return ReachAvoidProblem{ellipsoid(Matrix::Identity(n, n), rho_t), ellipsoid(Matrix::Identity(n, n), rho_s),
                           ellipsoid(Matrix::Identity(m, m), rho_u), TransitionKernel::linear_gaussian(a, b, noise),
                           horizon};
}

}  // namespace reachbound
