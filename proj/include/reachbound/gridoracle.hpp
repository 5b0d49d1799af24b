#pragma once

// Brute-force dynamic programming for the reach-avoid recursion on a tensor
// grid of states, with exhaustive search over a grid of controls.
//
// The table carried between steps is the continuation value
//     c_k(x) = max_u E[ V_{k+1}(x⁺) | x, u ],     c_T ≡ 0,
// with V_{k+1} = 1 on K, the interpolant of c_{k+1} on K′∖K and 0 outside K′.
// c is smooth across the target boundary, so interpolating it (rather than V,
// which jumps there) keeps the interpolation error small. The reported value
// is V_k = 1 on K, c_k on K′∖K and 0 elsewhere.
//
// Expectations are exact for one-dimensional states: the integrand is
// piecewise linear between grid nodes and set boundaries, and each piece is
// integrated against the Gaussian in closed form. Higher dimensions use a
// tensor lattice in the whitened noise coordinates.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "reachbound/problem.hpp"

namespace reachbound {

struct Grid {
  Vector lower;
  Vector upper;
  std::vector<int> counts;

  Grid() = default;
  Grid(Vector lo, Vector hi, std::vector<int> n) : lower(std::move(lo)), upper(std::move(hi)), counts(std::move(n)) {
    require(lower.size() == upper.size() && static_cast<size_t>(lower.size()) == counts.size() && !counts.empty(),
            "grid: bound and count dimensions differ");
    for (int i = 0; i < dim(); ++i) {
      require(counts[i] >= 2, "grid: at least two points per axis");
      require(std::isfinite(lower(i)) && std::isfinite(upper(i)) && lower(i) < upper(i), "grid: invalid axis bounds");
    }
  }

  int dim() const { return static_cast<int>(counts.size()); }

  long long size() const {
    long long s = 1;
    for (int c : counts) s *= c;
    return s;
  }

  double spacing(int axis) const { return (upper(axis) - lower(axis)) / (counts[axis] - 1); }
  double coord(int axis, int i) const {
    return i == counts[axis] - 1 ? upper(axis) : lower(axis) + i * spacing(axis);
  }

  /// Node by flat index; the first axis varies slowest.
  Vector node(long long idx) const {
    Vector x(dim());
    for (int a = dim() - 1; a >= 0; --a) {
      x(a) = coord(a, static_cast<int>(idx % counts[a]));
      idx /= counts[a];
    }
    return x;
  }

  long long flat_index(const std::vector<int>& multi) const {
    long long idx = 0;
    for (int a = 0; a < dim(); ++a) idx = idx * counts[a] + multi[a];
    return idx;
  }

  bool contains(const Vector& x) const {
    for (int a = 0; a < dim(); ++a)
      if (x(a) < lower(a) || x(a) > upper(a)) return false;
    return true;
  }

  long long nearest_node(const Vector& x) const {
    std::vector<int> multi(dim());
    for (int a = 0; a < dim(); ++a) {
      const double t = std::round((x(a) - lower(a)) / spacing(a));
      multi[a] = static_cast<int>(std::clamp(t, 0.0, static_cast<double>(counts[a] - 1)));
    }
    return flat_index(multi);
  }
};

/// Uniform grid over the bounding box of `set` with `per_axis` points per axis.
inline Grid grid_over(const QuadraticSet& set, int per_axis) {
  const Box box = require_bounding_box(set, "grid_over");
  return Grid(box.lower, box.upper, std::vector<int>(set.dim(), per_axis));
}

inline std::vector<Vector> feasible_nodes(const Grid& grid, const QuadraticSet& set) {
  std::vector<Vector> out;
  for (long long i = 0; i < grid.size(); ++i) {
    Vector v = grid.node(i);
    if (set.contains(v)) out.push_back(std::move(v));
  }
  return out;
}

enum class Interpolation { Multilinear, Nearest };

struct GridOptions {
  Interpolation interpolation = Interpolation::Multilinear;
  int lattice_points = 15;    // per axis, states of dimension >= 2
  double lattice_span = 5.0;  // half-width in standard deviations
  long long node_cap = 200000;
};

class GridCapExceeded : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GridValueFunction {
  int k = 0;
  std::vector<double> value;         // V_k at every node
  std::vector<double> continuation;  // c_k at every node
};

/// Interpolates a node table at y, clamping to the grid hull.
inline double interpolate(const Grid& grid, const std::vector<double>& table, const Vector& y,
                          Interpolation mode = Interpolation::Multilinear) {
  if (mode == Interpolation::Nearest) return table[grid.nearest_node(y)];
  const int n = grid.dim();
  std::vector<int> base(n);
  std::vector<double> frac(n);
  for (int a = 0; a < n; ++a) {
    const double t = std::clamp((y(a) - grid.lower(a)) / grid.spacing(a), 0.0, static_cast<double>(grid.counts[a] - 1));
    const int i = std::min(static_cast<int>(std::floor(t)), grid.counts[a] - 2);
    base[a] = i;
    frac[a] = t - i;
  }
  double acc = 0.0;
  std::vector<int> multi(n);
  for (int corner = 0; corner < (1 << n); ++corner) {
    double w = 1.0;
    for (int a = 0; a < n; ++a) {
      const bool hi = (corner >> a) & 1;
      multi[a] = base[a] + hi;
      w *= hi ? frac[a] : 1.0 - frac[a];
    }
    if (w != 0.0) acc += w * table[grid.flat_index(multi)];
  }
  return acc;
}

namespace detail {

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

/// Φ(zb) − Φ(za) for za <= zb without cancellation in either tail.
inline double normal_mass(double za, double zb) {
  if (za >= 0.0) return 0.5 * (std::erfc(za / std::sqrt(2.0)) - std::erfc(zb / std::sqrt(2.0)));
  if (zb <= 0.0) return 0.5 * (std::erfc(-zb / std::sqrt(2.0)) - std::erfc(-za / std::sqrt(2.0)));
  return 1.0 - normal_cdf(za) - (1.0 - normal_cdf(zb));
}

inline double std_pdf(double z) { return std::isfinite(z) ? std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI) : 0.0; }

/// Real roots of the one-dimensional form [y;1]ᵀ F [y;1].
inline void append_roots(const Matrix& f, std::vector<double>& out) {
  const double a = f(0, 0), b = f(0, 1), c = f(1, 1);
  if (a == 0.0) {
    if (b != 0.0) out.push_back(-c / (2.0 * b));
    return;
  }
  const double disc = b * b - a * c;
  if (disc < 0.0) return;
  const double r = std::sqrt(disc);
  out.push_back((-b - r) / a);
  out.push_back((-b + r) / a);
}

/// Breakpoints of the one-dimensional integrand: nodes, set boundaries and,
/// for nearest-node lookup, the cell midpoints.
inline std::vector<double> breakpoints_1d(const ReachAvoidProblem& p, const Grid& grid, Interpolation mode) {
  std::vector<double> pts;
  for (int i = 0; i < grid.counts[0]; ++i) {
    pts.push_back(grid.coord(0, i));
    if (mode == Interpolation::Nearest && i + 1 < grid.counts[0])
      pts.push_back(0.5 * (grid.coord(0, i) + grid.coord(0, i + 1)));
  }
  for (const auto& f : p.target.forms()) append_roots(f.matrix(), pts);
  for (const auto& f : p.safe.forms()) append_roots(f.matrix(), pts);
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  return pts;
}

inline double expectation_1d(const ReachAvoidProblem& p, const Grid& grid, const std::vector<double>& cont,
                             const std::vector<double>& brk, Interpolation mode, double mean, double sd) {
  const double inf = std::numeric_limits<double>::infinity();
  Vector probe(1);
  auto value_at = [&](double y) {
    probe(0) = y;
    return cont.empty() ? 0.0 : interpolate(grid, cont, probe, mode);
  };
  double acc = 0.0;
  for (size_t s = 0; s <= brk.size(); ++s) {
    const double lo = s == 0 ? -inf : brk[s - 1];
    const double hi = s == brk.size() ? inf : brk[s];
    const double za = (lo - mean) / sd, zb = (hi - mean) / sd;
    if (zb < -40.0 || za > 40.0) continue;
    const double mid = std::isfinite(lo) && std::isfinite(hi) ? 0.5 * (lo + hi) : (std::isfinite(lo) ? lo + 1.0 : hi - 1.0);
    probe(0) = mid;
    const double mass = normal_mass(za, zb);
    if (p.target.contains(probe)) {
      acc += mass;
    } else if (p.safe.contains(probe)) {
      if (!std::isfinite(lo) || !std::isfinite(hi) || mode == Interpolation::Nearest) {
        acc += value_at(mid) * mass;
        continue;
      }
      const double flo = value_at(lo), fhi = value_at(hi);
      const double slope = (fhi - flo) / (hi - lo);
      // ∫ (flo + slope (y − lo)) φ = flo·ΔΦ + slope·((mean − lo)·ΔΦ − sd·Δφ_std)
      acc += flo * mass + slope * ((mean - lo) * mass - sd * (std_pdf(zb) - std_pdf(za)));
    }
  }
  return acc;
}

struct Lattice {
  std::vector<Vector> points;  // whitened coordinates
  std::vector<double> weights;
};

inline Lattice make_lattice(int n, int per_axis, double span) {
  Lattice l;
  const Grid g(Vector::Constant(n, -span), Vector::Constant(n, span), std::vector<int>(n, per_axis));
  double total = 0.0;
  for (long long i = 0; i < g.size(); ++i) {
    Vector xi = g.node(i);
    const double w = std::exp(-0.5 * xi.squaredNorm());
    l.points.push_back(std::move(xi));
    l.weights.push_back(w);
    total += w;
  }
  for (double& w : l.weights) w /= total;
  return l;
}

}  // namespace detail

/// E[V_{k+1}^ext(x⁺) | x, u] for the continuation table `cont_next` (empty
/// means c ≡ 0, the final step).
class GridExpectation {
 public:
  GridExpectation(const ReachAvoidProblem& p, const Grid& grid, const GridOptions& opts = {})
      : p_(p), grid_(grid), opts_(opts) {
    require(grid.dim() == p.state_dim(), "grid dimension differs from state dimension");
    if (p.state_dim() == 1) {
      brk_ = detail::breakpoints_1d(p, grid, opts.interpolation);
    } else {
      lattice_ = detail::make_lattice(p.state_dim(), opts.lattice_points, opts.lattice_span);
    }
  }

  double operator()(const std::vector<double>& cont_next, const Vector& x, const Vector& u) const {
    double acc = 0.0;
    for (int j = 0; j < p_.kernel.size(); ++j) {
      const auto& comp = p_.kernel.component(j);
      if (comp.weight == 0.0) continue;
      const Vector mean = p_.kernel.component_mean(j, x, u);
      if (p_.state_dim() == 1) {
        const double sd = std::sqrt(comp.cov.matrix()(0, 0));
        acc += comp.weight * detail::expectation_1d(p_, grid_, cont_next, brk_, opts_.interpolation, mean(0), sd);
        continue;
      }
      double e = 0.0;
      for (size_t q = 0; q < lattice_.points.size(); ++q) {
        const Vector y = mean + comp.cov.lower() * lattice_.points[q];
        double f = 0.0;
        if (p_.target.contains(y)) {
          f = 1.0;
        } else if (p_.safe.contains(y) && !cont_next.empty()) {
          f = interpolate(grid_, cont_next, y, opts_.interpolation);
        }
        e += lattice_.weights[q] * f;
      }
      acc += comp.weight * e;
    }
    return acc;
  }

 private:
  const ReachAvoidProblem& p_;
  const Grid& grid_;
  GridOptions opts_;
  std::vector<double> brk_;
  detail::Lattice lattice_;
};

/// Backward recursion; result[k] holds V_k and c_k for k = 0..T.
inline std::vector<GridValueFunction> dp_recursion(const ReachAvoidProblem& p, const Grid& grid,
                                                   const std::vector<Vector>& controls, const GridOptions& opts = {}) {
  if (grid.size() > opts.node_cap)
    throw GridCapExceeded("state grid has " + std::to_string(grid.size()) + " nodes, cap is " +
                          std::to_string(opts.node_cap));
  require(!controls.empty(), "dp_recursion: no feasible control nodes");
  const long long nn = grid.size();
  std::vector<Vector> nodes;
  nodes.reserve(nn);
  for (long long i = 0; i < nn; ++i) nodes.push_back(grid.node(i));
  const GridExpectation expect(p, grid, opts);

  std::vector<GridValueFunction> out(p.horizon + 1);
  auto fill_value = [&](GridValueFunction& g) {
    g.value.assign(nn, 0.0);
    for (long long i = 0; i < nn; ++i) {
      if (p.target.contains(nodes[i])) {
        g.value[i] = 1.0;
      } else if (p.safe.contains(nodes[i])) {
        g.value[i] = g.continuation[i];
      }
    }
  };
  out[p.horizon].k = p.horizon;
  out[p.horizon].continuation.assign(nn, 0.0);
  fill_value(out[p.horizon]);
  for (int k = p.horizon - 1; k >= 0; --k) {
    GridValueFunction& g = out[k];
    g.k = k;
    g.continuation.assign(nn, 0.0);
    const std::vector<double>& next = out[k + 1].continuation;
    for (long long i = 0; i < nn; ++i) {
      double best = 0.0;
      for (const auto& u : controls) best = std::max(best, expect(next, nodes[i], u));
      g.continuation[i] = std::clamp(best, 0.0, 1.0);
    }
    fill_value(g);
  }
  return out;
}

struct GridPolicyResult {
  Vector control;
  double value = 0.0;
  bool clamped = false;  // x was outside the grid hull and moved to the nearest node
};

/// Control node maximizing the expected continuation from x; the first node
/// wins ties. `next` is the table for the following time step.
inline GridPolicyResult grid_policy(const GridExpectation& expect, const Grid& grid, const GridValueFunction& next,
                                    const std::vector<Vector>& controls, const Vector& x) {
  require(!controls.empty(), "grid_policy: no feasible control nodes");
  GridPolicyResult r;
  Vector xq = x;
  if (!grid.contains(x)) {
    xq = grid.node(grid.nearest_node(x));
    r.clamped = true;
  }
  r.value = -1.0;
  for (const auto& u : controls) {
    const double v = expect(next.continuation, xq, u);
    if (v > r.value) {
      r.value = v;
      r.control = u;
    }
  }
  return r;
}

inline void write_grid_csv(std::ostream& os, const Grid& grid, const std::vector<double>& values) {
  for (int a = 0; a < grid.dim(); ++a) os << 'x' << (a + 1) << ',';
  os << "value\n";
  char buf[40];
  for (long long i = 0; i < grid.size(); ++i) {
    const Vector x = grid.node(i);
    for (int a = 0; a < grid.dim(); ++a) {
      std::snprintf(buf, sizeof(buf), "%.17g", x(a));
      os << buf << ',';
    }
    std::snprintf(buf, sizeof(buf), "%.17g", values[i]);
    os << buf << '\n';
  }
}

}  // namespace reachbound
