#pragma once

// Term-by-term dominance of Gaussian RBF sums over quadratic sets.
//
// A hat term ŵ φ(x; μ̂, Σ̂) dominates a base function b(z) on a set A when the
// log gap 2·log(hat) − 2·log(b) is nonnegative on A. For Gaussian terms the gap
// is a quadratic form in z = [x; (u;) 1]; an S-procedure relaxation with
// multipliers τ ≥ 0 and a Schur complement over Σ̂ turn this into the lifted
// block
//
//     [ Σ̂    G                          ]
//     [ Gᵀ   R + 2y·eeᵀ − Σⱼ τⱼ Aⱼ       ]  ⪰ 0,      G = [I_n, 0, −μ̂],
//
// with y = log ŵ − ½·log|Σ̂|. The block is affine in (μ̂, Σ̂, y, τ).

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "reachbound/geometry.hpp"
#include "reachbound/rbf.hpp"
#include "reachbound/sdpsolver.hpp"

namespace reachbound {

/// 2·log f(z) = offset − zᵀ quad z for a positive function f of the
/// homogenized point z (quad includes the trailing homogenizing coordinate).
struct LogQuadratic {
  Matrix quad;
  double offset = 0.0;

  int point_dim() const { return static_cast<int>(quad.rows()) - 1; }

  double log2_value(const Vector& point) const {
    Vector z(point.size() + 1);
    z << point, 1.0;
    return offset - z.dot(quad * z);
  }
};

inline LogQuadratic log_quadratic(const RbfTerm& t) {
  require(t.weight > 0.0, "log_quadratic: term weight must be positive");
  const int n = t.dim();
  Matrix h(n, n + 1);
  h << Matrix::Identity(n, n), -t.mean;
  return {symmetrize(h.transpose() * t.cov.solve(h)), 2.0 * std::log(t.weight) - n * kLog2Pi - t.cov.log_det()};
}

/// Base term w·φ(A x + B u + c; μ, Σ) over z = [x; u; 1].
inline LogQuadratic log_quadratic(const PushforwardTerm& t) {
  require(t.weight > 0.0, "log_quadratic: term weight must be positive");
  const int n = static_cast<int>(t.a.rows());
  const int m = static_cast<int>(t.b.cols());
  Matrix h(n, n + m + 1);
  h << t.a, t.b, t.c - t.mean;
  return {symmetrize(h.transpose() * t.cov.solve(h)), 2.0 * std::log(t.weight) - n * kLog2Pi - t.cov.log_det()};
}

/// The constant function `level` over points of dimension `point_dim`.
inline LogQuadratic log_constant(double level, int point_dim) {
  require(level > 0.0, "log_constant: level must be positive");
  return {Matrix::Zero(point_dim + 1, point_dim + 1), 2.0 * std::log(level)};
}

/// Parameters of a hat term in the log-weight parametrization.
struct HatParams {
  Vector mean;
  Matrix cov;
  double y = 0.0;  // log ŵ − ½ log|Σ̂|
};

inline double log_weight_offset(double weight, const Matrix& cov) {
  return std::log(weight) - 0.5 * SpdMatrix(cov).log_det();
}

inline double weight_from_offset(double y, const Matrix& cov) {
  return std::exp(y + 0.5 * SpdMatrix(cov).log_det());
}

inline HatParams hat_params(const RbfTerm& t) {
  require(t.weight > 0.0, "hat term weight must be positive");
  return {t.mean, t.cov.matrix(), std::log(t.weight) - 0.5 * t.cov.log_det()};
}

/// G = [I_n, 0, −μ̂] acting on z of dimension point_dim + 1.
inline Matrix hat_selector(const Vector& mean, int point_dim) {
  const int n = static_cast<int>(mean.size());
  require(point_dim >= n, "hat_selector: point dimension smaller than hat dimension");
  Matrix g = Matrix::Zero(n, point_dim + 1);
  g.leftCols(n).setIdentity();
  g.col(point_dim) = -mean;
  return g;
}

inline Matrix multiplier_sum(const QuadraticSet& set, const Vector& tau) {
  require(tau.size() == set.size(), "multiplier count differs from form count");
  Matrix acc = Matrix::Zero(set.dim() + 1, set.dim() + 1);
  for (int j = 0; j < set.size(); ++j) acc += tau(j) * set.form(j).matrix();
  return acc;
}

/// Lower-right block R + (2y − n·log 2π − offset)·eeᵀ − Σ τⱼ Aⱼ.
inline Matrix log_gap_constant_part(const LogQuadratic& base, const QuadraticSet& set, const Vector& tau,
                                    int hat_dim, double y) {
  require(base.point_dim() == set.dim(), "dominance: base and set dimensions differ");
  Matrix r = base.quad - multiplier_sum(set, tau);
  r(set.dim(), set.dim()) += 2.0 * y - hat_dim * kLog2Pi - base.offset;
  return r;
}

inline Matrix lifted_block(const LogQuadratic& base, const QuadraticSet& set, const Vector& tau,
                           const HatParams& hat) {
  const int n = static_cast<int>(hat.mean.size());
  const int d = set.dim() + 1;
  Matrix out(n + d, n + d);
  const Matrix g = hat_selector(hat.mean, set.dim());
  out.topLeftCorner(n, n) = hat.cov;
  out.topRightCorner(n, d) = g;
  out.bottomLeftCorner(d, n) = g.transpose();
  out.bottomRightCorner(d, d) = log_gap_constant_part(base, set, tau, n, hat.y);
  return out;
}

/// Schur complement of the Σ̂ block: the quadratic form of the log gap minus
/// the multiplier terms. Requires Σ̂ ≻ 0.
inline Matrix reduced_block(const LogQuadratic& base, const QuadraticSet& set, const Vector& tau,
                            const HatParams& hat) {
  const SpdMatrix s(hat.cov);
  const Matrix g = hat_selector(hat.mean, set.dim());
  return symmetrize(log_gap_constant_part(base, set, tau, s.dim(), hat.y) - g.transpose() * s.solve(g));
}

/// 1 + max ‖x‖² over the set's bounding box; empty when the set is unbounded.
inline std::optional<double> homogenized_radius_sq(const QuadraticSet& set) {
  const auto box = set.bounding_box();
  if (!box) return std::nullopt;
  double r2 = 1.0;
  for (int i = 0; i < set.dim(); ++i) r2 += std::max(box->lower(i) * box->lower(i), box->upper(i) * box->upper(i));
  return r2;
}

// --- Fixed-hat feasibility --------------------------------------------------

enum class DominanceVerdict { Certified, Indeterminate };

inline const char* to_string(DominanceVerdict v) {
  return v == DominanceVerdict::Certified ? "Certified" : "Indeterminate";
}

struct DominanceProgram {
  ConicProgram program;
  int margin = -1;
  std::vector<int> first_multiplier;  // per term
  std::vector<LogQuadratic> bases;
  std::vector<HatParams> hats;
  QuadraticSet set;
};

/// Searches multipliers τᵢ ≥ 0 for every term pair (hatᵢ, baseᵢ) by minimizing a
/// common margin s with Xᵢ(τᵢ) + s·I ⪰ 0 and s ≥ −1.
inline DominanceProgram build_dominance_feasibility(const RbfSum& hat, const RbfSum& base, const QuadraticSet& set) {
  require(hat.size() == base.size(), "dominance: hat and base term counts differ");
  require(hat.dim() == base.dim() && hat.dim() == set.dim(), "dominance: dimension mismatch");
  hat.require_positive_weights("dominance hat");
  base.require_positive_weights("dominance base");
  DominanceProgram d;
  d.set = set;
  const int nf = set.size();
  d.margin = d.program.add_var();
  d.program.cost(d.margin) = 1.0;
  ConeBlock nonneg = ConeBlock::nonneg(hat.size() * nf + 1);
  nonneg.constant(0, 0) = 1.0;
  nonneg.add(d.margin, Vector::Unit(nonneg.side, 0));
  for (int i = 0; i < hat.size(); ++i) {
    d.bases.push_back(log_quadratic(base.term(i)));
    d.hats.push_back(hat_params(hat.term(i)));
    const Matrix c0 = lifted_block(d.bases[i], set, Vector::Zero(nf), d.hats[i]);
    const int side = static_cast<int>(c0.rows());
    const int off = side - (set.dim() + 1);
    ConeBlock blk = ConeBlock::psd(side);
    blk.constant = c0;
    blk.add(d.margin, Matrix::Identity(side, side));
    d.first_multiplier.push_back(d.program.num_vars);
    for (int j = 0; j < nf; ++j) {
      const int v = d.program.add_var();
      Matrix coef = Matrix::Zero(side, side);
      coef.bottomRightCorner(side - off, side - off) = -set.form(j).matrix();
      blk.add(v, coef);
      nonneg.add(v, Vector::Unit(nonneg.side, 1 + i * nf + j));
    }
    d.program.add_block(std::move(blk));
  }
  d.program.add_block(std::move(nonneg));
  return d;
}

struct DominanceCertificate {
  DominanceVerdict verdict = DominanceVerdict::Indeterminate;
  SolveStatus status = SolveStatus::IllConditioned;
  std::vector<Vector> multipliers;       // clipped to ≥ 0
  std::vector<double> lifted_min_eig;    // of Xᵢ(τᵢ) without the margin
  std::vector<double> reduced_min_eig;   // of the Schur complement
};

/// Certified when every reduced block is PSD at the clipped multipliers, up to
/// `psd_tol`. A failure to certify never means the hat is not dominant.
inline DominanceCertificate certify_dominance(const RbfSum& hat, const RbfSum& base, const QuadraticSet& set,
                                              const SolverConfig& cfg = {}, double psd_tol = 1e-12) {
  const DominanceProgram d = build_dominance_feasibility(hat, base, set);
  const ConicSolution sol = solve(d.program, cfg);
  DominanceCertificate c;
  c.status = sol.status;
  bool ok = true;
  for (size_t i = 0; i < d.hats.size(); ++i) {
    Vector tau = sol.x.segment(d.first_multiplier[i], set.size()).cwiseMax(0.0);
    c.lifted_min_eig.push_back(min_eigenvalue(lifted_block(d.bases[i], set, tau, d.hats[i])));
    const double red = min_eigenvalue(reduced_block(d.bases[i], set, tau, d.hats[i]));
    c.reduced_min_eig.push_back(red);
    c.multipliers.push_back(std::move(tau));
    ok = ok && red >= -psd_tol;
  }
  c.verdict = ok ? DominanceVerdict::Certified : DominanceVerdict::Indeterminate;
  return c;
}

// --- Bound-step program -----------------------------------------------------

/// One dominance requirement of a hat term: hat(x) ≥ base(z) for z in `set`.
struct DominanceRequirement {
  LogQuadratic base;
  QuadraticSet set;
};

struct RequirementSlot {
  DominanceRequirement req;
  int first_multiplier = -1;
  int block = -1;
};

struct HatSlot {
  int mean = -1;   // n consecutive variables
  int cov = -1;    // n(n+1)/2 variables, upper triangle row by row
  int y = -1;
  int floor_block = -1;
  std::vector<RequirementSlot> requirements;
};

struct BoundStepSdp {
  int state_dim = 0;
  double epsilon = 1e-6;
  ConicProgram program;
  std::vector<HatSlot> hats;
};

inline int packed_index(int n, int a, int b) {
  if (a > b) std::swap(a, b);
  return a * n - a * (a - 1) / 2 + (b - a);
}

inline Matrix unpack_symmetric(const Vector& x, int first, int n) {
  Matrix s(n, n);
  for (int a = 0; a < n; ++a)
    for (int b = a; b < n; ++b) s(a, b) = s(b, a) = x(first + packed_index(n, a, b));
  return s;
}

/// Variables (μ̂ᵢ, Σ̂ᵢ, yᵢ, multipliers) per hat term, one lifted PSD block per
/// requirement, Σ̂ᵢ ⪰ εI, and cost Σ yᵢ + ½ tr Σ̂ᵢ.
inline BoundStepSdp assemble_hat_program(int n, const std::vector<std::vector<DominanceRequirement>>& reqs,
                                         double epsilon) {
  require(n >= 1, "hat program: state dimension must be positive");
  require(epsilon > 0.0, "hat program: epsilon must be positive");
  BoundStepSdp step;
  step.state_dim = n;
  step.epsilon = epsilon;
  ConicProgram& p = step.program;
  const int ncov = n * (n + 1) / 2;
  for (const auto& hat_reqs : reqs) {
    HatSlot slot;
    slot.mean = p.num_vars;
    for (int k = 0; k < n; ++k) p.add_var();
    slot.cov = p.num_vars;
    for (int k = 0; k < ncov; ++k) p.add_var();
    slot.y = p.add_var();
    p.cost(slot.y) = 1.0;
    for (int a = 0; a < n; ++a) p.cost(slot.cov + packed_index(n, a, a)) = 0.5;

    ConeBlock floor = ConeBlock::psd(n);
    floor.constant = -epsilon * Matrix::Identity(n, n);
    for (int a = 0; a < n; ++a) {
      for (int b = a; b < n; ++b) {
        Matrix e = Matrix::Zero(n, n);
        e(a, b) = e(b, a) = 1.0;
        floor.add(slot.cov + packed_index(n, a, b), e);
      }
    }
    slot.floor_block = p.add_block(std::move(floor));

    int total_mult = 0;
    for (const auto& r : hat_reqs) total_mult += r.set.size();
    ConeBlock nonneg = ConeBlock::nonneg(std::max(total_mult, 1));
    int row = 0;
    for (const auto& r : hat_reqs) {
      require(r.base.point_dim() == r.set.dim(), "hat program: requirement base and set dimensions differ");
      require(r.set.dim() >= n, "hat program: requirement set smaller than the state space");
      const int pd = r.set.dim();
      const int side = n + pd + 1;
      const int last = side - 1;
      ConeBlock blk = ConeBlock::psd(side);
      HatParams zero{Vector::Zero(n), Matrix::Zero(n, n), 0.0};
      blk.constant = lifted_block(r.base, r.set, Vector::Zero(r.set.size()), zero);
      for (int k = 0; k < n; ++k) {
        Matrix e = Matrix::Zero(side, side);
        e(k, last) = e(last, k) = -1.0;
        blk.add(slot.mean + k, e);
      }
      for (int a = 0; a < n; ++a) {
        for (int b = a; b < n; ++b) {
          Matrix e = Matrix::Zero(side, side);
          e(a, b) = e(b, a) = 1.0;
          blk.add(slot.cov + packed_index(n, a, b), e);
        }
      }
      Matrix ey = Matrix::Zero(side, side);
      ey(last, last) = 2.0;
      blk.add(slot.y, ey);
      RequirementSlot rs{r, p.num_vars, -1};
      for (int j = 0; j < r.set.size(); ++j) {
        const int v = p.add_var();
        Matrix e = Matrix::Zero(side, side);
        e.bottomRightCorner(pd + 1, pd + 1) = -r.set.form(j).matrix();
        blk.add(v, e);
        nonneg.add(v, Vector::Unit(nonneg.side, row++));
      }
      rs.block = p.add_block(std::move(blk));
      slot.requirements.push_back(std::move(rs));
    }
    if (total_mult > 0) p.add_block(std::move(nonneg));
    step.hats.push_back(std::move(slot));
  }
  return step;
}

/// One hat term per pushforward term of `prev` under `kernel` (M·J terms), each
/// required to dominate its paired term on `s` and to exceed 1/M on `k`.
inline BoundStepSdp build_bound_step(const RbfSum& prev, const TransitionKernel& kernel, const QuadraticSet& s,
                                     const QuadraticSet& k, double epsilon = 1e-6) {
  const int n = kernel.state_dim();
  const int m = kernel.control_dim();
  require(prev.dim() == n && k.dim() == n && s.dim() == n + m, "build_bound_step: dimension mismatch");
  prev.require_positive_weights("build_bound_step");
  const auto terms = pushforward_params(prev, kernel);
  std::vector<std::vector<DominanceRequirement>> reqs;
  const double floor = 1.0 / static_cast<double>(terms.size());
  for (const auto& t : terms) {
    if (t.weight <= 0.0) continue;
    reqs.push_back({{log_quadratic(t), s}, {log_constant(floor, n), k}});
  }
  require(reqs.size() == terms.size(), "build_bound_step: zero-weight kernel components are not supported");
  return assemble_hat_program(n, reqs, epsilon);
}

inline HatParams hat_from_solution(const BoundStepSdp& step, const Vector& x, int i) {
  const HatSlot& h = step.hats.at(i);
  const int n = step.state_dim;
  return {x.segment(h.mean, n), unpack_symmetric(x, h.cov, n), x(h.y)};
}

/// ŵᵢ = e^{yᵢ}·√|Σ̂ᵢ| with the other parameters read off directly.
inline RbfSum extract_bound(const ConicSolution& sol, const BoundStepSdp& step) {
  require(sol.x.size() == step.program.num_vars, "extract_bound: solution does not match program");
  std::vector<RbfTerm> terms;
  for (size_t i = 0; i < step.hats.size(); ++i) {
    const HatParams h = hat_from_solution(step, sol.x, static_cast<int>(i));
    terms.emplace_back(weight_from_offset(h.y, h.cov), h.mean, h.cov);
  }
  return RbfSum(std::move(terms));
}

struct RepairedBound {
  std::optional<RbfSum> bound;
  double max_shift = 0.0;  // largest increase applied to any yᵢ
  std::string failure;
};

/// Makes an approximate solver output sound. Multipliers are clipped to ≥ 0 and
/// each reduced block is recomputed exactly; where its smallest eigenvalue λ is
/// negative, yᵢ is raised by −λ·r²/2 with r² = 1 + max ‖z‖² over the set's
/// bounding box, so the log gap stays nonnegative on the set. Shifts above
/// `max_shift` are rejected.
inline RepairedBound repair_bound(const ConicSolution& sol, const BoundStepSdp& step, double max_shift) {
  RepairedBound out;
  if (sol.x.size() != step.program.num_vars) {
    out.failure = "solution does not match program";
    return out;
  }
  std::vector<RbfTerm> terms;
  for (size_t i = 0; i < step.hats.size(); ++i) {
    HatParams h = hat_from_solution(step, sol.x, static_cast<int>(i));
    h.cov = symmetrize(h.cov);
    if (!h.mean.allFinite() || !h.cov.allFinite() || !std::isfinite(h.y) ||
        Eigen::LLT<Matrix>(h.cov).info() != Eigen::Success || min_eigenvalue(h.cov) <= 0.0) {
      out.failure = "hat covariance of term " + std::to_string(i) + " is not positive definite";
      return out;
    }
    double shift = 0.0;
    for (const auto& r : step.hats[i].requirements) {
      const Vector tau = sol.x.segment(r.first_multiplier, r.req.set.size()).cwiseMax(0.0);
      const double lam = min_eigenvalue(reduced_block(r.req.base, r.req.set, tau, h));
      if (!std::isfinite(lam)) {
        out.failure = "non-finite reduced block for term " + std::to_string(i);
        return out;
      }
      if (lam >= 0.0) continue;
      const auto r2 = homogenized_radius_sq(r.req.set);
      if (!r2) {
        out.failure = "negative reduced block on an unbounded set";
        return out;
      }
      shift = std::max(shift, -lam * *r2 / 2.0);
    }
    out.max_shift = std::max(out.max_shift, shift);
    terms.emplace_back(weight_from_offset(h.y + shift, h.cov), h.mean, h.cov);
  }
  if (out.max_shift > max_shift) {
    out.failure = "repair shift " + format_double(out.max_shift) + " exceeds limit";
    return out;
  }
  out.bound = RbfSum(std::move(terms));
  return out;
}

inline void dump_program(std::ostream& os, const BoundStepSdp& step) { write_triplets(os, step.program); }

// --- Sampled audits -----------------------------------------------------------

struct ViolationReport {
  int samples = 0;
  int violations = 0;
  double worst_margin = std::numeric_limits<double>::infinity();
  Vector worst_point;
};

/// Draws `samples` points of `set` by rejection in its bounding box and checks
/// upper(z) ≥ lower(z) − tol. Throws when a draw needs more than `max_attempts`
/// candidates or the set has no bounding box.
inline ViolationReport audit_dominance(const std::function<double(const Vector&)>& upper,
                                       const std::function<double(const Vector&)>& lower, const QuadraticSet& set,
                                       int samples, std::mt19937_64& rng, int max_attempts = 100000,
                                       double tol = 1e-9) {
  ViolationReport rep;
  if (samples <= 0) return rep;
  const Box box = require_bounding_box(set, "audit_dominance");
  for (int s = 0; s < samples; ++s) {
    const Vector z = sample_in_set(set, box, rng, max_attempts);
    const double margin = upper(z) - lower(z);
    ++rep.samples;
    if (margin < rep.worst_margin) {
      rep.worst_margin = margin;
      rep.worst_point = z;
    }
    if (margin < -tol) ++rep.violations;
  }
  return rep;
}

inline ViolationReport verify_certificate(const RbfSum& hat, const RbfSum& base, const QuadraticSet& set,
                                          int samples, std::mt19937_64& rng, int max_attempts = 100000) {
  require(hat.dim() == set.dim() && base.dim() == set.dim(), "verify_certificate: dimension mismatch");
  return audit_dominance([&](const Vector& x) { return hat.evaluate(x); },
                         [&](const Vector& x) { return base.evaluate(x); }, set, samples, rng, max_attempts);
}

/// Affine-argument form: hat(x) against Σ wᵢ φ(A x + B u + c; μᵢ, Σᵢ) over (x, u).
inline ViolationReport verify_certificate(const RbfSum& hat, const std::vector<PushforwardTerm>& base,
                                          const QuadraticSet& set, int samples, std::mt19937_64& rng,
                                          int max_attempts = 100000) {
  require(!base.empty(), "verify_certificate: empty base");
  const int n = hat.dim();
  const int m = static_cast<int>(base.front().b.cols());
  require(set.dim() == n + m, "verify_certificate: set must live on (x, u)");
  return audit_dominance([&](const Vector& z) { return hat.evaluate(z.head(n)); },
                         [&](const Vector& z) { return evaluate_pushforward(base, z.head(n), z.tail(m)); }, set,
                         samples, rng, max_attempts);
}

}  // namespace reachbound
