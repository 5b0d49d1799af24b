#pragma once

// Small dense conic solver for programs in LMI form
//
//   minimize    cᵀx
//   subject to  F_b(x) = F_b0 + Σ_k x_k F_bk  ⪰ 0      (PSD blocks)
//               g_b(x) = g_b0 + Σ_k x_k g_bk  >= 0      (nonnegative orthant blocks)
//
// with x free. The dual is  maximize -Σ⟨F_b0, Z_b⟩  s.t.  Σ_b ⟨F_bk, Z_b⟩ = c_k,  Z ⪰ 0.
// Solved by an infeasible-start primal-dual path-following method (HKM
// direction, Mehrotra predictor-corrector) after block/variable equilibration.

#include <algorithm>
#include <functional>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "reachbound/linalg.hpp"

namespace reachbound {

enum class ConeKind { Psd, Nonneg };

/// One cone block. For Psd blocks matrices are side×side symmetric; for
/// Nonneg blocks they are side×1 columns (one scalar row per entry).
struct ConeBlock {
  ConeKind kind = ConeKind::Psd;
  int side = 0;
  Matrix constant;
  std::vector<std::pair<int, Matrix>> coeffs;

  static ConeBlock psd(int side) {
    return ConeBlock{ConeKind::Psd, side, Matrix::Zero(side, side), {}};
  }
  static ConeBlock nonneg(int side) {
    return ConeBlock{ConeKind::Nonneg, side, Matrix::Zero(side, 1), {}};
  }

  /// Accumulates `m` into the coefficient of variable `var`.
  void add(int var, const Matrix& m) {
    for (auto& [v, c] : coeffs) {
      if (v == var) {
        c += m;
        return;
      }
    }
    coeffs.emplace_back(var, m);
  }

  Matrix evaluate(const Vector& x) const {
    Matrix out = constant;
    for (const auto& [v, c] : coeffs) out += x(v) * c;
    return out;
  }
};

struct ConicProgram {
  int num_vars = 0;
  Vector cost;
  std::vector<ConeBlock> blocks;

  explicit ConicProgram(int n = 0) : num_vars(n), cost(Vector::Zero(n)) {}

  int add_var() {
    cost.conservativeResize(num_vars + 1);
    cost(num_vars) = 0.0;
    return num_vars++;
  }

  int add_block(ConeBlock b) {
    blocks.push_back(std::move(b));
    return static_cast<int>(blocks.size()) - 1;
  }

  int cone_dim() const {
    int d = 0;
    for (const auto& b : blocks) d += b.side;
    return d;
  }

  /// Throws on structural inconsistencies.
  void validate() const {
    require(num_vars >= 0, "conic program: negative variable count");
    require(cost.size() == num_vars, "conic program: cost length differs from variable count");
    for (const auto& b : blocks) {
      require(b.side >= 1, "conic program: block side must be positive");
      const int cols = b.kind == ConeKind::Psd ? b.side : 1;
      require(b.constant.rows() == b.side && b.constant.cols() == cols, "conic program: constant has wrong shape");
      if (b.kind == ConeKind::Psd) require(is_symmetric(b.constant, 1e-10), "conic program: constant not symmetric");
      for (const auto& [v, c] : b.coeffs) {
        require(v >= 0 && v < num_vars, "conic program: coefficient references unknown variable");
        require(c.rows() == b.side && c.cols() == cols, "conic program: coefficient has wrong shape");
        if (b.kind == ConeKind::Psd) require(is_symmetric(c, 1e-10), "conic program: coefficient not symmetric");
      }
    }
  }
};

enum class SolveStatus { Optimal, Infeasible, Unbounded, IllConditioned, IterationLimit };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Optimal: return "Optimal";
    case SolveStatus::Infeasible: return "Infeasible";
    case SolveStatus::Unbounded: return "Unbounded";
    case SolveStatus::IllConditioned: return "IllConditioned";
    case SolveStatus::IterationLimit: return "IterationLimit";
  }
  return "Unknown";
}

struct SolverConfig {
  double gap_tol = 1e-8;
  double feas_tol = 1e-8;
  double infeas_tol = 1e-8;
  int max_iter = 150;
  bool equilibrate = true;
};

struct ConicSolution {
  SolveStatus status = SolveStatus::IllConditioned;
  Vector x;                   // primal variables
  std::vector<Matrix> slack;  // F_b(x) as tracked by the iteration
  std::vector<Matrix> dual;   // Z_b
  double primal_objective = 0.0;
  double dual_objective = 0.0;
  double gap = 0.0;  // relative
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  int iterations = 0;
  std::vector<double> block_min_eig;  // of F_b(x), recomputed from x
};

namespace detail {

inline double block_inner(ConeKind kind, const Matrix& a, const Matrix& b) {
  (void)kind;
  return a.cwiseProduct(b).sum();
}

/// Largest α in (0, ∞] keeping v + αΔ in the cone; +inf when unrestricted.
inline double max_step(ConeKind kind, const Matrix& v, const Matrix& dv) {
  const double inf = std::numeric_limits<double>::infinity();
  if (kind == ConeKind::Nonneg) {
    double a = inf;
    for (Eigen::Index r = 0; r < v.rows(); ++r)
      if (dv(r, 0) < 0.0) a = std::min(a, -v(r, 0) / dv(r, 0));
    return a;
  }
  Eigen::LLT<Matrix> llt(v);
  if (llt.info() != Eigen::Success) return 0.0;
  const Matrix l = llt.matrixL();
  Matrix t = l.triangularView<Eigen::Lower>().solve(dv);
  t = l.triangularView<Eigen::Lower>().solve(t.transpose()).transpose();
  const double lmin = min_eigenvalue(t);
  return lmin >= 0.0 ? inf : -1.0 / lmin;
}

struct Scaling {
  std::vector<Vector> row;  // per block: per-row factor for Nonneg, single entry for Psd
  Vector var;               // x = var ∘ x̃
  double cost = 1.0;
};

inline Scaling compute_scaling(const ConicProgram& p, bool enabled) {
  Scaling s;
  s.var = Vector::Ones(p.num_vars);
  for (const auto& b : p.blocks) s.row.push_back(Vector::Ones(b.kind == ConeKind::Psd ? 1 : b.side));
  if (!enabled) return s;
  for (size_t bi = 0; bi < p.blocks.size(); ++bi) {
    const auto& b = p.blocks[bi];
    if (b.kind == ConeKind::Psd) {
      double mx = b.constant.cwiseAbs().maxCoeff();
      for (const auto& [v, c] : b.coeffs) mx = std::max(mx, c.cwiseAbs().maxCoeff());
      s.row[bi](0) = mx > 0.0 ? 1.0 / mx : 1.0;
    } else {
      for (int r = 0; r < b.side; ++r) {
        double mx = std::abs(b.constant(r, 0));
        for (const auto& [v, c] : b.coeffs) mx = std::max(mx, std::abs(c(r, 0)));
        s.row[bi](r) = mx > 0.0 ? 1.0 / mx : 1.0;
      }
    }
  }
  Vector colmax = Vector::Zero(p.num_vars);
  for (size_t bi = 0; bi < p.blocks.size(); ++bi) {
    const auto& b = p.blocks[bi];
    for (const auto& [v, c] : b.coeffs) {
      double mx;
      if (b.kind == ConeKind::Psd) {
        mx = s.row[bi](0) * c.cwiseAbs().maxCoeff();
      } else {
        mx = (c.cwiseAbs().array() * s.row[bi].array()).maxCoeff();
      }
      colmax(v) = std::max(colmax(v), mx);
    }
  }
  for (int k = 0; k < p.num_vars; ++k) s.var(k) = colmax(k) > 0.0 ? 1.0 / colmax(k) : 1.0;
  const double cmax = (p.cost.array() * s.var.array()).abs().maxCoeff();
  s.cost = (p.num_vars > 0 && cmax > 0.0) ? 1.0 / cmax : 1.0;
  return s;
}

inline ConicProgram apply_scaling(const ConicProgram& p, const Scaling& s) {
  ConicProgram q(p.num_vars);
  q.cost = s.cost * (p.cost.array() * s.var.array()).matrix();
  for (size_t bi = 0; bi < p.blocks.size(); ++bi) {
    const auto& b = p.blocks[bi];
    ConeBlock nb{b.kind, b.side, b.constant, {}};
    auto scale_rows = [&](Matrix m) {
      if (b.kind == ConeKind::Psd) return Matrix(m * s.row[bi](0));
      return Matrix(m.array().colwise() * s.row[bi].array());
    };
    nb.constant = scale_rows(b.constant);
    for (const auto& [v, c] : b.coeffs) nb.coeffs.emplace_back(v, scale_rows(c) * s.var(v));
    q.blocks.push_back(std::move(nb));
  }
  return q;
}

}  // namespace detail

/// Recomputes F_b(x) for every block from the program data.
inline std::vector<Matrix> evaluate_blocks(const ConicProgram& p, const Vector& x) {
  std::vector<Matrix> out;
  out.reserve(p.blocks.size());
  for (const auto& b : p.blocks) out.push_back(b.evaluate(x));
  return out;
}

inline double block_min(ConeKind kind, const Matrix& m) {
  return kind == ConeKind::Psd ? min_eigenvalue(m) : m.minCoeff();
}

namespace detail {

struct IpmState {
  Vector x;
  std::vector<Matrix> s;
  std::vector<Matrix> z;
};

/// Core iteration on an (already scaled) program.
inline ConicSolution run_ipm(const ConicProgram& p, const SolverConfig& cfg) {
  const int nv = p.num_vars;
  const int nb = static_cast<int>(p.blocks.size());
  ConicSolution sol;
  IpmState st;
  st.x = Vector::Zero(nv);

  // Which variables touch which blocks.
  double f0_norm = 0.0;
  for (const auto& b : p.blocks) f0_norm = std::max(f0_norm, b.constant.norm());
  const double c_norm = p.cost.norm();
  const int nu = std::max(1, p.cone_dim());

  for (const auto& b : p.blocks) {
    double fmax = b.constant.norm();
    double ratio = 0.0;
    for (const auto& [v, c] : b.coeffs) {
      fmax = std::max(fmax, c.norm());
      ratio = std::max(ratio, (1.0 + std::abs(p.cost(v))) / (1.0 + c.norm()));
    }
    const double sd = std::sqrt(static_cast<double>(b.side));
    const double zeta = std::max({10.0, sd, b.side * ratio});
    const double eta = std::max({10.0, sd, fmax});
    if (b.kind == ConeKind::Psd) {
      st.s.push_back(eta * Matrix::Identity(b.side, b.side));
      st.z.push_back(zeta * Matrix::Identity(b.side, b.side));
    } else {
      st.s.push_back(Matrix::Constant(b.side, 1, eta));
      st.z.push_back(Matrix::Constant(b.side, 1, zeta));
    }
  }

  auto primal_obj = [&]() { return p.cost.dot(st.x); };
  auto dual_obj = [&]() {
    double d = 0.0;
    for (int b = 0; b < nb; ++b) d -= block_inner(p.blocks[b].kind, p.blocks[b].constant, st.z[b]);
    return d;
  };
  auto fz = [&](const std::vector<Matrix>& z) {
    Vector out = Vector::Zero(nv);
    for (int b = 0; b < nb; ++b)
      for (const auto& [v, c] : p.blocks[b].coeffs) out(v) += block_inner(p.blocks[b].kind, c, z[b]);
    return out;
  };

  int stall = 0;
  for (int iter = 0; iter <= cfg.max_iter; ++iter) {
    sol.iterations = iter;
    // Residuals.
    std::vector<Matrix> rs(nb);
    double rs_norm = 0.0;
    double comp = 0.0;
    for (int b = 0; b < nb; ++b) {
      rs[b] = p.blocks[b].evaluate(st.x) - st.s[b];
      rs_norm += rs[b].squaredNorm();
      comp += block_inner(p.blocks[b].kind, st.z[b], st.s[b]);
    }
    rs_norm = std::sqrt(rs_norm);
    const Vector fzv = fz(st.z);
    const Vector rz = p.cost - fzv;
    const double pobj = primal_obj();
    const double dobj = dual_obj();
    const double mu = comp / nu;
    sol.primal_residual = rs_norm / (1.0 + f0_norm);
    sol.dual_residual = rz.norm() / (1.0 + c_norm);
    sol.gap = std::abs(pobj - dobj) / (1.0 + std::abs(pobj) + std::abs(dobj));
    sol.primal_objective = pobj;
    sol.dual_objective = dobj;

    if (!std::isfinite(pobj) || !std::isfinite(dobj) || !std::isfinite(mu)) {
      sol.status = SolveStatus::IllConditioned;
      break;
    }
    if (sol.primal_residual <= cfg.feas_tol && sol.dual_residual <= cfg.feas_tol && sol.gap <= cfg.gap_tol) {
      sol.status = SolveStatus::Optimal;
      break;
    }
    // Certificate of primal infeasibility: Z ⪰ 0, Fᵀ(Z) ≈ 0, -⟨F0,Z⟩ > 0.
    if (dobj > 0.0 && fzv.norm() <= cfg.infeas_tol * dobj) {
      sol.status = SolveStatus::Infeasible;
      break;
    }
    // Certificate of unboundedness: F_lin(x) ⪰ 0 with cᵀx < 0.
    if (pobj < 0.0 && nv > 0) {
      double worst = std::numeric_limits<double>::infinity();
      for (int b = 0; b < nb; ++b) {
        const Matrix lin = p.blocks[b].evaluate(st.x) - p.blocks[b].constant;
        worst = std::min(worst, block_min(p.blocks[b].kind, lin));
      }
      if (worst >= -cfg.infeas_tol * (-pobj) && -pobj > 1.0 / cfg.infeas_tol) {
        sol.status = SolveStatus::Unbounded;
        break;
      }
    }
    if (iter == cfg.max_iter) {
      sol.status = SolveStatus::IterationLimit;
      break;
    }

    // Schur complement matrix M_kj = Σ_b ⟨F_bk, Z F_bj S⁻¹⟩.
    std::vector<Matrix> sinv(nb);
    Matrix schur = Matrix::Zero(nv, nv);
    std::vector<std::vector<Matrix>> zfs(nb);  // Z F_bk S⁻¹ per block coefficient
    bool ok = true;
    for (int b = 0; b < nb && ok; ++b) {
      const auto& blk = p.blocks[b];
      if (blk.kind == ConeKind::Psd) {
        Eigen::LLT<Matrix> llt(st.s[b]);
        if (llt.info() != Eigen::Success) {
          ok = false;
          break;
        }
        sinv[b] = llt.solve(Matrix::Identity(blk.side, blk.side));
        zfs[b].reserve(blk.coeffs.size());
        for (const auto& [v, c] : blk.coeffs) zfs[b].push_back(st.z[b] * c * sinv[b]);
        for (size_t i = 0; i < blk.coeffs.size(); ++i) {
          for (size_t j = i; j < blk.coeffs.size(); ++j) {
            const double val = blk.coeffs[i].second.cwiseProduct(zfs[b][j]).sum();
            const int vi = blk.coeffs[i].first, vj = blk.coeffs[j].first;
            schur(vi, vj) += val;
            if (i != j) schur(vj, vi) += val;
          }
        }
      } else {
        sinv[b] = st.s[b].cwiseInverse();
        const Vector d = st.z[b].col(0).cwiseProduct(sinv[b].col(0));
        for (size_t i = 0; i < blk.coeffs.size(); ++i) {
          const Vector di = blk.coeffs[i].second.col(0).cwiseProduct(d);
          for (size_t j = i; j < blk.coeffs.size(); ++j) {
            const double val = di.dot(blk.coeffs[j].second.col(0));
            const int vi = blk.coeffs[i].first, vj = blk.coeffs[j].first;
            schur(vi, vj) += val;
            if (i != j) schur(vj, vi) += val;
          }
        }
      }
    }
    if (!ok) {
      sol.status = SolveStatus::IllConditioned;
      break;
    }
    schur = symmetrize(schur);
    const double diag_max = nv > 0 ? std::max(1e-300, schur.diagonal().cwiseAbs().maxCoeff()) : 1.0;
    Eigen::LLT<Matrix> schur_llt;
    double reg = 0.0;
    for (int attempt = 0; attempt < 8; ++attempt) {
      Matrix mreg = schur;
      if (reg > 0.0) mreg.diagonal().array() += reg * diag_max;
      for (int k = 0; k < nv; ++k)
        if (mreg(k, k) <= 0.0) mreg(k, k) = 1e-14 * diag_max;
      schur_llt.compute(mreg);
      if (schur_llt.info() == Eigen::Success) break;
      reg = reg == 0.0 ? 1e-14 : reg * 100.0;
    }
    if (nv > 0 && schur_llt.info() != Eigen::Success) {
      sol.status = SolveStatus::IllConditioned;
      break;
    }

    // Solves the Newton system for a given complementarity right-hand side
    // rc_b (Z S target minus current, as a matrix or vector).
    auto newton = [&](const std::vector<Matrix>& rc, Vector& dx, std::vector<Matrix>& ds, std::vector<Matrix>& dz) {
      Vector rhs = -rz;
      for (int b = 0; b < nb; ++b) {
        const auto& blk = p.blocks[b];
        Matrix t;
        if (blk.kind == ConeKind::Psd) {
          t = (rc[b] - st.z[b] * rs[b]) * sinv[b];
        } else {
          t = (rc[b] - st.z[b].cwiseProduct(rs[b])).cwiseProduct(sinv[b]);
        }
        for (const auto& [v, c] : blk.coeffs) rhs(v) += c.cwiseProduct(t).sum();
      }
      dx = nv > 0 ? Vector(schur_llt.solve(rhs)) : Vector();
      ds.resize(nb);
      dz.resize(nb);
      for (int b = 0; b < nb; ++b) {
        const auto& blk = p.blocks[b];
        ds[b] = rs[b];
        for (const auto& [v, c] : blk.coeffs) ds[b] += dx(v) * c;
        if (blk.kind == ConeKind::Psd) {
          dz[b] = symmetrize((rc[b] - st.z[b] * ds[b]) * sinv[b]);
        } else {
          dz[b] = (rc[b] - st.z[b].cwiseProduct(ds[b])).cwiseProduct(sinv[b]);
        }
      }
    };
    auto step_lengths = [&](const std::vector<Matrix>& ds, const std::vector<Matrix>& dz, double& ap, double& ad) {
      ap = std::numeric_limits<double>::infinity();
      ad = ap;
      for (int b = 0; b < nb; ++b) {
        ap = std::min(ap, max_step(p.blocks[b].kind, st.s[b], ds[b]));
        ad = std::min(ad, max_step(p.blocks[b].kind, st.z[b], dz[b]));
      }
    };

    // Predictor.
    std::vector<Matrix> rc(nb);
    for (int b = 0; b < nb; ++b) {
      rc[b] = p.blocks[b].kind == ConeKind::Psd ? Matrix(-st.z[b] * st.s[b])
                                                 : Matrix(-st.z[b].cwiseProduct(st.s[b]));
    }
    Vector dxa;
    std::vector<Matrix> dsa, dza;
    newton(rc, dxa, dsa, dza);
    double apa, ada;
    step_lengths(dsa, dza, apa, ada);
    apa = std::min(1.0, apa);
    ada = std::min(1.0, ada);
    double comp_aff = 0.0;
    for (int b = 0; b < nb; ++b)
      comp_aff += block_inner(p.blocks[b].kind, st.z[b] + ada * dza[b], st.s[b] + apa * dsa[b]);
    const double mu_aff = std::max(0.0, comp_aff / nu);
    double sigma = std::pow(std::min(1.0, mu_aff / std::max(mu, 1e-300)), 3);
    sigma = std::clamp(sigma, 0.0, 1.0);

    // Corrector.
    for (int b = 0; b < nb; ++b) {
      const auto& blk = p.blocks[b];
      if (blk.kind == ConeKind::Psd) {
        rc[b] = sigma * mu * Matrix::Identity(blk.side, blk.side) - st.z[b] * st.s[b] - dza[b] * dsa[b];
      } else {
        rc[b] = (Matrix::Constant(blk.side, 1, sigma * mu) - st.z[b].cwiseProduct(st.s[b]) -
                 dza[b].cwiseProduct(dsa[b]));
      }
    }
    Vector dx;
    std::vector<Matrix> ds, dz;
    newton(rc, dx, ds, dz);
    double ap, ad;
    step_lengths(ds, dz, ap, ad);
    const double gamma = 0.95;
    ap = std::min(1.0, gamma * ap);
    ad = std::min(1.0, gamma * ad);
    if (!std::isfinite(ap) || !std::isfinite(ad) || dx.hasNaN()) {
      sol.status = SolveStatus::IllConditioned;
      break;
    }
    if (ap < 1e-12 && ad < 1e-12) {
      if (++stall >= 3) {
        sol.status = SolveStatus::IllConditioned;
        break;
      }
    } else {
      stall = 0;
    }
    st.x += ap * dx;
    for (int b = 0; b < nb; ++b) {
      st.s[b] += ap * ds[b];
      st.z[b] += ad * dz[b];
      if (p.blocks[b].kind == ConeKind::Psd) {
        st.s[b] = symmetrize(st.s[b]);
        st.z[b] = symmetrize(st.z[b]);
      }
    }
  }
  sol.x = st.x;
  sol.slack = st.s;
  sol.dual = st.z;
  return sol;
}

}  // namespace detail

/// Solves the program; deterministic for identical inputs.
inline ConicSolution solve(const ConicProgram& p, const SolverConfig& cfg = {}) {
  p.validate();
  if (p.num_vars == 0 && p.blocks.empty()) {
    ConicSolution s;
    s.status = SolveStatus::Optimal;
    s.x = Vector();
    return s;
  }
  const detail::Scaling sc = detail::compute_scaling(p, cfg.equilibrate);
  const ConicProgram q = detail::apply_scaling(p, sc);
  ConicSolution sol = detail::run_ipm(q, cfg);
  // Undo scaling.
  sol.x = (sol.x.array() * sc.var.array()).matrix();
  for (size_t b = 0; b < p.blocks.size(); ++b) {
    if (p.blocks[b].kind == ConeKind::Psd) {
      sol.slack[b] /= sc.row[b](0);
      sol.dual[b] *= sc.row[b](0) / sc.cost;
    } else {
      sol.slack[b] = (sol.slack[b].array() / sc.row[b].array()).matrix();
      sol.dual[b] = (sol.dual[b].array() * sc.row[b].array()).matrix() / sc.cost;
    }
  }
  sol.primal_objective = p.cost.dot(sol.x);
  double d = 0.0;
  for (size_t b = 0; b < p.blocks.size(); ++b) d -= p.blocks[b].constant.cwiseProduct(sol.dual[b]).sum();
  sol.dual_objective = d;
  sol.block_min_eig.clear();
  for (const auto& b : p.blocks) sol.block_min_eig.push_back(block_min(b.kind, b.evaluate(sol.x)));
  return sol;
}

struct VerifyReport {
  bool ok = true;
  double worst_primal_cone = 0.0;  // most negative eigenvalue of F_b(x), relative
  double worst_dual_cone = 0.0;    // most negative eigenvalue of Z_b, relative
  double dual_residual = 0.0;      // ‖Fᵀ(Z) − c‖ / (1 + ‖c‖)
  double gap = 0.0;                // relative duality gap
  std::vector<std::string> violations;
};

/// Recomputes feasibility and optimality measures from the program data alone
/// and flags anything beyond 10× the configured tolerances.
inline VerifyReport verify(const ConicProgram& p, const ConicSolution& s, const SolverConfig& cfg = {}) {
  VerifyReport r;
  if (p.num_vars == 0 && p.blocks.empty()) return r;
  const double lim_feas = 10.0 * cfg.feas_tol;
  const double lim_gap = 10.0 * cfg.gap_tol;
  if (s.x.size() != p.num_vars || s.dual.size() != p.blocks.size()) {
    r.ok = false;
    r.violations.push_back("solution shape does not match program");
    return r;
  }
  Vector fz = Vector::Zero(p.num_vars);
  double dobj = 0.0;
  for (size_t b = 0; b < p.blocks.size(); ++b) {
    const auto& blk = p.blocks[b];
    const Matrix fx = blk.evaluate(s.x);
    double scale = blk.constant.cwiseAbs().maxCoeff();
    for (const auto& [v, c] : blk.coeffs) scale = std::max(scale, std::abs(s.x(v)) * c.cwiseAbs().maxCoeff());
    const double pe = block_min(blk.kind, fx) / (1.0 + scale);
    r.worst_primal_cone = std::min(r.worst_primal_cone, pe);
    const double de = block_min(blk.kind, s.dual[b]) / (1.0 + s.dual[b].cwiseAbs().maxCoeff());
    r.worst_dual_cone = std::min(r.worst_dual_cone, de);
    for (const auto& [v, c] : blk.coeffs) fz(v) += c.cwiseProduct(s.dual[b]).sum();
    dobj -= blk.constant.cwiseProduct(s.dual[b]).sum();
  }
  const double pobj = p.cost.dot(s.x);
  r.dual_residual = (fz - p.cost).norm() / (1.0 + p.cost.norm());
  r.gap = std::abs(pobj - dobj) / (1.0 + std::abs(pobj) + std::abs(dobj));
  if (r.worst_primal_cone < -lim_feas) r.violations.push_back("primal cone violated");
  if (r.worst_dual_cone < -lim_feas) r.violations.push_back("dual cone violated");
  if (r.dual_residual > lim_feas) r.violations.push_back("dual equality residual too large");
  if (r.gap > lim_gap) r.violations.push_back("duality gap too large");
  r.ok = r.violations.empty();
  return r;
}

// --- Sparse-triplet text format ----------------------------------------------
//
//   conic <num_vars> <num_blocks>
//   cost <count>
//   <var> <value>                          (count lines, nonzeros only)
//   block psd|nonneg <side> <count>
//   <var> <row> <col> <value>              (var = -1 for the constant term;
//                                           psd: upper triangle, row <= col;
//                                           nonneg: col is always 0)
//   ...one "block" section per cone block
//   end

inline void write_triplets(std::ostream& os, const ConicProgram& p) {
  auto fmt = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  os << "conic " << p.num_vars << ' ' << p.blocks.size() << '\n';
  std::vector<std::pair<int, double>> cost;
  for (int k = 0; k < p.num_vars; ++k)
    if (p.cost(k) != 0.0) cost.emplace_back(k, p.cost(k));
  os << "cost " << cost.size() << '\n';
  for (const auto& [k, v] : cost) os << k << ' ' << fmt(v) << '\n';
  for (const auto& b : p.blocks) {
    std::vector<std::string> lines;
    auto emit = [&](int var, const Matrix& m) {
      for (int r = 0; r < m.rows(); ++r) {
        const int c0 = b.kind == ConeKind::Psd ? r : 0;
        const int c1 = b.kind == ConeKind::Psd ? b.side : 1;
        for (int c = c0; c < c1; ++c)
          if (m(r, c) != 0.0)
            lines.push_back(std::to_string(var) + ' ' + std::to_string(r) + ' ' + std::to_string(c) + ' ' +
                            fmt(m(r, c)));
      }
    };
    emit(-1, b.constant);
    for (const auto& [v, c] : b.coeffs) emit(v, c);
    os << "block " << (b.kind == ConeKind::Psd ? "psd" : "nonneg") << ' ' << b.side << ' ' << lines.size() << '\n';
    for (const auto& l : lines) os << l << '\n';
  }
  os << "end\n";
}

inline ConicProgram read_triplets(std::istream& is) {
  std::string tag;
  int nv = 0;
  size_t nb = 0;
  if (!(is >> tag >> nv >> nb) || tag != "conic") throw std::runtime_error("triplets: bad header");
  ConicProgram p(nv);
  size_t nc = 0;
  if (!(is >> tag >> nc) || tag != "cost") throw std::runtime_error("triplets: missing cost section");
  for (size_t i = 0; i < nc; ++i) {
    int k;
    double v;
    if (!(is >> k >> v) || k < 0 || k >= nv) throw std::runtime_error("triplets: bad cost entry");
    p.cost(k) = v;
  }
  for (size_t bi = 0; bi < nb; ++bi) {
    std::string kind;
    int side = 0;
    size_t count = 0;
    if (!(is >> tag >> kind >> side >> count) || tag != "block" || side < 1)
      throw std::runtime_error("triplets: bad block header");
    ConeBlock b;
    if (kind == "psd") {
      b = ConeBlock::psd(side);
    } else if (kind == "nonneg") {
      b = ConeBlock::nonneg(side);
    } else {
      throw std::runtime_error("triplets: unknown block kind " + kind);
    }
    std::map<int, Matrix> coeffs;
    for (size_t i = 0; i < count; ++i) {
      int var, r, c;
      double v;
      if (!(is >> var >> r >> c >> v)) throw std::runtime_error("triplets: truncated block");
      if (var < -1 || var >= nv || r < 0 || r >= side || c < 0 || c >= b.constant.cols())
        throw std::runtime_error("triplets: entry out of range");
      Matrix& m = var < 0 ? b.constant : coeffs.try_emplace(var, Matrix::Zero(b.constant.rows(), b.constant.cols())).first->second;
      m(r, c) = v;
      if (b.kind == ConeKind::Psd) m(c, r) = v;
    }
    for (auto& [v, m] : coeffs) b.coeffs.emplace_back(v, std::move(m));
    p.blocks.push_back(std::move(b));
  }
  if (!(is >> tag) || tag != "end") throw std::runtime_error("triplets: missing end marker");
  p.validate();
  return p;
}

}  // namespace reachbound
