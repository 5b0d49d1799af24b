#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "reachbound/sdpsolver.hpp"

namespace reachbound {
namespace {

// minimize t  s.t. [[t,1],[1,t]] ⪰ 0
ConicProgram two_by_two() {
  ConicProgram p(1);
  p.cost(0) = 1.0;
  ConeBlock b = ConeBlock::psd(2);
  b.constant << 0, 1, 1, 0;
  b.add(0, Matrix::Identity(2, 2));
  p.add_block(b);
  return p;
}

TEST(SdpSolverTest, AnalyticTwoByTwo) {
  const auto p = two_by_two();
  const auto s = solve(p);
  ASSERT_EQ(s.status, SolveStatus::Optimal);
  EXPECT_NEAR(s.x(0), 1.0, 1e-6);
  EXPECT_TRUE(verify(p, s).ok);
}

TEST(SdpSolverTest, SmallLp) {
  // min x1 + x2 s.t. x >= 0, x1 + x2 >= 1
  ConicProgram p(2);
  p.cost << 1, 1;
  ConeBlock b = ConeBlock::nonneg(3);
  b.constant << 0, 0, -1;
  Matrix c0(3, 1), c1(3, 1);
  c0 << 1, 0, 1;
  c1 << 0, 1, 1;
  b.add(0, c0);
  b.add(1, c1);
  p.add_block(b);
  const auto s = solve(p);
  ASSERT_EQ(s.status, SolveStatus::Optimal);
  EXPECT_NEAR(s.primal_objective, 1.0, 1e-6);
  EXPECT_TRUE(verify(p, s).ok);
}

TEST(SdpSolverTest, DetectsInfeasibility) {
  // x >= 1 and x <= -1
  ConicProgram p(1);
  ConeBlock b = ConeBlock::nonneg(2);
  b.constant << -1, -1;
  Matrix c(2, 1);
  c << 1, -1;
  b.add(0, c);
  p.add_block(b);
  EXPECT_EQ(solve(p).status, SolveStatus::Infeasible);
}

TEST(SdpSolverTest, DetectsUnboundedness) {
  // min x  s.t.  [[1, 0], [0, 1]] - x·0 ⪰ 0, -x >= 0 ... x free below
  ConicProgram p(1);
  p.cost(0) = 1.0;
  ConeBlock b = ConeBlock::nonneg(1);
  b.constant << 1;
  Matrix c(1, 1);
  c << -1;
  b.add(0, c);
  p.add_block(b);
  EXPECT_EQ(solve(p).status, SolveStatus::Unbounded);
}

TEST(SdpSolverTest, EmptyProgramVerifiesTrivially) {
  ConicProgram p(0);
  const auto s = solve(p);
  EXPECT_EQ(s.status, SolveStatus::Optimal);
  EXPECT_TRUE(verify(p, s).ok);
}

TEST(SdpSolverTest, RejectsMalformedProgram) {
  ConicProgram p(1);
  ConeBlock b = ConeBlock::psd(2);
  b.add(3, Matrix::Identity(2, 2));
  p.blocks.push_back(b);
  EXPECT_THROW(solve(p), std::invalid_argument);
}

TEST(SdpSolverTest, PerturbedSolutionIsFlagged) {
  const auto p = two_by_two();
  auto s = solve(p);
  ASSERT_EQ(s.status, SolveStatus::Optimal);
  s.x(0) -= 1e-3;
  EXPECT_FALSE(verify(p, s).ok);
}

// Random strictly feasible and dual-feasible program: F0 = -Σ x0_k F_k + S0 with
// S0 ≻ 0 and c = Fᵀ(Z0) with Z0 ≻ 0.
ConicProgram random_program(std::mt19937_64& rng, int nv, std::vector<int> sides, int lp) {
  std::normal_distribution<double> g;
  ConicProgram p(nv);
  Vector x0(nv);
  for (int k = 0; k < nv; ++k) x0(k) = g(rng);
  std::vector<Matrix> z0;
  for (int side : sides) {
    ConeBlock b = ConeBlock::psd(side);
    for (int k = 0; k < nv; ++k) {
      Matrix a(side, side);
      for (int i = 0; i < side; ++i)
        for (int j = 0; j < side; ++j) a(i, j) = g(rng);
      b.add(k, symmetrize(a));
    }
    Matrix r(side, side), q(side, side);
    for (int i = 0; i < side; ++i)
      for (int j = 0; j < side; ++j) {
        r(i, j) = g(rng);
        q(i, j) = g(rng);
      }
    const Matrix s0 = r * r.transpose() + Matrix::Identity(side, side);
    b.constant = s0;
    for (const auto& [v, c] : b.coeffs) b.constant -= x0(v) * c;
    b.constant = symmetrize(b.constant);
    z0.push_back(q * q.transpose() + Matrix::Identity(side, side));
    p.add_block(b);
  }
  if (lp > 0) {
    ConeBlock b = ConeBlock::nonneg(lp);
    for (int k = 0; k < nv; ++k) {
      Matrix a(lp, 1);
      for (int i = 0; i < lp; ++i) a(i, 0) = g(rng);
      b.add(k, a);
    }
    Matrix s0(lp, 1), zz(lp, 1);
    for (int i = 0; i < lp; ++i) {
      s0(i, 0) = 1.0 + std::abs(g(rng));
      zz(i, 0) = 1.0 + std::abs(g(rng));
    }
    b.constant = s0;
    for (const auto& [v, c] : b.coeffs) b.constant -= x0(v) * c;
    z0.push_back(zz);
    p.add_block(b);
  }
  for (size_t b = 0; b < p.blocks.size(); ++b)
    for (const auto& [v, c] : p.blocks[b].coeffs) p.cost(v) += c.cwiseProduct(z0[b]).sum();
  return p;
}

// KKT residuals recomputed from scratch, independent of solver internals.
struct Kkt {
  double primal_cone, dual_cone, stationarity, complementarity;
};

Kkt kkt(const ConicProgram& p, const ConicSolution& s) {
  Kkt k{0, 0, 0, 0};
  Vector fz = Vector::Zero(p.num_vars);
  for (size_t b = 0; b < p.blocks.size(); ++b) {
    const auto& blk = p.blocks[b];
    Matrix fx = blk.constant;
    for (const auto& [v, c] : blk.coeffs) {
      fx += s.x(v) * c;
      fz(v) += (c.array() * s.dual[b].array()).sum();
    }
    if (blk.kind == ConeKind::Psd) {
      Eigen::SelfAdjointEigenSolver<Matrix> e1(fx), e2(s.dual[b]);
      k.primal_cone = std::min(k.primal_cone, e1.eigenvalues()(0));
      k.dual_cone = std::min(k.dual_cone, e2.eigenvalues()(0));
    } else {
      k.primal_cone = std::min(k.primal_cone, fx.minCoeff());
      k.dual_cone = std::min(k.dual_cone, s.dual[b].minCoeff());
    }
    k.complementarity += (fx.array() * s.dual[b].array()).sum();
  }
  k.stationarity = (fz - p.cost).cwiseAbs().maxCoeff();
  return k;
}

TEST(SdpSolverTest, RandomStrictlyFeasibleProgramsSatisfyKkt) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const int nv = 2 + trial % 6;
    const auto p = random_program(rng, nv, {2 + trial % 3, 3 + trial % 4}, trial % 2 ? 4 : 0);
    const auto s = solve(p);
    ASSERT_EQ(s.status, SolveStatus::Optimal) << "trial " << trial;
    const auto k = kkt(p, s);
    const double scale = 1.0 + std::abs(s.primal_objective);
    EXPECT_GE(k.primal_cone, -1e-7 * scale) << trial;
    EXPECT_GE(k.dual_cone, -1e-7 * scale) << trial;
    EXPECT_LE(k.stationarity, 1e-7 * scale) << trial;
    EXPECT_LE(std::abs(k.complementarity), 1e-7 * scale) << trial;
    EXPECT_GE(s.primal_objective, s.dual_objective - 1e-7 * scale);
    EXPECT_TRUE(verify(p, s).ok);
  }
}

TEST(SdpSolverTest, BlockPermutationInvariance) {
  std::mt19937_64 rng(11);
  const auto p = random_program(rng, 4, {3, 2, 4}, 3);
  ConicProgram q = p;
  std::reverse(q.blocks.begin(), q.blocks.end());
  const auto a = solve(p);
  const auto b = solve(q);
  ASSERT_EQ(a.status, SolveStatus::Optimal);
  ASSERT_EQ(b.status, SolveStatus::Optimal);
  EXPECT_NEAR(a.primal_objective, b.primal_objective, 1e-6);
  EXPECT_LE((a.x - b.x).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(SdpSolverTest, Deterministic) {
  std::mt19937_64 rng(3);
  const auto p = random_program(rng, 5, {3, 3}, 2);
  const auto a = solve(p);
  const auto b = solve(p);
  EXPECT_EQ(a.status, b.status);
  EXPECT_EQ(a.primal_objective, b.primal_objective);
  EXPECT_EQ(a.iterations, b.iterations);
}

TEST(SdpSolverTest, TripletRoundTripPreservesSolution) {
  std::mt19937_64 rng(5);
  const auto p = random_program(rng, 3, {2, 3}, 2);
  std::stringstream ss;
  write_triplets(ss, p);
  const auto q = read_triplets(ss);
  const auto a = solve(p);
  const auto b = solve(q);
  ASSERT_EQ(a.status, SolveStatus::Optimal);
  EXPECT_EQ(a.primal_objective, b.primal_objective);
}

}  // namespace
}  // namespace reachbound
