#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "reachbound/policy.hpp"

namespace reachbound {
namespace {

QuadraticSet unit_control(int m, double rho) { return ellipsoid(Matrix::Identity(m, m), rho); }

double objective(const RbfSum& v, const TransitionKernel& k, const Vector& x, const Vector& u) {
  return expected_value(v, k.density(x, u));
}

TEST(PolicyTest, ProjectionExamples) {
  const Matrix q = Matrix::Identity(2, 2);
  const Vector inside = Vector::Constant(2, 0.01);
  EXPECT_EQ(project_ellipsoid(inside, q, 0.1), inside);
  const Vector out = project_ellipsoid((Vector(2) << 0.2, 0.0).finished(), q, 0.1);
  EXPECT_NEAR(out(0), 0.1, 1e-15);
  EXPECT_EQ(out(1), 0.0);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(0.0, 3.0);
  Matrix shape(2, 2);
  shape << 2.0, 0.3, 0.3, 0.5;
  for (int i = 0; i < 10000; ++i) {
    const Vector u = (Vector(2) << g(rng), g(rng)).finished();
    const Vector p = project_ellipsoid(u, shape, 0.1);
    EXPECT_LE(p.dot(shape * p), 0.01 + 1e-12);
  }
}

TEST(PolicyTest, StationaryOptimumAtZero) {
  const auto k = TransitionKernel::linear_gaussian(Matrix::Identity(1, 1), Matrix::Identity(1, 1),
                                                   0.01 * Matrix::Identity(1, 1));
  const Vector x = Vector::Constant(1, 0.3);
  const RbfSum v({RbfTerm(1.0, x, 0.02 * Matrix::Identity(1, 1))});
  std::mt19937_64 rng(2);
  const auto a = act_newton(v, k, unit_control(1, 0.1), x, PolicyConfig{}, rng);
  EXPECT_NEAR(a.control(0), 0.0, 1e-8);
}

TEST(PolicyTest, ObjectiveMatchesKernelExpectation) {
  std::vector<TransitionKernel::Component> comps = {
      {0.3, Matrix::Identity(2, 2), Matrix::Identity(2, 2), Vector::Constant(2, 0.02), SpdMatrix(0.01 * Matrix::Identity(2, 2))},
      {0.7, 0.9 * Matrix::Identity(2, 2), Matrix::Identity(2, 2), Vector::Zero(2), SpdMatrix(0.02 * Matrix::Identity(2, 2))}};
  const TransitionKernel k(2, 2, comps);
  const RbfSum v({RbfTerm(0.4, Vector::Constant(2, 0.1), 0.05 * Matrix::Identity(2, 2)),
                  RbfTerm(0.2, Vector::Constant(2, -0.2), 0.03 * Matrix::Identity(2, 2))});
  std::mt19937_64 rng(3);
  const Vector x = (Vector(2) << 0.3, -0.1).finished();
  const auto a = act_newton(v, k, unit_control(2, 0.1), x, PolicyConfig{}, rng);
  EXPECT_NEAR(a.objective, objective(v, k, x, a.control), 1e-10 * objective(v, k, x, a.control));
  EXPECT_LE(a.control.squaredNorm(), 0.01 + 1e-12);
}

TEST(PolicyTest, NewtonMatchesDenseLineSearch) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const double a = 0.5 + 0.5 * std::abs(unif(rng));
    const double b = unif(rng);
    const auto k = TransitionKernel::linear_gaussian(Matrix::Constant(1, 1, a), Matrix::Constant(1, 1, b),
                                                     0.001 * Matrix::Identity(1, 1));
    std::vector<RbfTerm> terms;
    for (int i = 0; i < 3; ++i)
      terms.emplace_back(0.01 + std::abs(unif(rng)), Vector::Constant(1, 0.3 * unif(rng)),
                         Matrix::Constant(1, 1, 0.001 + 0.01 * std::abs(unif(rng))));
    const RbfSum v(terms);
    const Vector x = Vector::Constant(1, 0.5 * unif(rng));
    const auto act = act_newton(v, k, unit_control(1, 0.1), x, PolicyConfig{}, rng);
    EXPECT_LE(std::abs(act.control(0)), 0.1);
    double oracle = 0.0;
    for (int i = 0; i <= 10000; ++i) oracle = std::max(oracle, objective(v, k, x, Vector::Constant(1, -0.1 + 2e-5 * i)));
    EXPECT_GE(act.objective, oracle - 1e-6) << "trial " << trial;
  }
}

TEST(PolicyTest, MultistartEscapesPoorBasin) {
  const auto k = TransitionKernel::linear_gaussian(Matrix::Identity(1, 1), Matrix::Identity(1, 1),
                                                   1e-4 * Matrix::Identity(1, 1));
  const RbfSum v({RbfTerm(0.2, Vector::Constant(1, -0.02), 1e-4 * Matrix::Identity(1, 1)),
                  RbfTerm(1.0, Vector::Constant(1, 0.08), 1e-4 * Matrix::Identity(1, 1))});
  const Vector x = Vector::Zero(1);
  PolicyConfig single;
  single.multistart = 1;
  std::mt19937_64 r1(5), r2(5);
  const auto one = act_newton(v, k, unit_control(1, 0.1), x, single, r1);
  const auto many = act_newton(v, k, unit_control(1, 0.1), x, PolicyConfig{}, r2);
  EXPECT_LT(one.control(0), 0.0);
  EXPECT_NEAR(many.control(0), 0.08, 1e-3);
  EXPECT_GT(many.objective, 2.0 * one.objective);
}

TEST(PolicyTest, NewtonIsDeterministicForSeed) {
  const auto k = TransitionKernel::linear_gaussian(Matrix::Identity(2, 2), Matrix::Identity(2, 2),
                                                   0.001 * Matrix::Identity(2, 2));
  const RbfSum v({RbfTerm(1.0, Vector::Constant(2, 0.05), 0.01 * Matrix::Identity(2, 2))});
  std::mt19937_64 r1(9), r2(9);
  const Vector x = Vector::Constant(2, 0.2);
  EXPECT_EQ(act_newton(v, k, unit_control(2, 0.1), x, PolicyConfig{}, r1).control,
            act_newton(v, k, unit_control(2, 0.1), x, PolicyConfig{}, r2).control);
}

TEST(PolicyTest, GridAgreesWithNewtonInOneDimension) {
  const auto k = TransitionKernel::linear_gaussian(Matrix::Identity(1, 1), Matrix::Identity(1, 1),
                                                   0.001 * Matrix::Identity(1, 1));
  const RbfSum v({RbfTerm(1.0, Vector::Constant(1, 0.0), 0.002 * Matrix::Identity(1, 1))});
  const Vector x = Vector::Constant(1, 0.13);
  std::mt19937_64 rng(6);
  const auto newton = act_newton(v, k, unit_control(1, 0.1), x, PolicyConfig{}, rng);
  const auto grid = act_grid(v, k, unit_control(1, 0.1), x, PolicyConfig{});
  EXPECT_GE(newton.objective, grid.objective - 1e-12);
  // Lipschitz slack for a spacing of 0.2/19.
  const auto d = grad_hess_u(v, k, x, grid.control);
  EXPECT_LE(newton.objective - grid.objective, std::abs(d.gradient(0)) * 0.2 / 19 + 1e-3);
}

TEST(PolicyTest, GridConstantObjectivePicksFirstFeasibleNode) {
  const auto k = TransitionKernel::linear_gaussian(Matrix::Identity(2, 2), Matrix::Zero(2, 2),
                                                   0.001 * Matrix::Identity(2, 2));
  const RbfSum v({RbfTerm(1.0, Vector::Zero(2), 0.01 * Matrix::Identity(2, 2))});
  const auto nodes = control_grid(unit_control(2, 0.1), 20, 1000000);
  const auto a = act_grid(v, k, nodes, Vector::Constant(2, 0.1));
  EXPECT_EQ(a.control, nodes.front());
}

QuadraticSet square(double r) {
  std::vector<QuadraticForm> forms;
  for (int i = 0; i < 2; ++i) {
    Matrix m = Matrix::Zero(3, 3);
    m(i, i) = -1.0;
    m(2, 2) = r * r;
    forms.emplace_back(m);
  }
  return QuadraticSet(forms);
}

TEST(PolicyTest, GridCountsEvaluations) {
  const auto k = TransitionKernel::linear_gaussian(Matrix::Identity(2, 2), Matrix::Identity(2, 2),
                                                   0.001 * Matrix::Identity(2, 2));
  const RbfSum v({RbfTerm(1.0, Vector::Zero(2), 0.01 * Matrix::Identity(2, 2))});
  const auto a = act_grid(v, k, square(0.1), Vector::Zero(2), PolicyConfig{});
  EXPECT_EQ(a.evaluations, 400);
  const auto disk = act_grid(v, k, unit_control(2, 0.1), Vector::Zero(2), PolicyConfig{});
  EXPECT_LT(disk.evaluations, 400);
  EXPECT_EQ(disk.evaluations, static_cast<long long>(control_grid(unit_control(2, 0.1), 20, 1000000).size()));
  EXPECT_THROW(control_grid(unit_control(3, 1.0), 20, 7999), std::invalid_argument);
}

TEST(PolicyTest, GridAllInfeasibleThrows) {
  // A single node at the box centre, excluded by a halfspace.
  const QuadraticSet s = intersect(ellipsoid(Matrix::Identity(1, 1), 1.0), halfspace(Vector::Constant(1, -1.0), -0.5));
  EXPECT_THROW(control_grid(s, 1, 100), std::invalid_argument);
}

TEST(PolicyTest, BoundPolicyFlagsStatesOutsideRing) {
  const auto p = ball_problem(Matrix::Identity(1, 1), Matrix::Identity(1, 1), 0.001 * Matrix::Identity(1, 1), 0.1, 1.0,
                              0.1, 1);
  ValueBoundSequence seq;
  seq.values = {ValueBound::constant_value(1, 1.0),
                ValueBound::rbf(RbfSum({RbfTerm(0.1, Vector::Zero(1), 0.001 * Matrix::Identity(1, 1))}))};
  seq.steps.resize(1);
  const BoundPolicy pol(p, seq, PolicyConfig{});
  std::mt19937_64 rng(7);
  const auto outside = pol.act(0, Vector::Constant(1, 2.0), rng);
  EXPECT_TRUE(outside.undefined_state);
  EXPECT_EQ(outside.control(0), 0.0);
  const auto ring_state = pol.act(0, Vector::Constant(1, 0.15), rng);
  EXPECT_FALSE(ring_state.undefined_state);
  EXPECT_NEAR(ring_state.control(0), -0.1, 1e-9);
}

TEST(PolicyTest, ConfigValidation) {
  PolicyConfig c;
  c.multistart = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = PolicyConfig{};
  c.gradient_tolerance = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  EXPECT_EQ(parse_policy_mode("control-grid"), PolicyMode::ControlGrid);
  EXPECT_THROW(parse_policy_mode("bogus"), std::invalid_argument);
}

}  // namespace
}  // namespace reachbound
