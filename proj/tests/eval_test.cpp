#include <cmath>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "reachbound/eval.hpp"

namespace reachbound {
namespace {

ReachAvoidProblem scalar_problem(int horizon, double noise = 0.001) {
  return ball_problem(Matrix::Identity(1, 1), Matrix::Identity(1, 1), noise * Matrix::Identity(1, 1), 0.1, 1.0, 0.1,
                      horizon);
}

Controller constant_control(double u) {
  return [u](int, const Vector&, std::mt19937_64&) { return Vector::Constant(1, u); };
}

TEST(EvalTest, DeterministicLimitOfSampling) {
  Matrix a(2, 2);
  a << 0.5, 0.1, 0.0, 0.8;
  const auto k = TransitionKernel::linear_gaussian(a, Matrix::Identity(2, 2), 1e-12 * Matrix::Identity(2, 2));
  std::mt19937_64 rng(1);
  const Vector x = Vector::Constant(2, 0.4);
  const Vector u = Vector::Constant(2, -0.1);
  EXPECT_LE((sample_next(k, x, u, rng) - (a * x + u)).norm(), 1e-5);
}

TEST(EvalTest, SampleMomentsMatchKernel) {
  Matrix cov(2, 2);
  cov << 0.04, 0.01, 0.01, 0.02;
  const auto k = TransitionKernel::linear_gaussian(Matrix::Identity(2, 2), Matrix::Identity(2, 2), cov);
  std::mt19937_64 rng(2);
  const int n = 100000;
  const Vector x = Vector::Constant(2, 0.3);
  const Vector u = Vector::Constant(2, 0.05);
  Vector sum = Vector::Zero(2);
  Matrix sq = Matrix::Zero(2, 2);
  for (int i = 0; i < n; ++i) {
    const Vector d = sample_next(k, x, u, rng) - (x + u);
    sum += d;
    sq += d * d.transpose();
  }
  const Vector mean = sum / n;
  for (int i = 0; i < 2; ++i) EXPECT_LE(std::abs(mean(i)), 4.0 * std::sqrt(cov(i, i) / n));
  const Matrix emp = sq / n - mean * mean.transpose();
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      EXPECT_LE(std::abs(emp(i, j) - cov(i, j)), 4.0 * std::sqrt((cov(i, i) * cov(j, j) + cov(i, j) * cov(i, j)) / n));
}

TEST(EvalTest, MixtureSelectionFollowsWeights) {
  std::vector<TransitionKernel::Component> comps = {
      {0.25, Matrix::Identity(1, 1), Matrix::Identity(1, 1), Vector::Constant(1, -5.0), SpdMatrix(1e-6 * Matrix::Identity(1, 1))},
      {0.75, Matrix::Identity(1, 1), Matrix::Identity(1, 1), Vector::Constant(1, 5.0), SpdMatrix(1e-6 * Matrix::Identity(1, 1))}};
  const TransitionKernel k(1, 1, comps);
  std::mt19937_64 rng(3);
  int low = 0;
  const int n = 40000;
  for (int i = 0; i < n; ++i) low += sample_next(k, Vector::Zero(1), Vector::Zero(1), rng)(0) < 0.0;
  EXPECT_NEAR(static_cast<double>(low) / n, 0.25, 4.0 * std::sqrt(0.25 * 0.75 / n));
}

TEST(EvalTest, RolloutConventions) {
  const auto p = scalar_problem(5);
  std::mt19937_64 rng(4);
  const auto in_k = rollout(p, constant_control(0.1), Vector::Constant(1, 0.05), rng);
  EXPECT_TRUE(in_k.success);
  EXPECT_EQ(in_k.hitting_time.value(), 0);
  EXPECT_EQ(in_k.reason, ExitReason::ReachedTarget);
  const auto outside = rollout(p, constant_control(0.0), Vector::Constant(1, 1.5), rng);
  EXPECT_FALSE(outside.success);
  EXPECT_EQ(outside.reason, ExitReason::LeftSafe);
  EXPECT_FALSE(outside.hitting_time.has_value());
  EXPECT_EQ(empirical_success(p, constant_control(0.0), Vector::Constant(1, 0.0), 100, rng).rate, 1.0);
  EXPECT_EQ(empirical_success(p, constant_control(0.0), Vector::Constant(1, -2.0), 100, rng).rate, 0.0);
}

TEST(EvalTest, RolloutSuccessRequiresStayingSafe) {
  // Leaves K' at t=1 before it could drift into K at t=2.
  auto p = scalar_problem(3, 1e-12);
  p.kernel = TransitionKernel::linear_gaussian(Matrix::Constant(1, 1, -1.0), Matrix::Identity(1, 1),
                                               1e-12 * Matrix::Identity(1, 1));
  Controller ctrl = [](int k, const Vector&, std::mt19937_64&) { return Vector::Constant(1, k == 0 ? -0.1 : 0.0); };
  std::mt19937_64 rng(5);
  const auto out = rollout(p, ctrl, Vector::Constant(1, 0.95), rng, true);
  EXPECT_FALSE(out.success);
  EXPECT_EQ(out.reason, ExitReason::LeftSafe);
  EXPECT_EQ(out.path.size(), 2u);
}

TEST(EvalTest, OneStepSuccessMatchesNormalCdf) {
  const auto p = scalar_problem(1, 0.01);
  const double x0 = 0.2, u = -0.1, sd = 0.1;
  const double mean = x0 + u;
  auto cdf = [](double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); };
  const double truth = cdf((0.1 - mean) / sd) - cdf((-0.1 - mean) / sd);
  std::mt19937_64 rng(6);
  const auto est = empirical_success(p, constant_control(u), Vector::Constant(1, x0), 100000, rng);
  EXPECT_NEAR(est.rate, truth, 3.0 * std::sqrt(truth * (1 - truth) / 100000));
}

TEST(EvalTest, RateStabilizesWithMoreTrajectories) {
  const auto p = scalar_problem(3, 0.01);
  std::mt19937_64 rng(7);
  const auto small = empirical_success(p, constant_control(-0.05), Vector::Constant(1, 0.3), 2000, rng);
  const auto big = empirical_success(p, constant_control(-0.05), Vector::Constant(1, 0.3), 20000, rng);
  EXPECT_NEAR(small.rate, big.rate, 3.0 * std::hypot(small.std_error, big.std_error));
}

TEST(EvalTest, LqgScalarHandComputation) {
  const auto g = lqg_gains(Matrix::Constant(1, 1, 0.5), Matrix::Constant(1, 1, 1.0), Matrix::Identity(1, 1),
                           Matrix::Identity(1, 1), 1);
  ASSERT_EQ(g.size(), 1u);
  EXPECT_NEAR(g[0](0, 0), 0.25, 1e-15);
  const auto zero = lqg_gains(Matrix::Identity(2, 2), Matrix::Zero(2, 1), Matrix::Identity(2, 2),
                              Matrix::Identity(1, 1), 4);
  for (const auto& k : zero) EXPECT_EQ(k.norm(), 0.0);
  EXPECT_THROW(lqg_gains(Matrix::Identity(1, 1), Matrix::Zero(1, 1), Matrix::Identity(1, 1),
                         Matrix::Zero(1, 1), 1),
               std::runtime_error);
}

TEST(EvalTest, LqgGainsConvergeToRiccatiFixedPoint) {
  Matrix a(2, 2), b(2, 1);
  a << 0.9, 0.3, -0.2, 0.7;
  b << 0.0, 1.0;
  const Matrix q = Matrix::Identity(2, 2), r = Matrix::Identity(1, 1);
  const auto g = lqg_gains(a, b, q, r, 400);
  Matrix pmat = q;
  for (int i = 0; i < 5000; ++i) {
    const Matrix k = (r + b.transpose() * pmat * b).inverse() * b.transpose() * pmat * a;
    pmat = q + a.transpose() * pmat * a - a.transpose() * pmat * b * k;
  }
  const Matrix kinf = (r + b.transpose() * pmat * b).inverse() * b.transpose() * pmat * a;
  EXPECT_LE((g.front() - kinf).norm(), 1e-10);
}

TEST(EvalTest, LqgControllerProjectsOntoControlSet) {
  const auto p = ball_problem(Matrix::Identity(2, 2), Matrix::Identity(2, 2), 0.001 * Matrix::Identity(2, 2), 0.1,
                              1.0, 0.1, 3);
  const auto ctrl = lqg_controller(p);
  std::mt19937_64 rng(8);
  EXPECT_EQ(ctrl(0, Vector::Zero(2), rng).norm(), 0.0);
  EXPECT_NEAR(ctrl(0, Vector::Constant(2, 5.0), rng).norm(), 0.1, 1e-12);
  const auto w = lqg_weights(p);
  EXPECT_NEAR(w.q(0, 0), 100.0, 1e-9);
  EXPECT_NEAR(w.r(1, 1), 100.0, 1e-9);
}

TEST(EvalTest, RandomStableSystemProperties) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto sys = random_stable_system(3, 2, s, 0.001 * Matrix::Identity(3, 3));
    EXPECT_LE(sys.spectral_radius, 0.9 + 1e-12);
    EXPECT_EQ(sys.controllability_rank, 3);
    Matrix c(3, 6);
    c << sys.b, sys.a * sys.b, sys.a * sys.a * sys.b;
    EXPECT_GT(Eigen::JacobiSVD<Matrix>(c).singularValues()(2), 1e-8);
  }
  const auto a = random_stable_system(3, 3, 42, 0.001 * Matrix::Identity(3, 3));
  const auto b = random_stable_system(3, 3, 42, 0.001 * Matrix::Identity(3, 3));
  EXPECT_EQ(a.a, b.a);
  EXPECT_EQ(a.b, b.b);
}

TEST(EvalTest, ControllabilityRankOfDeficientPair) {
  EXPECT_EQ(controllability_rank(Matrix::Identity(2, 2), (Matrix(2, 1) << 1.0, 0.0).finished()), 1);
}

TEST(EvalTest, SelfComparisonIsExactlyZero) {
  const auto p = scalar_problem(5);
  const auto lqg = lqg_controller(p);
  CompareOptions opt;
  opt.n_init = 20;
  opt.n_traj = 30;
  const auto rep = compare(p, lqg, lqg, opt, 11);
  ASSERT_EQ(rep.rows.size(), 20u);
  for (const auto& r : rep.rows) {
    EXPECT_EQ(r.diff(), 0.0);
    EXPECT_GE(r.rate_b, opt.reject_threshold);
    EXPECT_TRUE(p.in_xbar(r.x0));
  }
  EXPECT_EQ(rep.mean_diff(), 0.0);
  EXPECT_EQ(rep.candidates, 20 + rep.rejected);
}

TEST(EvalTest, ComparisonDeterministicAcrossThreadCounts) {
  const auto p = scalar_problem(4);
  const auto lqg = lqg_controller(p);
  const auto zero = constant_control(0.0);
  CompareOptions opt;
  opt.n_init = 15;
  opt.n_traj = 20;
  const auto serial = compare(p, zero, lqg, opt, 5);
  opt.threads = 4;
  const auto parallel = compare(p, zero, lqg, opt, 5);
  std::ostringstream a, b;
  write_comparison_csv(a, serial);
  write_comparison_summary(a, serial);
  write_comparison_csv(b, parallel);
  write_comparison_summary(b, parallel);
  EXPECT_EQ(a.str(), b.str());
  EXPECT_LT(serial.mean_diff(), 0.0);
}

TEST(EvalTest, ComparisonRejectsHopelessBaseline) {
  const auto p = scalar_problem(2);
  const auto away = constant_control(0.1);
  CompareOptions opt;
  opt.n_init = 5;
  opt.n_traj = 10;
  opt.reject_threshold = 1.0;
  opt.max_candidate_factor = 2;
  EXPECT_THROW(compare(p, away, away, opt, 1), TooManyRejections);
  opt = CompareOptions{};
  opt.n_traj = 0;
  EXPECT_THROW(compare(p, away, away, opt, 1), std::invalid_argument);
}

TEST(EvalTest, ReportFormats) {
  ComparisonReport r;
  r.label_a = "sdp";
  r.label_b = "lqg";
  r.rows = {{0, Vector::Constant(1, 0.5), 0.75, 0.5}, {3, Vector::Constant(1, -0.25), 0.5, 0.5}};
  r.n_traj = 4;
  std::ostringstream csv;
  write_comparison_csv(csv, r);
  EXPECT_EQ(csv.str(), "index,x1,rate_sdp,rate_lqg,diff\n0,0.5,0.75,0.5,0.25\n3,-0.25,0.5,0.5,0\n");
  std::ostringstream sum;
  write_comparison_summary(sum, r);
  EXPECT_NE(sum.str().find("mean_diff,0.125\n"), std::string::npos);
  EXPECT_NE(sum.str().find("std_error,0.125\n"), std::string::npos);
}

TEST(EvalTest, ValueSliceColumns) {
  const Grid g{Vector::Constant(1, -1.0), Vector::Constant(1, 1.0), {3}};
  const ValueBound v = ValueBound::constant_value(1, 2.0);
  const std::vector<double> table = {0.0, 0.5, 1.0};
  std::ostringstream os;
  write_value_slice(os, g, v, &g, &table);
  EXPECT_EQ(os.str(), "x1,vhat,vhat_saturated,vgrid\n-1,2,1,0\n0,2,1,0.5\n1,2,1,1\n");
}

TEST(EvalTest, SeedDerivationSeparatesLabels) {
  EXPECT_NE(derive_seed(1, {0}), derive_seed(1, {1}));
  EXPECT_NE(derive_seed(1, {0, 1}), derive_seed(1, {1, 0}));
  EXPECT_EQ(derive_seed(7, {3, 4}), derive_seed(7, {3, 4}));
}

}  // namespace
}  // namespace reachbound
