#include <random>

#include <gtest/gtest.h>

#include "mgd/convex/prox.hpp"
#include "mgd/convex/qp.hpp"
#include "oracles.hpp"
#include "qp_check.hpp"

using namespace mgd;
using namespace mgd::convex;
using qp_check::from_dense;
using qp_check::kkt;

namespace {

QuadraticProgram scalar_qp(double p, double q, double lo, double hi) {
  QpBuilder b(1);
  b.add_quad(0, 0, p);
  b.add_linear(0, q);
  b.set_bounds(0, lo, hi);
  return b.build();
}

}  // namespace

TEST(SolveQp, ClippedUnconstrainedOptimum) {
  // (x-3)^2 = x^2 - 6x + 9 on [0, 2]
  auto qp = scalar_qp(2.0, -6.0, 0.0, 2.0);
  qp.constant = 9.0;
  const auto r = solve_qp(qp, 1e-6, 20000);
  ASSERT_TRUE(r.ok());
  EXPECT_NEAR(r.x[0], 2.0, 1e-9);
  EXPECT_NEAR(r.objective, 1.0, 1e-9);
}

TEST(SolveQp, StationaryPoint) {
  const auto r = solve_qp(scalar_qp(2.0, -2.0, -kInf, kInf), 1e-6, 20000);
  ASSERT_TRUE(r.ok());
  EXPECT_NEAR(r.x[0], 1.0, 1e-9);
  EXPECT_NEAR(r.objective, -1.0, 1e-9);
}

TEST(SolveQp, MatchesProjectedGradientOracle) {
  std::mt19937_64 rng(20240601);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 10);
    const int m = static_cast<int>(rng() % 11);
    const auto d = oracle::random_qp(rng, n, m);
    const auto ref = oracle::projected_gradient(d, 1e-8);
    ASSERT_LT(ref.residual, 1e-7);
    const auto r = solve_qp(from_dense(d), 1e-6, 20000);
    ASSERT_TRUE(r.ok()) << "trial " << trial << " " << to_string(r.status);
    EXPECT_LE(std::abs(r.objective - ref.objective), 1e-4 * std::max(1.0, std::abs(ref.objective))) << trial;
    const auto k = kkt(d, r);
    EXPECT_LE(k.stationarity, 1e-5) << trial;
    EXPECT_LE(k.feasibility, 1e-5) << trial;
    EXPECT_LE(k.complementarity, 1e-5) << trial;
  }
}

TEST(SolveQp, ResidualsWithinToleranceWhenOptimal) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    const auto d = oracle::random_qp(rng, 6, 6);
    const auto r = solve_qp(from_dense(d), 1e-6, 20000);
    ASSERT_TRUE(r.ok());
    EXPECT_LE(r.primal_residual, 1e-6);
    EXPECT_LE(r.dual_residual, 1e-6);
  }
}

TEST(SolveQp, ScalingLeavesArgminUnchanged) {
  std::mt19937_64 rng(11);
  const auto d = oracle::random_qp(rng, 5, 4);
  auto d2 = d;
  d2.P *= 250.0;
  d2.q *= 250.0;
  const auto r1 = solve_qp(from_dense(d), 1e-7, 20000);
  const auto r2 = solve_qp(from_dense(d2), 1e-7, 20000);
  ASSERT_TRUE(r1.ok() && r2.ok());
  EXPECT_LE((r1.x - r2.x).lpNorm<Eigen::Infinity>(), 1e-5);
}

TEST(SolveQp, ReturnedPointLiesInBox) {
  std::mt19937_64 rng(3);
  const auto d = oracle::random_qp(rng, 8, 6);
  const auto qp = from_dense(d);
  const auto r = solve_qp(qp, 1e-6, 20000);
  ASSERT_TRUE(r.ok());
  const Vector xp = project_box(r.x, qp.lo, qp.hi);
  EXPECT_LE(std::abs(qp.objective(xp) - r.objective), 1e-6);
}

TEST(SolveQp, DetectsPrimalInfeasibility) {
  // x >= 2 and x <= 1 through two rows
  QpBuilder b(1);
  b.add_quad(0, 0, 1.0);
  b.add_row({{0, 1.0}}, 2.0, kInf);
  b.add_row({{0, 1.0}}, -kInf, 1.0);
  const auto r = solve_qp(b.build(), 1e-6, 20000);
  EXPECT_EQ(r.status, SolveStatus::InfeasibleDetected);
  EXPECT_FALSE(r.ok());
}

TEST(SolveQp, DetectsUnboundedness) {
  QpBuilder b(2);
  b.add_quad(0, 0, 1.0);
  b.add_linear(1, -1.0);
  b.add_row({{0, 1.0}, {1, -1.0}}, -kInf, 1.0);
  const auto r = solve_qp(b.build(), 1e-6, 20000);
  EXPECT_EQ(r.status, SolveStatus::InfeasibleDetected);
}

TEST(SolveQp, RejectsMalformedProgram) {
  auto qp = scalar_qp(1.0, 0.0, 1.0, 0.0);
  EXPECT_THROW(solve_qp(qp), ConfigError);
}

QpSettings interior(double tol = 1e-6) {
  QpSettings st;
  st.method = QpMethod::InteriorPoint;
  st.tol = tol;
  return st;
}

TEST(InteriorPoint, MatchesProjectedGradientOracle) {
  std::mt19937_64 rng(20240602);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 10);
    const int m = static_cast<int>(rng() % 11);
    const auto d = oracle::random_qp(rng, n, m);
    const auto ref = oracle::projected_gradient(d, 1e-8);
    ASSERT_LT(ref.residual, 1e-7);
    const auto r = solve_qp_interior(from_dense(d), interior());
    ASSERT_TRUE(r.ok()) << "trial " << trial << " " << to_string(r.status);
    EXPECT_LE(std::abs(r.objective - ref.objective), 1e-4 * std::max(1.0, std::abs(ref.objective))) << trial;
    const auto k = kkt(d, r);
    EXPECT_LE(k.stationarity, 1e-5) << trial;
    EXPECT_LE(k.feasibility, 1e-5) << trial;
    EXPECT_LE(k.complementarity, 1e-5) << trial;
  }
}

TEST(InteriorPoint, HandlesEqualityRows) {
  // min x0^2 + x1^2 subject to x0 + x1 = 1
  QpBuilder b(2);
  b.add_quad(0, 0, 2.0);
  b.add_quad(1, 1, 2.0);
  b.add_row({{0, 1.0}, {1, 1.0}}, 1.0, 1.0);
  const auto r = solve_qp_interior(b.build(), interior(1e-9));
  ASSERT_TRUE(r.ok());
  EXPECT_NEAR(r.x[0], 0.5, 1e-7);
  EXPECT_NEAR(r.x[1], 0.5, 1e-7);
  EXPECT_NEAR(r.objective, 0.5, 1e-7);
}

TEST(InteriorPoint, FailsOnInfeasibleProgramAndFallbackReports) {
  QpBuilder b(1);
  b.add_quad(0, 0, 1.0);
  b.add_row({{0, 1.0}}, 2.0, kInf);
  b.add_row({{0, 1.0}}, -kInf, 1.0);
  const auto qp = b.build();
  EXPECT_FALSE(solve_qp_interior(qp, interior()).ok());
  EXPECT_EQ(solve_qp(qp, interior()).status, SolveStatus::InfeasibleDetected);
}

TEST(ProjectBox, Examples) {
  Vector a(1), lo(1), hi(1);
  a << 3;
  lo << 0;
  hi << 2;
  EXPECT_DOUBLE_EQ(project_box(a, lo, hi)[0], 2.0);
  Vector b(2), lo2(2), hi2(2);
  b << -5, 7;
  lo2 << 0, 0;
  hi2 << 1, 1;
  const Vector r = project_box(b, lo2, hi2);
  EXPECT_EQ(r[0], 0.0);
  EXPECT_EQ(r[1], 1.0);
  Vector c(2);
  c << 0.25, 0.75;
  EXPECT_EQ(project_box(c, lo2, hi2), c);
}

TEST(ProxStep, ZeroQueueIsProjectedGradientStep) {
  Box box{Vector::Constant(1, -10.0), Vector::Constant(1, 10.0)};
  AffineBlock g{Matrix::Ones(1, 1), Vector::Zero(1)};
  const Vector x = solve_prox_step(Vector::Constant(1, 2.0), Vector::Zero(1), 1.0, 1.0, g, box, Vector::Zero(1));
  EXPECT_NEAR(x[0], -1.0, 1e-12);
}

TEST(ProxStep, OneDimensionalHinge) {
  // minimize [x]_+ + (x-1)^2 -> 0.5
  Box box{Vector::Constant(1, -10.0), Vector::Constant(1, 10.0)};
  AffineBlock g{Matrix::Ones(1, 1), Vector::Zero(1)};
  const Vector x = solve_prox_step(Vector::Zero(1), Vector::Ones(1), 1.0, 1.0, g, box, Vector::Ones(1));
  EXPECT_NEAR(x[0], 0.5, 1e-9);
}

TEST(ProxStep, PureProximalTermKeepsIterate) {
  Box box{Vector::Constant(2, -1.0), Vector::Constant(2, 1.0)};
  AffineBlock g{Matrix::Zero(0, 2), Vector()};
  Vector xp(2);
  xp << 0.3, -0.7;
  EXPECT_EQ(solve_prox_step(Vector::Zero(2), Vector(), 0.5, 2.0, g, box, xp), xp);
}

TEST(ProxStep, RejectsIterateOutsideBox) {
  Box box{Vector::Constant(1, 0.0), Vector::Constant(1, 1.0)};
  AffineBlock g{Matrix::Ones(1, 1), Vector::Zero(1)};
  EXPECT_THROW(solve_prox_step(Vector::Zero(1), Vector::Ones(1), 1.0, 1.0, g, box, Vector::Constant(1, 2.0)),
               std::invalid_argument);
}

TEST(ProxStep, HugeQueueWeightActsAsHardConstraint) {
  // Large exact-penalty weight: minimizer is the projection onto x0 + x1 <= 1.
  Box box{Vector::Constant(2, -5.0), Vector::Constant(2, 5.0)};
  AffineBlock g{Matrix::Ones(1, 2), Vector::Constant(1, -1.0)};
  Vector xp(2);
  xp << 2.0, 1.0;
  const Vector x = solve_prox_step(Vector::Zero(2), Vector::Constant(1, 1e9), 1.0, 1.0, g, box, xp);
  EXPECT_NEAR(x[0], 1.0, 1e-7);
  EXPECT_NEAR(x[1], 0.0, 1e-7);
}
