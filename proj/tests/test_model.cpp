#include <gtest/gtest.h>

#include <random>

#include "support.hpp"

namespace poddp {
namespace {

TEST(NumericalJacobian, LinearFunctionIsExact) {
  std::mt19937_64 rng(1);
  Matrix A(3, 4);
  for (int i = 0; i < 3; ++i) A.row(i) = testing::random_vector(4, rng, -3.0, 3.0).transpose();
  const Vector p = testing::random_vector(4, rng, -10.0, 10.0);
  const Matrix J = numerical_jacobian([&](const Vector& x) { return Vector(A * x); }, p);
  EXPECT_LT((J - A).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(NumericalJacobian, IdentityFunction) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    const Vector p = testing::random_vector(5, rng, -100.0, 100.0);
    const Matrix J = numerical_jacobian([](const Vector& x) { return x; }, p);
    EXPECT_LT((J - Matrix::Identity(5, 5)).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(NumericalJacobian, NonFiniteEvaluationReportsCoordinate) {
  auto f = [](const Vector& x) {
    Vector out(1);
    out(0) = x(0) + std::sqrt(-x(2));
    return out;
  };
  Vector p(3);
  p << 1.0, 1.0, 0.0;
  try {
    numerical_jacobian(f, p);
    FAIL() << "expected DifferentiationFailure";
  } catch (const DifferentiationFailure& e) {
    EXPECT_EQ(e.coordinate(), 2);
  }
}

TEST(NumericalJacobian, BicycleMatchesAnalytic) {
  const BicycleParams bp{2.5, 30.0};
  Vector x(4);
  x << 0.0, 0.0, 0.0, 10.0;
  const Vector u = Vector::Zero(2);
  Vector xu(6);
  xu << x, u;
  const Matrix J = numerical_jacobian(
      [&](const Vector& p) { return bicycle_step(p.head(4), p.tail(2), 0.1, bp); }, xu);
  // Hand-differentiated update at theta = 0, steer = 0.
  Matrix A = Matrix::Identity(4, 4);
  A(1, 2) = 10.0 * 0.1;
  A(0, 3) = 0.1;
  Matrix B = Matrix::Zero(4, 2);
  B(2, 0) = (10.0 / 2.5) * 0.1;
  B(3, 1) = 0.1;
  EXPECT_LT((J.leftCols(4) - A).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LT((J.rightCols(2) - B).cwiseAbs().maxCoeff(), 1e-6);
  const auto [Aa, Ba] = bicycle_jacobian(x, u, 0.1, bp);
  EXPECT_LT((Aa - A).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT((Ba - B).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(DerivativeBundle, QuadraticCostIsExact) {
  const auto p = testing::make_lq(4, 2, 3);
  ProblemModel m = testing::lq_model(p);
  std::mt19937_64 rng(4);
  const Vector x = testing::random_vector(4, rng, -5.0, 5.0);
  const Vector u = testing::random_vector(2, rng, -5.0, 5.0);

  // Hessians from value-only costs are nested differences and carry round-off
  // of order eps |l| / h^2.
  for (bool analytic : {true, false}) {
    if (!analytic) {
      m.running_cost_gradient = nullptr;
      m.dynamics_jacobian = nullptr;
    }
    const double hess_tol = analytic ? 1e-8 : 1e-5;
    const DerivativeBundle d = derivative_bundle(m, x, u, 0);
    EXPECT_LT((d.l_x - p.Q * x).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LT((d.l_u - p.R * u).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LT((d.l_xx - p.Q).cwiseAbs().maxCoeff(), hess_tol);
    EXPECT_LT((d.l_uu - p.R).cwiseAbs().maxCoeff(), hess_tol);
    EXPECT_LT(d.l_xu.cwiseAbs().maxCoeff(), hess_tol);
    EXPECT_LT((d.f_x - p.A).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LT((d.f_u - p.B).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(DerivativeBundle, LatentIndependentDynamicsGiveIdenticalJacobians) {
  const ProblemModel m = make_scenario("tmaze").model;
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Vector x(4);
    x << testing::random_vector(2, rng, -3.0, 3.0), testing::random_vector(1, rng, 0.5, 2.5),
        testing::random_vector(1, rng, 0.5, 5.0);
    const Vector u = testing::random_vector(2, rng, -0.5, 0.5);
    const DerivativeBundle a = derivative_bundle(m, x, u, 0);
    const DerivativeBundle b = derivative_bundle(m, x, u, 1);
    EXPECT_EQ(a.f_x, b.f_x);
    EXPECT_EQ(a.f_u, b.f_u);
  }
}

TEST(DerivativeBundle, TMazeCenterlineHasNoLateralGradientUnderEqualWeights) {
  const ProblemModel m = make_scenario("tmaze").model;
  Vector x(4);
  x << 0.0, 3.0, std::numbers::pi / 2, 2.0;
  const Vector u = Vector::Zero(2);
  const DerivativeBundle left = derivative_bundle(m, x, u, 0);
  const DerivativeBundle right = derivative_bundle(m, x, u, 1);
  EXPECT_NEAR(0.5 * left.l_x(0) + 0.5 * right.l_x(0), 0.0, 1e-12);
  EXPECT_NEAR(left.l_x(0), -right.l_x(0), 1e-12);
}

TEST(DerivativeBundle, DimensionMismatchThrows) {
  const ProblemModel m = make_scenario("tmaze").model;
  EXPECT_THROW(derivative_bundle(m, Vector::Zero(3), Vector::Zero(2), 0), InvalidArgument);
}

// Points inside each scenario's operating box, away from the speed clamp.
Vector operating_state(const std::string& experiment, std::mt19937_64& rng) {
  Vector x;
  if (experiment == "lanechange") {
    x.resize(6);
    x << testing::random_vector(1, rng, -5.0, 40.0), testing::random_vector(1, rng, -0.5, 4.0),
        testing::random_vector(1, rng, -0.4, 0.4), testing::random_vector(1, rng, 3.0, 15.0),
        testing::random_vector(1, rng, -5.0, 40.0), testing::random_vector(1, rng, 3.0, 15.0);
  } else {
    x.resize(4);
    x << testing::random_vector(1, rng, -5.0, 5.0), testing::random_vector(1, rng, 0.0, 12.0),
        testing::random_vector(1, rng, 0.6, 2.5), testing::random_vector(1, rng, 1.0, 15.0);
  }
  return x;
}

Vector operating_control(std::mt19937_64& rng) {
  Vector u(2);
  u << testing::random_vector(1, rng, -0.5, 0.5), testing::random_vector(1, rng, -5.0, 5.0);
  return u;
}

TEST(DerivativeBundle, AnalyticMatchesNumericalOnScenarios) {
  for (const auto& name : experiment_names()) {
    const ProblemModel m = make_scenario(name).model;
    ProblemModel numeric = m;
    numeric.dynamics_jacobian = nullptr;
    numeric.observation_jacobian = nullptr;
    numeric.running_cost_gradient = nullptr;
    numeric.final_cost_gradient = nullptr;
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 100; ++trial) {
      const Vector x = operating_state(name, rng);
      const Vector u = operating_control(rng);
      const int z = trial % 2;
      const DerivativeBundle a = derivative_bundle(m, x, u, z);
      const DerivativeBundle n = derivative_bundle(numeric, x, u, z);
      EXPECT_LT(testing::relative_error(a.f_x, n.f_x), 1e-4) << name;
      EXPECT_LT(testing::relative_error(a.f_u, n.f_u), 1e-4) << name;
      EXPECT_LT(testing::relative_error(a.l_x, n.l_x, 1e-6), 1e-4) << name;
      EXPECT_LT(testing::relative_error(a.l_u, n.l_u, 1e-6), 1e-4) << name;
      EXPECT_LT(testing::relative_error(a.l_xx, n.l_xx, 1e-3), 1e-4) << name;
      EXPECT_LT(testing::relative_error(a.l_uu, n.l_uu, 1e-3), 1e-4) << name;
      const FinalCostDerivatives fa = final_cost_derivatives(m, x, z);
      const FinalCostDerivatives fn = final_cost_derivatives(numeric, x, z);
      EXPECT_LT(testing::relative_error(fa.lf_x, fn.lf_x, 1e-6), 1e-4) << name;
      EXPECT_LT(testing::relative_error(fa.lf_xx, fn.lf_xx, 1e-3), 1e-4) << name;
    }
  }
}

TEST(DerivativeBundle, HessiansSymmetricAndDeterministic) {
  for (const auto& name : experiment_names()) {
    const ProblemModel m = make_scenario(name).model;
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 10; ++trial) {
      const Vector x = operating_state(name, rng);
      const Vector u = operating_control(rng);
      const DerivativeBundle a = derivative_bundle(m, x, u, 1);
      const DerivativeBundle b = derivative_bundle(m, x, u, 1);
      EXPECT_EQ(a.l_xx, a.l_xx.transpose());
      EXPECT_EQ(a.l_uu, a.l_uu.transpose());
      EXPECT_EQ(a.f_x, b.f_x);
      EXPECT_EQ(a.f_u, b.f_u);
      EXPECT_EQ(a.g_x, b.g_x);
      EXPECT_EQ(a.l_x, b.l_x);
      EXPECT_EQ(a.l_xx, b.l_xx);
      EXPECT_EQ(a.l_xu, b.l_xu);
      EXPECT_EQ(a.l_uu, b.l_uu);
      EXPECT_EQ(a.l, b.l);
    }
  }
}

TEST(ProblemModel, ValidateRejectsIncompleteModels) {
  ProblemModel m = make_scenario("tmaze").model;
  m.dynamics_noise.pop_back();
  EXPECT_THROW(m.validate(), InvalidArgument);
  ProblemModel n = make_scenario("tmaze").model;
  n.final_cost = nullptr;
  EXPECT_THROW(n.validate(), InvalidArgument);
}

TEST(ProblemModel, ClampControl) {
  const ProblemModel m = make_scenario("tmaze").model;
  Vector u(2);
  u << 5.0, -50.0;
  const Vector c = m.clamp_control(u);
  EXPECT_EQ(c(0), m.control_upper(0));
  EXPECT_EQ(c(1), m.control_lower(1));
}

}  // namespace
}  // namespace poddp
