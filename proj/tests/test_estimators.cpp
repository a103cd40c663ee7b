#include <cmath>

#include <gtest/gtest.h>

#include "mingrad/estimators.hpp"
#include "oracles.hpp"

using namespace mingrad;

TEST(Reference, RidgeMatchesClosedForm) {
  const ProblemInstance p = make_ridge(10, 20, 0.1, 1);
  const Vector x = sample_outer_point(p, 1);
  const ReferenceGradient ref = require_converged(compute_reference(p, x, 1000000, 1e-12));
  EXPECT_LE((ref.z_ref - oracle::ridge_solution(p.D(), 0.1, x)).norm(), 1e-10);
  EXPECT_LE(oracle::rel(ref.g_star, oracle::ridge_value_gradient(p.D(), 0.1, x)), 1e-10);
}

TEST(Reference, LogisticMatchesNewtonSolution) {
  const ProblemInstance p = make_logistic(12, 8, 0.1, 2);
  const Vector x = sample_outer_point(p, 2);
  const ReferenceGradient ref = require_converged(compute_reference(p, x, 1000000, 1e-13));
  EXPECT_LE((ref.z_ref - oracle::logistic_newton(p.D(), 0.1, x)).norm(), 1e-11);
  EXPECT_LE(oracle::rel(ref.g_star, oracle::logistic_value_gradient(p.D(), 0.1, x)), 1e-10);
}

TEST(Reference, LeastPthIsAnalytic) {
  const ProblemInstance p = make_least_pth(4, 7, 4, 3);
  const Vector x = sample_outer_point(p, 3);
  const ReferenceGradient ref = compute_reference(p, x, 1, 0.0);
  EXPECT_EQ(ref.method, ReferenceMethod::Analytic);
  EXPECT_EQ(ref.g_star.norm(), 0.0);
  EXPECT_LE((x - p.D() * ref.z_ref).norm(), 1e-14);
}

TEST(Reference, EntropicOtMatchesValueFunctionDerivative) {
  const ProblemInstance p = make_entropic_ot(6, 5, 0.2, 4);
  const Vector x = sample_outer_point(p, 4);
  const ReferenceGradient ref = require_converged(compute_reference(p, x, 100000, 1e-13));
  auto ell = [&](const Vector& xx) {
    const ReferenceGradient r = compute_reference(p, xx, 100000, 1e-14);
    return p.value(r.z_ref, xx);
  };
  // the value function lives on the simplex: differentiate along centered directions
  for (Eigen::Index k = 0; k + 1 < x.size(); ++k) {
    Vector v = Vector::Zero(x.size());
    v(k) = 1.0;
    v(k + 1) = -1.0;
    EXPECT_NEAR(ref.g_star.dot(v), oracle::directional(ell, x, v, 1e-4), 1e-8);
  }
}

TEST(Reference, NotConvergedIsReported) {
  const ProblemInstance p = make_ridge(10, 20, 0.01, 1);
  const Vector x = sample_outer_point(p, 1);
  const ReferenceGradient ref = compute_reference(p, x, 3, 1e-12);
  EXPECT_FALSE(ref.converged);
  EXPECT_EQ(ref.T_ref, 3u);
  EXPECT_THROW(require_converged(ref), NotConverged);
  EXPECT_THROW(compute_reference(p, x, 0, 1e-12), InvalidArgument);
}

TEST(Estimators, AnalyticIsExactAtTheSolution) {
  const ProblemInstance p = make_ridge(6, 9, 0.3, 5);
  const Vector x = sample_outer_point(p, 5);
  SolverState s = initial_state(p);
  s.z = oracle::ridge_solution(p.D(), 0.3, x);
  EXPECT_LE(oracle::rel(estimate_g1(s, p, x).g, oracle::ridge_value_gradient(p.D(), 0.3, x)), 1e-12);
}

TEST(Estimators, ImplicitIsExactAtEveryIterateForRidge) {
  const ProblemInstance p = make_ridge(6, 9, 0.3, 5);
  const Vector x = sample_outer_point(p, 5);
  const Vector want = oracle::ridge_value_gradient(p.D(), 0.3, x);
  const InnerRun run = run_inner(p, x, gd_config(p, x, 5));
  for (const SolverState& s : run.states) EXPECT_LE(oracle::rel(estimate_g3(s, p, x).g, want), 1e-10);
}

TEST(Estimators, AutomaticIsDerivativeOfTruncatedObjective) {
  for (ProblemInstance p : {make_ridge(5, 7, 0.1, 6), make_logistic(5, 7, 0.1, 6), make_least_pth(3, 5, 4, 6)}) {
    SCOPED_TRACE(to_string(p.kind()));
    const Vector x = sample_outer_point(p, 6);
    const InnerConfig cfg = gd_config(p, x, 20);
    const Vector g2 = estimate_g2(advance_to(p, x, cfg), p, x).g;
    const Vector fd =
        oracle::gradient([&](const Vector& xx) { return p.value(advance_to(p, xx, cfg).z, xx); }, x, 1e-4);
    EXPECT_LE(oracle::rel(g2, fd), 1e-7);
  }
}

TEST(Estimators, QuadraticDoubling) {
  const ProblemInstance p = make_ridge(10, 20, 0.0, 7);
  const Vector x = sample_outer_point(p, 7);
  const InnerRun run = run_inner(p, x, gd_config(p, x, 60));
  for (std::size_t t : {1, 7, 30}) {
    const Vector g1 = estimate_g1(run.states[2 * t], p, x).g;
    EXPECT_LE((estimate_g2(run.states[t], p, x).g - g1).norm(), 1e-12 * (1.0 + g1.norm()));
  }
}

TEST(Estimators, ImplicitHandlesSingularHessians) {
  const ProblemInstance p = make_ridge(10, 20, 0.0, 7);
  const Vector x = sample_outer_point(p, 7);
  const SolverState s = advance_to(p, x, gd_config(p, x, 10));
  EXPECT_THROW(estimate_g3(s, p, x), SingularSystem);
  const GradientEstimate g3 = estimate_g3(s, p, x, default_implicit_options(p, x));
  EXPECT_LE(g3.g.norm(), 1e-10);
  ImplicitOptions ridge;
  ridge.ridge = 1e-8;
  EXPECT_EQ(estimate_g3(s, p, x, ridge).ridge_used, 1e-8);
}

TEST(Estimators, AutomaticNeedsJacobian) {
  const ProblemInstance p = make_ridge(3, 4, 0.1, 0);
  const Vector x = sample_outer_point(p, 0);
  InnerConfig cfg = gd_config(p, x, 3);
  cfg.track_jacobian = false;
  EXPECT_THROW(estimate_g2(advance_to(p, x, cfg), p, x), InvalidArgument);
}

TEST(Estimators, ParseAndDispatch) {
  EXPECT_EQ(parse_estimator("g1"), EstimatorKind::Analytic);
  EXPECT_EQ(parse_estimator("automatic"), EstimatorKind::Automatic);
  EXPECT_EQ(parse_estimator("g3"), EstimatorKind::Implicit);
  EXPECT_THROW(parse_estimator("g4"), InvalidArgument);
  const ProblemInstance p = make_logistic(4, 3, 0.1, 1);
  const Vector x = sample_outer_point(p, 1);
  const SolverState s = advance_to(p, x, gd_config(p, x, 4));
  EXPECT_EQ(estimate(EstimatorKind::Automatic, s, p, x).g, estimate_g2(s, p, x).g);
  EXPECT_EQ(estimate(EstimatorKind::Implicit, s, p, x).t, 4u);
}

TEST(ReferenceJacobian, RidgeMatchesClosedForm) {
  const ProblemInstance p = make_ridge(5, 8, 0.2, 8);
  const Vector x = sample_outer_point(p, 8);
  const Vector zs = oracle::ridge_solution(p.D(), 0.2, x);
  EXPECT_LE(oracle::rel(reference_jacobian(p, x, zs), oracle::ridge_jacobian(p.D(), 0.2)), 1e-12);
}

TEST(ReferenceJacobian, PropagatedJacobianConvergesToIt) {
  const ProblemInstance p = make_logistic(5, 8, 0.2, 8);
  const Vector x = sample_outer_point(p, 8);
  const ReferenceGradient ref = require_converged(compute_reference(p, x, 1000000, 1e-13));
  const SolverState s = advance_to(p, x, gd_config(p, x, 3000));
  EXPECT_LE(oracle::rel(s.J, reference_jacobian(p, x, ref.z_ref)), 1e-9);
}

TEST(Bilevel, LinearOuterLossAutomaticIsJacobianTimesC) {
  const ProblemInstance p = make_ridge(4, 6, 0.2, 9);
  const Vector x = sample_outer_point(p, 9);
  LinearOuterLoss outer{Vector::LinSpaced(6, -1.0, 1.0), Matrix()};
  const SolverState s = advance_to(p, x, gd_config(p, x, 15));
  const BilevelEstimates e = bilevel_estimates(s, p, outer, x);
  EXPECT_EQ(e.g1.g.norm(), 0.0);
  EXPECT_LE((e.g2.g - s.J * outer.c).norm(), 1e-14);
}

TEST(Bilevel, ReferenceMatchesFiniteDifferenceOfOuterObjective) {
  const ProblemInstance p = make_ridge(4, 6, 0.2, 10);
  const Vector x = sample_outer_point(p, 10);
  RngStream rng(10, 7);
  LinearOuterLoss outer;
  outer.c = Vector(6);
  for (Eigen::Index i = 0; i < 6; ++i) outer.c(i) = rng.normal();
  outer.B = Matrix(4, 6);
  for (Eigen::Index i = 0; i < outer.B.size(); ++i) outer.B.data()[i] = 0.1 * rng.normal();
  const Vector zs = oracle::ridge_solution(p.D(), 0.2, x);
  auto F = [&](const Vector& xx) { return outer.value(oracle::ridge_solution(p.D(), 0.2, xx), xx); };
  EXPECT_LE(oracle::rel(bilevel_reference(p, outer, x, zs), oracle::gradient(F, x)), 1e-9);
  // at the inner solution the implicit estimate is the exact gradient
  SolverState s = initial_state(p);
  s.z = zs;
  EXPECT_LE(oracle::rel(bilevel_estimates(s, p, outer, x).g3.g, bilevel_reference(p, outer, x, zs)), 1e-10);
}

TEST(Bilevel, QuadraticOuterLossGradients) {
  QuadraticOuterLoss q{Vector::Ones(3), Matrix::Identity(2, 3)};
  const Vector z = Vector::LinSpaced(3, 0.0, 1.0), x = Vector::Constant(2, 2.0);
  EXPECT_LE(oracle::rel(q.grad_z(z, x), oracle::gradient([&](const Vector& zz) { return q.value(zz, x); }, z)), 1e-10);
  EXPECT_LE(oracle::rel(q.grad_x(z, x), oracle::gradient([&](const Vector& xx) { return q.value(z, xx); }, x)), 1e-10);
}

TEST(Decomposition, ReconstructsAutomaticError) {
  const ProblemInstance p = make_logistic(6, 9, 0.1, 11);
  const Vector x = sample_outer_point(p, 11);
  const ReferenceGradient ref = require_converged(compute_reference(p, x, 1000000, 1e-13));
  const SolverState s = advance_to(p, x, gd_config(p, x, 40));
  const Decomposition d = decompose_error(s, p, x, ref);
  EXPECT_LE(d.reconstruction_error, 1e-8);
  EXPECT_GT(d.R_of_J_norm, 0.0);
}

TEST(Decomposition, RemaindersVanishForQuadratics) {
  const ProblemInstance p = make_ridge(6, 9, 0.1, 12);
  const Vector x = sample_outer_point(p, 12);
  const ReferenceGradient ref = require_converged(compute_reference(p, x, 1000000, 1e-13));
  const SolverState s = advance_to(p, x, gd_config(p, x, 10));
  const Decomposition d = decompose_error(s, p, x, ref);
  EXPECT_LE(d.R_xz.norm(), 1e-10);
  EXPECT_LE(d.R_zz.norm(), 1e-10);
}
