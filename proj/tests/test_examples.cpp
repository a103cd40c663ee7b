// Small hand-computed cases.

#include <cmath>

#include <gtest/gtest.h>

#include "mingrad/mingrad.hpp"
#include "oracles.hpp"

using namespace mingrad;

namespace {

// D = [0.5], lambda = 0, x = [1]: z* = 2 and one GD step with rho = 1
// multiplies the residual by 1 - rho D^2 = 0.75.
ProblemInstance scalar_ridge() { return ProblemInstance::ridge(Matrix::Constant(1, 1, 0.5), 0.0); }
Vector one() { return Vector::Ones(1); }

InnerConfig unit_steps(std::size_t T) {
  InnerConfig cfg;
  cfg.schedule = StepSchedule::constant(1.0);
  cfg.T = T;
  return cfg;
}

}  // namespace

TEST(ScalarRidge, DerivativesAtTheSolution) {
  const ProblemInstance p = scalar_ridge();
  const Vector z = Vector::Constant(1, 2.0);
  EXPECT_EQ(p.value(z, one()), 0.0);
  EXPECT_EQ(p.grad_z(z, one())(0), 0.0);
  EXPECT_EQ(p.grad_x(z, one())(0), 0.0);
  EXPECT_EQ(p.hess_zz(z, one())(0, 0), 0.25);
  EXPECT_EQ(p.cross_xz(z, one())(0, 0), -0.5);
}

TEST(ScalarRidge, OneGradientStep) {
  const ProblemInstance p = scalar_ridge();
  const SolverState s = gd_step(initial_state(p), p, one(), 1.0);
  EXPECT_EQ(s.z(0), 0.5);
  EXPECT_EQ(s.J(0, 0), 0.5);
}

TEST(ScalarRidge, FixedPointMovesOnlyTheJacobian) {
  const ProblemInstance p = scalar_ridge();
  SolverState s0 = initial_state(p);
  s0.z(0) = 2.0;
  const SolverState s = gd_step(s0, p, one(), 1.0);
  EXPECT_EQ(s.z(0), 2.0);
  EXPECT_EQ(s.J(0, 0), 0.5);
}

TEST(ScalarRidge, EstimatorsAfterSteps) {
  const ProblemInstance p = scalar_ridge();
  for (std::size_t t : {1, 2, 5}) {
    const SolverState s = advance_to(p, one(), unit_steps(t));
    EXPECT_NEAR(estimate_g1(s, p, one()).g(0), std::pow(0.75, t), 1e-15);
    EXPECT_NEAR(estimate_g2(s, p, one()).g(0), std::pow(0.75, 2 * t), 1e-15);
    EXPECT_LE(std::abs(estimate_g3(s, p, one()).g(0)), 1e-12);
  }
  Tape tape;
  InnerConfig cfg = unit_steps(1);
  cfg.track_jacobian = false;
  advance_to(p, one(), cfg, &tape);
  EXPECT_NEAR(reverse_unroll(tape, p, one())(0), 0.5625, 1e-15);
}

TEST(Estimators, AtStepZeroOnlyTheDirectTermRemains) {
  const ProblemInstance p = make_logistic(4, 6, 0.1, 3);
  const Vector x = sample_outer_point(p, 3);
  const SolverState s = advance_to(p, x, gd_config(p, x, 0));
  EXPECT_EQ(s.t, 0u);
  EXPECT_EQ(estimate_g1(s, p, x).g, p.grad_x(Vector::Zero(6), x));
  EXPECT_EQ(estimate_g2(s, p, x).g, estimate_g1(s, p, x).g);
  Tape tape;
  InnerConfig cfg = gd_config(p, x, 0);
  cfg.track_jacobian = false;
  advance_to(p, x, cfg, &tape);
  EXPECT_EQ(reverse_unroll(tape, p, x), p.grad_x(Vector::Zero(6), x));
}

TEST(Estimators, ExactAtTheSolution) {
  const ProblemInstance p = make_logistic(5, 7, 0.2, 4);
  const Vector x = sample_outer_point(p, 4);
  SolverState s = initial_state(p);
  s.z = oracle::logistic_newton(p.D(), 0.2, x);
  const Vector g = oracle::logistic_value_gradient(p.D(), 0.2, x);
  EXPECT_LE(oracle::rel(estimate_g1(s, p, x).g, g), 1e-12);
  EXPECT_LE(oracle::rel(estimate_g3(s, p, x).g, g), 1e-12);
}

TEST(LeastPth, AnalyticEstimateAtZero) {
  const ProblemInstance p = make_least_pth(5, 10, 4, 2);
  const Vector x = sample_outer_point(p, 2);
  const SolverState s = initial_state(p);
  EXPECT_LE(oracle::rel(estimate_g1(s, p, x).g, Vector(x.array().cube())), 1e-15);
  const ProblemInstance q = make_least_pth(1, 1, 2, 0);
  EXPECT_EQ(std::abs(q.D()(0, 0)), 1.0);
}

TEST(LeastPth, ImplicitEstimateVanishes) {
  const ProblemInstance p = make_least_pth(5, 10, 4, 0);
  const Vector x = sample_outer_point(p, 0);
  const ImplicitOptions io = default_implicit_options(p, x);
  for (std::size_t t : {1, 10, 100}) EXPECT_LE(estimate_g3(advance_to(p, x, gd_config(p, x, t)), p, x, io).g.norm(), 1e-12);
}

TEST(Logistic, ValueAndGradientAtZero) {
  const ProblemInstance p = make_logistic(6, 4, 0.3, 1);
  const Vector x = sample_outer_point(p, 1);
  const Vector z = Vector::Zero(4);
  // mean of the n losses log(1 + e^0)
  EXPECT_NEAR(p.value(z, x), std::log(2.0), 1e-15);
  EXPECT_LE(oracle::rel(p.grad_z(z, x), Vector(p.D().transpose() * (-x / 2.0) / 6.0)), 1e-15);
}

TEST(Logistic, ZeroLabelComponent) {
  const ProblemInstance p = make_logistic(3, 4, 0.3, 1);
  Vector x = sample_outer_point(p, 1);
  x(1) = 0.0;
  const Vector z = Vector::LinSpaced(4, -1.0, 1.0);
  EXPECT_LE(oracle::rel(sample_component(p, 1, z, x).grad_z, Vector(0.3 * z)), 1e-15);
}

TEST(RidgeComponent, HessianIsScaledOuterProduct) {
  const ProblemInstance p = make_ridge(4, 3, 0.2, 5);
  const Vector x = sample_outer_point(p, 5);
  const Vector d = p.D().row(2).transpose();
  Matrix want = 4.0 * d * d.transpose();
  want.diagonal().array() += 0.2;
  EXPECT_LE(oracle::rel(sample_component(p, 2, Vector::Zero(3), x).hess_zz(), want), 1e-15);
}

TEST(EntropicOt, SinglePointExamples) {
  const ProblemInstance p = ProblemInstance::entropic_ot(Matrix::Ones(1, 1), Vector::Ones(1), 1.0);
  EXPECT_EQ(p.grad_x(Vector::Zero(2), one())(0), 0.0);
  const SolverState s = sinkhorn_step(initial_state(p), p, one());
  EXPECT_NEAR(s.z(0), -1.0, 1e-15);
  EXPECT_NEAR(s.z(1), 0.0, 1e-15);
  const ProblemInstance q = make_entropic_ot(1, 1, 1.0, 0);
  EXPECT_EQ(q.C()(0, 0), 0.0);
  EXPECT_EQ(q.b_hist()(0), 1.0);
}

TEST(EntropicOt, SweepOverwritesSourcePotential) {
  const ProblemInstance p = make_entropic_ot(5, 4, 0.2, 1);
  const Vector x = sample_outer_point(p, 1);
  SolverState a = initial_state(p);
  SolverState b = a;
  b.z.head(5).array() += 3.0;
  EXPECT_EQ(sinkhorn_step(a, p, x).z, sinkhorn_step(b, p, x).z);
}

TEST(ScaledNorm, FirstStepMatchesClosedForm) {
  const ProblemInstance p = make_scaled_norm(2, 1);
  InnerConfig cfg;
  cfg.schedule = StepSchedule::constant(0.25);
  cfg.T = 1;
  cfg.z0 = Vector::Ones(1);
  const SolverState s = advance_to(p, Vector::Ones(2), cfg);
  EXPECT_EQ(s.z(0), 0.5);
  EXPECT_EQ(s.J(0, 0), -0.25);
  EXPECT_EQ(s.J(1, 0), -0.25);
}

TEST(StochasticGradient, SingleComponentEqualsGradientDescent) {
  const ProblemInstance p = ProblemInstance::ridge(Matrix::Constant(1, 3, 0.7), 0.1);
  const Vector x = one();
  SolverState s0 = initial_state(p);
  s0.z = Vector::LinSpaced(3, -1.0, 1.0);
  const SolverState a = sgd_step(s0, p, x, StepSchedule::constant(0.3));
  const SolverState b = gd_step(s0, p, x, 0.3);
  EXPECT_LE((a.z - b.z).norm(), 1e-15);
  EXPECT_LE((a.J - b.J).norm(), 1e-15);
}

TEST(StochasticGradient, ComponentStepsAverageToGradientStep) {
  const ProblemInstance p = make_ridge(5, 3, 0.1, 2);
  const Vector x = sample_outer_point(p, 2);
  const Vector z = Vector::LinSpaced(3, 0.5, -0.5);
  Vector avg = Vector::Zero(3);
  for (std::size_t i = 0; i < 5; ++i) avg += (mingrad::detail::sgd_map(sample_component(p, i, z, x), z, 0.2) - z) / 0.2 / 5.0;
  EXPECT_LE((avg + p.grad_z(z, x)).norm(), 1e-12);
}

TEST(RunInner, Counting) {
  const ProblemInstance p = make_ridge(3, 4, 0.1, 0);
  const Vector x = sample_outer_point(p, 0);
  EXPECT_EQ(run_inner(p, x, gd_config(p, x, 0)).states.size(), 1u);
  EXPECT_EQ(run_inner(p, x, gd_config(p, x, 5)).states.size(), 6u);
}

TEST(GradientDescent, RidgeConvergesWithinReferenceBudget) {
  const ProblemInstance p = make_ridge(50, 100, 1.0 / 50, 0);
  const Vector x = sample_outer_point(p, 0);
  const double g0 = p.grad_z(Vector::Zero(100), x).norm();
  const SolverState s = advance_to(p, x, gd_config(p, x, 14000));
  EXPECT_LE(p.grad_z(s.z, x).norm(), 1e-10 * g0);
}

TEST(Bilevel, InnerLossAsOuterLossReducesToEstimators) {
  const ProblemInstance p = make_logistic(4, 6, 0.1, 6);
  const Vector x = sample_outer_point(p, 6);
  const SolverState s = advance_to(p, x, gd_config(p, x, 7));
  const BilevelEstimates b = bilevel_estimates(s, p, p, x);
  EXPECT_EQ(b.g1.g, estimate_g1(s, p, x).g);
  EXPECT_LE(oracle::rel(b.g2.g, estimate_g2(s, p, x).g), 1e-15);
  EXPECT_LE(oracle::rel(b.g3.g, estimate_g3(s, p, x).g), 1e-15);
}

TEST(Decomposition, VanishesAtTheReference) {
  const ProblemInstance p = make_logistic(4, 6, 0.1, 6);
  const Vector x = sample_outer_point(p, 6);
  ReferenceGradient ref;
  ref.z_ref = oracle::logistic_newton(p.D(), 0.1, x);
  ref.g_star = oracle::logistic_value_gradient(p.D(), 0.1, x);
  SolverState s = initial_state(p);
  s.z = ref.z_ref;
  const Decomposition d = decompose_error(s, p, x, ref);
  EXPECT_LE(d.R_xz.norm(), 1e-14);
  EXPECT_LE(d.R_zz.norm(), 1e-14);
  EXPECT_LE(d.linear_term.norm(), 1e-14);
}

TEST(Decomposition, LogisticRemainderIsQuadratic) {
  const ProblemInstance p = make_logistic(8, 12, 0.1, 7);
  const Vector x = sample_outer_point(p, 7);
  ReferenceGradient ref;
  ref.z_ref = oracle::logistic_newton(p.D(), 0.1, x);
  ref.g_star = oracle::logistic_value_gradient(p.D(), 0.1, x);
  std::vector<double> log_dz, log_r;
  const InnerRun run = run_inner(p, x, [&] {
    InnerConfig c = gd_config(p, x, 200);
    c.record_every = 20;
    return c;
  }());
  // Keep the asymptotic range: close to z*, but above the rounding floor.
  for (const SolverState& s : run.states) {
    const double dz = (s.z - ref.z_ref).norm();
    const double r = decompose_error(s, p, x, ref).R_xz.norm();
    if (dz > 1e-2 || r < 1e-15) continue;
    log_dz.push_back(std::log(dz));
    log_r.push_back(std::log(r));
  }
  ASSERT_GE(log_dz.size(), 4u);
  const double slope = fit_linear(log_dz, log_r).slope;
  EXPECT_NEAR(slope, 2.0, 0.1);
}

TEST(MirrorStep, ShiftInvariant) {
  Vector a = Vector::LinSpaced(5, 0.1, 0.3);
  a /= a.sum();
  Vector b = a;
  const Vector g = Vector::LinSpaced(5, -1.0, 2.0);
  mirror_step(a, g, 0.7);
  mirror_step(b, (g.array() + 12.5).matrix(), 0.7);
  EXPECT_LE((a - b).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Outer, ZeroStepsKeepOnlyTheStart) {
  const RidgeOuterTestbed tb = make_outer_testbed(6, 3, 2, 0.1, 0.1, 0);
  OuterRunConfig cfg;
  cfg.Q = 0;
  EXPECT_EQ(inexact_gd(tb, Vector::Ones(6), cfg).records.size(), 1u);
  EXPECT_EQ(inexact_sgd(tb, Vector::Ones(6), cfg).records.size(), 1u);
  const BarycenterProblem bp = make_barycenter(4, 4, 2, 0.2, 0);
  EXPECT_EQ(mirror_descent_barycenter(bp, Vector::Constant(4, 0.25), cfg).records.size(), 1u);
}

TEST(Outer, SingleTargetSgdMatchesGd) {
  const RidgeOuterTestbed tb = make_outer_testbed(6, 3, 1, 0.1, 0.1, 0);
  OuterRunConfig cfg;
  cfg.t_inner = 4;
  cfg.Q = 20;
  const OuterTrace a = inexact_gd(tb, Vector::Ones(6), cfg);
  const OuterTrace b = inexact_sgd(tb, Vector::Ones(6), cfg);
  EXPECT_LE((a.back().x - b.back().x).norm(), 1e-14);
}

TEST(Outer, LargeInnerBudgetRemovesThePlateau) {
  const RidgeOuterTestbed tb = make_outer_testbed(12, 5, 2, 0.1, 0.1, 1);
  OuterRunConfig cfg;
  cfg.eta = 1.0 / tb.L_x();
  cfg.Q = 400;
  double prev = INFINITY;
  for (std::size_t t : {5, 20, 400}) {
    cfg.t_inner = t;
    const double gap = inexact_gd(tb, Vector::Zero(12), cfg).back().gap;
    EXPECT_LT(gap, prev);
    prev = gap;
  }
  EXPECT_LE(prev, 1e-12);
}

TEST(Barycenter, SelfBarycenterIsStationary) {
  // N = 1 with b_1 = x0 on matching grids: x0 is the minimizer
  const Vector h = Vector::LinSpaced(6, 1.0, 2.0).normalized().cwiseAbs2();
  const BarycenterProblem bp(detail::grid_cost(6, 6), {h}, 0.1);
  OuterRunConfig cfg;
  cfg.exact = true;
  cfg.eta = 0.2;
  cfg.Q = 20;
  BarycenterRunOptions opt;
  opt.monitor_every = 1;
  const OuterTrace tr = mirror_descent_barycenter(bp, h, cfg, opt);
  EXPECT_EQ(tr.monotonicity_violations, 0u);
  for (std::size_t q = 1; q < tr.records.size(); ++q)
    EXPECT_LE(tr.records[q].objective, tr.records[q - 1].objective + 1e-10);
}

TEST(FitRate, SyntheticSeries) {
  std::vector<double> t, e, tl, el;
  for (int k = 0; k < 30; ++k) {
    t.push_back(k);
    e.push_back(std::pow(0.5, k));
    tl.push_back(k + 1);
    el.push_back(std::pow(k + 1.0, -1.5));
  }
  FitOptions fo;
  fo.stall = 0;
  const RateFit f = fit_rate(t, e, FitScale::SemiLog, fo);
  EXPECT_NEAR(f.slope, std::log(0.5), 1e-12);
  EXPECT_NEAR(f.r2, 1.0, 1e-12);
  EXPECT_NEAR(fit_rate(tl, el, FitScale::LogLog, fo).slope, -1.5, 1e-12);
}
