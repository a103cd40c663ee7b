#include <cmath>

#include <gtest/gtest.h>

#include "mingrad/outer.hpp"
#include "oracles.hpp"

using namespace mingrad;

namespace {

RidgeOuterTestbed small_testbed(std::size_t K = 3) { return make_outer_testbed(12, 5, K, 0.1, 0.1, 2); }

}  // namespace

TEST(Testbed, ObjectiveMatchesInnerValueFunction) {
  const RidgeOuterTestbed tb = small_testbed();
  const Vector x = sample_outer_point(tb.inner(), 3);
  const Matrix& D = tb.inner().D();
  double want = 0.0;
  for (std::size_t v = 0; v < tb.samples(); ++v) {
    const Vector xs = x - tb.targets().col(static_cast<Eigen::Index>(v));
    const Vector z = oracle::ridge_solution(D, 0.1, xs);
    want += tb.inner().value(z, xs) / static_cast<double>(tb.samples());
  }
  want += 0.05 * x.squaredNorm();
  EXPECT_NEAR(tb.objective(x), want, 1e-12 * std::abs(want));
}

TEST(Testbed, GradientMatchesFiniteDifferencesAndVanishesAtOptimum) {
  const RidgeOuterTestbed tb = small_testbed();
  const Vector x = sample_outer_point(tb.inner(), 4);
  const Vector fd = oracle::gradient([&](const Vector& xx) { return tb.objective(xx); }, x);
  EXPECT_LE(oracle::rel(tb.gradient(x), fd), 1e-9);
  EXPECT_LE(tb.gradient(tb.x_star()).norm(), 1e-12);
  EXPECT_NEAR(tb.gap(x), tb.objective(x) - tb.ell_star(), 1e-10);
  EXPECT_GT(tb.mu_x(), 0.0);
  EXPECT_GE(tb.L_x(), tb.mu_x());
}

TEST(Testbed, EstimatesConvergeToExactGradient) {
  const RidgeOuterTestbed tb = small_testbed();
  const Vector x = sample_outer_point(tb.inner(), 5);
  OuterRunConfig cfg;
  cfg.t_inner = 2000;
  for (EstimatorKind k : {EstimatorKind::Analytic, EstimatorKind::Automatic, EstimatorKind::Implicit}) {
    cfg.estimator = k;
    EXPECT_LE(oracle::rel(tb.estimate_gradient(x, cfg), tb.gradient(x)), 1e-8);
  }
  cfg.exact = true;
  EXPECT_EQ(tb.sample_estimate(x, 1, cfg), tb.sample_gradient(x, 1));
}

TEST(Testbed, RejectsInvalidConfiguration) {
  EXPECT_THROW(make_outer_testbed(5, 3, 0, 0.1, 0.1, 0), InvalidArgument);
  EXPECT_THROW(make_outer_testbed(5, 3, 1, 0.0, 0.1, 0), InvalidArgument);
  EXPECT_THROW(RidgeOuterTestbed(make_logistic(5, 3, 0.1, 0), Matrix::Zero(5, 1), 0.1), InvalidArgument);
  OuterRunConfig cfg;
  cfg.eta = 0.0;
  const RidgeOuterTestbed tb = small_testbed();
  EXPECT_THROW(inexact_gd(tb, Vector::Zero(12), cfg), InvalidArgument);
  cfg.eta = 0.1;
  EXPECT_THROW(inexact_gd(tb, Vector::Zero(3), cfg), InvalidArgument);
}

TEST(InexactGd, ExactGradientsConvergeLinearly) {
  const RidgeOuterTestbed tb = small_testbed();
  OuterRunConfig cfg;
  cfg.exact = true;
  cfg.eta = 1.0 / tb.L_x();
  cfg.Q = 400;
  const OuterTrace tr = inexact_gd(tb, Vector::Zero(12), cfg);
  ASSERT_EQ(tr.records.size(), 401u);
  EXPECT_LE(tr.back().error, 1e-10);
  // contraction bound (1 - mu/L)^q on the distance
  const double kappa = 1.0 - tb.mu_x() / tb.L_x();
  for (std::size_t q : {10, 50, 100})
    EXPECT_LE(tr.records[q].error, std::pow(kappa, static_cast<double>(q)) * tr.records[0].error * (1 + 1e-9));
}

TEST(InexactGd, InexactGradientsPlateau) {
  const RidgeOuterTestbed tb = small_testbed();
  OuterRunConfig cfg;
  cfg.t_inner = 3;
  cfg.eta = 1.0 / (2.0 * tb.L_x());
  cfg.Q = 600;
  const OuterTrace tr = inexact_gd(tb, Vector::Zero(12), cfg);
  EXPECT_GT(tr.back().gap, 1e-8);
  EXPECT_NEAR(tr.back().gap, tr.records[500].gap, 1e-6 * tr.back().gap);
  EXPECT_GT(tr.records[599].grad_error, 0.0);
}

TEST(InexactSgd, ReproducibleAndSampled) {
  const RidgeOuterTestbed tb = small_testbed(5);
  OuterRunConfig cfg;
  cfg.t_inner = 10;
  cfg.eta = 0.05;
  cfg.Q = 100;
  cfg.seed = 3;
  const OuterTrace a = inexact_sgd(tb, Vector::Zero(12), cfg);
  const OuterTrace b = inexact_sgd(tb, Vector::Zero(12), cfg);
  EXPECT_EQ(a.back().x, b.back().x);
  cfg.seed = 4;
  EXPECT_NE(inexact_sgd(tb, Vector::Zero(12), cfg).back().x, a.back().x);
}

TEST(OuterTrace, CsvColumns) {
  OuterTrace tr;
  OuterRecord r;
  r.q = 2;
  r.objective = 1.5;
  r.wall_ns = 7;
  tr.records.push_back(r);
  EXPECT_EQ(tr.to_csv(true).str(), "q,objective,error,gap,grad_error,wall_ns\r\n2,1.5,nan,nan,nan,7\r\n");
  EXPECT_EQ(tr.to_csv(false).str(), "q,objective,error,gap,grad_error\r\n2,1.5,nan,nan,nan\r\n");
}

TEST(MirrorStep, StaysOnSimplexAndFloors) {
  Vector x = Vector::Constant(4, 0.25);
  Vector g(4);
  g << 0.0, 1.0, 2.0, 3.0;
  EXPECT_FALSE(mirror_step(x, g, 0.5));
  EXPECT_NEAR(x.sum(), 1.0, 1e-15);
  // closed form: x_i proportional to exp(-eta g_i)
  const Vector w = (-0.5 * g.array()).exp().matrix();
  EXPECT_LE((x - w / w.sum()).norm(), 1e-15);
  x = Vector::Constant(4, 0.25);
  g << 0.0, 1e4, 0.0, 0.0;
  EXPECT_TRUE(mirror_step(x, g, 1.0));
  EXPECT_GE(x.minCoeff(), 1e-300);
}

namespace {

BarycenterProblem tiny_barycenter() { return make_barycenter(8, 7, 3, 0.1, 5); }

}  // namespace

TEST(Barycenter, ExactGradientMatchesObjectiveDerivative) {
  const BarycenterProblem bp = tiny_barycenter();
  RngStream rng(5, 5);
  const Vector x = detail::random_histogram(8, rng);
  BarycenterEvaluator ev(bp);
  const Vector g = ev.gradient(x);
  auto f = [&](const Vector& xx) {
    BarycenterEvaluator e(bp);
    return e.objective(xx);
  };
  for (Eigen::Index k = 0; k + 1 < 8; ++k) {
    Vector v = Vector::Zero(8);
    v(k) = 1.0;
    v(k + 1) = -1.0;
    EXPECT_NEAR(g.dot(v), oracle::directional(f, x, v, 1e-4), 1e-8);
  }
}

TEST(Barycenter, EstimatesApproachExactGradient) {
  const BarycenterProblem bp = tiny_barycenter();
  const Vector x = Vector::Constant(8, 1.0 / 8);
  BarycenterEvaluator ev(bp);
  Vector g = ev.gradient(x);
  OuterRunConfig cfg;
  cfg.t_inner = 400;
  for (EstimatorKind k : {EstimatorKind::Analytic, EstimatorKind::Automatic, EstimatorKind::Implicit}) {
    cfg.estimator = k;
    Vector e = barycenter_gradient(bp, x, cfg);
    // gradients are defined up to a constant shift on the simplex
    e.array() -= e.mean();
    Vector gc = g;
    gc.array() -= gc.mean();
    EXPECT_LE(oracle::rel(e, gc), 1e-8) << to_string(k);
  }
}

TEST(Barycenter, MirrorDescentKeepsSimplexAndDecreasesObjective) {
  const BarycenterProblem bp = tiny_barycenter();
  const Vector x0 = Vector::Constant(8, 1.0 / 8);
  OuterRunConfig cfg;
  cfg.estimator = EstimatorKind::Automatic;
  cfg.t_inner = 30;
  cfg.eta = 0.5;
  cfg.Q = 60;
  BarycenterRunOptions opt;
  opt.monitor_every = 10;
  const OuterTrace tr = mirror_descent_barycenter(bp, x0, cfg, opt);
  for (const OuterRecord& r : tr.records) EXPECT_NEAR(r.x.sum(), 1.0, 1e-12);
  EXPECT_LT(tr.back().objective, tr.records[0].objective);
  EXPECT_EQ(tr.monotonicity_violations, 0u);
  EXPECT_FALSE(tr.floored);
}

TEST(Barycenter, RejectsInvalidStart) {
  const BarycenterProblem bp = tiny_barycenter();
  OuterRunConfig cfg;
  Vector x0 = Vector::Constant(8, 1.0 / 8);
  x0(0) = 0.0;
  x0(1) = 0.25;
  EXPECT_THROW(mirror_descent_barycenter(bp, x0, cfg), DomainError);
  EXPECT_THROW(mirror_descent_barycenter(bp, Vector::Constant(3, 1.0 / 3), cfg), InvalidArgument);
}

TEST(Barycenter, StrictDomainRaisesOnUnderflow) {
  const BarycenterProblem bp = tiny_barycenter();
  OuterRunConfig cfg;
  cfg.exact = true;
  cfg.eta = 1e5;
  cfg.Q = 3;
  BarycenterRunOptions opt;
  opt.strict_domain = true;
  EXPECT_THROW(mirror_descent_barycenter(bp, Vector::Constant(8, 1.0 / 8), cfg, opt), DomainError);
  opt.strict_domain = false;
  EXPECT_TRUE(mirror_descent_barycenter(bp, Vector::Constant(8, 1.0 / 8), cfg, opt).floored);
}

TEST(Barycenter, ReferenceIsStationaryAndGapAgreesWithObjectiveDifference) {
  const BarycenterProblem bp = tiny_barycenter();
  const Vector x0 = Vector::Constant(8, 1.0 / 8);
  const BarycenterReference ref = barycenter_reference(bp, x0);
  EXPECT_LE(ref.residual, 1e-12);
  Vector x = 0.7 * ref.x + 0.3 * x0;
  BarycenterEvaluator ev(bp);
  const double diff = ev.objective(x) - ref.objective;
  EXPECT_GT(diff, 0.0);
  EXPECT_NEAR(barycenter_gap(bp, x, ref.x), diff, 1e-10 * (1.0 + diff));
  EXPECT_EQ(barycenter_gap(bp, ref.x, ref.x), 0.0);
}

TEST(Barycenter, InstanceHashDependsOnData) {
  EXPECT_EQ(instance_hash(tiny_barycenter()), instance_hash(make_barycenter(8, 7, 3, 0.1, 5)));
  EXPECT_NE(instance_hash(tiny_barycenter()), instance_hash(make_barycenter(8, 7, 3, 0.1, 6)));
  EXPECT_THROW(make_barycenter(0, 7, 3, 0.1, 0), InvalidArgument);
}
