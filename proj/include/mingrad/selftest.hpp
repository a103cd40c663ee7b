#pragma once

#include <cmath>
#include <cstdio>
#include <exception>
#include <functional>
#include <string>
#include <vector>

#include "mingrad/errors.hpp"
#include "mingrad/estimators.hpp"
#include "mingrad/experiments.hpp"
#include "mingrad/io.hpp"
#include "mingrad/outer.hpp"
#include "mingrad/problems.hpp"
#include "mingrad/solvers.hpp"

namespace mingrad {

struct SelfCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

namespace selftest {

inline SelfCheck run(const std::string& name, const std::function<std::string(bool&)>& body) {
  SelfCheck c;
  c.name = name;
  try {
    c.detail = body(c.passed);
  } catch (const std::exception& e) {
    c.passed = false;
    c.detail = std::string("threw: ") + e.what();
  }
  return c;
}

inline std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

// g2_t = g1_2t and g3 = 0 on Ridge with lambda = 0
inline SelfCheck quadratic_exactness() {
  return run("quadratic exactness", [](bool& ok) {
    const ProblemInstance prob = make_ridge(10, 20, 0.0, 7);
    const Vector x = sample_outer_point(prob, 7);
    const InnerConfig cfg = gd_config(prob, x, 40);
    const InnerRun r = run_inner(prob, x, cfg);
    const ImplicitOptions io = default_implicit_options(prob, x);
    double worst = 0.0, g3 = 0.0;
    for (std::size_t t : {1, 5, 20}) {
      const Vector g2 = estimate_g2(r.states[t], prob, x).g;
      const Vector g1 = estimate_g1(r.states[2 * t], prob, x).g;
      worst = std::max(worst, (g2 - g1).norm() / (1.0 + g1.norm()));
      g3 = std::max(g3, estimate_g3(r.states[t], prob, x, io).g.norm());
    }
    ok = worst <= 1e-10 && g3 <= 1e-10;
    return "max |g2_t - g1_2t| = " + sci(worst) + ", max |g3| = " + sci(g3);
  });
}

// J_t = -rho t kappa^(t-1) 1 z0^T on L = 1/2 (sum x) |z|^2
inline SelfCheck closed_form_jacobian() {
  return run("closed-form Jacobian", [](bool& ok) {
    const ProblemInstance prob = make_scaled_norm(4, 6);
    const Vector x = sample_outer_point(prob, 3);
    const double rho = 0.5 / x.sum();
    const double kappa = 1.0 - rho * x.sum();
    InnerConfig cfg;
    cfg.schedule = StepSchedule::constant(rho);
    cfg.T = 50;
    cfg.z0 = Vector::LinSpaced(6, 1.0, 2.0);
    double worst = 0.0;
    iterate(prob, x, cfg, nullptr, [&](const SolverState& s) {
      if (s.t == 0) return;
      const double t = static_cast<double>(s.t);
      const Matrix want = -rho * t * std::pow(kappa, t - 1.0) * Vector::Ones(4) * cfg.z0->transpose();
      worst = std::max(worst, (s.J - want).cwiseAbs().maxCoeff() / t);
    });
    ok = worst <= 1e-12;
    return "max entry deviation / t = " + sci(worst);
  });
}

// reverse accumulation through the tape matches forward propagation
inline SelfCheck forward_reverse() {
  return run("forward/reverse equivalence", [](bool& ok) {
    std::vector<ProblemInstance> probs{make_ridge(6, 9, 0.1, 1), make_logistic(6, 9, 0.1, 1),
                                       make_least_pth(3, 6, 4, 1), make_entropic_ot(7, 5, 0.2, 1)};
    double worst = 0.0;
    for (const ProblemInstance& prob : probs) {
      const Vector x = sample_outer_point(prob, 1);
      InnerConfig cfg = gd_config(prob, x, 30);
      Tape tape;
      const SolverState s = advance_to(prob, x, cfg, &tape);
      const Vector fwd = estimate_g2(s, prob, x).g;
      worst = std::max(worst, (fwd - reverse_unroll(tape, prob, x)).norm() / std::max(fwd.norm(), 1e-300));
    }
    ok = worst <= 1e-10;
    return "max relative gap = " + sci(worst);
  });
}

// g1 at the converged iterate is the reference gradient
inline SelfCheck converged_analytic() {
  return run("analytic estimate at convergence", [](bool& ok) {
    const ProblemInstance prob = make_logistic(8, 12, 0.1, 2);
    const Vector x = sample_outer_point(prob, 2);
    const ReferenceGradient ref = require_converged(compute_reference(prob, x, 100000, 1e-12));
    SolverState s = initial_state(prob, false);
    s.z = ref.z_ref;
    const double gap = (estimate_g1(s, prob, x).g - ref.g_star).norm();
    ok = gap == 0.0;
    return "|g1 - g*| = " + sci(gap);
  });
}

// g'1 = 0 and g'2 = J c for L'(z, x) = <c, z>
inline SelfCheck linear_outer_loss() {
  return run("linear outer loss", [](bool& ok) {
    const ProblemInstance prob = make_ridge(5, 8, 0.2, 4);
    const Vector x = sample_outer_point(prob, 4);
    LinearOuterLoss outer{Vector::LinSpaced(8, -1.0, 1.0), Matrix()};
    const SolverState s = advance_to(prob, x, gd_config(prob, x, 25));
    const BilevelEstimates e = bilevel_estimates(s, prob, outer, x);
    const double a = e.g1.g.norm();
    const double b = (e.g2.g - s.J * outer.c).norm();
    ok = a == 0.0 && b <= 1e-14 * (1.0 + e.g2.g.norm());
    return "|g'1| = " + sci(a) + ", |g'2 - J c| = " + sci(b);
  });
}

// exponent recovery on exact geometric and power-law data
inline SelfCheck rate_fit_exactness() {
  return run("rate fit on synthetic data", [](bool& ok) {
    std::vector<double> t, geo, pw;
    for (int k = 1; k <= 40; ++k) {
      t.push_back(k);
      geo.push_back(3.0 * std::exp(-0.37 * k));
      pw.push_back(2.0 * std::pow(k, -1.5));
    }
    const double a = std::abs(fit_rate(t, geo, FitScale::SemiLog).slope + 0.37);
    const double b = std::abs(fit_rate(t, pw, FitScale::LogLog).slope + 1.5);
    ok = a <= 1e-10 && b <= 1e-10;
    return "exponent errors " + sci(a) + ", " + sci(b);
  });
}

// the mirror step ignores constant shifts of the gradient
inline SelfCheck mirror_shift_invariance() {
  return run("mirror step shift invariance", [](bool& ok) {
    RngStream rng(5, 0);
    Vector x = detail::random_histogram(30, rng);
    Vector g(30);
    for (Eigen::Index i = 0; i < g.size(); ++i) g(i) = rng.normal();
    Vector a = x, b = x;
    mirror_step(a, g, 0.3);
    mirror_step(b, (g.array() + 17.0).matrix(), 0.3);
    const double d = (a - b).cwiseAbs().maxCoeff();
    ok = d <= 1e-14 && std::abs(a.sum() - 1.0) <= 1e-12;
    return "max |x(g) - x(g + c)| = " + sci(d);
  });
}

// Sinkhorn reaches both marginals
inline SelfCheck sinkhorn_marginals() {
  return run("Sinkhorn marginals", [](bool& ok) {
    const ProblemInstance prob = make_entropic_ot(20, 15, 0.1, 6);
    const Vector x = sample_outer_point(prob, 6);
    Vector z = Vector::Zero(prob.cols());
    converge_potentials(prob, x, z, 1e-13, 20000);
    const Matrix P = prob.transport_plan(z);
    const double ea = (P.rowwise().sum() - x).cwiseAbs().maxCoeff();
    const double eb = (P.colwise().sum().transpose() - prob.b_hist()).cwiseAbs().maxCoeff();
    ok = ea <= 1e-12 && eb <= 1e-12;
    return "marginal errors " + sci(ea) + ", " + sci(eb);
  });
}

// same seed, same stream: identical draws; different stream: different
inline SelfCheck rng_reproducibility() {
  return run("RNG reproducibility", [](bool& ok) {
    RngStream a(11, 3), b(11, 3), c(11, 4);
    bool same = true, differ = false;
    for (int i = 0; i < 1000; ++i) {
      const auto u = a.next_u64();
      same = same && u == b.next_u64();
      differ = differ || u != c.next_u64();
    }
    ok = same && differ;
    return same ? (differ ? "streams reproducible and distinct" : "distinct streams collide") : "same stream diverged";
  });
}

// git computes this hash for the blob "hello\n"
inline SelfCheck content_hash() {
  return run("content hash", [](bool& ok) {
    const std::string h = git_blob_hash("hello\n");
    ok = h == "ce013625030ba8dba906f756967f9e9ca394464a";
    return h;
  });
}

}  // namespace selftest

inline std::vector<SelfCheck> run_selftest() {
  return {selftest::quadratic_exactness(), selftest::closed_form_jacobian(), selftest::forward_reverse(),
          selftest::converged_analytic(),  selftest::linear_outer_loss(),    selftest::rate_fit_exactness(),
          selftest::mirror_shift_invariance(), selftest::sinkhorn_marginals(), selftest::rng_reproducibility(),
          selftest::content_hash()};
}

}  // namespace mingrad
