#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss.hpp>

#include "mingrad/errors.hpp"
#include "mingrad/estimators.hpp"
#include "mingrad/io.hpp"
#include "mingrad/numerics.hpp"
#include "mingrad/parallel.hpp"
#include "mingrad/problems.hpp"
#include "mingrad/rng.hpp"
#include "mingrad/solvers.hpp"

namespace mingrad {

struct OuterRunConfig {
  EstimatorKind estimator = EstimatorKind::Analytic;
  // Use the exact gradient instead of an estimate after t_inner steps.
  bool exact = false;
  std::size_t t_inner = 10;
  double eta = 0.1;
  std::size_t Q = 100;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;

  void validate() const {
    if (!(eta > 0.0)) throw InvalidArgument("outer step eta must be > 0");
    if (!exact && t_inner < 1) throw InvalidArgument("t_inner must be >= 1");
  }
};

struct OuterRecord {
  std::size_t q = 0;
  Vector x;
  double objective = std::numeric_limits<double>::quiet_NaN();
  double error = std::numeric_limits<double>::quiet_NaN();       // |x_q - x*|
  double gap = std::numeric_limits<double>::quiet_NaN();         // l(x_q) - l(x*)
  double grad_error = std::numeric_limits<double>::quiet_NaN();  // |estimate - grad l| at x_q
  std::int64_t wall_ns = 0;                                      // cumulative
};

struct OuterTrace {
  std::vector<OuterRecord> records;
  // Some iterate component was clamped to the floor 1e-300.
  bool floored = false;
  // Monitored steps where the objective rose by more than the tolerance.
  std::size_t monotonicity_violations = 0;

  const OuterRecord& back() const { return records.back(); }

  CsvTable to_csv(bool include_timing = true) const {
    std::vector<std::string> header{"q", "objective", "error", "gap", "grad_error"};
    if (include_timing) header.push_back("wall_ns");
    CsvTable table(header);
    for (const OuterRecord& r : records) {
      std::vector<std::string> row{std::to_string(r.q), format_double(r.objective), format_double(r.error),
                                   format_double(r.gap), format_double(r.grad_error)};
      if (include_timing) row.push_back(std::to_string(r.wall_ns));
      table.add_row(std::move(row));
    }
    return table;
  }
};

// Outer objective for the inexact-oracle experiments:
//   l(x) = mean_v min_z [1/2 |x - y_v - Dz|^2 + lambda/2 |z|^2] + nu/2 |x|^2
//        = mean_v 1/2 (x - y_v)^T M (x - y_v) + nu/2 |x|^2,
// M = lambda (D D^T + lambda I)^{-1}. Each sample v is the Ridge inner
// problem evaluated at the shifted point x - y_v.
class RidgeOuterTestbed {
 public:
  RidgeOuterTestbed(ProblemInstance inner, Matrix targets, double nu)
      : inner_(std::move(inner)), Y_(std::move(targets)), nu_(nu) {
    if (inner_.kind() != ProblemKind::Ridge) throw InvalidArgument("outer testbed requires a Ridge inner problem");
    if (!(inner_.lambda() > 0.0)) throw InvalidArgument("outer testbed requires lambda > 0");
    if (!(nu_ >= 0.0)) throw InvalidArgument("outer testbed requires nu >= 0");
    if (Y_.rows() != inner_.rows() || Y_.cols() < 1) throw InvalidArgument("outer testbed: targets must be n x K");
    const Matrix& D = inner_.D();
    const double lam = inner_.lambda();
    Matrix G = D * D.transpose();
    G.diagonal().array() += lam;
    M_ = lam * G.ldlt().solve(Matrix::Identity(G.rows(), G.cols()));
    M_ = 0.5 * (M_ + M_.transpose());
    y_bar_ = Y_.rowwise().mean();
    Matrix A = M_;
    A.diagonal().array() += nu_;
    hess_ = A;
    x_star_ = A.ldlt().solve(M_ * y_bar_);
    Eigen::SelfAdjointEigenSolver<Matrix> es(A);
    mu_x_ = es.eigenvalues().minCoeff();
    L_x_ = es.eigenvalues().maxCoeff();
    ell_star_ = objective(x_star_);
    rho_ = 1.0 / inner_.smoothness(Vector::Zero(inner_.rows()));
    sigma2_ = 0.0;
    for (Eigen::Index k = 0; k < Y_.cols(); ++k) sigma2_ += (M_ * (Y_.col(k) - y_bar_)).squaredNorm();
    sigma2_ /= static_cast<double>(Y_.cols());
  }

  const ProblemInstance& inner() const { return inner_; }
  const Matrix& targets() const { return Y_; }
  std::size_t samples() const { return static_cast<std::size_t>(Y_.cols()); }
  double nu() const { return nu_; }
  const Matrix& M() const { return M_; }
  const Vector& x_star() const { return x_star_; }
  double ell_star() const { return ell_star_; }
  double mu_x() const { return mu_x_; }
  double L_x() const { return L_x_; }
  // Inner step size 1/L_z
  double inner_rho() const { return rho_; }
  // Gradient variance over samples at any x
  double sigma2() const { return sigma2_; }

  double sample_objective(const Vector& x, std::size_t v) const {
    const Vector r = x - Y_.col(static_cast<Eigen::Index>(v));
    return 0.5 * r.dot(M_ * r) + 0.5 * nu_ * x.squaredNorm();
  }
  double objective(const Vector& x) const {
    double s = 0.0;
    for (std::size_t v = 0; v < samples(); ++v) s += sample_objective(x, v);
    return s / static_cast<double>(samples());
  }
  Vector sample_gradient(const Vector& x, std::size_t v) const {
    return M_ * (x - Y_.col(static_cast<Eigen::Index>(v))) + nu_ * x;
  }
  Vector gradient(const Vector& x) const { return M_ * (x - y_bar_) + nu_ * x; }
  // l(x) - l(x*), evaluated without cancellation
  double gap(const Vector& x) const {
    const Vector d = x - x_star_;
    return 0.5 * d.dot(hess_ * d);
  }

  // Estimate of grad_x h(x, v) after t_inner GD steps from z0 = 0.
  Vector sample_estimate(const Vector& x, std::size_t v, const OuterRunConfig& cfg) const {
    if (cfg.exact) return sample_gradient(x, v);
    const Vector xs = x - Y_.col(static_cast<Eigen::Index>(v));
    InnerConfig ic;
    ic.solver = SolverKind::GD;
    ic.schedule = StepSchedule::constant(rho_);
    ic.T = cfg.t_inner;
    ic.track_jacobian = cfg.estimator == EstimatorKind::Automatic;
    const SolverState s = advance_to(inner_, xs, ic);
    return estimate(cfg.estimator, s, inner_, xs).g + nu_ * x;
  }
  Vector estimate_gradient(const Vector& x, const OuterRunConfig& cfg) const {
    Vector g = Vector::Zero(x.size());
    for (std::size_t v = 0; v < samples(); ++v) g += sample_estimate(x, v, cfg);
    return g / static_cast<double>(samples());
  }

 private:
  ProblemInstance inner_;
  Matrix Y_;
  double nu_;
  Matrix M_;
  Matrix hess_;
  Vector y_bar_;
  Vector x_star_;
  double ell_star_ = 0.0;
  double mu_x_ = 0.0;
  double L_x_ = 0.0;
  double rho_ = 0.0;
  double sigma2_ = 0.0;
};

// D iid normal (as make_ridge), K targets y_v iid normal from stream 2.
inline RidgeOuterTestbed make_outer_testbed(std::size_t n, std::size_t m, std::size_t K, double lambda, double nu,
                                            std::uint64_t seed) {
  if (K < 1) throw InvalidArgument("make_outer_testbed: K must be >= 1");
  ProblemInstance inner = make_ridge(n, m, lambda, seed);
  RngStream rng(seed, 2);
  Matrix Y(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(K));
  for (Eigen::Index k = 0; k < Y.cols(); ++k)
    for (Eigen::Index i = 0; i < Y.rows(); ++i) Y(i, k) = rng.normal();
  return RidgeOuterTestbed(std::move(inner), std::move(Y), nu);
}

namespace detail {

inline std::int64_t elapsed_ns(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - since).count();
}

inline OuterRecord testbed_record(const RidgeOuterTestbed& tb, std::size_t q, const Vector& x, std::int64_t ns) {
  OuterRecord r;
  r.q = q;
  r.x = x;
  r.objective = tb.objective(x);
  r.error = (x - tb.x_star()).norm();
  r.gap = tb.gap(x);
  r.wall_ns = ns;
  return r;
}

}  // namespace detail

// x_{q+1} = x_q - eta g(x_q), with g averaged over all samples and each
// inner solve restarted from z0 = 0.
inline OuterTrace inexact_gd(const RidgeOuterTestbed& tb, const Vector& x0, const OuterRunConfig& cfg) {
  cfg.validate();
  if (x0.size() != tb.inner().rows()) throw InvalidArgument("inexact_gd: x0 has wrong length");
  const auto start = std::chrono::steady_clock::now();
  OuterTrace trace;
  Vector x = x0;
  trace.records.push_back(detail::testbed_record(tb, 0, x, 0));
  for (std::size_t q = 0; q < cfg.Q; ++q) {
    const Vector g = tb.estimate_gradient(x, cfg);
    trace.records.back().grad_error = (g - tb.gradient(x)).norm();
    x -= cfg.eta * g;
    if (!x.allFinite()) throw NonFinite(q + 1, "outer gradient step");
    trace.records.push_back(detail::testbed_record(tb, q + 1, x, detail::elapsed_ns(start)));
  }
  return trace;
}

// x_{q+1} = x_q - eta g(x_q, v_{q+1}) with v drawn uniformly from the
// samples by RngStream(seed, 3).
inline OuterTrace inexact_sgd(const RidgeOuterTestbed& tb, const Vector& x0, const OuterRunConfig& cfg) {
  cfg.validate();
  if (x0.size() != tb.inner().rows()) throw InvalidArgument("inexact_sgd: x0 has wrong length");
  const auto start = std::chrono::steady_clock::now();
  RngStream rng(cfg.seed, 3);
  OuterTrace trace;
  Vector x = x0;
  trace.records.push_back(detail::testbed_record(tb, 0, x, 0));
  for (std::size_t q = 0; q < cfg.Q; ++q) {
    const std::size_t v = rng.uniform_index(tb.samples());
    const Vector g = tb.sample_estimate(x, v, cfg);
    trace.records.back().grad_error = (g - tb.sample_gradient(x, v)).norm();
    x -= cfg.eta * g;
    if (!x.allFinite()) throw NonFinite(q + 1, "outer stochastic step");
    trace.records.push_back(detail::testbed_record(tb, q + 1, x, detail::elapsed_ns(start)));
  }
  return trace;
}

// Entropic barycenter of histograms b_1..b_N on a shared cost C (n x m).
// Each marginal problem is an entropic OT instance with x in the first
// slot; the objective is l(x) = sum_i W(x, b_i) with W(x, b) = -min_z L(z, x),
// L the OT dual loss, so that grad l = -sum_i z_a,i at the inner optimum.
struct BarycenterProblem {
  Matrix C;
  std::vector<Vector> b;
  double epsilon = 0.05;
  std::vector<ProblemInstance> marginals;
  std::uint64_t seed = 0;

  BarycenterProblem() = default;
  BarycenterProblem(Matrix cost, std::vector<Vector> hists, double eps, std::uint64_t s = 0)
      : C(std::move(cost)), b(std::move(hists)), epsilon(eps), seed(s) {
    if (b.empty()) throw InvalidArgument("barycenter: needs at least one histogram");
    for (const Vector& h : b) {
      if (h.size() != C.cols()) throw InvalidArgument("barycenter: histogram length must match cost columns");
      marginals.push_back(ProblemInstance::entropic_ot(C, h, epsilon, seed));
    }
  }

  std::size_t n() const { return static_cast<std::size_t>(C.rows()); }
  std::size_t m() const { return static_cast<std::size_t>(C.cols()); }
  std::size_t N() const { return b.size(); }
};

// Squared-distance cost on uniform grids of [0, 1]; histograms are
// normalized iid uniform draws from RngStream(seed, 4).
inline BarycenterProblem make_barycenter(std::size_t n, std::size_t m, std::size_t N, double epsilon,
                                         std::uint64_t seed) {
  if (n < 1 || m < 1 || N < 1) throw InvalidArgument("make_barycenter: dimensions must be >= 1");
  RngStream rng(seed, 4);
  std::vector<Vector> hists;
  for (std::size_t i = 0; i < N; ++i) hists.push_back(detail::random_histogram(m, rng));
  return BarycenterProblem(detail::grid_cost(n, m), std::move(hists), epsilon, seed);
}

inline nlohmann::json to_json(const BarycenterProblem& bp) {
  nlohmann::json j;
  j["kind"] = "barycenter";
  j["n"] = bp.n();
  j["m"] = bp.m();
  j["N"] = bp.N();
  j["epsilon"] = bp.epsilon;
  j["seed"] = bp.seed;
  return j;
}

inline std::string instance_hash(const BarycenterProblem& bp) {
  std::string content = to_json(bp).dump() + '\n';
  const Matrix rowmajor = bp.C.transpose();
  detail::append_doubles(content, rowmajor.data(), static_cast<std::size_t>(rowmajor.size()));
  for (const Vector& h : bp.b) detail::append_doubles(content, h.data(), static_cast<std::size_t>(h.size()));
  return git_blob_hash(content);
}

// Sinkhorn sweeps from z until |grad_z L| <= tol (checked every 10 sweeps)
// or max_sweeps. Returns the number of sweeps taken.
inline std::size_t converge_potentials(const ProblemInstance& prob, const Vector& x, Vector& z, double tol,
                                       std::size_t max_sweeps) {
  const Eigen::Index mb = prob.mb();
  std::size_t k = 0;
  while (k < max_sweeps) {
    const sinkhorn::Sweep sw = sinkhorn::sweep(prob, x, z.tail(mb), false);
    z = sinkhorn::concat(sw.za, sw.zb);
    ++k;
    if (k % 10 == 0 && prob.grad_z(z, x).norm() <= tol) break;
  }
  if (!z.allFinite()) throw NonFinite(k, "converged Sinkhorn solve");
  return k;
}

struct BarycenterSolveOptions {
  double tol = 1e-13;
  std::size_t max_sweeps = 20000;
};

// Exact gradient and objective with warm-started converged inner solves.
// `warm` holds one potential per histogram and is updated in place.
struct BarycenterEvaluator {
  const BarycenterProblem* bp = nullptr;
  BarycenterSolveOptions opt;
  std::size_t jobs = 1;
  std::vector<Vector> warm;

  BarycenterEvaluator(const BarycenterProblem& problem, BarycenterSolveOptions o = {}, std::size_t j = 1)
      : bp(&problem), opt(o), jobs(j) {
    for (std::size_t i = 0; i < problem.N(); ++i) warm.push_back(Vector::Zero(problem.marginals[i].cols()));
  }

  void solve(const Vector& x) {
    parallel_for(bp->N(), jobs, [&](std::size_t i) { converge_potentials(bp->marginals[i], x, warm[i], opt.tol, opt.max_sweeps); });
  }
  Vector gradient(const Vector& x) {
    solve(x);
    Vector g = Vector::Zero(x.size());
    for (std::size_t i = 0; i < bp->N(); ++i) g -= bp->marginals[i].grad_x(warm[i], x);
    return g;
  }
  double objective(const Vector& x) {
    solve(x);
    double v = 0.0;
    for (std::size_t i = 0; i < bp->N(); ++i) v -= bp->marginals[i].value(warm[i], x);
    return v;
  }
};

// Estimate of grad l(x) from t_inner sweeps per histogram started at z0 = 0.
// g2 is computed by reverse accumulation through the recorded sweeps.
inline Vector barycenter_gradient(const BarycenterProblem& bp, const Vector& x, const OuterRunConfig& cfg) {
  std::vector<Vector> parts(bp.N());
  parallel_for(bp.N(), cfg.jobs, [&](std::size_t i) {
    const ProblemInstance& prob = bp.marginals[i];
    InnerConfig ic;
    ic.solver = SolverKind::Sinkhorn;
    ic.T = cfg.t_inner;
    ic.track_jacobian = false;
    switch (cfg.estimator) {
      case EstimatorKind::Analytic:
        parts[i] = prob.grad_x(advance_to(prob, x, ic).z, x);
        break;
      case EstimatorKind::Automatic: {
        Tape tape;
        advance_to(prob, x, ic, &tape);
        parts[i] = reverse_unroll(tape, prob, x);
        break;
      }
      case EstimatorKind::Implicit:
        parts[i] = estimate_g3(advance_to(prob, x, ic), prob, x, default_implicit_options(prob, x)).g;
        break;
    }
  });
  Vector g = Vector::Zero(x.size());
  for (const Vector& p : parts) g -= p;
  return g;
}

// x <- x exp(-eta (g - min g)) / normalization. The shift by min g leaves
// the normalized result unchanged and keeps the exponent <= 0. Returns true
// when a component had to be clamped to 1e-300.
inline bool mirror_step(Vector& x, const Vector& g, double eta) {
  const double gmin = g.minCoeff();
  x.array() *= (-eta * (g.array() - gmin)).exp();
  x /= x.sum();
  bool floored = false;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (!(x(i) >= 1e-300)) {
      x(i) = 1e-300;
      floored = true;
    }
  }
  if (floored) x /= x.sum();
  return floored;
}

struct BarycenterRunOptions {
  // Evaluate the objective with converged inner solves every k steps (0: never).
  std::size_t monitor_every = 0;
  double monotonicity_tol = 1e-6;
  // Throw DomainError instead of clamping underflowing components.
  bool strict_domain = false;
  BarycenterSolveOptions solve;
  std::optional<Vector> x_star;
};

// Mirror descent x_{q+1} = P(exp(-eta g) x_q), P(x) = x / sum(x), with g the
// chosen estimate (or the converged gradient when cfg.exact).
inline OuterTrace mirror_descent_barycenter(const BarycenterProblem& bp, const Vector& x0, const OuterRunConfig& cfg,
                                            const BarycenterRunOptions& opt = {}) {
  cfg.validate();
  if (x0.size() != static_cast<Eigen::Index>(bp.n())) throw InvalidArgument("barycenter: x0 has wrong length");
  if (!(x0.minCoeff() > 0.0) || std::abs(x0.sum() - 1.0) > 1e-12) {
    throw DomainError("barycenter: x0 must be a strictly positive histogram");
  }
  const auto start = std::chrono::steady_clock::now();
  BarycenterEvaluator exact(bp, opt.solve, cfg.jobs);
  BarycenterEvaluator monitor(bp, opt.solve, cfg.jobs);
  OuterTrace trace;
  Vector x = x0;
  auto record = [&](std::size_t q) {
    OuterRecord r;
    r.q = q;
    r.x = x;
    if (opt.x_star) r.error = (x - *opt.x_star).norm();
    if (opt.monitor_every > 0 && (q % opt.monitor_every == 0 || q == cfg.Q)) {
      r.objective = monitor.objective(x);
      for (auto it = trace.records.rbegin(); it != trace.records.rend(); ++it) {
        if (std::isfinite(it->objective)) {
          if (r.objective > it->objective + opt.monotonicity_tol) ++trace.monotonicity_violations;
          break;
        }
      }
    }
    r.wall_ns = detail::elapsed_ns(start);
    trace.records.push_back(std::move(r));
  };
  record(0);
  for (std::size_t q = 0; q < cfg.Q; ++q) {
    const Vector g = cfg.exact ? exact.gradient(x) : barycenter_gradient(bp, x, cfg);
    if (!g.allFinite()) throw NonFinite(q, "barycenter gradient");
    if (mirror_step(x, g, cfg.eta)) {
      if (opt.strict_domain) throw DomainError("barycenter: iterate component underflowed at q = " + std::to_string(q + 1));
      trace.floored = true;
    }
    record(q + 1);
  }
  return trace;
}

struct BarycenterReference {
  Vector x;
  double objective = 0.0;
  // |x (g - <x, g>)|: the simplex-projected stationarity residual
  double residual = 0.0;
  std::size_t steps = 0;
};

struct BarycenterReferenceOptions {
  double eta = 1.0;
  std::size_t max_steps = 5000;
  std::size_t sweeps_per_step = 30;
  double tol = 1e-15;
};

inline double stationarity_residual(const Vector& x, const Vector& g) {
  return (x.array() * (g.array() - x.dot(g))).matrix().norm();
}

// Long mirror-descent run with warm-started inner solves, stopped once the
// stationarity residual reaches tol, then polished with converged solves.
inline BarycenterReference barycenter_reference(const BarycenterProblem& bp, const Vector& x0,
                                                const BarycenterReferenceOptions& opt = {}, std::size_t jobs = 1) {
  std::vector<Vector> warm;
  for (std::size_t i = 0; i < bp.N(); ++i) warm.push_back(Vector::Zero(bp.marginals[i].cols()));
  BarycenterReference ref;
  Vector x = x0;
  Vector g(x.size());
  auto grad = [&] {
    parallel_for(bp.N(), jobs, [&](std::size_t i) {
      const ProblemInstance& prob = bp.marginals[i];
      const Eigen::Index mb = prob.mb();
      for (std::size_t k = 0; k < opt.sweeps_per_step; ++k) {
        const sinkhorn::Sweep sw = sinkhorn::sweep(prob, x, warm[i].tail(mb), false);
        warm[i] = sinkhorn::concat(sw.za, sw.zb);
      }
    });
    g.setZero();
    for (std::size_t i = 0; i < bp.N(); ++i) g -= bp.marginals[i].grad_x(warm[i], x);
  };
  std::size_t q = 0;
  for (; q < opt.max_steps; ++q) {
    grad();
    if (!g.allFinite()) throw NonFinite(q, "barycenter reference");
    if (stationarity_residual(x, g) <= opt.tol) break;
    mirror_step(x, g, opt.eta);
  }
  BarycenterEvaluator ev(bp, {}, jobs);
  ev.warm = warm;
  ref.x = x;
  ref.residual = stationarity_residual(x, ev.gradient(x));
  ref.objective = ev.objective(x);
  ref.steps = q;
  return ref;
}

// l(x) - l(x_ref) as the integral of <grad l(x_ref + s d), d> over s in
// [0, 1], d = x - x_ref, by 8-point Gauss-Legendre with converged inner
// solves. Avoids the cancellation of subtracting two objective values.
// d is centered so that the constant gauge shift of the gradient drops out.
inline double barycenter_gap(const BarycenterProblem& bp, const Vector& x, const Vector& x_ref,
                             const BarycenterSolveOptions& opt = {}, std::size_t jobs = 1) {
  Vector d = x - x_ref;
  d.array() -= d.mean();
  if (d.norm() == 0.0) return 0.0;
  BarycenterEvaluator ev(bp, opt, jobs);
  auto f = [&](double s) { return ev.gradient(x_ref + s * d).dot(d); };
  return boost::math::quadrature::gauss<double, 8>::integrate(f, 0.0, 1.0);
}

}  // namespace mingrad
