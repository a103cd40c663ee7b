#pragma once

#include <chrono>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <string>

#include "mingrad/errors.hpp"
#include "mingrad/numerics.hpp"
#include "mingrad/problems.hpp"
#include "mingrad/solvers.hpp"

namespace mingrad {

enum class EstimatorKind { Analytic, Automatic, Implicit };

inline std::string to_string(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::Analytic: return "g1";
    case EstimatorKind::Automatic: return "g2";
    case EstimatorKind::Implicit: return "g3";
  }
  return "unknown";
}

inline EstimatorKind parse_estimator(const std::string& s) {
  if (s == "g1" || s == "analytic") return EstimatorKind::Analytic;
  if (s == "g2" || s == "automatic") return EstimatorKind::Automatic;
  if (s == "g3" || s == "implicit") return EstimatorKind::Implicit;
  throw InvalidArgument("unknown estimator '" + s + "'");
}

struct GradientEstimate {
  Vector g;
  EstimatorKind kind = EstimatorKind::Analytic;
  std::size_t t = 0;
  std::int64_t wall_ns = 0;
  double ridge_used = 0.0;
};

struct ImplicitOptions {
  double ridge = 0.0;
  // Solve consistent singular systems on the range of the Hessian. Exact
  // for losses whose cross derivative vanishes on the Hessian null space
  // (Ridge with lambda = 0, least-p-th).
  bool truncate_null_space = false;
};

namespace detail {

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  std::int64_t ns() const {
    return std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

inline void check_estimate(const Vector& g, std::size_t t, const char* what) {
  if (!g.allFinite()) throw NonFinite(t, what);
}

inline SymmetricSolve implicit_solve(const Matrix& H, const Vector& rhs, const ImplicitOptions& opt) {
  SolveOptions so;
  so.truncate_null_space = opt.truncate_null_space;
  return solve_symmetric_detailed(H, rhs, opt.ridge, so);
}

}  // namespace detail

// g1 = grad_x L(z_t, x)
inline GradientEstimate estimate_g1(const SolverState& s, const ProblemInstance& prob, const Vector& x) {
  detail::Stopwatch sw;
  GradientEstimate e;
  e.g = prob.grad_x(s.z, x);
  e.kind = EstimatorKind::Analytic;
  e.t = s.t;
  e.wall_ns = sw.ns();
  detail::check_estimate(e.g, s.t, "analytic estimate");
  return e;
}

// g2 = grad_x L(z_t, x) + J_t grad_z L(z_t, x)
inline GradientEstimate estimate_g2(const SolverState& s, const ProblemInstance& prob, const Vector& x) {
  if (!s.tracks_jacobian()) throw InvalidArgument("estimate_g2: state does not carry a Jacobian");
  detail::Stopwatch sw;
  GradientEstimate e;
  e.g = prob.grad_x(s.z, x) + s.J * prob.grad_z(s.z, x);
  e.kind = EstimatorKind::Automatic;
  e.t = s.t;
  e.wall_ns = sw.ns();
  detail::check_estimate(e.g, s.t, "automatic estimate");
  return e;
}

// g3 = grad_x L - cross_xz L [hess_zz L]^{-1} grad_z L, all at (z_t, x)
inline GradientEstimate estimate_g3(const SolverState& s, const ProblemInstance& prob, const Vector& x,
                                    const ImplicitOptions& opt = {}) {
  detail::Stopwatch sw;
  const Matrix H = prob.hess_zz(s.z, x);
  const SymmetricSolve sol = detail::implicit_solve(H, prob.grad_z(s.z, x), opt);
  GradientEstimate e;
  e.g = prob.grad_x(s.z, x) - prob.cross_vec(s.z, x, sol.y);
  e.kind = EstimatorKind::Implicit;
  e.t = s.t;
  e.ridge_used = sol.ridge_used;
  e.wall_ns = sw.ns();
  detail::check_estimate(e.g, s.t, "implicit estimate");
  return e;
}

inline GradientEstimate estimate(EstimatorKind kind, const SolverState& s, const ProblemInstance& prob,
                                 const Vector& x, const ImplicitOptions& opt = {}) {
  switch (kind) {
    case EstimatorKind::Analytic: return estimate_g1(s, prob, x);
    case EstimatorKind::Automatic: return estimate_g2(s, prob, x);
    case EstimatorKind::Implicit: return estimate_g3(s, prob, x, opt);
  }
  return {};
}

// Implicit options suited to a loss: truncation for the singular-but-
// consistent cases, a tiny ridge for the entropic OT gauge direction.
inline ImplicitOptions default_implicit_options(const ProblemInstance& prob, const Vector& x) {
  ImplicitOptions opt;
  if (prob.kind() == ProblemKind::LeastPth || (prob.kind() == ProblemKind::Ridge && prob.lambda() == 0.0)) {
    opt.truncate_null_space = true;
  }
  if (prob.kind() == ProblemKind::EntropicOT) {
    opt.ridge = 1e-10 * spectral_norm(prob.hess_zz(Vector::Zero(prob.cols()), x), 50, prob.seed());
  }
  return opt;
}

enum class ReferenceMethod { LongRun, Analytic };

struct ReferenceGradient {
  Vector g_star;
  Vector z_ref;
  std::size_t T_ref = 0;
  double grad_norm_at_ref = 0.0;
  double tol = 0.0;
  bool converged = true;
  ReferenceMethod method = ReferenceMethod::LongRun;
  // entropic OT: component of z_ref along the gauge direction (1, -1)
  double gauge_drift = 0.0;
};

inline const ReferenceGradient& require_converged(const ReferenceGradient& ref) {
  if (!ref.converged) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "reference not converged: |grad_z L| = %.3e > tol %.3e after %zu steps",
                  ref.grad_norm_at_ref, ref.tol, ref.T_ref);
    throw NotConverged(buf);
  }
  return ref;
}

// g* = grad_x L(z_ref, x) with z_ref from a long GD (Sinkhorn) run stopped
// once |grad_z L| <= tol. For least-p-th g* = 0 and z_ref = D^T x.
inline ReferenceGradient compute_reference(const ProblemInstance& prob, const Vector& x, std::size_t T_ref,
                                           double tol) {
  if (T_ref < 1) throw InvalidArgument("compute_reference: T_ref must be >= 1");
  prob.check_point(Vector::Zero(prob.cols()), x);
  ReferenceGradient ref;
  ref.tol = tol;
  if (prob.kind() == ProblemKind::LeastPth) {
    ref.method = ReferenceMethod::Analytic;
    ref.g_star = Vector::Zero(prob.rows());
    ref.z_ref = prob.D().transpose() * x;
    ref.grad_norm_at_ref = prob.grad_z(ref.z_ref, x).norm();
    ref.T_ref = 0;
    return ref;
  }
  Vector z = Vector::Zero(prob.cols());
  std::size_t t = 0;
  double gnorm = 0.0;
  if (prob.kind() == ProblemKind::EntropicOT) {
    const Eigen::Index mb = prob.mb();
    for (; t < T_ref; ++t) {
      const sinkhorn::Sweep sw = sinkhorn::sweep(prob, x, z.tail(mb), false);
      z = sinkhorn::concat(sw.za, sw.zb);
      if ((t + 1) % 10 == 0 && prob.grad_z(z, x).norm() <= tol) {
        ++t;
        break;
      }
    }
    if (!z.allFinite()) throw NonFinite(t, "reference Sinkhorn run");
    gnorm = prob.grad_z(z, x).norm();
    const double s = std::sqrt(static_cast<double>(prob.m()));
    ref.gauge_drift = (z.head(prob.ma()).sum() - z.tail(mb).sum()) / s;
  } else {
    const double rho = 1.0 / prob.smoothness(x);
    Vector g = prob.grad_z(z, x);
    gnorm = g.norm();
    while (t < T_ref && gnorm > tol) {
      z -= rho * g;
      g = prob.grad_z(z, x);
      gnorm = g.norm();
      ++t;
      if (!std::isfinite(gnorm)) throw NonFinite(t, "reference gradient run");
    }
  }
  ref.z_ref = z;
  ref.T_ref = t;
  ref.grad_norm_at_ref = gnorm;
  ref.converged = gnorm <= tol;
  ref.g_star = prob.grad_x(z, x);
  return ref;
}

// J* = -cross_xz [hess_zz]^{-1} at z_ref.
inline Matrix reference_jacobian(const ProblemInstance& prob, const Vector& x, const Vector& z_ref,
                                 const ImplicitOptions& opt = {}) {
  const Matrix H = prob.hess_zz(z_ref, x);
  const Matrix X = prob.cross_xz(z_ref, x);
  Matrix J(X.rows(), X.cols());
  for (Eigen::Index k = 0; k < X.rows(); ++k) {
    J.row(k) = -detail::implicit_solve(H, X.row(k).transpose(), opt).y.transpose();
  }
  return J;
}

// Outer loss L'(z, x) with its first derivatives.
template <class L>
concept LossOracle = requires(const L& f, const Vector& z, const Vector& x) {
  { f.value(z, x) } -> std::convertible_to<double>;
  { f.grad_z(z, x) } -> std::convertible_to<Vector>;
  { f.grad_x(z, x) } -> std::convertible_to<Vector>;
};

// L'(z, x) = <c, z> + x^T B z, linear in z. B may be empty (treated as 0).
struct LinearOuterLoss {
  Vector c;
  Matrix B;

  double value(const Vector& z, const Vector& x) const {
    double v = c.dot(z);
    if (B.size() > 0) v += x.dot(B * z);
    return v;
  }
  Vector grad_z(const Vector& z, const Vector& x) const {
    (void)z;
    if (B.size() > 0) return c + B.transpose() * x;
    return c;
  }
  Vector grad_x(const Vector& z, const Vector& x) const {
    if (B.size() > 0) return B * z;
    return Vector::Zero(x.size());
  }
};

// L'(z, x) = 1/2 |z - c|^2 + x^T B z
struct QuadraticOuterLoss {
  Vector c;
  Matrix B;

  double value(const Vector& z, const Vector& x) const { return 0.5 * (z - c).squaredNorm() + x.dot(B * z); }
  Vector grad_z(const Vector& z, const Vector& x) const { return z - c + B.transpose() * x; }
  Vector grad_x(const Vector& z, const Vector&) const { return B * z; }
};

struct BilevelEstimates {
  GradientEstimate g1;
  GradientEstimate g2;
  GradientEstimate g3;
};

// g'1 = grad_x L'(z_t, x); g'2 adds J_t grad_z L'; g'3 adds the implicit
// Jacobian -cross_xz L [hess_zz L]^{-1} applied to grad_z L'.
template <LossOracle Outer>
BilevelEstimates bilevel_estimates(const SolverState& s, const ProblemInstance& inner, const Outer& outer,
                                   const Vector& x, const ImplicitOptions& opt = {}) {
  inner.check_point(s.z, x);
  const Vector gx = outer.grad_x(s.z, x);
  const Vector gz = outer.grad_z(s.z, x);
  BilevelEstimates out;
  {
    detail::Stopwatch sw;
    out.g1 = {gx, EstimatorKind::Analytic, s.t, sw.ns(), 0.0};
  }
  if (s.tracks_jacobian()) {
    detail::Stopwatch sw;
    out.g2 = {gx + s.J * gz, EstimatorKind::Automatic, s.t, 0, 0.0};
    out.g2.wall_ns = sw.ns();
  }
  {
    detail::Stopwatch sw;
    const SymmetricSolve sol = detail::implicit_solve(inner.hess_zz(s.z, x), gz, opt);
    out.g3 = {gx - inner.cross_vec(s.z, x, sol.y), EstimatorKind::Implicit, s.t, 0, sol.ridge_used};
    out.g3.wall_ns = sw.ns();
  }
  return out;
}

// Exact bilevel gradient at the inner solution z_ref.
template <LossOracle Outer>
Vector bilevel_reference(const ProblemInstance& inner, const Outer& outer, const Vector& x, const Vector& z_ref,
                         const ImplicitOptions& opt = {}) {
  const SymmetricSolve sol = detail::implicit_solve(inner.hess_zz(z_ref, x), outer.grad_z(z_ref, x), opt);
  return outer.grad_x(z_ref, x) - inner.cross_vec(z_ref, x, sol.y);
}

// g2 - g* = R(J_t)(z_t - z*) + R_xz + J_t R_zz with
//   R(J) = J hess_zz* + cross_xz*
//   R_xz = grad_x L(z_t) - g* - cross_xz* (z_t - z*)
//   R_zz = grad_z L(z_t) - hess_zz* (z_t - z*)
struct Decomposition {
  Matrix R_of_J;
  double R_of_J_norm = 0.0;
  Vector R_xz;
  Vector R_zz;
  Vector linear_term;
  double reconstruction_error = 0.0;  // relative to |g2 - g*|
};

inline Decomposition decompose_error(const SolverState& s, const ProblemInstance& prob, const Vector& x,
                                     const ReferenceGradient& ref) {
  if (!s.tracks_jacobian()) throw InvalidArgument("decompose_error: state does not carry a Jacobian");
  const Vector& zs = ref.z_ref;
  const Vector dz = s.z - zs;
  const Matrix H = prob.hess_zz(zs, x);
  const Matrix X = prob.cross_xz(zs, x);
  Decomposition d;
  d.R_of_J = s.J * H + X;
  d.R_of_J_norm = spectral_norm(d.R_of_J, 100, 0);
  d.R_xz = prob.grad_x(s.z, x) - ref.g_star - X * dz;
  d.R_zz = prob.grad_z(s.z, x) - H * dz;
  d.linear_term = d.R_of_J * dz;
  const Vector err = estimate_g2(s, prob, x).g - ref.g_star;
  const Vector recon = d.linear_term + d.R_xz + s.J * d.R_zz;
  d.reconstruction_error = (err - recon).norm() / std::max(err.norm(), 1e-300);
  return d;
}

}  // namespace mingrad
