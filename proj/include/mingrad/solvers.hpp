#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mingrad/errors.hpp"
#include "mingrad/numerics.hpp"
#include "mingrad/problems.hpp"
#include "mingrad/rng.hpp"

namespace mingrad {

enum class SolverKind { GD, SGD, Sinkhorn };

inline std::string to_string(SolverKind k) {
  switch (k) {
    case SolverKind::GD: return "gd";
    case SolverKind::SGD: return "sgd";
    case SolverKind::Sinkhorn: return "sinkhorn";
  }
  return "unknown";
}

inline SolverKind default_solver(const ProblemInstance& prob) {
  return prob.kind() == ProblemKind::EntropicOT ? SolverKind::Sinkhorn : SolverKind::GD;
}

// rho_t = rho for Constant, rho0 (t + 1)^(-alpha) for Polynomial
class StepSchedule {
 public:
  enum class Kind { Constant, Polynomial };

  static StepSchedule constant(double rho) {
    if (!(rho > 0.0)) throw InvalidArgument("step size must be > 0");
    return StepSchedule(Kind::Constant, rho, 0.0);
  }
  static StepSchedule polynomial(double rho0, double alpha) {
    if (!(rho0 > 0.0)) throw InvalidArgument("step size must be > 0");
    if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidArgument("polynomial schedule requires alpha in (0, 1)");
    return StepSchedule(Kind::Polynomial, rho0, alpha);
  }

  double at(std::size_t t) const {
    if (kind_ == Kind::Constant) return rho0_;
    return rho0_ * std::pow(static_cast<double>(t + 1), -alpha_);
  }
  Kind kind() const { return kind_; }
  double rho0() const { return rho0_; }
  double alpha() const { return alpha_; }

 private:
  StepSchedule(Kind k, double rho0, double alpha) : kind_(k), rho0_(rho0), alpha_(alpha) {}
  Kind kind_;
  double rho0_;
  double alpha_;
};

// Inner iterate z_t with the propagated Jacobian J_t (n x m, J(k, l) =
// dz_l/dx_k). An empty J means the Jacobian is not tracked.
struct SolverState {
  Vector z;
  Matrix J;
  std::size_t t = 0;
  RngStream rng;

  bool tracks_jacobian() const { return J.size() > 0; }
};

inline SolverState initial_state(const ProblemInstance& prob, bool track_jacobian = true, RngStream rng = {},
                                 const std::optional<Vector>& z0 = std::nullopt) {
  SolverState s;
  if (z0) {
    if (z0->size() != prob.cols()) throw InvalidArgument("initial_state: z0 has wrong length");
    s.z = *z0;
  } else {
    s.z = Vector::Zero(prob.cols());
  }
  if (track_jacobian) s.J = Matrix::Zero(prob.rows(), prob.cols());
  s.rng = std::move(rng);
  return s;
}

// Ordered record of z_0..z_T, with the step size and sampled index used by
// each of the T steps.
struct Tape {
  SolverKind kind = SolverKind::GD;
  std::vector<Vector> z;
  std::vector<double> rho;
  std::vector<std::size_t> xi;

  std::size_t steps() const { return z.empty() ? 0 : z.size() - 1; }
  bool empty() const { return z.empty(); }
};

namespace detail {

inline void check_finite(const SolverState& s, const char* what) {
  if (!s.z.allFinite() || (s.tracks_jacobian() && !s.J.allFinite())) throw NonFinite(s.t, what);
}

inline Vector gd_map(const ProblemInstance& prob, const Vector& x, const Vector& z, double rho) {
  return z - rho * prob.grad_z(z, x);
}

inline Vector sgd_map(const StochasticComponent& c, const Vector& z, double rho) { return z - rho * c.grad_z; }

}  // namespace detail

namespace sinkhorn {

// One sweep z_a <- eps LSE_j(-(C_ij + z_b_j)/eps) - eps log x, then
// z_b <- eps LSE_i(-(C_ij + z_a_i)/eps) - eps log b, together with the
// softmax weights of both half-steps:
//   S_ij = dz_a'_i / d(-z_b_j)   (rows sum to 1)
//   T_ij = dz_b'_j / d(-z_a'_i)  (columns sum to 1)
// When the kernel exp(-C/eps) cannot underflow the sums are taken in kernel
// space, S = diag(1/r) K diag(w) and T = diag(v) K diag(1/c), and neither
// matrix is formed. Otherwise S and T are stored explicitly.
struct Sweep {
  Vector za;
  Vector zb;
  bool kernel = true;
  Vector w, r, v, c;
  Matrix S, T;

  // S^T y for y of length m_a
  Vector S_transpose_times(const ProblemInstance& prob, const Vector& y) const {
    if (kernel) return w.cwiseProduct(prob.kernel().transpose() * y.cwiseQuotient(r));
    return S.transpose() * y;
  }
  // T y for y of length m_b
  Vector T_times(const ProblemInstance& prob, const Vector& y) const {
    if (kernel) return v.cwiseProduct(prob.kernel() * y.cwiseQuotient(c));
    return T * y;
  }
  // Jb S^T for Jb of shape n x m_b
  Matrix right_S_transpose(const ProblemInstance& prob, const Matrix& Jb) const {
    if (kernel) return ((Jb * w.asDiagonal()) * prob.kernel().transpose()) * r.cwiseInverse().asDiagonal();
    return Jb * S.transpose();
  }
  // Ja T for Ja of shape n x m_a
  Matrix right_T(const ProblemInstance& prob, const Matrix& Ja) const {
    if (kernel) return ((Ja * v.asDiagonal()) * prob.kernel()) * c.cwiseInverse().asDiagonal();
    return Ja * T;
  }
};

inline Sweep sweep(const ProblemInstance& prob, const Vector& x, const Vector& zb, bool want_weights) {
  const double eps = prob.epsilon();
  const Matrix& C = prob.C();
  Sweep out;
  out.kernel = prob.kernel_safe();
  if (out.kernel) {
    const Vector sb = -zb / eps;
    const double mb = sb.maxCoeff();
    out.w = (sb.array() - mb).exp().matrix();
    out.r = prob.kernel() * out.w;
    out.za = eps * (mb + out.r.array().log()).matrix() - eps * x.array().log().matrix();
    const Vector sa = -out.za / eps;
    const double ma = sa.maxCoeff();
    out.v = (sa.array() - ma).exp().matrix();
    out.c = prob.kernel().transpose() * out.v;
    out.zb = eps * (ma + out.c.array().log()).matrix() - eps * prob.b_hist().array().log().matrix();
    return out;
  }
  Matrix E = (-C).rowwise() - zb.transpose();
  E /= eps;
  out.za = Vector(C.rows());
  for (Eigen::Index i = 0; i < C.rows(); ++i) out.za(i) = eps * logsumexp(E.row(i)) - eps * std::log(x(i));
  if (want_weights) {
    out.S = E;
    for (Eigen::Index i = 0; i < C.rows(); ++i) out.S.row(i).array() = (E.row(i).array() - (out.za(i) + eps * std::log(x(i))) / eps).exp();
  }
  Matrix F = (-C).colwise() - out.za;
  F /= eps;
  out.zb = Vector(C.cols());
  const Vector& b = prob.b_hist();
  for (Eigen::Index j = 0; j < C.cols(); ++j) out.zb(j) = eps * logsumexp(F.col(j)) - eps * std::log(b(j));
  if (want_weights) {
    out.T = F;
    for (Eigen::Index j = 0; j < C.cols(); ++j) out.T.col(j).array() = (F.col(j).array() - (out.zb(j) + eps * std::log(b(j))) / eps).exp();
  }
  return out;
}

inline Vector concat(const Vector& a, const Vector& b) {
  Vector z(a.size() + b.size());
  z << a, b;
  return z;
}

}  // namespace sinkhorn

// In-place steps. Each returns after advancing s.t; NonFinite carries the
// index of the step that produced the bad value.

inline void gd_advance(SolverState& s, const ProblemInstance& prob, const Vector& x, double rho) {
  if (!(rho > 0.0)) throw InvalidArgument("gd_step: rho must be > 0");
  Vector z = detail::gd_map(prob, x, s.z, rho);
  if (s.tracks_jacobian()) s.J -= rho * prob.pushforward(s.z, x, s.J);
  s.z = std::move(z);
  ++s.t;
  detail::check_finite(s, "gradient step");
}

// Returns the sampled index.
inline std::size_t sgd_advance(SolverState& s, const ProblemInstance& prob, const Vector& x, double rho) {
  if (!prob.finite_sum()) throw Unsupported("sgd_step: " + to_string(prob.kind()) + " has no stochastic components");
  if (!(rho > 0.0)) throw InvalidArgument("sgd_step: rho must be > 0");
  const std::size_t xi = s.rng.uniform_index(prob.n());
  const StochasticComponent c = prob.component(xi, s.z, x);
  Vector z = detail::sgd_map(c, s.z, rho);
  if (s.tracks_jacobian()) s.J -= rho * c.pushforward(s.J);
  s.z = std::move(z);
  ++s.t;
  detail::check_finite(s, "stochastic gradient step");
  return xi;
}

inline void sinkhorn_advance(SolverState& s, const ProblemInstance& prob, const Vector& x) {
  if (prob.kind() != ProblemKind::EntropicOT) throw Unsupported("sinkhorn_step: requires an entropic OT instance");
  prob.check_point(s.z, x);
  const Eigen::Index ma = prob.ma();
  const Eigen::Index mb = prob.mb();
  const sinkhorn::Sweep sw = sinkhorn::sweep(prob, x, s.z.tail(mb), s.tracks_jacobian());
  if (s.tracks_jacobian()) {
    // J_a' = -J_b S^T - eps diag(1/x),  J_b' = -J_a' T
    Matrix Ja = -sw.right_S_transpose(prob, s.J.rightCols(mb));
    Ja.diagonal() -= prob.epsilon() * x.cwiseInverse();
    Matrix Jb = -sw.right_T(prob, Ja);
    s.J.leftCols(ma) = Ja;
    s.J.rightCols(mb) = Jb;
  }
  s.z = sinkhorn::concat(sw.za, sw.zb);
  ++s.t;
  detail::check_finite(s, "Sinkhorn sweep");
}

inline SolverState gd_step(const SolverState& state, const ProblemInstance& prob, const Vector& x, double rho) {
  SolverState s = state;
  gd_advance(s, prob, x, rho);
  return s;
}

inline SolverState sgd_step(const SolverState& state, const ProblemInstance& prob, const Vector& x,
                            const StepSchedule& schedule) {
  SolverState s = state;
  sgd_advance(s, prob, x, schedule.at(state.t));
  return s;
}

inline SolverState sinkhorn_step(const SolverState& state, const ProblemInstance& prob, const Vector& x) {
  SolverState s = state;
  sinkhorn_advance(s, prob, x);
  return s;
}

struct InnerConfig {
  SolverKind solver = SolverKind::GD;
  StepSchedule schedule = StepSchedule::constant(1.0);
  std::size_t T = 0;
  std::size_t record_every = 1;
  bool track_jacobian = true;
  bool record_tape = false;
  std::optional<Vector> z0;
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
};

// Default GD configuration with rho = 1/L_z.
inline InnerConfig gd_config(const ProblemInstance& prob, const Vector& x, std::size_t T) {
  InnerConfig cfg;
  cfg.solver = default_solver(prob);
  if (cfg.solver == SolverKind::GD) cfg.schedule = StepSchedule::constant(1.0 / prob.smoothness(x));
  cfg.T = T;
  return cfg;
}

// Runs cfg.T steps from the initial state, calling visit(state) at t = 0 and
// after every step. Appends to *tape when given.
template <class Visit>
SolverState iterate(const ProblemInstance& prob, const Vector& x, const InnerConfig& cfg, Tape* tape, Visit&& visit) {
  prob.check_point(cfg.z0 ? *cfg.z0 : Vector::Zero(prob.cols()), x);
  if (cfg.solver == SolverKind::Sinkhorn && prob.kind() != ProblemKind::EntropicOT) {
    throw Unsupported("Sinkhorn solver requires an entropic OT instance");
  }
  if (cfg.solver != SolverKind::Sinkhorn && prob.kind() == ProblemKind::EntropicOT) {
    throw Unsupported("entropic OT instances are solved with Sinkhorn sweeps");
  }
  SolverState s = initial_state(prob, cfg.track_jacobian, RngStream(cfg.seed, cfg.stream), cfg.z0);
  if (tape) {
    tape->kind = cfg.solver;
    tape->z.clear();
    tape->rho.clear();
    tape->xi.clear();
    tape->z.reserve(cfg.T + 1);
    tape->z.push_back(s.z);
  }
  visit(static_cast<const SolverState&>(s));
  for (std::size_t k = 0; k < cfg.T; ++k) {
    switch (cfg.solver) {
      case SolverKind::GD: {
        const double rho = cfg.schedule.at(s.t);
        gd_advance(s, prob, x, rho);
        if (tape) tape->rho.push_back(rho);
        break;
      }
      case SolverKind::SGD: {
        const double rho = cfg.schedule.at(s.t);
        const std::size_t xi = sgd_advance(s, prob, x, rho);
        if (tape) {
          tape->rho.push_back(rho);
          tape->xi.push_back(xi);
        }
        break;
      }
      case SolverKind::Sinkhorn:
        sinkhorn_advance(s, prob, x);
        if (tape) tape->rho.push_back(0.0);
        break;
    }
    if (tape) tape->z.push_back(s.z);
    visit(static_cast<const SolverState&>(s));
  }
  return s;
}

inline SolverState advance_to(const ProblemInstance& prob, const Vector& x, const InnerConfig& cfg, Tape* tape = nullptr) {
  return iterate(prob, x, cfg, tape, [](const SolverState&) {});
}

struct InnerRun {
  std::vector<SolverState> states;
  Tape tape;
};

// States at t = 0, k, 2k, ... and T, plus the tape when cfg.record_tape.
inline InnerRun run_inner(const ProblemInstance& prob, const Vector& x, const InnerConfig& cfg) {
  if (cfg.record_every < 1) throw InvalidArgument("run_inner: record_every must be >= 1");
  InnerRun run;
  Tape* tape = cfg.record_tape ? &run.tape : nullptr;
  try {
    SolverState last = iterate(prob, x, cfg, tape, [&](const SolverState& s) {
      if (s.t % cfg.record_every == 0) run.states.push_back(s);
    });
    if (run.states.back().t != last.t) run.states.push_back(std::move(last));
  } catch (const NonFinite&) {
    throw;
  }
  return run;
}

// Gradient of x -> L(z_T(x), x) by backward accumulation through the tape.
// Each step is replayed from z_t and compared bitwise with z_{t+1}.
inline Vector reverse_unroll(const Tape& tape, const ProblemInstance& prob, const Vector& x) {
  if (tape.empty()) throw InvalidArgument("reverse_unroll: empty tape");
  const std::size_t T = tape.steps();
  if (tape.rho.size() != T || (tape.kind == SolverKind::SGD && tape.xi.size() != T)) {
    throw TapeMismatch("reverse_unroll: tape records are inconsistent");
  }
  const Vector& zT = tape.z.back();
  Vector zbar = prob.grad_z(zT, x);
  Vector xbar = prob.grad_x(zT, x);
  auto mismatch = [](std::size_t t) {
    return TapeMismatch("reverse_unroll: replay of step " + std::to_string(t) + " does not reproduce the tape");
  };
  for (std::size_t k = T; k-- > 0;) {
    const Vector& zt = tape.z[k];
    switch (tape.kind) {
      case SolverKind::GD: {
        const double rho = tape.rho[k];
        if (detail::gd_map(prob, x, zt, rho) != tape.z[k + 1]) throw mismatch(k);
        xbar -= rho * prob.cross_vec(zt, x, zbar);
        zbar -= rho * prob.hess_vec(zt, x, zbar);
        break;
      }
      case SolverKind::SGD: {
        const double rho = tape.rho[k];
        const StochasticComponent c = prob.component(tape.xi[k], zt, x);
        if (detail::sgd_map(c, zt, rho) != tape.z[k + 1]) throw mismatch(k);
        xbar -= rho * c.cross_vec(zbar);
        zbar -= rho * c.hess_vec(zbar);
        break;
      }
      case SolverKind::Sinkhorn: {
        const Eigen::Index mb = prob.mb();
        const sinkhorn::Sweep sw = sinkhorn::sweep(prob, x, zt.tail(mb), true);
        if (sinkhorn::concat(sw.za, sw.zb) != tape.z[k + 1]) throw mismatch(k);
        const Vector abar = zbar.head(prob.ma()) - sw.T_times(prob, zbar.tail(mb));
        xbar -= prob.epsilon() * abar.cwiseQuotient(x);
        zbar.head(prob.ma()).setZero();
        zbar.tail(mb) = -sw.S_transpose_times(prob, abar);
        break;
      }
    }
  }
  return xbar;
}

}  // namespace mingrad
