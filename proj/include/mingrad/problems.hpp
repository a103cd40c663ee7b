#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>

#include "json.hpp"

#include "mingrad/errors.hpp"
#include "mingrad/numerics.hpp"
#include "mingrad/rng.hpp"

namespace mingrad {

// Inner losses L(z, x):
//   Ridge       1/2 |x - Dz|^2 + lambda/2 |z|^2
//   Logistic    (1/n) sum_i log(1 + exp(-x_i [Dz]_i)) + lambda/2 |z|^2
//   LeastPth    (1/p) sum_i (x - Dz)_i^p, with D D^T = I
//   EntropicOT  <x, z_a> + <b, z_b> + eps sum_ij exp(-(z_a_i + C_ij + z_b_j)/eps), x = a
//   ScaledNorm  1/2 (sum_i x_i) |z|^2
enum class ProblemKind { Ridge, Logistic, LeastPth, EntropicOT, ScaledNorm };

inline std::string to_string(ProblemKind k) {
  switch (k) {
    case ProblemKind::Ridge: return "ridge";
    case ProblemKind::Logistic: return "logistic";
    case ProblemKind::LeastPth: return "least-pth";
    case ProblemKind::EntropicOT: return "entropic-ot";
    case ProblemKind::ScaledNorm: return "scaled-norm";
  }
  return "unknown";
}

inline ProblemKind parse_problem_kind(const std::string& s) {
  if (s == "ridge") return ProblemKind::Ridge;
  if (s == "logistic") return ProblemKind::Logistic;
  if (s == "least-pth" || s == "pth") return ProblemKind::LeastPth;
  if (s == "entropic-ot" || s == "ot" || s == "wasserstein") return ProblemKind::EntropicOT;
  if (s == "scaled-norm") return ProblemKind::ScaledNorm;
  throw InvalidArgument("unknown loss '" + s + "'");
}

struct Derivatives {
  double value = 0.0;
  Vector grad_z;
  Vector grad_x;
  Matrix hess_zz;   // m x m
  Matrix cross_xz;  // n x m, entry (i, j) = d^2 L / dx_i dz_j
};

// One term C(z, x, xi) of a finite-sum loss. Both second derivatives are
// rank one plus the regularizer:
//   hess_zz C = weight d d^T + lambda I,   cross_xz C = e_xi (cross d)^T
// where d is row xi of D.
struct StochasticComponent {
  std::size_t xi = 0;
  std::size_t n = 0;
  double value = 0.0;
  Vector grad_z;
  Vector grad_x;
  Vector d;
  double weight = 0.0;
  double cross = 0.0;
  double lambda = 0.0;

  Matrix hess_zz() const {
    Matrix H = weight * d * d.transpose();
    H.diagonal().array() += lambda;
    return H;
  }
  Matrix cross_xz() const {
    Matrix X = Matrix::Zero(static_cast<Eigen::Index>(n), d.size());
    X.row(static_cast<Eigen::Index>(xi)) = cross * d.transpose();
    return X;
  }
  Vector hess_vec(const Vector& v) const { return weight * d.dot(v) * d + lambda * v; }
  Vector cross_vec(const Vector& v) const {
    Vector out = Vector::Zero(static_cast<Eigen::Index>(n));
    out(static_cast<Eigen::Index>(xi)) = cross * d.dot(v);
    return out;
  }
  // J hess_zz C + cross_xz C
  Matrix pushforward(const Matrix& J) const {
    Matrix out = lambda * J;
    out.noalias() += (weight * (J * d)) * d.transpose();
    out.row(static_cast<Eigen::Index>(xi)) += cross * d.transpose();
    return out;
  }
};

class ProblemInstance {
 public:
  static ProblemInstance ridge(Matrix D, double lambda, std::uint64_t seed = 0) {
    if (!(lambda >= 0.0)) throw InvalidArgument("ridge: lambda must be >= 0");
    return design_problem(ProblemKind::Ridge, std::move(D), lambda, 2, seed);
  }
  static ProblemInstance logistic(Matrix D, double lambda, std::uint64_t seed = 0) {
    if (!(lambda >= 0.0)) throw InvalidArgument("logistic: lambda must be >= 0");
    return design_problem(ProblemKind::Logistic, std::move(D), lambda, 2, seed);
  }
  static ProblemInstance least_pth(Matrix D, int p, std::uint64_t seed = 0) {
    if (p < 2 || p % 2 != 0) throw InvalidArgument("least_pth: p must be even and >= 2");
    if (D.cols() < D.rows()) throw InvalidArgument("least_pth: requires m >= n");
    const Matrix G = D * D.transpose();
    if ((G - Matrix::Identity(G.rows(), G.cols())).cwiseAbs().maxCoeff() > 1e-10) {
      throw InvalidArgument("least_pth: D D^T must equal the identity");
    }
    return design_problem(ProblemKind::LeastPth, std::move(D), 0.0, p, seed);
  }
  static ProblemInstance entropic_ot(Matrix C, Vector b, double epsilon, std::uint64_t seed = 0) {
    if (!(epsilon > 0.0)) throw InvalidArgument("entropic_ot: epsilon must be > 0");
    if (C.rows() < 1 || C.cols() < 1) throw InvalidArgument("entropic_ot: empty cost matrix");
    if (b.size() != C.cols()) throw InvalidArgument("entropic_ot: b must have one entry per cost column");
    if (!C.allFinite() || C.minCoeff() < 0.0) throw InvalidArgument("entropic_ot: cost entries must be finite and >= 0");
    if (!b.allFinite() || b.minCoeff() <= 0.0) throw InvalidArgument("entropic_ot: b must be strictly positive");
    if (std::abs(b.sum() - 1.0) > 1e-12) throw InvalidArgument("entropic_ot: b must sum to 1");
    ProblemInstance p;
    p.kind_ = ProblemKind::EntropicOT;
    p.m_a_ = static_cast<std::size_t>(C.rows());
    p.m_b_ = static_cast<std::size_t>(C.cols());
    p.n_ = p.m_a_;
    p.m_ = p.m_a_ + p.m_b_;
    p.eps_ = epsilon;
    p.K_ = (-C / epsilon).array().exp().matrix();
    p.kernel_safe_ = C.maxCoeff() / epsilon < 650.0;
    p.C_ = std::move(C);
    p.b_ = std::move(b);
    p.seed_ = seed;
    return p;
  }
  static ProblemInstance scaled_norm(std::size_t n, std::size_t m) {
    if (n < 1 || m < 1) throw InvalidArgument("scaled_norm: dimensions must be >= 1");
    ProblemInstance p;
    p.kind_ = ProblemKind::ScaledNorm;
    p.n_ = n;
    p.m_ = m;
    p.generated_ = true;
    return p;
  }

  ProblemKind kind() const { return kind_; }
  std::size_t n() const { return n_; }
  std::size_t m() const { return m_; }
  Eigen::Index rows() const { return static_cast<Eigen::Index>(n_); }
  Eigen::Index cols() const { return static_cast<Eigen::Index>(m_); }
  const Matrix& D() const { return D_; }
  double lambda() const { return lambda_; }
  int p() const { return p_; }
  double epsilon() const { return eps_; }
  const Matrix& C() const { return C_; }
  const Matrix& kernel() const { return K_; }
  // exp(-C/eps) has no entry below ~1e-282, so kernel-space Sinkhorn sums
  // cannot underflow
  bool kernel_safe() const { return kernel_safe_; }
  const Vector& b_hist() const { return b_; }
  std::size_t m_a() const { return m_a_; }
  std::size_t m_b() const { return m_b_; }
  std::uint64_t seed() const { return seed_; }
  bool generated() const { return generated_; }
  bool finite_sum() const { return kind_ == ProblemKind::Ridge || kind_ == ProblemKind::Logistic; }

  void mark_generated() { generated_ = true; }

  void check_point(const Vector& z, const Vector& x) const {
    if (z.size() != cols()) throw InvalidArgument("z has length " + std::to_string(z.size()) + ", expected " + std::to_string(m_));
    if (x.size() != rows()) throw InvalidArgument("x has length " + std::to_string(x.size()) + ", expected " + std::to_string(n_));
    if (kind_ == ProblemKind::EntropicOT && !(x.minCoeff() > 0.0)) {
      throw DomainError("entropic OT requires a strictly positive histogram x");
    }
  }

  // Exposed strong-convexity constant (lambda for the regularized losses).
  double strong_convexity(const Vector& x) const {
    switch (kind_) {
      case ProblemKind::Ridge:
      case ProblemKind::Logistic: return lambda_;
      case ProblemKind::ScaledNorm: return x.sum();
      default: return 0.0;
    }
  }

  // L_z = 1.1 * |hess_zz(z0, x)|
  double smoothness(const Vector& z0, const Vector& x) const {
    return 1.1 * spectral_norm(hess_zz(z0, x), 200, seed_);
  }
  double smoothness(const Vector& x) const { return smoothness(Vector::Zero(cols()), x); }

  double value(const Vector& z, const Vector& x) const {
    check_point(z, x);
    switch (kind_) {
      case ProblemKind::Ridge: {
        const Vector r = x - D_ * z;
        return 0.5 * r.squaredNorm() + 0.5 * lambda_ * z.squaredNorm();
      }
      case ProblemKind::Logistic: {
        const Vector u = D_ * z;
        double s = 0.0;
        for (Eigen::Index i = 0; i < rows(); ++i) s += softplus_neg(x(i) * u(i));
        return s / static_cast<double>(n_) + 0.5 * lambda_ * z.squaredNorm();
      }
      case ProblemKind::LeastPth: {
        const Vector r = x - D_ * z;
        return r.array().pow(p_).sum() / p_;
      }
      case ProblemKind::EntropicOT: {
        const Matrix P = transport_plan(z);
        return x.dot(z.head(ma())) + b_.dot(z.tail(mb())) + eps_ * P.sum();
      }
      case ProblemKind::ScaledNorm: return 0.5 * x.sum() * z.squaredNorm();
    }
    return 0.0;
  }

  Vector grad_z(const Vector& z, const Vector& x) const {
    check_point(z, x);
    switch (kind_) {
      case ProblemKind::Ridge: return -(D_.transpose() * (x - D_ * z)) + lambda_ * z;
      case ProblemKind::Logistic: {
        const Vector u = D_ * z;
        Vector w(rows());
        for (Eigen::Index i = 0; i < rows(); ++i) w(i) = x(i) * -sigmoid(-x(i) * u(i));
        return D_.transpose() * w / static_cast<double>(n_) + lambda_ * z;
      }
      case ProblemKind::LeastPth: {
        const Vector r = x - D_ * z;
        return -(D_.transpose() * r.array().pow(p_ - 1).matrix());
      }
      case ProblemKind::EntropicOT: {
        const Matrix P = transport_plan(z);
        Vector g(cols());
        g.head(ma()) = x - P.rowwise().sum();
        g.tail(mb()) = b_ - P.colwise().sum().transpose();
        return g;
      }
      case ProblemKind::ScaledNorm: return x.sum() * z;
    }
    return {};
  }

  Vector grad_x(const Vector& z, const Vector& x) const {
    check_point(z, x);
    switch (kind_) {
      case ProblemKind::Ridge: return x - D_ * z;
      case ProblemKind::Logistic: {
        const Vector u = D_ * z;
        Vector g(rows());
        for (Eigen::Index i = 0; i < rows(); ++i) g(i) = -sigmoid(-x(i) * u(i)) * u(i) / static_cast<double>(n_);
        return g;
      }
      case ProblemKind::LeastPth: return (x - D_ * z).array().pow(p_ - 1).matrix();
      case ProblemKind::EntropicOT: return z.head(ma());
      case ProblemKind::ScaledNorm: return Vector::Constant(rows(), 0.5 * z.squaredNorm());
    }
    return {};
  }

  Matrix hess_zz(const Vector& z, const Vector& x) const {
    check_point(z, x);
    switch (kind_) {
      case ProblemKind::Ridge: {
        Matrix H = D_.transpose() * D_;
        H.diagonal().array() += lambda_;
        return H;
      }
      case ProblemKind::Logistic: {
        const LogisticTerms lt = logistic_terms(z, x);
        Matrix H = D_.transpose() * lt.w.asDiagonal() * D_;
        H.diagonal().array() += lambda_;
        return H;
      }
      case ProblemKind::LeastPth: {
        const Vector q = pth_curvature(z, x);
        return D_.transpose() * q.asDiagonal() * D_;
      }
      case ProblemKind::EntropicOT: {
        const Matrix P = transport_plan(z);
        Matrix H = Matrix::Zero(cols(), cols());
        H.topLeftCorner(ma(), ma()).diagonal() = P.rowwise().sum() / eps_;
        H.bottomRightCorner(mb(), mb()).diagonal() = P.colwise().sum().transpose() / eps_;
        H.topRightCorner(ma(), mb()) = P / eps_;
        H.bottomLeftCorner(mb(), ma()) = P.transpose() / eps_;
        return H;
      }
      case ProblemKind::ScaledNorm: return x.sum() * Matrix::Identity(cols(), cols());
    }
    return {};
  }

  Matrix cross_xz(const Vector& z, const Vector& x) const {
    check_point(z, x);
    switch (kind_) {
      case ProblemKind::Ridge: return -D_;
      case ProblemKind::Logistic: return logistic_terms(z, x).c.asDiagonal() * D_;
      case ProblemKind::LeastPth: return -(pth_curvature(z, x).asDiagonal() * D_);
      case ProblemKind::EntropicOT: {
        Matrix X = Matrix::Zero(rows(), cols());
        X.leftCols(ma()).setIdentity();
        return X;
      }
      case ProblemKind::ScaledNorm: return Vector::Ones(rows()) * z.transpose();
    }
    return {};
  }

  Derivatives derivatives(const Vector& z, const Vector& x) const {
    return {value(z, x), grad_z(z, x), grad_x(z, x), hess_zz(z, x), cross_xz(z, x)};
  }

  // hess_zz(z, x) v
  Vector hess_vec(const Vector& z, const Vector& x, const Vector& v) const {
    check_point(z, x);
    switch (kind_) {
      case ProblemKind::Ridge: return D_.transpose() * (D_ * v) + lambda_ * v;
      case ProblemKind::Logistic: {
        const LogisticTerms lt = logistic_terms(z, x);
        return D_.transpose() * lt.w.cwiseProduct(D_ * v) + lambda_ * v;
      }
      case ProblemKind::LeastPth: return D_.transpose() * pth_curvature(z, x).cwiseProduct(D_ * v);
      case ProblemKind::EntropicOT: {
        const Matrix P = transport_plan(z);
        const auto va = v.head(ma());
        const auto vb = v.tail(mb());
        Vector out(cols());
        out.head(ma()) = (P.rowwise().sum().cwiseProduct(va) + P * vb) / eps_;
        out.tail(mb()) = (P.transpose() * va + P.colwise().sum().transpose().cwiseProduct(vb)) / eps_;
        return out;
      }
      case ProblemKind::ScaledNorm: return x.sum() * v;
    }
    return {};
  }

  // cross_xz(z, x) v, a vector of length n
  Vector cross_vec(const Vector& z, const Vector& x, const Vector& v) const {
    check_point(z, x);
    switch (kind_) {
      case ProblemKind::Ridge: return -(D_ * v);
      case ProblemKind::Logistic: return logistic_terms(z, x).c.cwiseProduct(D_ * v);
      case ProblemKind::LeastPth: return -pth_curvature(z, x).cwiseProduct(D_ * v);
      case ProblemKind::EntropicOT: return v.head(ma());
      case ProblemKind::ScaledNorm: return Vector::Constant(rows(), z.dot(v));
    }
    return {};
  }

  // J hess_zz(z, x) + cross_xz(z, x), the linear part of one gradient step
  // applied to a running Jacobian J (n x m).
  Matrix pushforward(const Vector& z, const Vector& x, const Matrix& J) const {
    check_point(z, x);
    if (J.rows() != rows() || J.cols() != cols()) throw InvalidArgument("pushforward: Jacobian has wrong shape");
    switch (kind_) {
      case ProblemKind::Ridge: {
        Matrix JDt = J * D_.transpose();
        Matrix out = lambda_ * J - D_;
        out.noalias() += JDt * D_;
        return out;
      }
      case ProblemKind::Logistic: {
        const LogisticTerms lt = logistic_terms(z, x);
        Matrix JDt = J * D_.transpose();
        JDt = JDt * lt.w.asDiagonal();
        Matrix out = lambda_ * J + lt.c.asDiagonal() * D_;
        out.noalias() += JDt * D_;
        return out;
      }
      case ProblemKind::LeastPth: {
        Matrix A = J * D_.transpose();
        A.diagonal().array() -= 1.0;
        A = A * pth_curvature(z, x).asDiagonal();
        return A * D_;
      }
      case ProblemKind::EntropicOT: {
        const Matrix P = transport_plan(z);
        const auto Ja = J.leftCols(ma());
        const auto Jb = J.rightCols(mb());
        Matrix out(rows(), cols());
        out.leftCols(ma()) = (Ja * P.rowwise().sum().asDiagonal() + Jb * P.transpose()) / eps_;
        out.rightCols(mb()) = (Ja * P + Jb * P.colwise().sum().asDiagonal()) / eps_;
        out.leftCols(ma()).diagonal().array() += 1.0;
        return out;
      }
      case ProblemKind::ScaledNorm: return x.sum() * J + Vector::Ones(rows()) * z.transpose();
    }
    return {};
  }

  StochasticComponent component(std::size_t xi, const Vector& z, const Vector& x) const {
    if (!finite_sum()) throw Unsupported("sample_component: " + to_string(kind_) + " is not a finite-sum loss");
    check_point(z, x);
    if (xi >= n_) throw InvalidArgument("sample_component: index out of range");
    const Eigen::Index i = static_cast<Eigen::Index>(xi);
    StochasticComponent c;
    c.xi = xi;
    c.n = n_;
    c.d = D_.row(i).transpose();
    c.lambda = lambda_;
    c.grad_x = Vector::Zero(rows());
    const double u = c.d.dot(z);
    const double reg = 0.5 * lambda_ * z.squaredNorm();
    const double nd = static_cast<double>(n_);
    if (kind_ == ProblemKind::Ridge) {
      const double r = x(i) - u;
      c.value = nd * 0.5 * r * r + reg;
      c.grad_z = -nd * r * c.d + lambda_ * z;
      c.grad_x(i) = nd * r;
      c.weight = nd;
      c.cross = -nd;
    } else {
      const double s = x(i) * u;
      const double d1 = -sigmoid(-s);
      const double d2 = sigmoid(s) * sigmoid(-s);
      c.value = softplus_neg(s) + reg;
      c.grad_z = x(i) * d1 * c.d + lambda_ * z;
      c.grad_x(i) = d1 * u;
      c.weight = x(i) * x(i) * d2;
      c.cross = d2 * x(i) * u + d1;
    }
    return c;
  }

  // P_ij = exp(-(z_a_i + C_ij + z_b_j) / eps)
  Matrix transport_plan(const Vector& z) const {
    if (kind_ != ProblemKind::EntropicOT) throw Unsupported("transport_plan: not an entropic OT instance");
    Matrix E = -C_;
    E.colwise() -= z.head(ma());
    E.rowwise() -= z.tail(mb()).transpose();
    return (E / eps_).array().exp().matrix();
  }

  Eigen::Index ma() const { return static_cast<Eigen::Index>(m_a_); }
  Eigen::Index mb() const { return static_cast<Eigen::Index>(m_b_); }

 private:
  struct LogisticTerms {
    Vector w;  // x_i^2 phi''(s_i) / n
    Vector c;  // (phi''(s_i) x_i u_i + phi'(s_i)) / n
  };

  static ProblemInstance design_problem(ProblemKind kind, Matrix D, double lambda, int p, std::uint64_t seed) {
    if (D.rows() < 1 || D.cols() < 1) throw InvalidArgument("design matrix must be nonempty");
    if (!D.allFinite()) throw InvalidArgument("design matrix must be finite");
    ProblemInstance inst;
    inst.kind_ = kind;
    inst.n_ = static_cast<std::size_t>(D.rows());
    inst.m_ = static_cast<std::size_t>(D.cols());
    inst.D_ = std::move(D);
    inst.lambda_ = lambda;
    inst.p_ = p;
    inst.seed_ = seed;
    return inst;
  }

  LogisticTerms logistic_terms(const Vector& z, const Vector& x) const {
    const Vector u = D_ * z;
    const double nd = static_cast<double>(n_);
    LogisticTerms lt{Vector(rows()), Vector(rows())};
    for (Eigen::Index i = 0; i < rows(); ++i) {
      const double s = x(i) * u(i);
      const double d1 = -sigmoid(-s);
      const double d2 = sigmoid(s) * sigmoid(-s);
      lt.w(i) = x(i) * x(i) * d2 / nd;
      lt.c(i) = (d2 * x(i) * u(i) + d1) / nd;
    }
    return lt;
  }

  // (p - 1) r^(p-2) with r = x - Dz
  Vector pth_curvature(const Vector& z, const Vector& x) const {
    const Vector r = x - D_ * z;
    return (p_ - 1) * r.array().pow(p_ - 2).matrix();
  }

  ProblemKind kind_ = ProblemKind::Ridge;
  std::size_t n_ = 0;
  std::size_t m_ = 0;
  Matrix D_;
  double lambda_ = 0.0;
  int p_ = 2;
  double eps_ = 0.0;
  Matrix C_;
  Matrix K_;
  bool kernel_safe_ = false;
  Vector b_;
  std::size_t m_a_ = 0;
  std::size_t m_b_ = 0;
  std::uint64_t seed_ = 0;
  bool generated_ = false;
};

inline Derivatives loss_derivatives(const ProblemInstance& prob, const Vector& z, const Vector& x) {
  return prob.derivatives(z, x);
}

inline StochasticComponent sample_component(const ProblemInstance& prob, std::size_t xi, const Vector& z,
                                            const Vector& x) {
  return prob.component(xi, z, x);
}

namespace detail {

// iid standard normal n x m matrix, filled row by row
inline Matrix normal_matrix(std::size_t n, std::size_t m, RngStream& rng) {
  Matrix A(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
  for (Eigen::Index i = 0; i < A.rows(); ++i)
    for (Eigen::Index j = 0; j < A.cols(); ++j) A(i, j) = rng.normal();
  return A;
}

inline Vector uniform_grid(std::size_t k) {
  Vector g(static_cast<Eigen::Index>(k));
  for (std::size_t i = 0; i < k; ++i) g(static_cast<Eigen::Index>(i)) = k == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(k - 1);
  return g;
}

inline Vector random_histogram(std::size_t k, RngStream& rng) {
  Vector h(static_cast<Eigen::Index>(k));
  for (Eigen::Index i = 0; i < h.size(); ++i) h(i) = rng.uniform();
  return h / h.sum();
}

// C_ij = |X_i - Y_j|^2 on uniform grids of [0, 1]
inline Matrix grid_cost(std::size_t na, std::size_t nb) {
  const Vector X = uniform_grid(na);
  const Vector Y = uniform_grid(nb);
  Matrix C(X.size(), Y.size());
  for (Eigen::Index i = 0; i < C.rows(); ++i)
    for (Eigen::Index j = 0; j < C.cols(); ++j) C(i, j) = (X(i) - Y(j)) * (X(i) - Y(j));
  return C;
}

}  // namespace detail

inline ProblemInstance make_ridge(std::size_t n, std::size_t m, double lambda, std::uint64_t seed) {
  if (n < 1 || m < 1) throw InvalidArgument("make_ridge: dimensions must be >= 1");
  RngStream rng(seed, 0);
  ProblemInstance p = ProblemInstance::ridge(detail::normal_matrix(n, m, rng), lambda, seed);
  p.mark_generated();
  return p;
}

inline ProblemInstance make_logistic(std::size_t n, std::size_t m, double lambda, std::uint64_t seed) {
  if (n < 1 || m < 1) throw InvalidArgument("make_logistic: dimensions must be >= 1");
  RngStream rng(seed, 0);
  ProblemInstance p = ProblemInstance::logistic(detail::normal_matrix(n, m, rng), lambda, seed);
  p.mark_generated();
  return p;
}

// D is the orthogonal polar factor U V^T of an iid normal matrix A = U S V^T,
// so that D D^T = I. A rank-deficient draw moves on to the next substream.
inline ProblemInstance make_least_pth(std::size_t n, std::size_t m, int p, std::uint64_t seed) {
  if (n < 1 || m < n) throw InvalidArgument("make_least_pth: requires 1 <= n <= m");
  if (p < 2 || p % 2 != 0) throw InvalidArgument("make_least_pth: p must be even and >= 2");
  constexpr int kAttempts = 16;
  for (int attempt = 0; attempt < kAttempts; ++attempt) {
    RngStream rng(seed, static_cast<std::uint64_t>(attempt));
    const Matrix A = detail::normal_matrix(n, m, rng);
    Eigen::JacobiSVD<Matrix> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vector& s = svd.singularValues();
    if (s.minCoeff() <= 1e-8 * s.maxCoeff()) continue;
    Matrix D = svd.matrixU() * svd.matrixV().transpose();
    ProblemInstance inst = ProblemInstance::least_pth(std::move(D), p, seed);
    inst.mark_generated();
    return inst;
  }
  throw DegenerateInstance("make_least_pth: every sampled matrix was rank-deficient");
}

inline ProblemInstance make_entropic_ot(std::size_t m_a, std::size_t m_b, double epsilon, std::uint64_t seed) {
  if (m_a < 1 || m_b < 1) throw InvalidArgument("make_entropic_ot: dimensions must be >= 1");
  RngStream rng(seed, 0);
  Vector b = detail::random_histogram(m_b, rng);
  ProblemInstance p = ProblemInstance::entropic_ot(detail::grid_cost(m_a, m_b), std::move(b), epsilon, seed);
  p.mark_generated();
  return p;
}

inline ProblemInstance make_scaled_norm(std::size_t n, std::size_t m) { return ProblemInstance::scaled_norm(n, m); }

// Outer point at which gradients are evaluated: iid normal entries for the
// regression losses, a uniform-then-normalized histogram for entropic OT and
// iid uniform(0.5, 1.5) entries for the scaled norm.
inline Vector sample_outer_point(const ProblemInstance& prob, std::uint64_t seed, std::uint64_t stream = 1) {
  RngStream rng(seed, stream);
  Vector x(prob.rows());
  switch (prob.kind()) {
    case ProblemKind::EntropicOT: return detail::random_histogram(prob.n(), rng);
    case ProblemKind::ScaledNorm:
      for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = 0.5 + rng.uniform();
      return x;
    default:
      for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = rng.normal();
      return x;
  }
}

inline nlohmann::json to_json(const ProblemInstance& p) {
  nlohmann::json j;
  j["kind"] = to_string(p.kind());
  j["seed"] = p.seed();
  j["generated"] = p.generated();
  switch (p.kind()) {
    case ProblemKind::Ridge:
    case ProblemKind::Logistic:
      j["dims"] = {{"n", p.n()}, {"m", p.m()}};
      j["params"] = {{"lambda", p.lambda()}};
      break;
    case ProblemKind::LeastPth:
      j["dims"] = {{"n", p.n()}, {"m", p.m()}};
      j["params"] = {{"p", p.p()}};
      break;
    case ProblemKind::EntropicOT:
      j["dims"] = {{"m_a", p.m_a()}, {"m_b", p.m_b()}};
      j["params"] = {{"epsilon", p.epsilon()}};
      break;
    case ProblemKind::ScaledNorm:
      j["dims"] = {{"n", p.n()}, {"m", p.m()}};
      j["params"] = nlohmann::json::object();
      break;
  }
  return j;
}

// Regenerates an instance from its JSON description.
inline ProblemInstance problem_from_json(const nlohmann::json& j) {
  try {
    if (!j.value("generated", true)) {
      throw InvalidArgument("problem_from_json: instance was built from explicit data and cannot be regenerated");
    }
    const ProblemKind kind = parse_problem_kind(j.at("kind").get<std::string>());
    const auto seed = j.at("seed").get<std::uint64_t>();
    const auto& dims = j.at("dims");
    const auto& params = j.at("params");
    switch (kind) {
      case ProblemKind::Ridge:
        return make_ridge(dims.at("n"), dims.at("m"), params.at("lambda"), seed);
      case ProblemKind::Logistic:
        return make_logistic(dims.at("n"), dims.at("m"), params.at("lambda"), seed);
      case ProblemKind::LeastPth:
        return make_least_pth(dims.at("n"), dims.at("m"), params.at("p"), seed);
      case ProblemKind::EntropicOT:
        return make_entropic_ot(dims.at("m_a"), dims.at("m_b"), params.at("epsilon"), seed);
      case ProblemKind::ScaledNorm:
        return make_scaled_norm(dims.at("n"), dims.at("m"));
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("problem_from_json: ") + e.what());
  }
  throw InvalidArgument("problem_from_json: unknown kind");
}

}  // namespace mingrad
