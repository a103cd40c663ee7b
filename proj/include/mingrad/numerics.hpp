#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>

#include <Eigen/Dense>

#include "mingrad/errors.hpp"
#include "mingrad/rng.hpp"

namespace mingrad {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

template <class Derived>
bool all_finite(const Eigen::DenseBase<Derived>& a) {
  return a.allFinite();
}

inline double l2(const Vector& v) { return v.norm(); }

struct SolveOptions {
  double symmetry_tol = 1e-8;  // relative to max |A_ij|
  double pivot_tol = 1e-14;    // relative to the infinity norm of A
  // For a singular but consistent system, drop the pivots below
  // rank_tol * max|pivot| and return a particular solution.
  bool truncate_null_space = false;
  double rank_tol = 1e-10;
};

struct SymmetricSolve {
  Vector y;
  double ridge_used = 0.0;
  std::size_t rank = 0;
  bool truncated = false;
};

// Solves A y = b for symmetric A with a diagonally pivoted LDL^T
// factorization. A singular A is handled in this order: truncation when
// requested, then the regularized system (A + ridge I) when ridge > 0,
// otherwise SingularSystem.
inline SymmetricSolve solve_symmetric_detailed(const Matrix& A, const Vector& b, double ridge,
                                               const SolveOptions& opt = {}) {
  const Eigen::Index m = A.rows();
  if (A.cols() != m) throw InvalidArgument("solve_symmetric: matrix is not square");
  if (b.size() != m) throw InvalidArgument("solve_symmetric: right-hand side has wrong length");
  if (!(ridge >= 0.0)) throw InvalidArgument("solve_symmetric: ridge must be >= 0");
  if (!A.allFinite() || !b.allFinite()) throw InvalidArgument("solve_symmetric: non-finite input");
  SymmetricSolve out;
  if (m == 0) {
    out.y = Vector(0);
    return out;
  }
  const double max_abs = A.cwiseAbs().maxCoeff();
  if ((A - A.transpose()).cwiseAbs().maxCoeff() > opt.symmetry_tol * std::max(max_abs, 1e-300)) {
    throw InvalidArgument("solve_symmetric: matrix is not symmetric");
  }
  const double norm_inf = A.cwiseAbs().rowwise().sum().maxCoeff();

  Eigen::LDLT<Matrix> ldlt(A);
  const Vector d = ldlt.vectorD();
  const double min_pivot = d.cwiseAbs().minCoeff();
  if (norm_inf > 0.0 && min_pivot > opt.pivot_tol * norm_inf) {
    out.y = ldlt.solve(b);
    out.rank = static_cast<std::size_t>(m);
    return out;
  }

  if (opt.truncate_null_space) {
    const double cut = opt.rank_tol * std::max(d.cwiseAbs().maxCoeff(), 1e-300);
    Vector c = ldlt.transpositionsP() * b;
    ldlt.matrixL().solveInPlace(c);
    std::size_t rank = 0;
    for (Eigen::Index i = 0; i < m; ++i) {
      if (std::abs(d(i)) > cut) {
        c(i) /= d(i);
        ++rank;
      } else {
        c(i) = 0.0;
      }
    }
    ldlt.matrixU().solveInPlace(c);
    out.y = ldlt.transpositionsP().transpose() * c;
    out.rank = rank;
    out.truncated = true;
    return out;
  }

  if (ridge > 0.0) {
    Matrix R = A;
    R.diagonal().array() += ridge;
    Eigen::LDLT<Matrix> reg(R);
    out.y = reg.solve(b);
    out.ridge_used = ridge;
    out.rank = static_cast<std::size_t>(m);
    return out;
  }
  throw SingularSystem("solve_symmetric: pivot " + std::to_string(min_pivot) +
                       " below tolerance for matrix of norm " + std::to_string(norm_inf));
}

inline Vector solve_symmetric(const Matrix& A, const Vector& b, double ridge = 0.0,
                              const SolveOptions& opt = {}) {
  return solve_symmetric_detailed(A, b, ridge, opt).y;
}

// Power iteration on A^T A from a seeded random start. The returned estimate
// |A v_k| with |v_k| = 1 is nondecreasing in iters.
inline double spectral_norm(const Matrix& A, int iters = 100, std::uint64_t seed = 0) {
  if (iters < 1) throw InvalidArgument("spectral_norm: iters must be >= 1");
  if (A.size() == 0 || A.cwiseAbs().maxCoeff() == 0.0) return 0.0;
  RngStream rng(seed, 0);
  Vector v(A.cols());
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = rng.normal();
  v.normalize();
  double estimate = 0.0;
  for (int k = 0; k < iters; ++k) {
    Vector w = A.transpose() * (A * v);
    const double nw = w.norm();
    if (nw == 0.0) break;
    v = w / nw;
    estimate = std::max(estimate, (A * v).norm());
  }
  return estimate;
}

template <class Derived>
double logsumexp(const Eigen::DenseBase<Derived>& v) {
  if (v.size() == 0) throw InvalidArgument("logsumexp: empty input");
  const double c = v.maxCoeff();
  if (!std::isfinite(c)) return c;
  double s = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) s += std::exp(v(i) - c);
  return c + std::log(s);
}

// Smallest and largest eigenvalue of a symmetric matrix.
inline std::pair<double, double> eigen_range(const Matrix& S) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(S, Eigen::EigenvaluesOnly);
  return {es.eigenvalues().minCoeff(), es.eigenvalues().maxCoeff()};
}

// Numerically stable logistic sigmoid and log(1 + exp(-s)).
inline double sigmoid(double s) {
  if (s >= 0.0) return 1.0 / (1.0 + std::exp(-s));
  const double e = std::exp(s);
  return e / (1.0 + e);
}

inline double softplus_neg(double s) {
  if (s > 0.0) return std::log1p(std::exp(-s));
  return -s + std::log1p(std::exp(s));
}

}  // namespace mingrad
