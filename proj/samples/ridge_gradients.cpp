// Compares the three gradient estimators on a small Ridge problem.
//
//   min_z 1/2 |x - D z|^2 + lambda/2 |z|^2
//
// prints |g^i_t - grad l(x)| for a few step counts t.

#include <cstdio>

#include "mingrad/mingrad.hpp"

using namespace mingrad;

int main() {
  const ProblemInstance prob = make_ridge(20, 40, 0.05, 1);
  const Vector x = sample_outer_point(prob, 1);

  // closed form: z* = (D^T D + lambda I)^{-1} D^T x
  const Matrix& D = prob.D();
  Matrix A = D.transpose() * D;
  A.diagonal().array() += prob.lambda();
  const Vector z_star = A.ldlt().solve(D.transpose() * x);
  const Vector g_star = prob.grad_x(z_star, x);

  const ImplicitOptions io = default_implicit_options(prob, x);
  std::printf("%6s %12s %12s %12s\n", "t", "g1", "g2", "g3");
  for (std::size_t t : {1, 10, 50, 100, 200}) {
    const SolverState s = advance_to(prob, x, gd_config(prob, x, t));
    std::printf("%6zu %12.3e %12.3e %12.3e\n", t, (estimate_g1(s, prob, x).g - g_star).norm(),
                (estimate_g2(s, prob, x).g - g_star).norm(), (estimate_g3(s, prob, x, io).g - g_star).norm());
  }
  return 0;
}
