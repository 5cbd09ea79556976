#include "tsfem/quadrature.hpp"

#include "tsfem/error.hpp"

#include <cmath>
#include <numbers>

namespace tsfem {

QuadratureRule gauss_legendre_unit(int n_points)
{
  if (n_points < 1)
    throw ValidationError("Gauss-Legendre rule needs at least one point");
  QuadratureRule rule;
  const int n = n_points;
  for (int i = 0; i < n; ++i) {
    // Newton iteration on P_n starting from the Chebyshev-like guess.
    double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0;
      double p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16)
        break;
    }
    // Recompute the derivative at the converged node.
    double p0 = 1.0;
    double p1 = x;
    for (int k = 2; k <= n; ++k) {
      const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
      p0 = p1;
      p1 = p2;
    }
    dp = n * (x * p1 - p0) / (x * x - 1.0);
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    const double s = 0.5 * (1.0 - x);
    rule.points.emplace_back(1.0 - s, s, 0.0);
    rule.weights.push_back(0.5 * w);
  }
  return rule;
}

QuadratureRule simplex_rule(int dim, int degree)
{
  if (dim != 1 && dim != 2)
    throw ValidationError("quadrature dimension must be 1 or 2");
  if (degree < 0)
    throw ValidationError("quadrature degree must be nonnegative");

  if (dim == 1)
    return gauss_legendre_unit(std::max(2, (degree + 2) / 2));

  QuadratureRule rule;
  if (degree <= 2) {
    const double third = 1.0 / 3.0;
    rule.points = {{0.0, 0.5, 0.5}, {0.5, 0.0, 0.5}, {0.5, 0.5, 0.0}};
    rule.weights = {third, third, third};
    return rule;
  }

  // Duffy map (u, v) -> (x, y) = (u (1 - v), v) with Jacobian (1 - v);
  // a degree-p polynomial becomes degree p in u and p + 1 in v.
  const int n = (degree + 3) / 2;
  const QuadratureRule line = gauss_legendre_unit(n);
  for (std::size_t a = 0; a < line.size(); ++a)
    for (std::size_t b = 0; b < line.size(); ++b) {
      const double u = line.points[a][1];
      const double v = line.points[b][1];
      const double x = u * (1.0 - v);
      const double y = v;
      rule.points.emplace_back(1.0 - x - y, x, y);
      rule.weights.push_back(2.0 * line.weights[a] * line.weights[b] * (1.0 - v));
    }
  return rule;
}

} // namespace tsfem
