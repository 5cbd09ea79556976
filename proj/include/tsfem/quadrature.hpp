#pragma once

#include <Eigen/Core>

#include <vector>

namespace tsfem {

/// Quadrature rule on the reference simplex in barycentric coordinates.
/// Weights sum to one, so the physical integral over a cell B is
/// |B| * sum_q weights[q] * f(x_q).
struct QuadratureRule
{
  std::vector<Eigen::Vector3d> points;
  std::vector<double> weights;

  std::size_t size() const { return weights.size(); }
};

/// Gauss-Legendre nodes and weights on [0, 1].
QuadratureRule gauss_legendre_unit(int n_points);

/// Rule exact for polynomials of total degree `degree` on a dim-simplex.
/// Degree <= 2 uses the 3-point edge-midpoint rule in 2D and 2-point Gauss in
/// 1D; higher degrees use collapsed (Duffy) Gauss products in 2D.
QuadratureRule simplex_rule(int dim, int degree);

} // namespace tsfem
