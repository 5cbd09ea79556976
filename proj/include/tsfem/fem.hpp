#pragma once

#include "tsfem/mesh.hpp"
#include "tsfem/quadrature.hpp"

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include <functional>
#include <iosfwd>
#include <memory>
#include <vector>

namespace tsfem {

using Vector = Eigen::VectorXd;
using SparseMatrix = Eigen::SparseMatrix<double>;

/// Scalar field evaluable pointwise.
using ScalarFunction = std::function<double(const Point&)>;

/// Scalar field with its gradient, as needed by energy projections and
/// H1 error norms.
struct SmoothField
{
  ScalarFunction value;
  std::function<Point(const Point&)> gradient;
};

/// Continuous P1 Lagrange space. Degrees of freedom are the mesh vertices;
/// the Dirichlet mask flags vertices on Dirichlet-marked boundary facets.
class FeSpace
{
public:
  explicit FeSpace(std::shared_ptr<const SimplicialMesh> mesh);

  const SimplicialMesh& mesh() const { return *mesh_; }
  std::shared_ptr<const SimplicialMesh> mesh_ptr() const { return mesh_; }

  Index n_dofs() const { return mesh_->n_vertices(); }
  Index dof_of_vertex(Index v) const { return v; }

  const std::vector<bool>& dirichlet_mask() const { return dirichlet_; }
  bool has_dirichlet() const;

  /// Value of the finite element function with coefficients `u` at a point
  /// given by its cell and barycentric coordinates.
  double evaluate(const Vector& u, Index cell, const Eigen::Vector3d& bary) const;

  /// Constant gradient of the finite element function on a cell.
  Point gradient(const Vector& u, Index cell) const;

  /// Nodal interpolant of a function.
  Vector interpolate(const ScalarFunction& f) const;

private:
  std::shared_ptr<const SimplicialMesh> mesh_;
  std::vector<bool> dirichlet_;
};

/// Symmetric sparse operator in compressed column storage.
class SparseSymOperator
{
public:
  SparseSymOperator() = default;
  explicit SparseSymOperator(SparseMatrix matrix);

  Index size() const { return static_cast<Index>(matrix_.rows()); }
  const SparseMatrix& matrix() const { return matrix_; }

  Vector apply(const Vector& x) const { return matrix_ * x; }
  double entry(Index i, Index j) const { return matrix_.coeff(i, j); }
  Eigen::MatrixXd to_dense() const { return Eigen::MatrixXd(matrix_); }
  Vector row_sums() const;
  double max_abs() const;

  /// Max |A_ij - A_ji| relative to max |A_ij|.
  double asymmetry() const;
  bool all_finite() const;

  SparseSymOperator scaled(double factor) const;
  SparseSymOperator plus(const SparseSymOperator& other, double factor = 1.0) const;

  /// Zero rows and columns of masked dofs, unit diagonal there.
  SparseSymOperator eliminate(const std::vector<bool>& mask) const;

  /// Coordinate-format text dump: header `n nnz`, then `row col value`.
  void write_coordinate(std::ostream& out) const;

private:
  SparseMatrix matrix_;
};

/// A*int grad(xi_i).grad(xi_j); not Dirichlet-eliminated.
SparseSymOperator assemble_stiffness(const FeSpace& space, double coeff);

/// int xi_i xi_j.
SparseSymOperator assemble_mass(const FeSpace& space);

struct BoundaryOperators
{
  /// G_kl = int_Gamma eta_k eta_l.
  SparseSymOperator mass;
  /// g_k = int_Gamma eta_k.
  Vector load;
  /// |Gamma|.
  double measure = 0.0;
};

/// Trace mass and trace load over the facets carrying `mark`. Throws
/// ValidationError if no facet carries the mark.
BoundaryOperators assemble_boundary_mass(const FeSpace& space, BoundaryMark mark);

/// Load vector int f xi_i with the given quadrature degree (2 by default).
Vector assemble_load(const FeSpace& space, const ScalarFunction& f, int degree = 2);

/// Load vector of the constant 1, i.e. int xi_i.
Vector load_of_one(const FeSpace& space);

/// Trace load int_{boundary} f eta_k over every boundary facet. The callback
/// receives the point, the outward normal and the facet mark.
Vector assemble_boundary_load(const FeSpace& space,
                              const std::function<double(const Point&, const Point&, BoundaryMark)>& f,
                              int degree = 2);

/// Factorized symmetric positive definite operator with Dirichlet elimination.
class SpdSolver
{
public:
  /// Factorizes `op` after eliminating the masked dofs. Throws SolverError if
  /// the eliminated operator is not positive definite.
  SpdSolver(const SparseSymOperator& op, std::vector<bool> mask = {});
  ~SpdSolver();
  SpdSolver(SpdSolver&&) noexcept;
  SpdSolver& operator=(SpdSolver&&) noexcept;

  Index size() const;

  /// Solution with masked dofs exactly zero. Verifies relative residual
  /// <= 1e-10 and throws SolverError with diagnostics otherwise.
  Vector solve(const Vector& rhs) const;

  /// Column-wise solve of several right-hand sides.
  Eigen::MatrixXd solve(const Eigen::MatrixXd& rhs) const;

private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

Vector solve_spd(const SparseSymOperator& op, const Vector& rhs,
                 const std::vector<bool>& dirichlet_mask = {});

/// Bilinear form a(u, v) = grad_coeff (grad u, grad v) + mass_coeff (u, v)
/// + robin_coeff (u, v)_{Gamma_robin}, defining a Ritz projection.
struct EnergyForm
{
  double grad_coeff = 1.0;
  double mass_coeff = 0.0;
  double robin_coeff = 0.0;
  BoundaryMark robin_mark = BoundaryMark::GammaR;
};

/// Energy projection: argmin of a(u - u_h, u - u_h). Dirichlet dofs take the
/// nodal values of u. Throws ValidationError for a singular form and
/// SolverError if the solve fails.
Vector ritz_project(const FeSpace& space, const SmoothField& u, const EnergyForm& form);
Vector ritz_project(const FeSpace& space, const SmoothField& u, double coeff);

/// Patch-mean quasi-interpolant: coefficient at x is the mean of u over the
/// vertex patch of x.
Vector quasi_interpolate(const FeSpace& space, const ScalarFunction& u, int degree = 4);

/// L2 mass norm of a finite element function.
double l2_norm(const FeSpace& space, const Vector& u);

/// ||u - u_h||_{L2}, with quadrature of the given degree.
double l2_error(const FeSpace& space, const Vector& u_h, const ScalarFunction& u, int degree = 4);

/// |u - u_h|_{H1} (gradient seminorm).
double h1_seminorm_error(const FeSpace& space, const Vector& u_h,
                         const std::function<Point(const Point&)>& grad_u, int degree = 4);

/// Cellwise squared L2 error.
std::vector<double> l2_error_per_cell(const FeSpace& space, const Vector& u_h,
                                      const ScalarFunction& u, int degree = 4);

/// Smallest eigenvalue of the generalized problem S u = lambda M u on the
/// non-Dirichlet dofs (inverse iteration); 1/lambda is the discrete
/// Poincare constant squared.
double smallest_dirichlet_eigenvalue(const FeSpace& space);

} // namespace tsfem
