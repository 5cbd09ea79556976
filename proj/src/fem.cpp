#include "tsfem/fem.hpp"

#include "tsfem/error.hpp"
#include "tsfem/format.hpp"

#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>

namespace tsfem {

namespace {

using Triplet = Eigen::Triplet<double>;

SparseMatrix from_triplets(Index n, const std::vector<Triplet>& triplets)
{
  SparseMatrix m(n, n);
  m.setFromTriplets(triplets.begin(), triplets.end());
  m.makeCompressed();
  return m;
}

bool any_masked(const std::vector<bool>& mask)
{
  return std::find(mask.begin(), mask.end(), true) != mask.end();
}

} // namespace

// FeSpace ----------------------------------------------------------------------

FeSpace::FeSpace(std::shared_ptr<const SimplicialMesh> mesh) : mesh_(std::move(mesh))
{
  if (!mesh_)
    throw ValidationError("finite element space needs a mesh");
  dirichlet_.assign(static_cast<std::size_t>(mesh_->n_vertices()), false);
  for (const Facet& facet : mesh_->facets())
    if (facet.on_boundary() && facet.mark == BoundaryMark::Dirichlet) {
      dirichlet_[facet.vertices[0]] = true;
      dirichlet_[facet.vertices[1]] = true;
    }
}

bool FeSpace::has_dirichlet() const
{
  return any_masked(dirichlet_);
}

double FeSpace::evaluate(const Vector& u, Index cell, const Eigen::Vector3d& bary) const
{
  double value = 0.0;
  const auto verts = mesh_->cell(cell);
  for (std::size_t i = 0; i < verts.size(); ++i)
    value += bary[static_cast<Eigen::Index>(i)] * u[verts[i]];
  return value;
}

Point FeSpace::gradient(const Vector& u, Index cell) const
{
  const auto grads = mesh_->barycentric_gradients(cell);
  const auto verts = mesh_->cell(cell);
  Point g = Point::Zero();
  for (std::size_t i = 0; i < verts.size(); ++i)
    g += u[verts[i]] * grads[i];
  return g;
}

Vector FeSpace::interpolate(const ScalarFunction& f) const
{
  Vector u(n_dofs());
  for (Index v = 0; v < mesh_->n_vertices(); ++v)
    u[v] = f(mesh_->vertex(v));
  return u;
}

// SparseSymOperator ------------------------------------------------------------

SparseSymOperator::SparseSymOperator(SparseMatrix matrix) : matrix_(std::move(matrix))
{
  matrix_.makeCompressed();
}

Vector SparseSymOperator::row_sums() const
{
  return matrix_ * Vector::Ones(matrix_.cols());
}

double SparseSymOperator::max_abs() const
{
  double m = 0.0;
  for (int k = 0; k < matrix_.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(matrix_, k); it; ++it)
      m = std::max(m, std::abs(it.value()));
  return m;
}

double SparseSymOperator::asymmetry() const
{
  const SparseMatrix diff = matrix_ - SparseMatrix(matrix_.transpose());
  double m = 0.0;
  for (int k = 0; k < diff.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(diff, k); it; ++it)
      m = std::max(m, std::abs(it.value()));
  const double scale = max_abs();
  return scale > 0.0 ? m / scale : m;
}

bool SparseSymOperator::all_finite() const
{
  for (int k = 0; k < matrix_.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(matrix_, k); it; ++it)
      if (!std::isfinite(it.value()))
        return false;
  return true;
}

SparseSymOperator SparseSymOperator::scaled(double factor) const
{
  return SparseSymOperator(SparseMatrix(factor * matrix_));
}

SparseSymOperator SparseSymOperator::plus(const SparseSymOperator& other, double factor) const
{
  if (other.size() != size())
    throw ValidationError("operator dimensions differ");
  return SparseSymOperator(SparseMatrix(matrix_ + factor * other.matrix_));
}

SparseSymOperator SparseSymOperator::eliminate(const std::vector<bool>& mask) const
{
  if (mask.empty())
    return *this;
  if (static_cast<Index>(mask.size()) != size())
    throw ValidationError("Dirichlet mask size does not match operator");
  std::vector<Triplet> triplets;
  triplets.reserve(static_cast<std::size_t>(matrix_.nonZeros()));
  for (int k = 0; k < matrix_.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(matrix_, k); it; ++it)
      if (!mask[it.row()] && !mask[it.col()])
        triplets.emplace_back(it.row(), it.col(), it.value());
  for (Index i = 0; i < size(); ++i)
    if (mask[i])
      triplets.emplace_back(i, i, 1.0);
  return SparseSymOperator(from_triplets(size(), triplets));
}

void SparseSymOperator::write_coordinate(std::ostream& out) const
{
  out << size() << ' ' << matrix_.nonZeros() << '\n';
  SparseMatrix row_major = matrix_.transpose();
  for (int k = 0; k < row_major.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(row_major, k); it; ++it)
      out << it.col() << ' ' << it.row() << ' ' << format_double(it.value()) << '\n';
}

// Assembly ---------------------------------------------------------------------

SparseSymOperator assemble_stiffness(const FeSpace& space, double coeff)
{
  const auto& mesh = space.mesh();
  const int nloc = mesh.vertices_per_cell();
  std::vector<Triplet> triplets;
  triplets.reserve(static_cast<std::size_t>(mesh.n_cells() * nloc * nloc));
  for (Index c = 0; c < mesh.n_cells(); ++c) {
    const auto grads = mesh.barycentric_gradients(c);
    const auto verts = mesh.cell(c);
    const double scale = coeff * mesh.measure(c);
    for (int i = 0; i < nloc; ++i)
      for (int j = 0; j < nloc; ++j)
        triplets.emplace_back(verts[i], verts[j], scale * grads[i].dot(grads[j]));
  }
  return SparseSymOperator(from_triplets(space.n_dofs(), triplets));
}

SparseSymOperator assemble_mass(const FeSpace& space)
{
  const auto& mesh = space.mesh();
  const int nloc = mesh.vertices_per_cell();
  // Exact P1 mass: |B| (1 + delta_ij) / ((d + 1)(d + 2)).
  const double denom = mesh.dim() == 1 ? 6.0 : 12.0;
  std::vector<Triplet> triplets;
  triplets.reserve(static_cast<std::size_t>(mesh.n_cells() * nloc * nloc));
  for (Index c = 0; c < mesh.n_cells(); ++c) {
    const auto verts = mesh.cell(c);
    const double scale = mesh.measure(c) / denom;
    for (int i = 0; i < nloc; ++i)
      for (int j = 0; j < nloc; ++j)
        triplets.emplace_back(verts[i], verts[j], scale * (i == j ? 2.0 : 1.0));
  }
  return SparseSymOperator(from_triplets(space.n_dofs(), triplets));
}

BoundaryOperators assemble_boundary_mass(const FeSpace& space, BoundaryMark mark)
{
  const auto& mesh = space.mesh();
  BoundaryOperators out;
  out.load = Vector::Zero(space.n_dofs());
  std::vector<Triplet> triplets;
  for (Index f = 0; f < mesh.n_facets(); ++f) {
    const Facet& facet = mesh.facet(f);
    if (!facet.on_boundary() || facet.mark != mark)
      continue;
    if (mesh.dim() == 1) {
      const Index v = facet.vertices[0];
      triplets.emplace_back(v, v, 1.0);
      out.load[v] += 1.0;
      out.measure += 1.0;
      continue;
    }
    const double len = mesh.facet_measure(f);
    const Index a = facet.vertices[0];
    const Index b = facet.vertices[1];
    triplets.emplace_back(a, a, len / 3.0);
    triplets.emplace_back(b, b, len / 3.0);
    triplets.emplace_back(a, b, len / 6.0);
    triplets.emplace_back(b, a, len / 6.0);
    out.load[a] += 0.5 * len;
    out.load[b] += 0.5 * len;
    out.measure += len;
  }
  if (out.measure == 0.0)
    throw ValidationError("no boundary facet carries the mark " + std::string(to_string(mark)));
  out.mass = SparseSymOperator(from_triplets(space.n_dofs(), triplets));
  return out;
}

Vector assemble_load(const FeSpace& space, const ScalarFunction& f, int degree)
{
  const auto& mesh = space.mesh();
  const QuadratureRule rule = simplex_rule(mesh.dim(), degree);
  Vector load = Vector::Zero(space.n_dofs());
  for (Index c = 0; c < mesh.n_cells(); ++c) {
    const auto verts = mesh.cell(c);
    for (std::size_t q = 0; q < rule.size(); ++q) {
      const Point x = mesh.map_to_physical(c, rule.points[q]);
      const double wf = mesh.measure(c) * rule.weights[q] * f(x);
      for (std::size_t i = 0; i < verts.size(); ++i)
        load[verts[i]] += wf * rule.points[q][static_cast<Eigen::Index>(i)];
    }
  }
  return load;
}

Vector load_of_one(const FeSpace& space)
{
  const auto& mesh = space.mesh();
  Vector load = Vector::Zero(space.n_dofs());
  const double share = 1.0 / mesh.vertices_per_cell();
  for (Index c = 0; c < mesh.n_cells(); ++c)
    for (Index v : mesh.cell(c))
      load[v] += share * mesh.measure(c);
  return load;
}

Vector assemble_boundary_load(const FeSpace& space,
                              const std::function<double(const Point&, const Point&, BoundaryMark)>& f,
                              int degree)
{
  const auto& mesh = space.mesh();
  Vector load = Vector::Zero(space.n_dofs());
  const QuadratureRule line = gauss_legendre_unit(std::max(1, (degree + 2) / 2));
  for (Index fid = 0; fid < mesh.n_facets(); ++fid) {
    const Facet& facet = mesh.facet(fid);
    if (!facet.on_boundary())
      continue;
    const Point normal = mesh.facet_normal(fid);
    const BoundaryMark mark = *facet.mark;
    if (mesh.dim() == 1) {
      const Index v = facet.vertices[0];
      load[v] += f(mesh.vertex(v), normal, mark);
      continue;
    }
    const Index a = facet.vertices[0];
    const Index b = facet.vertices[1];
    const double len = mesh.facet_measure(fid);
    for (std::size_t q = 0; q < line.size(); ++q) {
      const double s = line.points[q][1];
      const Point x = (1.0 - s) * mesh.vertex(a) + s * mesh.vertex(b);
      const double wf = len * line.weights[q] * f(x, normal, mark);
      load[a] += wf * (1.0 - s);
      load[b] += wf * s;
    }
  }
  return load;
}

// Linear solves ----------------------------------------------------------------

struct SpdSolver::Impl
{
  SparseMatrix matrix;
  std::vector<bool> mask;
  Eigen::SimplicialLDLT<SparseMatrix> ldlt;
};

SpdSolver::SpdSolver(const SparseSymOperator& op, std::vector<bool> mask)
  : impl_(std::make_unique<Impl>())
{
  if (!mask.empty() && static_cast<Index>(mask.size()) != op.size())
    throw ValidationError("Dirichlet mask size does not match operator");
  impl_->mask = std::move(mask);
  impl_->matrix = op.eliminate(impl_->mask).matrix();
  impl_->ldlt.compute(impl_->matrix);
  const double scale = impl_->matrix.diagonal().cwiseAbs().maxCoeff();
  const bool definite = impl_->ldlt.info() == Eigen::Success &&
                        (impl_->matrix.rows() == 0 ||
                         impl_->ldlt.vectorD().minCoeff() > 1e-13 * scale);
  if (!definite) {
    std::ostringstream msg;
    msg << "operator of size " << op.size()
        << " is not positive definite after Dirichlet elimination (nonpositive pivot in LDL^T)";
    throw SolverError(msg.str());
  }
}

SpdSolver::~SpdSolver() = default;
SpdSolver::SpdSolver(SpdSolver&&) noexcept = default;
SpdSolver& SpdSolver::operator=(SpdSolver&&) noexcept = default;

Index SpdSolver::size() const
{
  return static_cast<Index>(impl_->matrix.rows());
}

Vector SpdSolver::solve(const Vector& rhs) const
{
  if (rhs.size() != impl_->matrix.rows())
    throw ValidationError("right-hand side size does not match operator");
  Vector b = rhs;
  for (std::size_t i = 0; i < impl_->mask.size(); ++i)
    if (impl_->mask[i])
      b[static_cast<Eigen::Index>(i)] = 0.0;
  const double bnorm = b.norm();
  if (bnorm == 0.0)
    return Vector::Zero(b.size());
  Vector x = impl_->ldlt.solve(b);
  Vector r = b - impl_->matrix * x;
  double rel = r.norm() / bnorm;
  if (rel > 1e-12) {
    x += impl_->ldlt.solve(r);
    r = b - impl_->matrix * x;
    rel = r.norm() / bnorm;
  }
  if (!(rel <= 1e-10)) {
    std::ostringstream msg;
    msg << "SPD solve did not reach tolerance: relative residual " << rel << " > 1e-10";
    throw SolverError(msg.str());
  }
  for (std::size_t i = 0; i < impl_->mask.size(); ++i)
    if (impl_->mask[i])
      x[static_cast<Eigen::Index>(i)] = 0.0;
  return x;
}

Eigen::MatrixXd SpdSolver::solve(const Eigen::MatrixXd& rhs) const
{
  if (rhs.rows() != impl_->matrix.rows())
    throw ValidationError("right-hand side size does not match operator");
  Eigen::MatrixXd b = rhs;
  for (std::size_t i = 0; i < impl_->mask.size(); ++i)
    if (impl_->mask[i])
      b.row(static_cast<Eigen::Index>(i)).setZero();
  Eigen::MatrixXd x = impl_->ldlt.solve(b);
  for (Eigen::Index col = 0; col < b.cols(); ++col) {
    const double bnorm = b.col(col).norm();
    if (bnorm == 0.0) {
      x.col(col).setZero();
      continue;
    }
    Vector r = b.col(col) - impl_->matrix * x.col(col);
    double rel = r.norm() / bnorm;
    if (rel > 1e-12) {
      x.col(col) += impl_->ldlt.solve(r);
      r = b.col(col) - impl_->matrix * x.col(col);
      rel = r.norm() / bnorm;
    }
    if (!(rel <= 1e-10)) {
      std::ostringstream msg;
      msg << "SPD solve did not reach tolerance in column " << col << ": relative residual "
          << rel << " > 1e-10";
      throw SolverError(msg.str());
    }
  }
  for (std::size_t i = 0; i < impl_->mask.size(); ++i)
    if (impl_->mask[i])
      x.row(static_cast<Eigen::Index>(i)).setZero();
  return x;
}

Vector solve_spd(const SparseSymOperator& op, const Vector& rhs, const std::vector<bool>& dirichlet_mask)
{
  return SpdSolver(op, dirichlet_mask).solve(rhs);
}

// Projections ------------------------------------------------------------------

Vector ritz_project(const FeSpace& space, const SmoothField& u, const EnergyForm& form)
{
  const auto& mesh = space.mesh();
  if (form.grad_coeff < 0.0 || form.mass_coeff < 0.0 || form.robin_coeff < 0.0)
    throw ValidationError("energy form coefficients must be nonnegative");
  if (!space.has_dirichlet() && form.mass_coeff == 0.0 && form.robin_coeff == 0.0)
    throw ValidationError("energy form is singular: no Dirichlet dofs, mass or Robin term");

  SparseSymOperator op = assemble_stiffness(space, form.grad_coeff);
  if (form.mass_coeff > 0.0)
    op = op.plus(assemble_mass(space), form.mass_coeff);
  if (form.robin_coeff > 0.0)
    op = op.plus(assemble_boundary_mass(space, form.robin_mark).mass, form.robin_coeff);

  const QuadratureRule rule = simplex_rule(mesh.dim(), 4);
  Vector rhs = Vector::Zero(space.n_dofs());
  for (Index c = 0; c < mesh.n_cells(); ++c) {
    const auto verts = mesh.cell(c);
    const auto grads = mesh.barycentric_gradients(c);
    for (std::size_t q = 0; q < rule.size(); ++q) {
      const Point x = mesh.map_to_physical(c, rule.points[q]);
      const double w = mesh.measure(c) * rule.weights[q];
      const Point gu = form.grad_coeff > 0.0 ? u.gradient(x) : Point::Zero();
      const double vu = form.mass_coeff > 0.0 ? u.value(x) : 0.0;
      for (std::size_t i = 0; i < verts.size(); ++i)
        rhs[verts[i]] += w * (form.grad_coeff * gu.dot(grads[i]) +
                              form.mass_coeff * vu * rule.points[q][static_cast<Eigen::Index>(i)]);
    }
  }
  if (form.robin_coeff > 0.0) {
    const auto robin = [&](const Point& x, const Point&, BoundaryMark mark) {
      return mark == form.robin_mark ? form.robin_coeff * u.value(x) : 0.0;
    };
    rhs += assemble_boundary_load(space, robin, 4);
  }

  Vector lift = Vector::Zero(space.n_dofs());
  const auto& mask = space.dirichlet_mask();
  for (Index v = 0; v < space.n_dofs(); ++v)
    if (mask[v])
      lift[v] = u.value(mesh.vertex(v));
  rhs -= op.apply(lift);
  return SpdSolver(op, mask).solve(rhs) + lift;
}

Vector ritz_project(const FeSpace& space, const SmoothField& u, double coeff)
{
  EnergyForm form;
  form.grad_coeff = coeff;
  return ritz_project(space, u, form);
}

Vector quasi_interpolate(const FeSpace& space, const ScalarFunction& u, int degree)
{
  const auto& mesh = space.mesh();
  const QuadratureRule rule = simplex_rule(mesh.dim(), degree);
  Vector integral = Vector::Zero(space.n_dofs());
  Vector patch_measure = Vector::Zero(space.n_dofs());
  for (Index c = 0; c < mesh.n_cells(); ++c) {
    double cell_integral = 0.0;
    for (std::size_t q = 0; q < rule.size(); ++q)
      cell_integral += rule.weights[q] * u(mesh.map_to_physical(c, rule.points[q]));
    cell_integral *= mesh.measure(c);
    for (Index v : mesh.cell(c)) {
      integral[v] += cell_integral;
      patch_measure[v] += mesh.measure(c);
    }
  }
  return integral.cwiseQuotient(patch_measure);
}

// Norms ------------------------------------------------------------------------

double l2_norm(const FeSpace& space, const Vector& u)
{
  return std::sqrt(std::max(0.0, u.dot(assemble_mass(space).apply(u))));
}

std::vector<double> l2_error_per_cell(const FeSpace& space, const Vector& u_h,
                                      const ScalarFunction& u, int degree)
{
  const auto& mesh = space.mesh();
  const QuadratureRule rule = simplex_rule(mesh.dim(), degree);
  std::vector<double> errors(static_cast<std::size_t>(mesh.n_cells()), 0.0);
  for (Index c = 0; c < mesh.n_cells(); ++c) {
    double sum = 0.0;
    for (std::size_t q = 0; q < rule.size(); ++q) {
      const Point x = mesh.map_to_physical(c, rule.points[q]);
      const double diff = u(x) - space.evaluate(u_h, c, rule.points[q]);
      sum += rule.weights[q] * diff * diff;
    }
    errors[c] = sum * mesh.measure(c);
  }
  return errors;
}

double l2_error(const FeSpace& space, const Vector& u_h, const ScalarFunction& u, int degree)
{
  double total = 0.0;
  for (double e : l2_error_per_cell(space, u_h, u, degree))
    total += e;
  return std::sqrt(total);
}

double h1_seminorm_error(const FeSpace& space, const Vector& u_h,
                         const std::function<Point(const Point&)>& grad_u, int degree)
{
  const auto& mesh = space.mesh();
  const QuadratureRule rule = simplex_rule(mesh.dim(), degree);
  double total = 0.0;
  for (Index c = 0; c < mesh.n_cells(); ++c) {
    const Point gh = space.gradient(u_h, c);
    double sum = 0.0;
    for (std::size_t q = 0; q < rule.size(); ++q) {
      const Point x = mesh.map_to_physical(c, rule.points[q]);
      Point diff = grad_u(x) - gh;
      if (mesh.dim() == 1)
        diff.y() = 0.0;
      sum += rule.weights[q] * diff.squaredNorm();
    }
    total += sum * mesh.measure(c);
  }
  return std::sqrt(total);
}

double smallest_dirichlet_eigenvalue(const FeSpace& space)
{
  const auto& mask = space.dirichlet_mask();
  if (!space.has_dirichlet())
    return 0.0;
  const SparseSymOperator stiffness = assemble_stiffness(space, 1.0);
  const SparseSymOperator mass = assemble_mass(space);
  const SpdSolver solver(stiffness, mask);
  Vector x = Vector::Ones(space.n_dofs());
  for (Index i = 0; i < space.n_dofs(); ++i)
    if (mask[i])
      x[i] = 0.0;
  if (x.norm() == 0.0)
    throw ValidationError("space has no free dofs");
  double lambda = 0.0;
  for (int iter = 0; iter < 500; ++iter) {
    Vector y = solver.solve(mass.apply(x));
    y /= std::sqrt(y.dot(mass.apply(y)));
    const double next = y.dot(stiffness.apply(y));
    x = y;
    if (iter > 0 && std::abs(next - lambda) <= 1e-13 * next) {
      lambda = next;
      break;
    }
    lambda = next;
  }
  return lambda;
}

} // namespace tsfem
