#include "tsfem/estimator.hpp"

#include "tsfem/error.hpp"
#include "tsfem/format.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

namespace tsfem {

namespace {

double residual_value(const ReactionTerm& reaction, const MacroSource& source, double t,
                      const Point& x, double s, double r)
{
  double value = reaction.identically_zero ? 0.0 : reaction.f(s, r);
  if (source)
    value += source(t, x);
  return value;
}

} // namespace

ElementResidual element_residual(const CoupledState& state, const SystemOperators& ops,
                                 const ReactionTerm& reaction, Index cell,
                                 const MacroSource& source, int degree)
{
  const FeSpace& space = ops.macro;
  const auto& mesh = space.mesh();
  if (cell < 0 || cell >= mesh.n_cells())
    throw ValidationError("cell index out of range");
  const Vector r_nodal = reduce(ops, state.beta);
  const QuadratureRule rule = simplex_rule(mesh.dim(), degree);

  ElementResidual out;
  for (std::size_t q = 0; q < rule.size(); ++q) {
    const auto& bary = rule.points[q];
    const Point x = mesh.map_to_physical(cell, bary);
    const double s = space.evaluate(state.alpha, cell, bary);
    const double r = space.evaluate(r_nodal, cell, bary);
    const double value = residual_value(reaction, source, state.t, x, s, r);
    const double weight = mesh.measure(cell) * rule.weights[q];
    out.points.push_back(x);
    out.weights.push_back(weight);
    out.values.push_back(value);
    out.norm_sq += weight * value * value;
  }
  return out;
}

double edge_jump(const CoupledState& state, const SystemOperators& ops, Index facet)
{
  const auto& mesh = ops.macro.mesh();
  if (facet < 0 || facet >= mesh.n_facets())
    throw ValidationError("facet index out of range");
  const Facet& f = mesh.facet(facet);
  if (f.on_boundary())
    return 0.0;
  const Point n = mesh.facet_normal(facet);
  const Point g_low = ops.macro.gradient(state.alpha, f.cells[0]);
  const Point g_high = ops.macro.gradient(state.alpha, f.cells[1]);
  return ops.params.A * n.dot(g_high - g_low);
}

double edge_residual(const CoupledState& state, const SystemOperators& ops, Index facet)
{
  return std::abs(edge_jump(state, ops, facet)) * std::sqrt(ops.macro.mesh().facet_measure(facet));
}

std::vector<double> refinement_indicators(const std::vector<double>& eta_B_sq, double l2_pi,
                                          double eta_bar)
{
  if (!(eta_bar > 0.0) || !std::isfinite(eta_bar))
    throw ValidationError("eta_bar must be positive, got " + format_double(eta_bar));
  double eta_sq = 0.0;
  for (double e : eta_B_sq)
    eta_sq += e;
  const double denom = eta_bar * (l2_pi + eta_sq);
  const double n = static_cast<double>(eta_B_sq.size());
  std::vector<double> lambda(eta_B_sq.size(), 0.0);
  if (denom <= 0.0)
    return lambda;
  for (std::size_t b = 0; b < eta_B_sq.size(); ++b)
    lambda[b] = n * eta_B_sq[b] / denom;
  return lambda;
}

std::vector<Index> mark_cells(const std::vector<double>& lambda_B)
{
  std::vector<Index> marked;
  for (std::size_t b = 0; b < lambda_B.size(); ++b)
    if (lambda_B[b] > 1.0)
      marked.push_back(static_cast<Index>(b));
  return marked;
}

EstimatorReport estimate(const CoupledState& state, const SystemOperators& ops,
                         const ReactionTerm& reaction, double eta_bar, const MacroSource& source)
{
  if (!(eta_bar > 0.0) || !std::isfinite(eta_bar))
    throw ValidationError("eta_bar must be positive, got " + format_double(eta_bar));
  const auto& mesh = ops.macro.mesh();
  const Index nc = mesh.n_cells();

  EstimatorReport report;
  report.eta_bar = eta_bar;
  report.eta_B_sq.assign(nc, 0.0);
  for (Index b = 0; b < nc; ++b) {
    const double H = mesh.diameter(b);
    report.eta_B_sq[b] = H * H * element_residual(state, ops, reaction, b, source).norm_sq;
  }
  for (Index e = 0; e < mesh.n_facets(); ++e) {
    const Facet& f = mesh.facet(e);
    if (f.on_boundary())
      continue;
    const double jump = edge_residual(state, ops, e);
    const double contribution = 0.5 * mesh.facet_size(e) * jump * jump;
    report.eta_B_sq[f.cells[0]] += contribution;
    report.eta_B_sq[f.cells[1]] += contribution;
  }

  double total = 0.0;
  report.eta_B.resize(nc);
  for (Index b = 0; b < nc; ++b) {
    report.eta_B[b] = std::sqrt(report.eta_B_sq[b]);
    total += report.eta_B_sq[b];
  }
  report.eta_global = std::sqrt(total);
  report.l2_pi = l2_norm(ops.macro, state.alpha);
  report.lambda_B = refinement_indicators(report.eta_B_sq, report.l2_pi, eta_bar);
  report.marked = mark_cells(report.lambda_B);
  return report;
}

double residual_pairing(const CoupledState& state, const SystemOperators& ops,
                        const ReactionTerm& reaction, const FeSpace& fine, const Vector& phi,
                        const MacroSource& source)
{
  const FeSpace& coarse = ops.macro;
  const auto& cmesh = coarse.mesh();
  const auto& fmesh = fine.mesh();
  if (fmesh.dim() != cmesh.dim())
    throw ValidationError("fine and coarse meshes differ in dimension");
  if (phi.size() != fine.n_dofs())
    throw ValidationError("test function has the wrong size");

  // Nested meshes: each fine cell lies in the coarse cell containing its
  // centroid.
  const PointLocator locator(cmesh);
  std::vector<Index> parent(fmesh.n_cells());
  for (Index c = 0; c < fmesh.n_cells(); ++c)
    parent[c] = locator.locate_or_throw(fmesh.centroid(c)).cell;

  const Vector r_nodal = reduce(ops, state.beta);
  const QuadratureRule rule = simplex_rule(fmesh.dim(), 4);
  double total = 0.0;
  for (Index c = 0; c < fmesh.n_cells(); ++c) {
    const Index B = parent[c];
    for (std::size_t q = 0; q < rule.size(); ++q) {
      const Point x = fmesh.map_to_physical(c, rule.points[q]);
      const Eigen::Vector3d cb = cmesh.barycentric(B, x);
      const double s = coarse.evaluate(state.alpha, B, cb);
      const double r = coarse.evaluate(r_nodal, B, cb);
      const double v = fine.evaluate(phi, c, rule.points[q]);
      total += fmesh.measure(c) * rule.weights[q] *
               residual_value(reaction, source, state.t, x, s, r) * v;
    }
  }

  // Fine facets whose neighbours have different parents lie on coarse facets.
  const double A = ops.params.A;
  for (Index e = 0; e < fmesh.n_facets(); ++e) {
    const Facet& f = fmesh.facet(e);
    if (f.on_boundary() || parent[f.cells[0]] == parent[f.cells[1]])
      continue;
    Index low = parent[f.cells[0]];
    Index high = parent[f.cells[1]];
    if (low > high)
      std::swap(low, high);
    const Point mid = fmesh.facet_midpoint(e);
    Point n = fmesh.facet_normal(e);
    if ((mid - cmesh.centroid(low)).dot(n) < 0.0)
      n = -n;
    const double jump = A * n.dot(coarse.gradient(state.alpha, high) - coarse.gradient(state.alpha, low));
    double phi_mean = 0.0;
    if (fmesh.dim() == 1)
      phi_mean = phi[f.vertices[0]];
    else
      phi_mean = 0.5 * (phi[f.vertices[0]] + phi[f.vertices[1]]);
    total += jump * fmesh.facet_measure(e) * phi_mean;
  }
  return total;
}

AdaptHistory adapt_loop(const AdaptProblem& problem, double eta_bar, int max_rounds)
{
  if (!(eta_bar > 0.0) || !std::isfinite(eta_bar))
    throw ValidationError("eta_bar must be positive, got " + format_double(eta_bar));
  if (max_rounds < 1)
    throw ValidationError("max_rounds must be at least 1");
  if (!problem.initial_mesh || !problem.micro)
    throw ValidationError("adaptive problem needs a macro mesh and a micro space");

  AdaptHistory history;
  auto mesh = problem.initial_mesh;
  for (int round = 0; round < max_rounds; ++round) {
    const FeSpace macro(mesh);
    const SystemOperators ops =
      assemble_system(macro, *problem.micro, problem.params, problem.reduction);
    const DiscreteForcing forcing(problem.forcing, ops);
    AdaptRound entry;
    entry.round = round;
    entry.mesh = mesh;
    entry.state = initial_state(ops, problem.rho_initial, problem.reaction, forcing);
    entry.report =
      estimate(entry.state, ops, problem.reaction, eta_bar, problem.forcing.macro_source);
    if (problem.exact_pi)
      entry.h1_error = h1_seminorm_error(macro, entry.state.alpha, problem.exact_pi->gradient);
    const bool done = entry.report.eta_global < eta_bar;
    const std::vector<Index> marked = entry.report.marked;
    history.rounds.push_back(std::move(entry));
    if (done) {
      history.halted = true;
      break;
    }
    if (marked.empty() || round + 1 == max_rounds)
      break;
    mesh = std::make_shared<const SimplicialMesh>(refine(*mesh, marked));
  }
  return history;
}

void write_adapt_csv(std::ostream& out, const AdaptHistory& history)
{
  out << "round,n_cells,eta_R,l2_pi,n_marked,h1_error\n";
  for (const auto& r : history.rounds) {
    out << r.round << ',' << r.mesh->n_cells() << ',' << format_double(r.report.eta_global) << ','
        << format_double(r.report.l2_pi) << ',' << r.report.marked.size() << ',';
    if (r.h1_error)
      out << format_double(*r.h1_error);
    out << '\n';
  }
}

} // namespace tsfem
