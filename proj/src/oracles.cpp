#include "tsfem/oracles.hpp"

#include "tsfem/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

namespace tsfem {

namespace {

std::shared_ptr<const SimplicialMesh> share(SimplicialMesh mesh)
{
  return std::make_shared<const SimplicialMesh>(std::move(mesh));
}

// Every hat function evaluated at one point of a cell: (dof, value) pairs.
struct HatSample
{
  double weight;
  std::vector<std::pair<Index, double>> values;
  std::vector<std::pair<Index, Point>> gradients;
};

std::vector<HatSample> volume_samples(const FeSpace& space, int degree)
{
  const auto& mesh = space.mesh();
  const QuadratureRule rule = simplex_rule(mesh.dim(), degree);
  std::vector<HatSample> out;
  for (Index c = 0; c < mesh.n_cells(); ++c) {
    const auto verts = mesh.cell(c);
    const auto grads = mesh.barycentric_gradients(c);
    for (std::size_t q = 0; q < rule.size(); ++q) {
      HatSample s{mesh.measure(c) * rule.weights[q], {}, {}};
      const Point x = mesh.map_to_physical(c, rule.points[q]);
      const Eigen::Vector3d bary = mesh.barycentric(c, x);
      for (std::size_t i = 0; i < verts.size(); ++i) {
        s.values.emplace_back(verts[i], bary[static_cast<Eigen::Index>(i)]);
        s.gradients.emplace_back(verts[i], grads[i]);
      }
      out.push_back(std::move(s));
    }
  }
  return out;
}

std::vector<HatSample> robin_samples(const FeSpace& space, int n_points)
{
  const auto& mesh = space.mesh();
  const QuadratureRule line = gauss_legendre_unit(n_points);
  std::vector<HatSample> out;
  for (Index f = 0; f < mesh.n_facets(); ++f) {
    const Facet& facet = mesh.facet(f);
    if (!facet.on_boundary() || facet.mark != BoundaryMark::GammaR)
      continue;
    const Index c = facet.cells[0];
    const auto verts = mesh.cell(c);
    const Point a = mesh.vertex(facet.vertices[0]);
    const Point b = mesh.vertex(facet.vertices[1]);
    const std::size_t npts = mesh.dim() == 1 ? 1 : line.size();
    for (std::size_t q = 0; q < npts; ++q) {
      const double s = mesh.dim() == 1 ? 0.0 : line.points[q][1];
      const double w = mesh.dim() == 1 ? 1.0 : (b - a).norm() * line.weights[q];
      const Point y = (1.0 - s) * a + s * b;
      const Eigen::Vector3d bary = mesh.barycentric(c, y);
      HatSample sample{w, {}, {}};
      for (std::size_t i = 0; i < verts.size(); ++i)
        sample.values.emplace_back(verts[i], bary[static_cast<Eigen::Index>(i)]);
      out.push_back(std::move(sample));
    }
  }
  return out;
}

std::string fmt(double v)
{
  std::ostringstream out;
  out.precision(3);
  out << std::scientific << v;
  return out.str();
}

} // namespace

Matrix brute_force_Q(const FeSpace& macro, const FeSpace& micro, const ModelParams& params)
{
  const Index nx = macro.n_dofs();
  const Index ny = micro.n_dofs();
  Matrix Q = Matrix::Zero(nx * ny, nx * ny);
  const auto xs = volume_samples(macro, 6);
  const auto ys = volume_samples(micro, 6);
  const auto gs = robin_samples(micro, 4);
  for (const HatSample& x : xs) {
    for (const auto& [i, xi_i] : x.values)
      for (const auto& [j, xi_j] : x.values) {
        const double wx = x.weight * xi_i * xi_j;
        for (const HatSample& y : ys)
          for (const auto& [k, gk] : y.gradients)
            for (const auto& [l, gl] : y.gradients)
              Q(i * ny + k, j * ny + l) += params.D * wx * y.weight * gk.dot(gl);
        for (const HatSample& y : gs)
          for (const auto& [k, ek] : y.values)
            for (const auto& [l, el] : y.values)
              Q(i * ny + k, j * ny + l) += params.kappa * params.R * wx * y.weight * ek * el;
      }
  }
  return Q;
}

Matrix brute_force_c(const FeSpace& macro, const FeSpace& micro, const ModelParams& params)
{
  Matrix c = Matrix::Zero(macro.n_dofs(), micro.n_dofs());
  const auto xs = volume_samples(macro, 4);
  const auto gs = robin_samples(micro, 4);
  for (const HatSample& x : xs)
    for (const auto& [i, xi] : x.values)
      for (const HatSample& y : gs)
        for (const auto& [k, ek] : y.values)
          c(i, k) += params.kappa * params.p_F * x.weight * xi * y.weight * ek;
  return c;
}

OracleCheck kronecker_check(const FeSpace& macro, const FeSpace& micro, const ModelParams& params,
                            double tol)
{
  const SystemOperators ops = assemble_system(macro, micro, params);
  const Matrix Q = brute_force_Q(macro, micro, params);
  const Matrix Mx = ops.Mx.to_dense();
  const Matrix Ky = ops.Ky.to_dense();
  const Index nx = ops.n_macro();
  const Index ny = ops.n_micro();
  double dev = 0.0;
  for (Index i = 0; i < nx; ++i)
    for (Index j = 0; j < nx; ++j)
      for (Index k = 0; k < ny; ++k)
        for (Index l = 0; l < ny; ++l)
          dev = std::max(dev, std::abs(Q(i * ny + k, j * ny + l) - Mx(i, j) * Ky(k, l)));
  const Matrix c = brute_force_c(macro, micro, params);
  const Matrix c_ops = params.kappa * params.p_F * ops.m * ops.g.transpose();
  dev = std::max(dev, (c - c_ops).cwiseAbs().maxCoeff());

  OracleCheck check;
  check.name = "kronecker";
  check.measured = dev;
  check.tolerance = tol;
  check.passed = dev <= tol;
  check.detail = std::to_string(nx) + " macro x " + std::to_string(ny) +
                 " micro dofs, max |Q - Mx (x) Ky| = " + fmt(dev);
  return check;
}

OracleCheck conservation_check(const SystemOperators& ops, const ReactionTerm& reaction,
                               const Matrix& beta0, double dt, int steps, double tol)
{
  if (ops.params.kappa != 0.0)
    throw ValidationError("conservation check needs kappa = 0");
  const Vector mass_weights = ops.My.row_sums();
  CoupledState state;
  state.beta = beta0;
  state.alpha = elliptic_solve(ops, reaction, beta0, Vector()).alpha;
  const Vector mass0 = beta0 * mass_weights;
  StepOptions options;
  const TimeStepper stepper(ops, reaction, dt, options);
  double dev = 0.0;
  const double scale = std::max(1.0, mass0.cwiseAbs().maxCoeff());
  for (int n = 0; n < steps; ++n) {
    state = stepper.step(state);
    dev = std::max(dev, (state.beta * mass_weights - mass0).cwiseAbs().maxCoeff() / scale);
  }
  OracleCheck check;
  check.name = "conservation";
  check.measured = dev;
  check.tolerance = tol;
  check.passed = dev <= tol;
  check.detail = std::to_string(steps) + " steps, max relative drift of row mass = " + fmt(dev);
  return check;
}

OracleCheck steady_state_check(const SystemOperators& ops, const Vector& alpha, const Matrix& beta0,
                               double dt, double t_end, double tol)
{
  const ReactionTerm none = ReactionTerm::zero();
  StepOptions options;
  options.scheme = TimeScheme::ImplicitEuler;
  const TimeStepper stepper(ops, none, dt, options);
  Matrix beta = beta0;
  double t = 0.0;
  while (t < t_end - 1e-12) {
    beta = stepper.micro_update(beta, t, alpha, alpha);
    t += dt;
  }
  const Vector target = (alpha.array() + ops.params.p_F).matrix() / ops.params.R;
  double dev = 0.0;
  for (Index i = 0; i < beta.rows(); ++i)
    dev = std::max(dev, (beta.row(i).array() - target[i]).abs().maxCoeff());
  OracleCheck check;
  check.name = "steady_state";
  check.measured = dev;
  check.tolerance = tol;
  check.passed = dev <= tol;
  check.detail = "t = " + fmt(t) + ", max |beta_i - (alpha_i + p_F)/R| = " + fmt(dev);
  return check;
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y)
{
  if (x.size() != y.size() || x.size() < 2)
    throw ValidationError("slope fit needs at least two points");
  double mx = 0.0, my = 0.0;
  const double n = static_cast<double>(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    mx += std::log(x[k]) / n;
    my += std::log(y[k]) / n;
  }
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double dx = std::log(x[k]) - mx;
    sxy += dx * (std::log(y[k]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

ExponentialStudy exponential_study(const SystemOperators& ops, TimeScheme scheme,
                                   const Vector& b0, double alpha_i, double t_end, double dt0,
                                   int halvings)
{
  const Vector exact = micro_exact_linear(ops, b0, alpha_i, t_end);
  const Matrix My = ops.My.to_dense();
  const ReactionTerm none = ReactionTerm::zero();
  const Vector alpha = Vector::Constant(1, alpha_i);
  ExponentialStudy study;
  for (int level = 0; level <= halvings; ++level) {
    const double dt = dt0 / std::pow(2.0, level);
    const int steps = static_cast<int>(std::lround(t_end / dt));
    StepOptions options;
    options.scheme = scheme;
    const TimeStepper stepper(ops, none, dt, options);
    Matrix row = b0.transpose();
    for (int n = 0; n < steps; ++n)
      row = stepper.micro_update(row, n * dt, alpha, alpha);
    const Vector e = row.transpose() - exact;
    study.dts.push_back(dt);
    study.errors.push_back(std::sqrt(e.dot(My * e)));
  }
  study.slope = loglog_slope(study.dts, study.errors);
  return study;
}

std::vector<OracleCheck> run_oracle_suite(std::uint64_t seed)
{
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> coef(0.5, 2.0);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::vector<OracleCheck> checks;

  const auto left = robin_where([](const Point& y) { return y.x() < 1e-12; });
  const auto bottom = robin_where([](const Point& y) { return y.y() < 1e-12; });

  ModelParams params;
  params.D = coef(rng);
  params.kappa = coef(rng);
  params.R = coef(rng);
  params.p_F = coef(rng);
  {
    const FeSpace macro(share(build_uniform(Box::unit(1), 2)));
    const FeSpace micro(share(build_uniform(Box::unit(1), 2, left)));
    OracleCheck c = kronecker_check(macro, micro, params);
    c.name = "kronecker_1d";
    checks.push_back(c);
  }
  {
    const FeSpace macro(share(build_uniform(Box::unit(2), 1)));
    const FeSpace micro(share(build_uniform(Box::unit(2), 1, bottom)));
    OracleCheck c = kronecker_check(macro, micro, params);
    c.name = "kronecker_2d";
    checks.push_back(c);
  }

  const FeSpace macro(share(build_uniform(Box::unit(2), 4)));
  const FeSpace micro(share(build_uniform(Box::unit(1), 8, left)));
  {
    ModelParams p = params;
    p.kappa = 0.0;
    const SystemOperators ops = assemble_system(macro, micro, p);
    Matrix beta0(ops.n_macro(), ops.n_micro());
    for (Index i = 0; i < beta0.rows(); ++i)
      for (Index k = 0; k < beta0.cols(); ++k)
        beta0(i, k) = 1.0 + 0.5 * unit(rng);
    checks.push_back(
      conservation_check(ops, ReactionTerm::standard(0.5, p.theta), beta0, 0.05, 20));
  }
  {
    ModelParams p = params;
    p.D = 1.0;
    p.kappa = 1.0;
    p.R = 1.0;
    const SystemOperators ops = assemble_system(macro, micro, p);
    Vector alpha(ops.n_macro());
    for (Index i = 0; i < alpha.size(); ++i)
      alpha[i] = macro.dirichlet_mask()[i] ? 0.0 : unit(rng);
    const Matrix beta0 = Matrix::Zero(ops.n_macro(), ops.n_micro());
    checks.push_back(steady_state_check(ops, alpha, beta0, 0.25, 60.0));
  }
  {
    ModelParams p;
    p.D = 0.05;
    const FeSpace tiny(share(build_uniform(Box::unit(1), 1)));
    const SystemOperators ops = assemble_system(tiny, micro, p);
    const Vector b0 = micro.interpolate(
      [](const Point& y) { return 1.0 + 0.5 * std::cos(std::numbers::pi * y.x()); });
    const struct
    {
      const char* name;
      TimeScheme scheme;
      double order;
      double tol;
    } cases[] = {{"exponential_implicit_euler", TimeScheme::ImplicitEuler, 1.0, 0.15},
                 {"exponential_crank_nicolson", TimeScheme::CrankNicolson, 2.0, 0.2}};
    for (const auto& c : cases) {
      const ExponentialStudy s = exponential_study(ops, c.scheme, b0, 0.5, 1.0, 0.125, 4);
      OracleCheck check;
      check.name = c.name;
      check.measured = s.slope;
      check.tolerance = c.tol;
      check.passed = std::abs(s.slope - c.order) <= c.tol;
      check.detail = "slope " + fmt(s.slope) + " (expected " + fmt(c.order) + "), finest error " +
                     fmt(s.errors.back());
      checks.push_back(check);
    }
  }
  return checks;
}

} // namespace tsfem
