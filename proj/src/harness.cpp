#include "tsfem/harness.hpp"

#include "tsfem/error.hpp"
#include "tsfem/format.hpp"
#include "tsfem/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>
#include <random>

namespace tsfem {

namespace {

constexpr double pi_const = std::numbers::pi;

std::shared_ptr<const SimplicialMesh> share(SimplicialMesh mesh)
{
  return std::make_shared<const SimplicialMesh>(std::move(mesh));
}

double integrate(const SimplicialMesh& mesh, const ScalarFunction& f, int degree)
{
  const QuadratureRule rule = simplex_rule(mesh.dim(), degree);
  double total = 0.0;
  for (Index c = 0; c < mesh.n_cells(); ++c)
    for (std::size_t q = 0; q < rule.size(); ++q)
      total += mesh.measure(c) * rule.weights[q] * f(mesh.map_to_physical(c, rule.points[q]));
  return total;
}

// int grad g . grad eta_k for every P1 basis function.
Vector gradient_load(const FeSpace& space, const std::function<Point(const Point&)>& grad,
                     int degree)
{
  const auto& mesh = space.mesh();
  const QuadratureRule rule = simplex_rule(mesh.dim(), degree);
  Vector load = Vector::Zero(space.n_dofs());
  for (Index c = 0; c < mesh.n_cells(); ++c) {
    Point mean = Point::Zero();
    for (std::size_t q = 0; q < rule.size(); ++q)
      mean += rule.weights[q] * grad(mesh.map_to_physical(c, rule.points[q]));
    const auto grads = mesh.barycentric_gradients(c);
    const auto verts = mesh.cell(c);
    for (std::size_t i = 0; i < verts.size(); ++i)
      load[verts[i]] += mesh.measure(c) * mean.dot(grads[i]);
  }
  return load;
}

double log_rate(double e_coarse, double e_fine, double H_coarse, double H_fine)
{
  return std::log(e_coarse / e_fine) / std::log(H_coarse / H_fine);
}

std::optional<double> maybe_rate(double e_coarse, double e_fine, double H_coarse, double H_fine)
{
  if (!(e_coarse > 0.0) || !(e_fine > 0.0))
    return std::nullopt;
  return log_rate(e_coarse, e_fine, H_coarse, H_fine);
}

// Separable-expansion data for the rho error on fixed spaces.
class RhoErrorEvaluator
{
public:
  RhoErrorEvaluator(const SystemOperators& ops, const ManufacturedProblem& problem)
    : ops_(&ops), terms_(&problem.rho_terms())
  {
    const auto& terms = *terms_;
    const std::size_t n = terms.size();
    Gx_ = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    Gy_ = Gx_;
    Gyg_ = Gx_;
    for (std::size_t m = 0; m < n; ++m) {
      Lx_.push_back(assemble_load(ops.macro, terms[m].macro.value, 6));
      Ly_.push_back(assemble_load(ops.micro, terms[m].micro.value, 6));
      Lyg_.push_back(gradient_load(ops.micro, terms[m].micro.gradient, 6));
      for (std::size_t k = 0; k <= m; ++k) {
        const auto a = static_cast<Eigen::Index>(m);
        const auto b = static_cast<Eigen::Index>(k);
        Gx_(a, b) = Gx_(b, a) = integrate(
          ops.macro.mesh(),
          [&](const Point& x) { return terms[m].macro.value(x) * terms[k].macro.value(x); }, 6);
        Gy_(a, b) = Gy_(b, a) = integrate(
          ops.micro.mesh(),
          [&](const Point& y) { return terms[m].micro.value(y) * terms[k].micro.value(y); }, 6);
        Gyg_(a, b) = Gyg_(b, a) = integrate(
          ops.micro.mesh(),
          [&](const Point& y) { return terms[m].micro.gradient(y).dot(terms[k].micro.gradient(y)); },
          6);
      }
    }
  }

  std::pair<double, double> operator()(const Matrix& beta, double t) const
  {
    const auto& terms = *terms_;
    Vector tau(static_cast<Eigen::Index>(terms.size()));
    for (std::size_t m = 0; m < terms.size(); ++m)
      tau[static_cast<Eigen::Index>(m)] = terms[m].time(t);

    const Matrix Mx_beta = ops_->Mx.matrix() * beta;
    const Matrix beta_My = (ops_->My.matrix() * beta.transpose()).transpose();
    const Matrix beta_Sy = (ops_->Sy.matrix() * beta.transpose()).transpose();
    double l2 = Mx_beta.cwiseProduct(beta_My).sum();
    double semi = Mx_beta.cwiseProduct(beta_Sy).sum();
    l2 += tau.dot(Gx_.cwiseProduct(Gy_) * tau);
    semi += tau.dot(Gx_.cwiseProduct(Gyg_) * tau);
    for (std::size_t m = 0; m < terms.size(); ++m) {
      const double tm = tau[static_cast<Eigen::Index>(m)];
      const Vector bx = beta.transpose() * Lx_[m];
      l2 -= 2.0 * tm * bx.dot(Ly_[m]);
      semi -= 2.0 * tm * bx.dot(Lyg_[m]);
    }
    return {std::max(l2, 0.0), std::max(semi, 0.0)};
  }

private:
  const SystemOperators* ops_;
  const std::vector<SeparableComponent>* terms_;
  std::vector<Vector> Lx_, Ly_, Lyg_;
  Matrix Gx_, Gy_, Gyg_;
};

} // namespace

// Manufactured problems ----------------------------------------------------------

ManufacturedProblem::ManufacturedProblem(std::string name, ModelParams params,
                                         ReactionTerm reaction, ReductionRule reduction,
                                         Box macro_domain, Box micro_domain,
                                         std::function<bool(const Point&)> is_robin,
                                         std::vector<SeparableComponent> pi_terms,
                                         std::vector<SeparableComponent> rho_terms)
  : name_(std::move(name)), params_(params), reaction_(std::move(reaction)),
    reduction_(reduction), macro_domain_(macro_domain), micro_domain_(micro_domain),
    is_robin_(std::move(is_robin)), pi_terms_(std::move(pi_terms)),
    rho_terms_(std::move(rho_terms))
{
  params_.validate_structure();
  if (!reaction_.f)
    throw ValidationError("manufactured problem needs a reaction term");
  for (const auto& c : pi_terms_)
    if (!c.time || !c.time_derivative || !c.macro.value || !c.macro.gradient || !c.macro_laplacian)
      throw ValidationError("pi component is missing a factor");
  for (const auto& c : rho_terms_)
    if (!c.time || !c.time_derivative || !c.macro.value || !c.micro.value || !c.micro.gradient ||
        !c.micro_laplacian)
      throw ValidationError("rho component is missing a factor");

  // Reductions of the micro factors on a fine cell mesh.
  const FeSpace fine(share(build_uniform(micro_domain_, 64, micro_marker())));
  const double measure = fine.mesh().total_measure();
  double gamma = 0.0;
  if (reduction_ == ReductionRule::GammaRMean)
    gamma = assemble_boundary_mass(fine, BoundaryMark::GammaR).measure;
  for (const auto& c : rho_terms_) {
    if (reduction_ == ReductionRule::MeanY) {
      rho_means_.push_back(integrate(fine.mesh(), c.micro.value, 8) / measure);
    } else {
      const Vector load = assemble_boundary_load(
        fine,
        [&](const Point& y, const Point&, BoundaryMark mark) {
          return mark == BoundaryMark::GammaR ? c.micro.value(y) : 0.0;
        },
        8);
      rho_means_.push_back(load.sum() / gamma);
    }
  }
}

MarkerRule ManufacturedProblem::micro_marker() const
{
  return robin_where(is_robin_);
}

double ManufacturedProblem::pi(double t, const Point& x) const
{
  double v = 0.0;
  for (const auto& c : pi_terms_)
    v += c.time(t) * c.macro.value(x);
  return v;
}

Point ManufacturedProblem::grad_pi(double t, const Point& x) const
{
  Point g = Point::Zero();
  for (const auto& c : pi_terms_)
    g += c.time(t) * c.macro.gradient(x);
  return g;
}

double ManufacturedProblem::laplacian_pi(double t, const Point& x) const
{
  double v = 0.0;
  for (const auto& c : pi_terms_)
    v += c.time(t) * c.macro_laplacian(x);
  return v;
}

double ManufacturedProblem::rho(double t, const Point& x, const Point& y) const
{
  double v = 0.0;
  for (const auto& c : rho_terms_)
    v += c.time(t) * c.macro.value(x) * c.micro.value(y);
  return v;
}

double ManufacturedProblem::reduced_rho(double t, const Point& x) const
{
  double v = 0.0;
  for (std::size_t m = 0; m < rho_terms_.size(); ++m)
    v += rho_terms_[m].time(t) * rho_terms_[m].macro.value(x) * rho_means_[m];
  return v;
}

double ManufacturedProblem::macro_source(double t, const Point& x) const
{
  return -params_.A * laplacian_pi(t, x) - reaction_.f(pi(t, x), reduced_rho(t, x));
}

Forcing ManufacturedProblem::forcing() const
{
  auto self = std::make_shared<const ManufacturedProblem>(*this);
  Forcing out;
  out.macro_source = [self](double t, const Point& x) { return self->macro_source(t, x); };

  const double D = params_.D;
  const double kappa = params_.kappa;
  const double kR = params_.kappa * params_.R;
  for (const auto& c : rho_terms_) {
    out.micro_terms.push_back({c.time_derivative, c.macro.value, c.micro.value, {}});
    const auto Y = c.micro;
    const auto lap = c.micro_laplacian;
    out.micro_terms.push_back(
      {c.time, c.macro.value, [D, lap](const Point& y) { return -D * lap(y); },
       [D, kR, Y](const Point& y, const Point& n, BoundaryMark mark) {
         double v = D * Y.gradient(y).dot(n);
         if (mark == BoundaryMark::GammaR)
           v += kR * Y.value(y);
         return v;
       }});
  }
  if (kappa != 0.0) {
    const auto robin_only = [kappa](const Point&, const Point&, BoundaryMark mark) {
      return mark == BoundaryMark::GammaR ? -kappa : 0.0;
    };
    for (const auto& c : pi_terms_)
      out.micro_terms.push_back({c.time, c.macro.value, {}, robin_only});
    if (params_.p_F != 0.0) {
      const double p_F = params_.p_F;
      out.micro_terms.push_back({[p_F](double) { return p_F; }, [](const Point&) { return 1.0; },
                                 {}, robin_only});
    }
  }
  return out;
}

SmoothField ManufacturedProblem::pi_at(double t) const
{
  auto self = std::make_shared<const ManufacturedProblem>(*this);
  return {[self, t](const Point& x) { return self->pi(t, x); },
          [self, t](const Point& x) { return self->grad_pi(t, x); }};
}

TwoScaleFunction ManufacturedProblem::rho_at(double t) const
{
  auto self = std::make_shared<const ManufacturedProblem>(*this);
  return [self, t](const Point& x, const Point& y) { return self->rho(t, x, y); };
}

ManufacturedProblem ManufacturedProblem::smooth(const ModelParams& params,
                                                const ReactionTerm& reaction)
{
  const double T = params.T;
  SeparableComponent p;
  p.time = [T](double t) { return 1.0 + t / T; };
  p.time_derivative = [T](double) { return 1.0 / T; };
  p.macro.value = [](const Point& x) {
    return std::sin(pi_const * x.x()) * std::sin(pi_const * x.y());
  };
  p.macro.gradient = [](const Point& x) {
    return Point(pi_const * std::cos(pi_const * x.x()) * std::sin(pi_const * x.y()),
                 pi_const * std::sin(pi_const * x.x()) * std::cos(pi_const * x.y()));
  };
  p.macro_laplacian = [](const Point& x) {
    return -2.0 * pi_const * pi_const * std::sin(pi_const * x.x()) * std::sin(pi_const * x.y());
  };
  p.micro.value = [](const Point&) { return 1.0; };
  p.micro.gradient = [](const Point&) { return Point(0.0, 0.0); };
  p.micro_laplacian = [](const Point&) { return 0.0; };

  SeparableComponent r;
  r.time = [](double t) { return std::exp(-t); };
  r.time_derivative = [](double t) { return -std::exp(-t); };
  r.macro.value = [](const Point& x) { return 1.0 + x.x(); };
  r.macro.gradient = [](const Point&) { return Point(1.0, 0.0); };
  r.macro_laplacian = [](const Point&) { return 0.0; };
  r.micro.value = [](const Point& y) { return 1.0 + 0.5 * std::cos(pi_const * y.x()); };
  r.micro.gradient = [](const Point& y) {
    return Point(-0.5 * pi_const * std::sin(pi_const * y.x()), 0.0);
  };
  r.micro_laplacian = [](const Point& y) {
    return -0.5 * pi_const * pi_const * std::cos(pi_const * y.x());
  };

  return ManufacturedProblem("smooth", params, reaction, ReductionRule::MeanY, Box::unit(2),
                             Box::unit(1), [](const Point& y) { return y.x() < 1e-12; }, {p},
                             {r});
}

ManufacturedProblem ManufacturedProblem::smooth()
{
  ModelParams params;
  params.theta = 3.0;
  return smooth(params, ReactionTerm::standard(0.5, params.theta));
}

ManufacturedProblem ManufacturedProblem::localized(const Point& x0, double radius,
                                                   double amplitude, const ModelParams& params,
                                                   const ReactionTerm& reaction)
{
  if (!(radius > 0.0))
    throw ValidationError("bump radius must be positive");
  const double r2 = radius * radius;
  // psi(q) = exp(1 - 1/(1 - q)) with q = |x - x0|^2 / r^2.
  const auto psi = [](double q) { return q < 1.0 ? std::exp(1.0 - 1.0 / (1.0 - q)) : 0.0; };
  SeparableComponent p;
  p.time = [](double) { return 1.0; };
  p.time_derivative = [](double) { return 0.0; };
  p.macro.value = [=](const Point& x) { return amplitude * psi((x - x0).squaredNorm() / r2); };
  p.macro.gradient = [=](const Point& x) {
    const Point z = x - x0;
    const double q = z.squaredNorm() / r2;
    if (q >= 1.0)
      return Point(0.0, 0.0);
    const double s = 1.0 - q;
    return Point(-amplitude * psi(q) / (s * s) * 2.0 / r2 * z);
  };
  p.macro_laplacian = [=](const Point& x) {
    const double q = (x - x0).squaredNorm() / r2;
    if (q >= 1.0)
      return 0.0;
    const double s = 1.0 - q;
    const double d1 = -psi(q) / (s * s);
    const double d2 = psi(q) * (1.0 - 2.0 * s) / (s * s * s * s);
    return amplitude * (d2 * 4.0 * q / r2 + d1 * 4.0 / r2);
  };
  p.micro.value = [](const Point&) { return 1.0; };
  p.micro.gradient = [](const Point&) { return Point(0.0, 0.0); };
  p.micro_laplacian = [](const Point&) { return 0.0; };

  return ManufacturedProblem("localized", params, reaction, ReductionRule::MeanY, Box::unit(2),
                             Box::unit(1), [](const Point& y) { return y.x() < 1e-12; }, {p}, {});
}

// Source consistency ------------------------------------------------------------

double ConsistencyReport::max() const
{
  return std::max({macro, micro_volume, micro_boundary});
}

ConsistencyReport source_consistency(const ManufacturedProblem& problem, std::uint64_t seed,
                                     int samples)
{
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const ModelParams& prm = problem.params();
  const Box& X = problem.macro_domain();
  const Box& Y = problem.micro_domain();
  const auto sample_in = [&](const Box& box) {
    Point p = box.lower;
    for (int d = 0; d < box.dim; ++d)
      p[d] += unit(rng) * (box.upper[d] - box.lower[d]);
    return p;
  };

  // Sixth-order Laplacian and fourth-order first derivatives.
  const double h2 = 2e-4;
  const double h1 = 1e-3;
  const auto fd_laplacian = [&](const std::function<double(const Point&)>& u, const Point& p,
                                int dim) {
    double v = 0.0;
    for (int d = 0; d < dim; ++d) {
      Point e = Point::Zero();
      e[d] = h2;
      v += (2.0 * (u(p + 3.0 * e) + u(p - 3.0 * e)) - 27.0 * (u(p + 2.0 * e) + u(p - 2.0 * e)) +
            270.0 * (u(p + e) + u(p - e)) - 490.0 * u(p)) /
           (180.0 * h2 * h2);
    }
    return v;
  };
  const auto fd_gradient = [&](const std::function<double(const Point&)>& u, const Point& p,
                               int dim) {
    Point g = Point::Zero();
    for (int d = 0; d < dim; ++d) {
      Point e = Point::Zero();
      e[d] = h1;
      g[d] = (-u(p + 2.0 * e) + 8.0 * u(p + e) - 8.0 * u(p - e) + u(p - 2.0 * e)) / (12.0 * h1);
    }
    return g;
  };
  const auto fd_time = [&](const std::function<double(double)>& u, double t) {
    return (-u(t + 2.0 * h1) + 8.0 * u(t + h1) - 8.0 * u(t - h1) + u(t - 2.0 * h1)) / (12.0 * h1);
  };

  const Forcing forcing = problem.forcing();
  ConsistencyReport report;
  for (int s = 0; s < samples; ++s) {
    const double t = unit(rng) * prm.T;
    const Point x = sample_in(X);

    // Macro: -A lap(pi) = f(pi, r) + s.
    const auto pi_t = [&](const Point& p) { return problem.pi(t, p); };
    const double macro_res = -prm.A * fd_laplacian(pi_t, x, X.dim) -
                             problem.reaction().f(problem.pi(t, x), problem.reduced_rho(t, x)) -
                             forcing.macro_source(t, x);
    report.macro = std::max(report.macro, std::abs(macro_res));

    // Micro volume: d_t rho - D lap_y rho = sum of volume densities.
    const Point y = sample_in(Y);
    const auto rho_y = [&](const Point& q) { return problem.rho(t, x, q); };
    const double dt_rho = fd_time([&](double tau) { return problem.rho(tau, x, y); }, t);
    double volume = 0.0;
    for (const auto& term : forcing.micro_terms)
      if (term.micro_volume)
        volume += term.time(t) * term.macro(x) * term.micro_volume(y);
    report.micro_volume = std::max(
      report.micro_volume, std::abs(dt_rho - prm.D * fd_laplacian(rho_y, y, Y.dim) - volume));

    // Micro boundary: D grad_y rho . n = kappa (pi + p_F - R rho) on Gamma_R,
    // zero flux elsewhere, plus the boundary densities.
    const int axis = Y.dim == 1 ? 0 : static_cast<int>(unit(rng) * 2.0) % 2;
    const bool upper = unit(rng) < 0.5;
    Point yb = sample_in(Y);
    yb[axis] = upper ? Y.upper[axis] : Y.lower[axis];
    Point n = Point::Zero();
    n[axis] = upper ? 1.0 : -1.0;
    const MarkerRule marker = problem.micro_marker();
    const BoundaryMark mark = marker(yb, n);
    double boundary = 0.0;
    for (const auto& term : forcing.micro_terms)
      if (term.micro_boundary)
        boundary += term.time(t) * term.macro(x) * term.micro_boundary(yb, n, mark);
    double flux = prm.D * fd_gradient(rho_y, yb, Y.dim).dot(n);
    if (mark == BoundaryMark::GammaR)
      flux -= prm.kappa * (problem.pi(t, x) + prm.p_F - prm.R * problem.rho(t, x, yb));
    report.micro_boundary = std::max(report.micro_boundary, std::abs(flux - boundary));
  }
  return report;
}

// Time integration and error norms ----------------------------------------------

std::shared_ptr<const SystemOperators> problem_operators(const ManufacturedProblem& problem,
                                                         int macro_n, int micro_n)
{
  const FeSpace macro(share(build_uniform(problem.macro_domain(), macro_n)));
  const FeSpace micro(share(build_uniform(problem.micro_domain(), micro_n, problem.micro_marker())));
  return std::make_shared<const SystemOperators>(
    assemble_system(macro, micro, problem.params(), problem.reduction()));
}

Trajectory run_problem(const ManufacturedProblem& problem, int macro_n, int micro_n, double dt,
                       TimeScheme scheme)
{
  const double T = problem.params().T;
  if (!(dt > 0.0))
    throw ValidationError("time step must be positive");
  const double steps_real = T / dt;
  const long steps = std::lround(steps_real);
  if (steps < 1 || std::abs(steps_real - static_cast<double>(steps)) > 1e-9 * steps_real)
    throw ValidationError("time step " + format_double(dt) + " does not divide T = " +
                          format_double(T));

  Trajectory traj;
  traj.ops = problem_operators(problem, macro_n, micro_n);
  traj.dt = dt;
  const SystemOperators& ops = *traj.ops;
  const DiscreteForcing forcing(problem.forcing(), ops);

  traj.states.push_back(initial_state(ops, problem.rho_at(0.0), problem.reaction(), forcing));
  StepOptions options;
  options.mode = CouplingMode::Iterated;
  options.scheme = scheme;
  const TimeStepper stepper(ops, problem.reaction(), dt, options, &forcing);
  for (long n = 0; n < steps; ++n) {
    StepStats stats;
    CoupledState next = stepper.step(traj.states.back(), &stats);
    // Pin the clock to the grid to avoid drift in long runs.
    next.t = static_cast<double>(n + 1) * dt;
    traj.max_outer_iterations = std::max(traj.max_outer_iterations, stats.outer_iterations);
    traj.max_contraction = std::max(traj.max_contraction, stats.max_contraction);
    traj.states.push_back(std::move(next));
  }
  return traj;
}

std::pair<double, double> rho_error_sq(const SystemOperators& ops,
                                       const ManufacturedProblem& problem, const Matrix& beta,
                                       double t)
{
  return RhoErrorEvaluator(ops, problem)(beta, t);
}

ErrorReport error_norms(const Trajectory& trajectory, const ManufacturedProblem& problem)
{
  ErrorReport report;
  if (trajectory.states.empty())
    return report;
  const SystemOperators& ops = *trajectory.ops;
  const RhoErrorEvaluator rho_error(ops, problem);
  const std::size_t last = trajectory.states.size() - 1;
  double rho_sq = 0.0;
  double rho_y_sq = 0.0;
  for (std::size_t n = 0; n <= last; ++n) {
    const CoupledState& s = trajectory.states[n];
    const SmoothField exact = problem.pi_at(s.t);
    report.e_pi_L2 = std::max(report.e_pi_L2, l2_error(ops.macro, s.alpha, exact.value));
    const double h1 = h1_seminorm_error(ops.macro, s.alpha, exact.gradient);
    report.e_pi_H1 = std::max(report.e_pi_H1, h1);
    if (n == last)
      report.e_pi_H1_final = h1;
    if (last == 0)
      continue;
    const auto [l2, semi] = rho_error(s.beta, s.t);
    const double w = (n == 0 || n == last ? 0.5 : 1.0) * trajectory.dt;
    rho_sq += w * l2;
    rho_y_sq += w * semi;
  }
  if (last == 0) {
    const auto [l2, semi] = rho_error(trajectory.states[0].beta, trajectory.states[0].t);
    rho_sq = l2;
    rho_y_sq = semi;
  }
  report.e_rho = std::sqrt(rho_sq);
  report.e_rho_y = std::sqrt(rho_y_sq);
  return report;
}

// Studies --------------------------------------------------------------------------

std::vector<StudyLevel> doubling_levels(int n0, double dt0, int count)
{
  std::vector<StudyLevel> levels;
  int n = n0;
  double dt = dt0;
  for (int k = 0; k < count; ++k) {
    levels.push_back({n, n, dt});
    n *= 2;
    dt /= 4.0;
  }
  return levels;
}

double fitted_slope(const std::vector<double>& H, const std::vector<double>& errors)
{
  return loglog_slope(H, errors);
}

std::vector<ConvergenceRow> convergence_study(const ManufacturedProblem& problem,
                                              const std::vector<StudyLevel>& levels,
                                              TimeScheme scheme)
{
  if (levels.size() < 3)
    throw ValidationError("a convergence study needs at least 3 levels");
  std::vector<ConvergenceRow> rows;
  for (std::size_t k = 0; k < levels.size(); ++k) {
    const StudyLevel& lvl = levels[k];
    const Trajectory traj = run_problem(problem, lvl.macro_n, lvl.micro_n, lvl.dt, scheme);
    ConvergenceRow row;
    row.level = static_cast<int>(k);
    row.H = traj.ops->macro.mesh().max_diameter();
    row.h = traj.ops->micro.mesh().max_diameter();
    row.dt = lvl.dt;
    row.errors = error_norms(traj, problem);

    const CoupledState& final_state = traj.states.back();
    const Forcing forcing = problem.forcing();
    row.eta_R =
      estimate(final_state, *traj.ops, problem.reaction(), 1.0, forcing.macro_source).eta_global;
    row.effectivity = row.errors.e_pi_H1_final > 0.0 ? row.eta_R / row.errors.e_pi_H1_final : 1.0;

    if (!rows.empty()) {
      const ConvergenceRow& prev = rows.back();
      row.rate_pi_L2 = maybe_rate(prev.errors.e_pi_L2, row.errors.e_pi_L2, prev.H, row.H);
      row.rate_pi_H1 = maybe_rate(prev.errors.e_pi_H1, row.errors.e_pi_H1, prev.H, row.H);
      row.rate_rho = maybe_rate(prev.errors.e_rho, row.errors.e_rho, prev.H, row.H);
      row.rate_rho_y = maybe_rate(prev.errors.e_rho_y, row.errors.e_rho_y, prev.H, row.H);
    }
    rows.push_back(row);
  }
  return rows;
}

namespace {

void write_optional(std::ostream& out, const std::optional<double>& v)
{
  if (v)
    out << format_double(*v);
}

} // namespace

void write_convergence_csv(std::ostream& out, const std::vector<ConvergenceRow>& rows)
{
  out << "level,H,h,dt,e_pi_L2,e_pi_H1,e_rho,rate_pi_L2,rate_pi_H1,rate_rho,eta_R,effectivity\n";
  for (const auto& r : rows) {
    out << r.level << ',' << format_double(r.H) << ',' << format_double(r.h) << ','
        << format_double(r.dt) << ',' << format_double(r.errors.e_pi_L2) << ','
        << format_double(r.errors.e_pi_H1) << ',' << format_double(r.errors.e_rho) << ',';
    write_optional(out, r.rate_pi_L2);
    out << ',';
    write_optional(out, r.rate_pi_H1);
    out << ',';
    write_optional(out, r.rate_rho);
    out << ',' << format_double(r.eta_R) << ',' << format_double(r.effectivity) << '\n';
  }
}

void write_seminorm_csv(std::ostream& out, const std::vector<ConvergenceRow>& rows)
{
  out << "level,H,h,e_rho_y,rate_rho_y\n";
  for (const auto& r : rows) {
    out << r.level << ',' << format_double(r.H) << ',' << format_double(r.h) << ','
        << format_double(r.errors.e_rho_y) << ',';
    write_optional(out, r.rate_rho_y);
    out << '\n';
  }
}

RitzStudy ritz_study(const ManufacturedProblem& problem, const std::vector<int>& sizes, double t)
{
  if (sizes.size() < 2)
    throw ValidationError("a Ritz study needs at least 2 sizes");
  const ModelParams& prm = problem.params();
  EnergyForm micro_form;
  micro_form.grad_coeff = prm.D;
  micro_form.robin_coeff = prm.kappa * prm.R;
  if (micro_form.robin_coeff == 0.0)
    micro_form.mass_coeff = 1.0;

  RitzStudy study;
  for (int n : sizes) {
    const auto ops = problem_operators(problem, n, n);
    const SmoothField exact = problem.pi_at(t);
    const Vector pi_h = ritz_project(ops->macro, exact, prm.A);
    study.H.push_back(ops->macro.mesh().max_diameter());
    study.l2.push_back(l2_error(ops->macro, pi_h, exact.value));
    study.h1.push_back(h1_seminorm_error(ops->macro, pi_h, exact.gradient));

    Matrix beta = Matrix::Zero(ops->n_macro(), ops->n_micro());
    for (const auto& c : problem.rho_terms()) {
      const Vector bx = ritz_project(ops->macro, c.macro, 1.0);
      const Vector by = ritz_project(ops->micro, c.micro, micro_form);
      beta.noalias() += c.time(t) * bx * by.transpose();
    }
    study.two_scale.push_back(std::sqrt(rho_error_sq(*ops, problem, beta, t).first));
  }
  study.slope_l2 = fitted_slope(study.H, study.l2);
  study.slope_h1 = fitted_slope(study.H, study.h1);
  study.slope_two_scale = problem.rho_terms().empty()
                            ? std::numeric_limits<double>::quiet_NaN()
                            : fitted_slope(study.H, study.two_scale);
  return study;
}

EffectivityStudy effectivity_study(const ManufacturedProblem& problem,
                                   const std::vector<int>& sizes, int micro_n)
{
  EffectivityStudy study;
  const Forcing forcing = problem.forcing();
  const SmoothField exact = problem.pi_at(0.0);
  double lo = std::numeric_limits<double>::infinity();
  double hi = 0.0;
  for (std::size_t k = 0; k < sizes.size(); ++k) {
    const auto ops = problem_operators(problem, sizes[k], micro_n);
    const DiscreteForcing discrete(forcing, *ops);
    const CoupledState state =
      initial_state(*ops, problem.rho_at(0.0), problem.reaction(), discrete);
    EffectivityRow row;
    row.level = static_cast<int>(k);
    row.H = ops->macro.mesh().max_diameter();
    row.eta_R = estimate(state, *ops, problem.reaction(), 1.0, forcing.macro_source).eta_global;
    row.e_pi_H1 = h1_seminorm_error(ops->macro, state.alpha, exact.gradient);
    row.index = row.e_pi_H1 > 0.0 ? row.eta_R / row.e_pi_H1 : 1.0;
    lo = std::min(lo, row.index);
    hi = std::max(hi, row.index);
    study.rows.push_back(row);
  }
  study.ratio = study.rows.empty() || !(lo > 0.0) ? std::numeric_limits<double>::infinity()
                                                  : hi / lo;
  if (study.rows.empty())
    study.ratio = 1.0;
  return study;
}

void write_effectivity_csv(std::ostream& out, const EffectivityStudy& study)
{
  out << "level,H,eta_R,e_pi_H1,index\n";
  for (const auto& r : study.rows)
    out << r.level << ',' << format_double(r.H) << ',' << format_double(r.eta_R) << ','
        << format_double(r.e_pi_H1) << ',' << format_double(r.index) << '\n';
}

AdaptProblem adapt_problem(const ManufacturedProblem& problem, int macro_n, int micro_n)
{
  AdaptProblem out;
  out.initial_mesh = share(build_uniform(problem.macro_domain(), macro_n));
  out.micro = std::make_shared<const FeSpace>(
    share(build_uniform(problem.micro_domain(), micro_n, problem.micro_marker())));
  out.params = problem.params();
  out.reduction = problem.reduction();
  out.reaction = problem.reaction();
  out.rho_initial = problem.rho_at(0.0);
  out.forcing = problem.forcing();
  out.exact_pi = problem.pi_at(0.0);
  return out;
}

double marked_fraction_in(const AdaptHistory& history, const Box& box)
{
  std::size_t inside = 0;
  std::size_t total = 0;
  for (const auto& round : history.rounds)
    for (Index b : round.report.marked) {
      ++total;
      if (box.contains(round.mesh->centroid(b), 1e-12))
        ++inside;
    }
  return total == 0 ? 1.0 : static_cast<double>(inside) / static_cast<double>(total);
}

} // namespace tsfem
