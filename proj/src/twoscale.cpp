#include "tsfem/twoscale.hpp"

#include "tsfem/error.hpp"
#include "tsfem/format.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>

namespace tsfem {

namespace {

void require(bool ok, const std::string& message)
{
  if (!ok)
    throw ValidationError(message);
}

bool finite(double v)
{
  return std::isfinite(v);
}

std::string describe(const char* name, double value)
{
  std::ostringstream out;
  out << name << " = " << value;
  return out.str();
}

} // namespace

// Parameters -------------------------------------------------------------------

void ModelParams::validate_structure() const
{
  const std::pair<const char*, double> positive[] = {
    {"A", A}, {"D", D}, {"R", R}, {"theta", theta}, {"T", T}};
  for (const auto& [name, value] : positive)
    require(finite(value) && value > 0.0, describe(name, value) + " must be positive and finite");
  require(finite(kappa) && kappa >= 0.0, describe("kappa", kappa) + " must be nonnegative");
  require(finite(p_F) && p_F >= 0.0, describe("p_F", p_F) + " must be nonnegative");
}

void ModelParams::validate_assumptions(double c_pi, double c_rho, double poincare) const
{
  validate_structure();
  require(kappa > 0.0, "all model parameters must be positive: " + describe("kappa", kappa));
  require(p_F > 0.0, "all model parameters must be positive: " + describe("p_F", p_F));
  const double bound = std::max(c_pi, c_rho) * poincare;
  if (!(A > bound)) {
    std::ostringstream msg;
    msg << "diffusivity must dominate the reaction: A = " << A << " <= max(c_pi, c_rho) * c_p = "
        << bound << " (c_pi = " << c_pi << ", c_rho = " << c_rho << ", c_p = " << poincare << ")";
    throw ValidationError(msg.str());
  }
}

std::string_view to_string(ReductionRule rule)
{
  return rule == ReductionRule::MeanY ? "mean_y" : "gamma_r_mean";
}

ReductionRule parse_reduction(std::string_view token)
{
  if (token == "mean_y")
    return ReductionRule::MeanY;
  if (token == "gamma_r_mean")
    return ReductionRule::GammaRMean;
  throw ValidationError("unknown reduction rule '" + std::string(token) + "'");
}

// Reaction terms ---------------------------------------------------------------

ReactionTerm ReactionTerm::zero()
{
  ReactionTerm r;
  r.name = "zero";
  r.f = [](double, double) { return 0.0; };
  r.df_ds = r.f;
  r.df_dr = r.f;
  r.identically_zero = true;
  return r;
}

ReactionTerm ReactionTerm::constant(double c)
{
  ReactionTerm r;
  r.name = "constant";
  r.f = [c](double, double) { return c; };
  r.df_ds = [](double, double) { return 0.0; };
  r.df_dr = r.df_ds;
  r.identically_zero = c == 0.0;
  return r;
}

ReactionTerm ReactionTerm::linear_in_r(double c)
{
  ReactionTerm r;
  r.name = "linear_in_r";
  r.f = [c](double, double rr) { return c * rr; };
  r.df_ds = [](double, double) { return 0.0; };
  r.df_dr = [c](double, double) { return c; };
  r.c_rho = std::abs(c);
  r.identically_zero = c == 0.0;
  return r;
}

ReactionTerm ReactionTerm::standard(double c_f, double theta)
{
  require(finite(c_f) && c_f >= 0.0, describe("c_f", c_f) + " must be nonnegative");
  require(finite(theta) && theta > 0.0, describe("theta", theta) + " must be positive");
  ReactionTerm r;
  r.name = "standard";
  const auto gate = [](double rr) { return 0.5 * (1.0 + std::tanh(rr)); };
  const auto dgate = [](double rr) {
    const double c = std::cosh(rr);
    return 0.5 / (c * c);
  };
  const auto shape = [theta](double s) {
    if (s < 0.0)
      return std::tanh(s);
    if (s > theta)
      return 0.0;
    const double u = 1.0 - s / theta;
    return s * u * u;
  };
  const auto dshape = [theta](double s) {
    if (s < 0.0) {
      const double c = std::cosh(s);
      return 1.0 / (c * c);
    }
    if (s > theta)
      return 0.0;
    return (1.0 - s / theta) * (1.0 - 3.0 * s / theta);
  };
  r.f = [=](double s, double rr) { return c_f * shape(s) * gate(rr); };
  r.df_ds = [=](double s, double rr) { return c_f * dshape(s) * gate(rr); };
  r.df_dr = [=](double s, double rr) { return c_f * shape(s) * dgate(rr); };
  r.c_pi = c_f;
  r.c_rho = c_f * std::max(2.0 * theta / 27.0, 0.5);
  r.identically_zero = c_f == 0.0;
  return r;
}

void ReactionTerm::validate(double theta, std::uint64_t seed, int samples) const
{
  require(static_cast<bool>(f), "reaction term '" + name + "' has no function");
  require(finite(c_pi) && c_pi >= 0.0 && finite(c_rho) && c_rho >= 0.0,
          "reaction term '" + name + "' declares invalid Lipschitz bounds");
  require(c_pi < 1.0, "reaction must be a contraction in s: declared c_pi = " +
                        format_double(c_pi) + " >= 1");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> s_dist(-theta, 3.0 * theta);
  std::uniform_real_distribution<double> r_dist(-4.0, 4.0);
  std::uniform_real_distribution<double> above(1.0, 4.0);
  const double slack = 1.0 + 1e-9;
  for (int k = 0; k < samples; ++k) {
    const double r = r_dist(rng);
    if (std::abs(f(0.0, r)) > 1e-14)
      throw ValidationError("reaction must vanish at s = 0: f(0, " + format_double(r) +
                            ") = " + format_double(f(0.0, r)));
    const double s_big = theta * above(rng);
    if (std::abs(f(s_big, r)) > 1e-14)
      throw ValidationError("reaction must vanish above theta: f(" + format_double(s_big) + ", " +
                            format_double(r) + ") = " + format_double(f(s_big, r)));
    const double s1 = s_dist(rng);
    const double s2 = s_dist(rng);
    if (std::abs(f(s1, r) - f(s2, r)) > c_pi * std::abs(s1 - s2) * slack + 1e-14)
      throw ValidationError("reaction exceeds its declared c_pi = " + format_double(c_pi) +
                            " between s = " + format_double(s1) + " and " + format_double(s2));
    const double r2 = r_dist(rng);
    if (std::abs(f(s1, r) - f(s1, r2)) > c_rho * std::abs(r - r2) * slack + 1e-14)
      throw ValidationError("reaction exceeds its declared c_rho = " + format_double(c_rho) +
                            " between r = " + format_double(r) + " and " + format_double(r2));
  }
}

// Assembly ---------------------------------------------------------------------

Vector SystemOperators::reduction_weights() const
{
  return reduction == ReductionRule::MeanY ? Vector(w / micro_measure)
                                           : Vector(g / gamma_measure);
}

SystemOperators assemble_system(const FeSpace& macro, const FeSpace& micro,
                                const ModelParams& params, ReductionRule reduction)
{
  params.validate_structure();
  require(macro.has_dirichlet(), "macro space needs Dirichlet boundary facets");
  require(!micro.has_dirichlet(), "micro space must not carry Dirichlet facets");

  SystemOperators ops(macro, micro, params, reduction);
  ops.P_raw = assemble_stiffness(macro, params.A);
  ops.P = ops.P_raw.eliminate(macro.dirichlet_mask());
  ops.Mx = assemble_mass(macro);
  ops.Sy = assemble_stiffness(micro, 1.0);
  ops.My = assemble_mass(micro);
  BoundaryOperators robin = assemble_boundary_mass(micro, BoundaryMark::GammaR);
  ops.Gy = std::move(robin.mass);
  ops.g = std::move(robin.load);
  ops.gamma_measure = robin.measure;
  ops.Ky = ops.Sy.scaled(params.D).plus(ops.Gy, params.kappa * params.R);
  ops.m = load_of_one(macro);
  ops.w = load_of_one(micro);
  ops.micro_measure = micro.mesh().total_measure();

  ops.P_solver = std::make_shared<SpdSolver>(ops.P_raw, macro.dirichlet_mask());
  ops.Mx_solver = std::make_shared<SpdSolver>(ops.Mx);
  ops.My_solver = std::make_shared<SpdSolver>(ops.My);
  return ops;
}

// Forcing ----------------------------------------------------------------------

DiscreteForcing::DiscreteForcing(const Forcing& forcing, const SystemOperators& ops)
  : macro_(std::make_shared<const FeSpace>(ops.macro)), n_macro_(ops.n_macro()), n_micro_(ops.n_micro()),
    source_(forcing.macro_source)
{
  for (const SeparableTerm& term : forcing.micro_terms) {
    require(term.time && term.macro, "separable forcing term needs time and macro factors");
    Vector y = Vector::Zero(n_micro_);
    if (term.micro_volume)
      y += assemble_load(ops.micro, term.micro_volume, 4);
    if (term.micro_boundary)
      y += assemble_boundary_load(ops.micro, term.micro_boundary, 4);
    time_.push_back(term.time);
    x_coeff_.push_back(ops.Mx_solver->solve(assemble_load(ops.macro, term.macro, 4)));
    y_load_.push_back(std::move(y));
  }
}

Vector DiscreteForcing::macro_load(double t) const
{
  if (!source_)
    return Vector::Zero(n_macro_);
  return assemble_load(*macro_, [&](const Point& x) { return source_(t, x); }, 4);
}

Matrix DiscreteForcing::micro_rhs(double t) const
{
  Matrix rhs = Matrix::Zero(n_macro_, n_micro_);
  for (std::size_t k = 0; k < time_.size(); ++k)
    rhs.noalias() += time_[k](t) * x_coeff_[k] * y_load_[k].transpose();
  return rhs;
}

// Macro nonlinearity -----------------------------------------------------------

Vector reduce(const SystemOperators& ops, const Matrix& beta)
{
  return beta * ops.reduction_weights();
}

namespace {

Vector eval_F_nodal(const SystemOperators& ops, const ReactionTerm& reaction, const Vector& alpha,
                    const Vector& r_nodal)
{
  const FeSpace& space = ops.macro;
  Vector F = Vector::Zero(space.n_dofs());
  if (reaction.identically_zero)
    return F;
  const auto& mesh = space.mesh();
  const QuadratureRule rule = simplex_rule(mesh.dim(), 2);
  for (Index c = 0; c < mesh.n_cells(); ++c) {
    const auto verts = mesh.cell(c);
    for (std::size_t q = 0; q < rule.size(); ++q) {
      const auto& bary = rule.points[q];
      const double s = space.evaluate(alpha, c, bary);
      const double r = space.evaluate(r_nodal, c, bary);
      const double wf = mesh.measure(c) * rule.weights[q] * reaction.f(s, r);
      for (std::size_t i = 0; i < verts.size(); ++i)
        F[verts[i]] += wf * bary[static_cast<Eigen::Index>(i)];
    }
  }
  return F;
}

} // namespace

Vector eval_F(const SystemOperators& ops, const ReactionTerm& reaction, const Vector& alpha,
              const Matrix& beta)
{
  return eval_F_nodal(ops, reaction, alpha, reduce(ops, beta));
}

EllipticResult elliptic_solve(const SystemOperators& ops, const ReactionTerm& reaction,
                              const Matrix& beta, const Vector& alpha0,
                              const Vector& source_load, const EllipticOptions& options)
{
  const Index n = ops.n_macro();
  if (beta.rows() != n || beta.cols() != ops.n_micro())
    throw ValidationError("beta has the wrong shape for these operators");
  const Vector src = source_load.size() == 0 ? Vector(Vector::Zero(n)) : source_load;
  if (src.size() != n)
    throw ValidationError("source load has the wrong size");

  EllipticResult result;
  result.alpha = alpha0.size() == 0 ? Vector(Vector::Zero(n)) : alpha0;
  if (result.alpha.size() != n)
    throw ValidationError("initial guess has the wrong size");
  const auto& mask = ops.macro.dirichlet_mask();
  for (Index i = 0; i < n; ++i)
    if (mask[i])
      result.alpha[i] = 0.0;

  const Vector r_nodal = reduce(ops, beta);
  for (int it = 1; it <= options.max_iterations; ++it) {
    const Vector F = eval_F_nodal(ops, reaction, result.alpha, r_nodal) + src;
    Vector next = ops.P_solver->solve(F);
    const double update = (next - result.alpha).norm();
    result.alpha = std::move(next);
    result.iterations = it;
    const double scale = result.alpha.norm();
    if (!result.update_norms.empty()) {
      const double prev = result.update_norms.back();
      if (prev > 1e-12 * scale && prev > 0.0) {
        result.ratios.push_back(update / prev);
        result.max_ratio = std::max(result.max_ratio, update / prev);
      }
    }
    result.update_norms.push_back(update);
    if (!std::isfinite(update))
      break;
    if (update == 0.0 || update <= options.tol * scale)
      return result;
  }
  std::ostringstream msg;
  msg << "fixed-point iteration did not contract within " << options.max_iterations
      << " iterations; last update norms:";
  const std::size_t k = result.update_norms.size();
  for (std::size_t i = k >= 2 ? k - 2 : 0; i < k; ++i)
    msg << ' ' << result.update_norms[i];
  throw SolverError(msg.str());
}

// Initial data -----------------------------------------------------------------

Matrix project_two_scale(const SystemOperators& ops, const TwoScaleFunction& rho, int degree)
{
  const auto& xmesh = ops.macro.mesh();
  const auto& ymesh = ops.micro.mesh();
  const QuadratureRule xrule = simplex_rule(xmesh.dim(), degree);
  const QuadratureRule yrule = simplex_rule(ymesh.dim(), degree);

  std::vector<Point> ypts;
  std::vector<double> yw;
  std::vector<std::array<Index, 3>> yverts;
  std::vector<Eigen::Vector3d> ybary;
  for (Index e = 0; e < ymesh.n_cells(); ++e)
    for (std::size_t q = 0; q < yrule.size(); ++q) {
      ypts.push_back(ymesh.map_to_physical(e, yrule.points[q]));
      yw.push_back(ymesh.measure(e) * yrule.weights[q]);
      yverts.push_back(ymesh.raw_cell(e));
      ybary.push_back(yrule.points[q]);
    }
  const int ny = ymesh.vertices_per_cell();

  Matrix L = Matrix::Zero(ops.n_macro(), ops.n_micro());
  Vector row(ops.n_micro());
  for (Index c = 0; c < xmesh.n_cells(); ++c) {
    const auto xv = xmesh.cell(c);
    for (std::size_t q = 0; q < xrule.size(); ++q) {
      const Point x = xmesh.map_to_physical(c, xrule.points[q]);
      const double wx = xmesh.measure(c) * xrule.weights[q];
      row.setZero();
      for (std::size_t p = 0; p < ypts.size(); ++p) {
        const double val = yw[p] * rho(x, ypts[p]);
        for (int k = 0; k < ny; ++k)
          row[yverts[p][k]] += val * ybary[p][k];
      }
      for (std::size_t i = 0; i < xv.size(); ++i)
        L.row(xv[i]) += wx * xrule.points[q][static_cast<Eigen::Index>(i)] * row.transpose();
    }
  }
  const Matrix X = ops.Mx_solver->solve(L);
  return ops.My_solver->solve(Matrix(X.transpose())).transpose();
}

CoupledState initial_state(const SystemOperators& ops, const TwoScaleFunction& rho_I,
                           const ReactionTerm& reaction, const DiscreteForcing& forcing,
                           EllipticResult* report)
{
  CoupledState state;
  state.t = 0.0;
  state.beta = project_two_scale(ops, rho_I);
  const Vector src = forcing.has_macro() ? forcing.macro_load(0.0) : Vector();
  EllipticResult solve = elliptic_solve(ops, reaction, state.beta, Vector(), src);
  state.alpha = solve.alpha;
  if (report)
    *report = std::move(solve);
  return state;
}

// Time stepping ----------------------------------------------------------------

std::string_view to_string(CouplingMode mode)
{
  return mode == CouplingMode::Segregated ? "segregated" : "iterated";
}

std::string_view to_string(TimeScheme scheme)
{
  return scheme == TimeScheme::ImplicitEuler ? "implicit_euler" : "crank_nicolson";
}

CouplingMode parse_coupling(std::string_view token)
{
  if (token == "segregated")
    return CouplingMode::Segregated;
  if (token == "iterated")
    return CouplingMode::Iterated;
  throw ValidationError("unknown coupling mode '" + std::string(token) + "'");
}

TimeScheme parse_scheme(std::string_view token)
{
  if (token == "implicit_euler")
    return TimeScheme::ImplicitEuler;
  if (token == "crank_nicolson")
    return TimeScheme::CrankNicolson;
  throw ValidationError("unknown time scheme '" + std::string(token) + "'");
}

TimeStepper::TimeStepper(const SystemOperators& ops, const ReactionTerm& reaction, double dt,
                         StepOptions options, const DiscreteForcing* forcing)
  : ops_(&ops), reaction_(&reaction), forcing_(forcing), dt_(dt), options_(options)
{
  if (!(dt > 0.0) || !std::isfinite(dt))
    throw ValidationError("time step must be positive: dt = " + format_double(dt));
  const double theta = options.scheme == TimeScheme::ImplicitEuler ? 1.0 : 0.5;
  lhs_ = ops.My.plus(ops.Ky, theta * dt);
  explicit_part_ = ops.My.plus(ops.Ky, -(1.0 - theta) * dt);
  solver_ = std::make_shared<SpdSolver>(lhs_);
}

Matrix TimeStepper::micro_rhs(double t, const Vector& alpha) const
{
  const auto& p = ops_->params;
  Vector coupling = p.kappa * (alpha.array() + p.p_F).matrix();
  Matrix rhs = coupling * ops_->g.transpose();
  if (forcing_)
    rhs += forcing_->micro_rhs(t);
  return rhs;
}

Matrix TimeStepper::micro_update(const Matrix& beta, double t, const Vector& alpha_now,
                                 const Vector& alpha_next) const
{
  Matrix rhs = explicit_part_.matrix() * beta.transpose();
  if (options_.scheme == TimeScheme::ImplicitEuler) {
    rhs += dt_ * micro_rhs(t + dt_, alpha_next).transpose();
  } else {
    rhs += (0.5 * dt_) *
           (micro_rhs(t, alpha_now) + micro_rhs(t + dt_, alpha_next)).transpose();
  }
  return solver_->solve(rhs).transpose();
}

CoupledState TimeStepper::step(const CoupledState& state, StepStats* stats) const
{
  const double t1 = state.t + dt_;
  const Vector src = forcing_ && forcing_->has_macro() ? forcing_->macro_load(t1) : Vector();
  CoupledState next;
  next.t = t1;
  next.alpha = state.alpha;
  next.beta = state.beta;
  StepStats local;
  const int max_outer = options_.mode == CouplingMode::Segregated ? 1 : options_.max_outer;
  bool converged = options_.mode == CouplingMode::Segregated;
  double change = 0.0;
  for (int k = 1; k <= max_outer; ++k) {
    Matrix beta = micro_update(state.beta, state.t, state.alpha, next.alpha);
    EllipticResult solve =
      elliptic_solve(*ops_, *reaction_, beta, next.alpha, src, options_.elliptic);
    local.outer_iterations = k;
    local.elliptic_iterations += solve.iterations;
    local.max_contraction = std::max(local.max_contraction, solve.max_ratio);
    const double da = (solve.alpha - next.alpha).norm() / std::max(1.0, solve.alpha.norm());
    const double db = (beta - next.beta).norm() / std::max(1.0, beta.norm());
    change = da + db;
    next.alpha = std::move(solve.alpha);
    next.beta = std::move(beta);
    if (options_.mode == CouplingMode::Iterated && change < options_.outer_tol) {
      converged = true;
      break;
    }
  }
  if (!converged) {
    std::ostringstream msg;
    msg << "outer coupling iteration did not converge in " << options_.max_outer
        << " iterations at t = " << t1 << "; last coupled update " << change;
    throw SolverError(msg.str());
  }
  if (stats)
    *stats = local;
  return next;
}

CoupledState step(const CoupledState& state, double dt, const SystemOperators& ops,
                  const ReactionTerm& reaction, CouplingMode mode, TimeScheme scheme)
{
  StepOptions options;
  options.mode = mode;
  options.scheme = scheme;
  return TimeStepper(ops, reaction, dt, options).step(state);
}

// Exponential oracle -----------------------------------------------------------

Vector micro_exact_linear(const Matrix& My, const Matrix& Ky, const Vector& b0, const Vector& rhs,
                          double t)
{
  const Index n = static_cast<Index>(My.rows());
  if (n > max_exponential_dim)
    throw SolverError("micro dimension " + std::to_string(n) + " exceeds " +
                      std::to_string(max_exponential_dim) +
                      " for the dense exponential; use the time stepper");
  if (My.cols() != n || Ky.rows() != n || Ky.cols() != n || b0.size() != n || rhs.size() != n)
    throw ValidationError("micro_exact_linear: inconsistent dimensions");
  if (!(t >= 0.0))
    throw ValidationError("micro_exact_linear: t must be nonnegative");
  if (t == 0.0)
    return b0;

  Eigen::GeneralizedSelfAdjointEigenSolver<Matrix> eig(Ky, My);
  if (eig.info() != Eigen::Success)
    throw SolverError("generalized eigendecomposition failed");
  const Matrix& V = eig.eigenvectors();
  const Vector& lambda = eig.eigenvalues();
  const Vector c0 = V.transpose() * (My * b0);
  const Vector f = V.transpose() * rhs;
  Vector c(n);
  for (Index k = 0; k < n; ++k) {
    const double lt = lambda[k] * t;
    const double phi = std::abs(lt) < 1e-14 ? t : -std::expm1(-lt) / lambda[k];
    c[k] = std::exp(-lt) * c0[k] + phi * f[k];
  }
  return V * c;
}

Vector micro_exact_linear(const SystemOperators& ops, const Vector& beta0_row, double alpha_i,
                          double t)
{
  if (ops.n_micro() > max_exponential_dim)
    throw SolverError("micro dimension " + std::to_string(ops.n_micro()) + " exceeds " +
                      std::to_string(max_exponential_dim) +
                      " for the dense exponential; use the time stepper");
  const Vector rhs = ops.params.kappa * (alpha_i + ops.params.p_F) * ops.g;
  return micro_exact_linear(ops.My.to_dense(), ops.Ky.to_dense(), beta0_row, rhs, t);
}

// Reconstruction ---------------------------------------------------------------

FieldEvaluator::FieldEvaluator(const SystemOperators& ops)
  : ops_(&ops), macro_locator_(ops.macro.mesh()), micro_locator_(ops.micro.mesh())
{
}

std::pair<double, double> FieldEvaluator::operator()(const CoupledState& state, const Point& x,
                                                     const Point& y) const
{
  const auto hx = macro_locator_.locate_or_throw(x);
  const auto hy = micro_locator_.locate_or_throw(y);
  const auto xv = ops_->macro.mesh().cell(hx.cell);
  const auto yv = ops_->micro.mesh().cell(hy.cell);
  double pi = 0.0;
  double rho = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double li = hx.bary[static_cast<Eigen::Index>(i)];
    pi += li * state.alpha[xv[i]];
    for (std::size_t k = 0; k < yv.size(); ++k)
      rho += li * hy.bary[static_cast<Eigen::Index>(k)] * state.beta(xv[i], yv[k]);
  }
  return {pi, rho};
}

std::pair<double, double> reconstruct(const CoupledState& state, const SystemOperators& ops,
                                      const Point& x, const Point& y)
{
  return FieldEvaluator(ops)(state, x, y);
}

// Checkpoints ------------------------------------------------------------------

namespace {

constexpr char binary_magic[4] = {'T', 'S', 'F', 'B'};

template <class T>
void put(std::ostream& out, T value)
{
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
T get(std::istream& in)
{
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in)
    throw FormatError("checkpoint: truncated binary data");
  return value;
}

} // namespace

void write_checkpoint(std::ostream& out, const CoupledState& state, bool binary)
{
  const auto n_macro = static_cast<std::int64_t>(state.alpha.size());
  const auto n_micro = static_cast<std::int64_t>(state.beta.cols());
  if (state.beta.rows() != n_macro)
    throw ValidationError("checkpoint: beta rows do not match alpha");
  if (binary) {
    out.write(binary_magic, 4);
    put(out, n_macro);
    put(out, n_micro);
    put(out, state.t);
    for (Eigen::Index i = 0; i < n_macro; ++i)
      put(out, state.alpha[i]);
    for (Eigen::Index i = 0; i < n_macro; ++i)
      for (Eigen::Index k = 0; k < n_micro; ++k)
        put(out, state.beta(i, k));
    return;
  }
  out << format_double(state.t) << ' ' << n_macro << ' ' << n_micro << '\n';
  for (Eigen::Index i = 0; i < n_macro; ++i)
    out << format_double(state.alpha[i]) << '\n';
  for (Eigen::Index i = 0; i < n_macro; ++i) {
    for (Eigen::Index k = 0; k < n_micro; ++k)
      out << (k ? " " : "") << format_double(state.beta(i, k));
    out << '\n';
  }
}

CoupledState read_checkpoint(std::istream& in)
{
  char head[4] = {};
  in.read(head, 4);
  CoupledState state;
  if (in.gcount() == 4 && std::memcmp(head, binary_magic, 4) == 0) {
    const auto n_macro = get<std::int64_t>(in);
    const auto n_micro = get<std::int64_t>(in);
    if (n_macro < 0 || n_micro < 0)
      throw FormatError("checkpoint: negative dimensions");
    state.t = get<double>(in);
    state.alpha.resize(n_macro);
    state.beta.resize(n_macro, n_micro);
    for (Eigen::Index i = 0; i < n_macro; ++i)
      state.alpha[i] = get<double>(in);
    for (Eigen::Index i = 0; i < n_macro; ++i)
      for (Eigen::Index k = 0; k < n_micro; ++k)
        state.beta(i, k) = get<double>(in);
    return state;
  }

  in.clear();
  std::string text(head, static_cast<std::size_t>(in.gcount()));
  text.append(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  std::istringstream tokens(text);
  std::string tok;
  const auto next = [&]() -> std::string {
    if (!(tokens >> tok))
      throw FormatError("checkpoint: unexpected end of data");
    return tok;
  };
  state.t = parse_double(next());
  long long n_macro = 0;
  long long n_micro = 0;
  try {
    n_macro = std::stoll(next());
    n_micro = std::stoll(next());
  } catch (const std::logic_error&) {
    throw FormatError("checkpoint: malformed header");
  }
  if (n_macro < 0 || n_micro < 0)
    throw FormatError("checkpoint: negative dimensions");
  state.alpha.resize(n_macro);
  state.beta.resize(n_macro, n_micro);
  for (Eigen::Index i = 0; i < n_macro; ++i)
    state.alpha[i] = parse_double(next());
  for (Eigen::Index i = 0; i < n_macro; ++i)
    for (Eigen::Index k = 0; k < n_micro; ++k)
      state.beta(i, k) = parse_double(next());
  if (tokens >> tok)
    throw FormatError("checkpoint: trailing data");
  return state;
}

} // namespace tsfem
