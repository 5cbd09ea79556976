#pragma once

#include "tsfem/fem.hpp"

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace tsfem {

using Matrix = Eigen::MatrixXd;

struct ModelParams
{
  double A = 1.0;      // macro diffusivity
  double D = 1.0;      // micro diffusivity
  double kappa = 1.0;  // Robin transfer coefficient
  double R = 1.0;      // gas constant scaling
  double p_F = 1.0;    // atmospheric pressure offset
  double theta = 1.0;  // reaction cutoff
  double T = 1.0;      // final time

  /// Checks that the system is well defined: A, D, R, theta, T > 0 and
  /// kappa, p_F >= 0, all finite. Throws ValidationError.
  void validate_structure() const;

  /// Full positivity of every parameter and A > max(c_pi, c_rho) * c_p, where
  /// c_p is the discrete Poincare constant of the macro mesh. Throws
  /// ValidationError naming the violated assumption.
  void validate_assumptions(double c_pi, double c_rho, double poincare) const;
};

/// How rho(x, .) is reduced to the scalar second argument of f.
enum class ReductionRule
{
  MeanY,
  GammaRMean,
};

std::string_view to_string(ReductionRule rule);
ReductionRule parse_reduction(std::string_view token);

/// Reaction term f(s, r) with its partial derivatives and declared Lipschitz
/// bounds c_pi >= max |df/ds| and c_rho >= max |df/dr|.
struct ReactionTerm
{
  std::string name;
  std::function<double(double, double)> f;
  std::function<double(double, double)> df_ds;
  std::function<double(double, double)> df_dr;
  double c_pi = 0.0;
  double c_rho = 0.0;
  bool identically_zero = false;

  static ReactionTerm zero();
  static ReactionTerm constant(double c);
  /// f(s, r) = c r.
  static ReactionTerm linear_in_r(double c);
  /// c_f s (1 - s/theta)^2 (1 + tanh r)/2 on [0, theta], zero above theta and
  /// c_f tanh(s) (1 + tanh r)/2 below zero.
  static ReactionTerm standard(double c_f, double theta);

  /// Sampled check of f(0, r) = 0, f(s, r) = 0 for s > theta, c_pi < 1 and
  /// the declared Lipschitz bounds. Throws ValidationError.
  void validate(double theta, std::uint64_t seed, int samples = 4000) const;
};

/// Assembled blocks of the two-scale system. The full four-index operator is
/// Mx (x) Ky with Ky = D Sy + kappa R Gy.
struct SystemOperators
{
  SystemOperators(FeSpace macro_space, FeSpace micro_space, ModelParams model,
                  ReductionRule rule)
    : macro(std::move(macro_space)), micro(std::move(micro_space)), params(model), reduction(rule)
  {
  }

  FeSpace macro;
  FeSpace micro;
  ModelParams params;
  ReductionRule reduction = ReductionRule::MeanY;

  SparseSymOperator P_raw;  // A-weighted macro stiffness
  SparseSymOperator P;      // Dirichlet-eliminated P_raw
  SparseSymOperator Mx;
  SparseSymOperator Sy;
  SparseSymOperator My;
  SparseSymOperator Gy;
  SparseSymOperator Ky;
  Vector g;  // Gamma_R trace load
  Vector m;  // macro load of 1
  Vector w;  // micro load of 1
  double micro_measure = 0.0;
  double gamma_measure = 0.0;

  std::shared_ptr<const SpdSolver> P_solver;
  std::shared_ptr<const SpdSolver> Mx_solver;
  std::shared_ptr<const SpdSolver> My_solver;

  Index n_macro() const { return macro.n_dofs(); }
  Index n_micro() const { return micro.n_dofs(); }

  /// Micro weights q with r_i = (beta q)_i, the reduced micro argument at
  /// macro dof i.
  Vector reduction_weights() const;
};

SystemOperators assemble_system(const FeSpace& macro, const FeSpace& micro,
                                const ModelParams& params,
                                ReductionRule reduction = ReductionRule::MeanY);

struct CoupledState
{
  double t = 0.0;
  Vector alpha;
  Matrix beta;  // rows: macro dofs, columns: micro dofs
};

using MacroSource = std::function<double(double, const Point&)>;
using TwoScaleFunction = std::function<double(const Point&, const Point&)>;
using BoundaryDensity = std::function<double(const Point&, const Point&, BoundaryMark)>;

/// Source term tau(t) X(x) [v(y) in Y + b(y) on the boundary of Y] added to
/// the micro equation. Either density may be empty.
struct SeparableTerm
{
  std::function<double(double)> time;
  ScalarFunction macro;
  ScalarFunction micro_volume;
  BoundaryDensity micro_boundary;
};

struct Forcing
{
  MacroSource macro_source;  // added to f in the macro equation; may be empty
  std::vector<SeparableTerm> micro_terms;

  bool empty() const { return !macro_source && micro_terms.empty(); }
};

/// Forcing projected onto the discrete spaces: each micro term becomes
/// tau(t) * x_coeff (x) y_load after cancelling Mx.
class DiscreteForcing
{
public:
  DiscreteForcing() = default;
  DiscreteForcing(const Forcing& forcing, const SystemOperators& ops);

  /// int s(t, x) xi_i dx, zero vector without a macro source.
  Vector macro_load(double t) const;
  /// Sum over micro terms of tau(t) x_coeff y_load^T, n_macro x n_micro.
  Matrix micro_rhs(double t) const;

  bool has_macro() const { return static_cast<bool>(source_); }
  const MacroSource& macro_source() const { return source_; }

private:
  std::shared_ptr<const FeSpace> macro_;
  Index n_macro_ = 0;
  Index n_micro_ = 0;
  MacroSource source_;
  std::vector<std::function<double(double)>> time_;
  std::vector<Vector> x_coeff_;
  std::vector<Vector> y_load_;
};

/// Reduced micro argument at every macro dof.
Vector reduce(const SystemOperators& ops, const Matrix& beta);

/// F_i = int f(pi^H, r^H) xi_i with the degree-2 rule, r^H interpolating the
/// nodal reductions of beta.
Vector eval_F(const SystemOperators& ops, const ReactionTerm& reaction, const Vector& alpha,
              const Matrix& beta);

struct EllipticOptions
{
  double tol = 1e-10;
  int max_iterations = 200;
};

struct EllipticResult
{
  Vector alpha;
  int iterations = 0;
  std::vector<double> update_norms;
  /// Successive update ratios, recorded while the previous update is above
  /// round-off.
  std::vector<double> ratios;
  double max_ratio = 0.0;
};

/// Fixed point alpha = P^{-1} (F(alpha, beta) + source_load). Throws
/// SolverError when the iteration does not converge.
EllipticResult elliptic_solve(const SystemOperators& ops, const ReactionTerm& reaction,
                              const Matrix& beta, const Vector& alpha0,
                              const Vector& source_load = {}, const EllipticOptions& options = {});

/// L2 projection of rho_I onto the tensor space followed by the stationary
/// macro solve at time 0.
CoupledState initial_state(const SystemOperators& ops, const TwoScaleFunction& rho_I,
                           const ReactionTerm& reaction, const DiscreteForcing& forcing = {},
                           EllipticResult* report = nullptr);

/// Tensor L2 projection alone (Mx^{-1} L My^{-1}).
Matrix project_two_scale(const SystemOperators& ops, const TwoScaleFunction& rho, int degree = 4);

enum class CouplingMode
{
  Segregated,
  Iterated,
};

enum class TimeScheme
{
  ImplicitEuler,
  CrankNicolson,
};

std::string_view to_string(CouplingMode mode);
std::string_view to_string(TimeScheme scheme);
CouplingMode parse_coupling(std::string_view token);
TimeScheme parse_scheme(std::string_view token);

struct StepOptions
{
  CouplingMode mode = CouplingMode::Iterated;
  TimeScheme scheme = TimeScheme::ImplicitEuler;
  double outer_tol = 1e-9;
  int max_outer = 50;
  EllipticOptions elliptic;
};

struct StepStats
{
  int outer_iterations = 0;
  double max_contraction = 0.0;
  int elliptic_iterations = 0;
};

/// Coupled stepper with a fixed step size; the micro matrices are factorized
/// once.
class TimeStepper
{
public:
  TimeStepper(const SystemOperators& ops, const ReactionTerm& reaction, double dt,
              StepOptions options = {}, const DiscreteForcing* forcing = nullptr);

  double dt() const { return dt_; }

  CoupledState step(const CoupledState& state, StepStats* stats = nullptr) const;

  /// Micro update from t to t + dt with alpha_now at t and alpha_next at
  /// t + dt in the forcing; alpha is otherwise frozen.
  Matrix micro_update(const Matrix& beta, double t, const Vector& alpha_now,
                      const Vector& alpha_next) const;

private:
  Matrix micro_rhs(double t, const Vector& alpha) const;

  const SystemOperators* ops_;
  const ReactionTerm* reaction_;
  const DiscreteForcing* forcing_;
  double dt_;
  StepOptions options_;
  SparseSymOperator lhs_;
  SparseSymOperator explicit_part_;
  std::shared_ptr<const SpdSolver> solver_;
};

CoupledState step(const CoupledState& state, double dt, const SystemOperators& ops,
                  const ReactionTerm& reaction, CouplingMode mode, TimeScheme scheme);

/// Exact solution of My b' + Ky b = rhs, b(0) = b0, at time t, through the
/// generalized eigendecomposition of (Ky, My). Dimension at most 512.
Vector micro_exact_linear(const Matrix& My, const Matrix& Ky, const Vector& b0,
                          const Vector& rhs, double t);

/// Frozen-alpha micro row: rhs = kappa (alpha_i + p_F) g.
Vector micro_exact_linear(const SystemOperators& ops, const Vector& beta0_row, double alpha_i,
                          double t);

constexpr Index max_exponential_dim = 512;

/// Point evaluation of pi^H and rho^{H,h}.
class FieldEvaluator
{
public:
  explicit FieldEvaluator(const SystemOperators& ops);

  std::pair<double, double> operator()(const CoupledState& state, const Point& x,
                                       const Point& y) const;

private:
  const SystemOperators* ops_;
  PointLocator macro_locator_;
  PointLocator micro_locator_;
};

std::pair<double, double> reconstruct(const CoupledState& state, const SystemOperators& ops,
                                      const Point& x, const Point& y);

/// Checkpoint: `t n_macro n_micro`, then alpha, then beta row-major. Text
/// uses shortest round-trip decimals; binary starts with the bytes "TSFB".
void write_checkpoint(std::ostream& out, const CoupledState& state, bool binary = false);
CoupledState read_checkpoint(std::istream& in);

} // namespace tsfem
