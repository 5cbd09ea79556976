#pragma once

#include "tsfem/estimator.hpp"

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace tsfem {

/// One product tau(t) X(x) Y(y) with the derivatives needed to build sources.
struct SeparableComponent
{
  std::function<double(double)> time;
  std::function<double(double)> time_derivative;
  SmoothField macro;
  ScalarFunction macro_laplacian;
  SmoothField micro;  // constant 1 for macro-only fields
  ScalarFunction micro_laplacian;
};

/// Exact pair pi = sum of macro components, rho = sum of two-scale
/// components, with the sources that make it solve the forced system.
class ManufacturedProblem
{
public:
  ManufacturedProblem(std::string name, ModelParams params, ReactionTerm reaction,
                      ReductionRule reduction, Box macro_domain, Box micro_domain,
                      std::function<bool(const Point&)> is_robin,
                      std::vector<SeparableComponent> pi_terms,
                      std::vector<SeparableComponent> rho_terms);

  const std::string& name() const { return name_; }
  const ModelParams& params() const { return params_; }
  const ReactionTerm& reaction() const { return reaction_; }
  ReductionRule reduction() const { return reduction_; }
  const Box& macro_domain() const { return macro_domain_; }
  const Box& micro_domain() const { return micro_domain_; }
  MarkerRule micro_marker() const;
  const std::vector<SeparableComponent>& pi_terms() const { return pi_terms_; }
  const std::vector<SeparableComponent>& rho_terms() const { return rho_terms_; }

  double pi(double t, const Point& x) const;
  Point grad_pi(double t, const Point& x) const;
  double laplacian_pi(double t, const Point& x) const;
  double rho(double t, const Point& x, const Point& y) const;
  /// Exact reduced argument r(t, x) under the problem's reduction rule.
  double reduced_rho(double t, const Point& x) const;

  /// s = -A lap(pi) - f(pi, r).
  double macro_source(double t, const Point& x) const;
  /// Macro source plus the separable micro volume and boundary densities.
  Forcing forcing() const;

  SmoothField pi_at(double t) const;
  TwoScaleFunction rho_at(double t) const;

  /// Default smooth pair on the unit square with a 1D micro cell.
  static ManufacturedProblem smooth(const ModelParams& params, const ReactionTerm& reaction);
  static ManufacturedProblem smooth();
  /// Stationary smooth bump pi = a exp(1 - 1/(1 - |x - x0|^2 / r^2)) inside
  /// the disc and zero rho, so the macro source is supported in the disc.
  static ManufacturedProblem localized(const Point& x0, double radius, double amplitude,
                                       const ModelParams& params, const ReactionTerm& reaction);

private:
  std::string name_;
  ModelParams params_;
  ReactionTerm reaction_;
  ReductionRule reduction_;
  Box macro_domain_;
  Box micro_domain_;
  std::function<bool(const Point&)> is_robin_;
  std::vector<SeparableComponent> pi_terms_;
  std::vector<SeparableComponent> rho_terms_;
  std::vector<double> rho_means_;  // reduction of each micro factor
};

/// Finite-difference residuals of the strong form evaluated on the exact pair
/// with the induced sources, at random points. Returns the largest absolute
/// residual over the macro equation, the micro volume equation and the micro
/// boundary conditions.
struct ConsistencyReport
{
  double macro = 0.0;
  double micro_volume = 0.0;
  double micro_boundary = 0.0;
  double max() const;
};

ConsistencyReport source_consistency(const ManufacturedProblem& problem, std::uint64_t seed,
                                     int samples = 50);

struct Trajectory
{
  std::shared_ptr<const SystemOperators> ops;
  std::vector<CoupledState> states;  // t_0 = 0, ..., t_N = T
  double dt = 0.0;
  int max_outer_iterations = 0;
  double max_contraction = 0.0;
};

std::shared_ptr<const SystemOperators> problem_operators(const ManufacturedProblem& problem,
                                                         int macro_n, int micro_n);

/// Full integration to T with iterated coupling. T / dt must be an integer.
Trajectory run_problem(const ManufacturedProblem& problem, int macro_n, int micro_n, double dt,
                       TimeScheme scheme = TimeScheme::CrankNicolson);

struct ErrorReport
{
  double e_pi_L2 = 0.0;   // max over steps
  double e_pi_H1 = 0.0;   // max over steps, gradient seminorm
  double e_rho = 0.0;     // trapezoid L2 in time of the L2(Omega x Y) error
  double e_rho_y = 0.0;   // same with the y-gradient seminorm
  double e_pi_H1_final = 0.0;
};

ErrorReport error_norms(const Trajectory& trajectory, const ManufacturedProblem& problem);

/// Squared L2(Omega x Y) and y-seminorm errors of a tensor coefficient matrix
/// against the exact rho at time t, by separable expansion.
std::pair<double, double> rho_error_sq(const SystemOperators& ops,
                                       const ManufacturedProblem& problem, const Matrix& beta,
                                       double t);

struct StudyLevel
{
  int macro_n = 4;
  int micro_n = 4;
  double dt = 0.1;
};

/// Levels with macro_n = micro_n = n0 2^k and dt = dt0 4^-k.
std::vector<StudyLevel> doubling_levels(int n0, double dt0, int count);

struct ConvergenceRow
{
  int level = 0;
  double H = 0.0;
  double h = 0.0;
  double dt = 0.0;
  ErrorReport errors;
  std::optional<double> rate_pi_L2;
  std::optional<double> rate_pi_H1;
  std::optional<double> rate_rho;
  std::optional<double> rate_rho_y;
  double eta_R = 0.0;        // at final time
  double effectivity = 0.0;  // eta_R / |e_pi(T)|_H1
};

std::vector<ConvergenceRow> convergence_study(const ManufacturedProblem& problem,
                                              const std::vector<StudyLevel>& levels,
                                              TimeScheme scheme = TimeScheme::CrankNicolson);

/// `level,H,h,dt,e_pi_L2,e_pi_H1,e_rho,rate_pi_L2,rate_pi_H1,rate_rho,eta_R,effectivity`.
void write_convergence_csv(std::ostream& out, const std::vector<ConvergenceRow>& rows);
/// `level,H,h,e_rho_y,rate_rho_y`.
void write_seminorm_csv(std::ostream& out, const std::vector<ConvergenceRow>& rows);

/// Least-squares slope of log(error) against log(H) over the rows.
double fitted_slope(const std::vector<double>& H, const std::vector<double>& errors);

struct RitzStudy
{
  std::vector<double> H;
  std::vector<double> l2;
  std::vector<double> h1;
  std::vector<double> two_scale;  // L2(Omega x Y) of the tensor energy projection
  double slope_l2 = 0.0;
  double slope_h1 = 0.0;
  double slope_two_scale = 0.0;
};

/// Energy projections of the exact fields at time t on macro_n = micro_n = n
/// for each n in `sizes`.
RitzStudy ritz_study(const ManufacturedProblem& problem, const std::vector<int>& sizes,
                     double t = 0.0);

struct EffectivityRow
{
  int level = 0;
  double H = 0.0;
  double eta_R = 0.0;
  double e_pi_H1 = 0.0;
  double index = 1.0;
};

struct EffectivityStudy
{
  std::vector<EffectivityRow> rows;
  double ratio = 1.0;  // max index / min index
};

/// Stationary problem at t = 0 on each size; index = eta_R / |e_pi|_H1, and 1
/// when both vanish.
EffectivityStudy effectivity_study(const ManufacturedProblem& problem,
                                   const std::vector<int>& sizes, int micro_n);

/// `level,H,eta_R,e_pi_H1,index`.
void write_effectivity_csv(std::ostream& out, const EffectivityStudy& study);

/// Adaptive loop setup for a stationary manufactured problem.
AdaptProblem adapt_problem(const ManufacturedProblem& problem, int macro_n, int micro_n);

/// Fraction of all marked cells, over every round, whose centroid lies in the
/// box.
double marked_fraction_in(const AdaptHistory& history, const Box& box);

} // namespace tsfem
