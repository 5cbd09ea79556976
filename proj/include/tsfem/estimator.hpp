#pragma once

#include "tsfem/twoscale.hpp"

#include <iosfwd>
#include <optional>
#include <vector>

namespace tsfem {

/// Samples of the element residual R_B = A lap(pi^H) + f + s on one cell. The
/// Laplacian of a P1 function vanishes cellwise.
struct ElementResidual
{
  std::vector<Point> points;
  std::vector<double> weights;  // physical quadrature weights
  std::vector<double> values;
  double norm_sq = 0.0;         // ||R_B||_B^2
};

ElementResidual element_residual(const CoupledState& state, const SystemOperators& ops,
                                 const ReactionTerm& reaction, Index cell,
                                 const MacroSource& source = {}, int degree = 2);

/// Signed flux jump R_E = A n_E . (grad pi^H|high - grad pi^H|low) with n_E
/// pointing from the lower-id to the higher-id cell; zero on the boundary.
double edge_jump(const CoupledState& state, const SystemOperators& ops, Index facet);

/// ||R_E||_E = |R_E| sqrt(|E|).
double edge_residual(const CoupledState& state, const SystemOperators& ops, Index facet);

struct EstimatorReport
{
  std::vector<double> eta_B;     // eta_{R,B}
  std::vector<double> eta_B_sq;  // eta_{R,B}^2
  double eta_global = 0.0;       // eta_R
  std::vector<double> lambda_B;
  std::vector<Index> marked;
  double l2_pi = 0.0;
  double eta_bar = 0.0;
};

/// eta_{R,B}^2 = H_B^2 ||R_B||_B^2 + sum_E beta_E h_E ||R_E||_E^2 with beta_E
/// = 1/2 on interior facets. Throws ValidationError for eta_bar <= 0.
EstimatorReport estimate(const CoupledState& state, const SystemOperators& ops,
                         const ReactionTerm& reaction, double eta_bar,
                         const MacroSource& source = {});

/// lambda_B = N eta_B^2 / (eta_bar (l2_pi + eta_R^2)).
std::vector<double> refinement_indicators(const std::vector<double>& eta_B_sq, double l2_pi,
                                          double eta_bar);

/// Cells with lambda_B > 1, in increasing order.
std::vector<Index> mark_cells(const std::vector<double>& lambda_B);

/// <r(pi^H), phi> = sum_B int_B R_B phi + sum_E int_E R_E phi for phi given on
/// a refinement of the macro mesh.
double residual_pairing(const CoupledState& state, const SystemOperators& ops,
                        const ReactionTerm& reaction, const FeSpace& fine, const Vector& phi,
                        const MacroSource& source = {});

/// Stationary problem solved on every round of the adaptive loop.
struct AdaptProblem
{
  std::shared_ptr<const SimplicialMesh> initial_mesh;
  std::shared_ptr<const FeSpace> micro;
  ModelParams params;
  ReductionRule reduction = ReductionRule::MeanY;
  ReactionTerm reaction;
  TwoScaleFunction rho_initial;
  Forcing forcing;
  std::optional<SmoothField> exact_pi;
};

struct AdaptRound
{
  int round = 0;
  std::shared_ptr<const SimplicialMesh> mesh;
  CoupledState state;
  EstimatorReport report;
  std::optional<double> h1_error;
};

struct AdaptHistory
{
  std::vector<AdaptRound> rounds;
  bool halted = false;  // eta_R < eta_bar reached
};

/// Solve, estimate, mark and refine until eta_R < eta_bar or max_rounds
/// rounds have been solved.
AdaptHistory adapt_loop(const AdaptProblem& problem, double eta_bar, int max_rounds);

/// `round,n_cells,eta_R,l2_pi,n_marked,h1_error`.
void write_adapt_csv(std::ostream& out, const AdaptHistory& history);

} // namespace tsfem
