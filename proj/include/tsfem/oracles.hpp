#pragma once

#include "tsfem/twoscale.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace tsfem {

/// Outcome of one self-check.
struct OracleCheck
{
  std::string name;
  bool passed = false;
  double measured = 0.0;
  double tolerance = 0.0;
  std::string detail;
};

/// Dense four-index operator from direct quadrature of the macro mass,
/// micro stiffness and Robin trace integrals, indexed (i n_micro + k,
/// j n_micro + l). Does not use the production assembly routines.
Matrix brute_force_Q(const FeSpace& macro, const FeSpace& micro, const ModelParams& params);

/// c_ik = kappa p_F int xi_i int_{Gamma_R} eta_k by direct quadrature.
Matrix brute_force_c(const FeSpace& macro, const FeSpace& micro, const ModelParams& params);

/// Largest entrywise deviation between brute_force_Q and Mx (x) Ky.
OracleCheck kronecker_check(const FeSpace& macro, const FeSpace& micro, const ModelParams& params,
                            double tol = 1e-12);

/// Mass of every micro row under kappa = 0, checked after each of `steps`
/// coupled steps.
OracleCheck conservation_check(const SystemOperators& ops, const ReactionTerm& reaction,
                               const Matrix& beta0, double dt, int steps, double tol = 1e-13);

/// Frozen-alpha stepping to large time against (alpha_i + p_F)/R.
OracleCheck steady_state_check(const SystemOperators& ops, const Vector& alpha, const Matrix& beta0,
                               double dt, double t_end, double tol = 1e-8);

struct ExponentialStudy
{
  std::vector<double> dts;
  std::vector<double> errors;
  double slope = 0.0;
};

/// Frozen-alpha micro row stepped to t_end with dt0, dt0/2, ... against the
/// exponential solution; errors in the My norm and their least-squares slope.
ExponentialStudy exponential_study(const SystemOperators& ops, TimeScheme scheme,
                                   const Vector& b0, double alpha_i, double t_end, double dt0,
                                   int halvings);

/// Least-squares slope of log(y) against log(x).
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

/// Kronecker, conservation, steady-state and exponential suites on small
/// default meshes.
std::vector<OracleCheck> run_oracle_suite(std::uint64_t seed);

} // namespace tsfem
