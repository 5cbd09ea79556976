#pragma once

#include "tsfem/harness.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>

namespace tsfem {

constexpr const char* version_string = "0.1.0";

/// Run configuration read from one JSON file with flat sections per module.
/// Unknown keys are rejected so that typos do not silently fall back to
/// defaults.
struct RunConfig
{
  std::string scenario;  // empty when the file does not name one
  ModelParams model;

  std::string reaction_kind = "standard";  // "standard" or "zero"
  double c_f = 0.5;
  ReductionRule reduction = ReductionRule::MeanY;

  int macro_n = 4;
  int micro_n = 4;
  int levels = 4;  // convergence study levels

  double dt = 0.0625;  // simulate step; first-level step of studies
  TimeScheme scheme = TimeScheme::CrankNicolson;
  CouplingMode coupling = CouplingMode::Iterated;

  double eta_bar = 0.5;
  int max_rounds = 12;
  int adapt_macro_n = 8;
  int adapt_micro_n = 4;
  Point adapt_center = Point(0.3, 0.3);
  double adapt_radius = 0.2;
  double adapt_amplitude = 1.0;

  int effectivity_levels = 4;
  int effectivity_micro_n = 8;

  std::string output = "out";
  std::uint64_t seed = 1;

  ReactionTerm reaction() const;
  ManufacturedProblem smooth_problem() const;
  ManufacturedProblem localized_problem() const;
  std::vector<StudyLevel> study_levels() const;
  std::vector<int> effectivity_sizes() const;

  /// Fully resolved configuration, defaults included.
  nlohmann::json to_json() const;
};

/// Throws ValidationError for malformed or unknown entries.
RunConfig parse_config(const nlohmann::json& doc);
RunConfig load_config(const std::filesystem::path& path);

/// Structural checks, positivity of all parameters, A against the reaction
/// Lipschitz constants and the Poincare scale of the macro mesh, sampled
/// reaction validation and study sizes. Throws ValidationError naming the
/// violated assumption.
void validate_config(const RunConfig& config, const std::string& scenario);

/// 1 / lambda_min of the Dirichlet Laplacian on the uniform n x n macro mesh.
double measured_poincare(const Box& domain, int n);

} // namespace tsfem
