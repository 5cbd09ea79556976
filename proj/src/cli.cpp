#include "tsfem/cli.hpp"

#include "tsfem/config.hpp"
#include "tsfem/error.hpp"
#include "tsfem/format.hpp"
#include "tsfem/oracles.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>

namespace tsfem {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct RunOutcome
{
  int code = exit_ok;
  json summary = json::object();
  std::vector<std::string> outputs;
  std::string message;  // set when code != exit_ok
};

class OutputDir
{
public:
  explicit OutputDir(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

  std::ofstream open(const std::string& name, RunOutcome& outcome,
                     std::ios::openmode mode = std::ios::out) const
  {
    std::ofstream f(dir_ / name, mode);
    if (!f)
      throw Error("cannot write '" + (dir_ / name).string() + "'");
    outcome.outputs.push_back(name);
    return f;
  }

  const fs::path& path() const { return dir_; }

private:
  fs::path dir_;
};

json number_or_null(const std::optional<double>& v)
{
  return v ? json(*v) : json(nullptr);
}

// Scenarios ------------------------------------------------------------------------

RunOutcome run_simulate(const RunConfig& cfg, const OutputDir& dir, std::ostream& log)
{
  RunOutcome outcome;
  const ManufacturedProblem problem = cfg.smooth_problem();
  Trajectory traj;
  traj.ops = problem_operators(problem, cfg.macro_n, cfg.micro_n);
  traj.dt = cfg.dt;
  const SystemOperators& ops = *traj.ops;
  const DiscreteForcing forcing(problem.forcing(), ops);

  EllipticResult first;
  traj.states.push_back(initial_state(ops, problem.rho_at(0.0), problem.reaction(), forcing, &first));
  StepOptions options;
  options.mode = cfg.coupling;
  options.scheme = cfg.scheme;
  const TimeStepper stepper(ops, problem.reaction(), cfg.dt, options, &forcing);
  const long steps = std::lround(cfg.model.T / cfg.dt);

  const double volume = ops.macro.mesh().total_measure() * ops.micro_measure;
  auto csv = dir.open("trajectory.csv", outcome);
  csv << "step,t,l2_pi,e_pi_L2,e_pi_H1,mean_rho,outer_iterations,max_contraction\n";
  const auto write_row = [&](long n, const CoupledState& s, const StepStats& stats) {
    const SmoothField exact = problem.pi_at(s.t);
    csv << n << ',' << format_double(s.t) << ',' << format_double(l2_norm(ops.macro, s.alpha))
        << ',' << format_double(l2_error(ops.macro, s.alpha, exact.value)) << ','
        << format_double(h1_seminorm_error(ops.macro, s.alpha, exact.gradient)) << ','
        << format_double(ops.m.dot(s.beta * ops.w) / volume) << ',' << stats.outer_iterations
        << ',' << format_double(stats.max_contraction) << '\n';
  };
  write_row(0, traj.states.back(), StepStats{});
  int max_outer = 0;
  double max_contraction = 0.0;
  for (long n = 1; n <= steps; ++n) {
    StepStats stats;
    CoupledState next = stepper.step(traj.states.back(), &stats);
    next.t = static_cast<double>(n) * cfg.dt;
    max_outer = std::max(max_outer, stats.outer_iterations);
    max_contraction = std::max(max_contraction, stats.max_contraction);
    write_row(n, next, stats);
    traj.states.push_back(std::move(next));
  }

  {
    auto f = dir.open("checkpoint.txt", outcome);
    write_checkpoint(f, traj.states.back());
  }
  {
    auto f = dir.open("macro_mesh.txt", outcome);
    write_mesh(f, ops.macro.mesh());
  }
  {
    auto f = dir.open("micro_mesh.txt", outcome);
    write_mesh(f, ops.micro.mesh());
  }

  const ErrorReport errors = error_norms(traj, problem);
  outcome.summary = {{"steps", steps},
                     {"e_pi_L2", errors.e_pi_L2},
                     {"e_pi_H1", errors.e_pi_H1},
                     {"e_rho", errors.e_rho},
                     {"e_rho_y", errors.e_rho_y},
                     {"initial_elliptic_iterations", first.iterations},
                     {"initial_elliptic_max_ratio", first.max_ratio},
                     {"max_outer_iterations", max_outer},
                     {"max_contraction", max_contraction}};
  log << "simulate: " << steps << " steps, e_pi_L2 = " << format_double(errors.e_pi_L2)
      << ", e_rho = " << format_double(errors.e_rho) << '\n';
  return outcome;
}

RunOutcome run_converge(const RunConfig& cfg, const OutputDir& dir, std::ostream& log)
{
  RunOutcome outcome;
  const ManufacturedProblem problem = cfg.smooth_problem();
  const auto rows = convergence_study(problem, cfg.study_levels(), cfg.scheme);
  {
    auto f = dir.open("convergence.csv", outcome);
    write_convergence_csv(f, rows);
  }
  {
    auto f = dir.open("convergence_seminorm.csv", outcome);
    write_seminorm_csv(f, rows);
  }

  std::vector<int> sizes;
  for (const auto& l : cfg.study_levels())
    sizes.push_back(l.macro_n);
  const RitzStudy ritz = ritz_study(problem, sizes);
  {
    auto f = dir.open("ritz.csv", outcome);
    f << "level,H,e_L2,e_H1,e_two_scale\n";
    for (std::size_t k = 0; k < ritz.H.size(); ++k)
      f << k << ',' << format_double(ritz.H[k]) << ',' << format_double(ritz.l2[k]) << ','
        << format_double(ritz.h1[k]) << ',' << format_double(ritz.two_scale[k]) << '\n';
  }

  std::vector<double> H, l2, h1, rho, rho_y;
  for (const auto& r : rows) {
    H.push_back(r.H);
    l2.push_back(r.errors.e_pi_L2);
    h1.push_back(r.errors.e_pi_H1);
    rho.push_back(r.errors.e_rho);
    rho_y.push_back(r.errors.e_rho_y);
  }
  const double slope_h1 = fitted_slope(H, h1);
  outcome.summary = {{"levels", rows.size()},
                     {"slope_pi_L2", fitted_slope(H, l2)},
                     {"slope_pi_H1", slope_h1},
                     {"slope_rho", fitted_slope(H, rho)},
                     {"slope_rho_y", fitted_slope(H, rho_y)},
                     // A second-order H1 rate is not expected for P1; reported only.
                     {"pi_H1_second_order_observed", slope_h1 > 1.8},
                     {"ritz_slope_L2", ritz.slope_l2},
                     {"ritz_slope_H1", ritz.slope_h1},
                     {"ritz_slope_two_scale", ritz.slope_two_scale},
                     {"final_rate_pi_L2", number_or_null(rows.back().rate_pi_L2)}};
  log << "converge: " << rows.size() << " levels, L2 slope "
      << format_double(outcome.summary["slope_pi_L2"].get<double>()) << '\n';
  return outcome;
}

RunOutcome run_adapt(const RunConfig& cfg, const OutputDir& dir, std::ostream& log)
{
  RunOutcome outcome;
  const ManufacturedProblem problem = cfg.localized_problem();
  const AdaptHistory history = adapt_loop(
    adapt_problem(problem, cfg.adapt_macro_n, cfg.adapt_micro_n), cfg.eta_bar, cfg.max_rounds);
  {
    auto f = dir.open("adapt.csv", outcome);
    write_adapt_csv(f, history);
  }
  {
    auto f = dir.open("adapt_final_mesh.txt", outcome);
    write_mesh(f, *history.rounds.back().mesh);
  }
  json trace = json::array();
  for (const auto& r : history.rounds)
    trace.push_back(r.report.eta_global);
  const double r = cfg.adapt_radius;
  const Point& c = cfg.adapt_center;
  const double fraction =
    marked_fraction_in(history, Box::rectangle(c.x() - r, c.x() + r, c.y() - r, c.y() + r));
  outcome.summary = {{"rounds", history.rounds.size()},
                     {"halted", history.halted},
                     {"eta_R", trace},
                     {"marked_fraction_in_support_box", fraction}};
  log << "adapt: " << history.rounds.size() << " rounds, eta_R = "
      << format_double(history.rounds.back().report.eta_global)
      << (history.halted ? " (below tolerance)" : " (tolerance not reached)") << '\n';
  if (!history.halted) {
    outcome.code = exit_adapt_incomplete;
    outcome.message = "adaptive loop did not reach eta_R < " + format_double(cfg.eta_bar) +
                      " within " + std::to_string(cfg.max_rounds) + " rounds";
  }
  return outcome;
}

RunOutcome run_effectivity(const RunConfig& cfg, const OutputDir& dir, std::ostream& log)
{
  RunOutcome outcome;
  const EffectivityStudy study =
    effectivity_study(cfg.smooth_problem(), cfg.effectivity_sizes(), cfg.effectivity_micro_n);
  {
    auto f = dir.open("effectivity.csv", outcome);
    write_effectivity_csv(f, study);
  }
  outcome.summary = {{"levels", study.rows.size()}, {"index_ratio", study.ratio}};
  log << "effectivity: index ratio " << format_double(study.ratio) << '\n';
  return outcome;
}

RunOutcome run_oracle_check(const RunConfig& cfg, const OutputDir& dir, std::ostream& log)
{
  RunOutcome outcome;
  const auto checks = run_oracle_suite(cfg.seed);
  auto f = dir.open("oracle_check.csv", outcome);
  f << "name,passed,measured,tolerance\n";
  int failed = 0;
  json list = json::array();
  for (const auto& c : checks) {
    log << (c.passed ? "PASS " : "FAIL ") << c.name << " measured=" << format_double(c.measured)
        << " tolerance=" << format_double(c.tolerance);
    if (!c.detail.empty())
      log << " (" << c.detail << ')';
    log << '\n';
    f << c.name << ',' << (c.passed ? 1 : 0) << ',' << format_double(c.measured) << ','
      << format_double(c.tolerance) << '\n';
    list.push_back({{"name", c.name}, {"passed", c.passed}});
    failed += c.passed ? 0 : 1;
  }
  outcome.summary = {{"checks", list}, {"failed", failed}};
  if (failed > 0) {
    outcome.code = exit_check_failed;
    outcome.message = std::to_string(failed) + " oracle check(s) failed";
  }
  return outcome;
}

// Reporting ------------------------------------------------------------------------

std::string kind_of(int code)
{
  switch (code) {
  case exit_validation:
    return "validation";
  case exit_solver:
    return "solver";
  case exit_adapt_incomplete:
    return "adapt_incomplete";
  case exit_check_failed:
    return "check_failed";
  case exit_usage:
    return "usage";
  default:
    return "error";
  }
}

void report_error(int code, const std::string& message, const std::optional<fs::path>& dir,
                  std::ostream& err, const json& extra = json::object())
{
  json record = {{"status", "error"},
                 {"kind", kind_of(code)},
                 {"exit_code", code},
                 {"message", message}};
  if (!extra.empty())
    record["details"] = extra;
  err << record.dump() << '\n';
  if (!dir)
    return;
  std::error_code ec;
  fs::create_directories(*dir, ec);
  std::ofstream f(*dir / "error.json");
  if (f)
    f << record.dump(2) << '\n';
}

} // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
  CLI::App app{"Two-scale finite element solver with adaptive macro refinement", "tsfem"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path;
  std::optional<std::string> out_dir;
  std::optional<std::uint64_t> seed;
  app.add_option("--config", config_path, "JSON run configuration");
  app.add_option("--out", out_dir, "output directory (overrides the config)");
  app.add_option("--seed", seed, "seed for randomized checks (overrides the config)");
  app.set_version_flag("--version", version_string);

  const std::vector<std::pair<std::string, std::string>> commands = {
    {"simulate", "integrate the manufactured problem to T"},
    {"converge", "convergence and Ritz projection rate tables"},
    {"adapt", "estimator-driven adaptive refinement on a localized source"},
    {"effectivity", "estimator effectivity over uniform refinements"},
    {"oracle-check", "Kronecker, conservation, steady-state and exponential self-checks"},
  };
  for (const auto& [name, help] : commands)
    app.add_subcommand(name, help);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return exit_ok;
    }
    report_error(exit_usage, e.what(), std::nullopt, err);
    return exit_usage;
  }
  const std::string scenario = app.get_subcommands().front()->get_name();

  std::optional<fs::path> dir_path;
  if (out_dir)
    dir_path = *out_dir;
  const auto started = std::chrono::steady_clock::now();
  try {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_config(config_path);
    if (config_path.empty())
      cfg.model.theta = 3.0;
    if (out_dir)
      cfg.output = *out_dir;
    if (seed)
      cfg.seed = *seed;
    dir_path = cfg.output;
    validate_config(cfg, scenario);

    const OutputDir dir(*dir_path);
    RunOutcome outcome;
    if (scenario == "simulate")
      outcome = run_simulate(cfg, dir, out);
    else if (scenario == "converge")
      outcome = run_converge(cfg, dir, out);
    else if (scenario == "adapt")
      outcome = run_adapt(cfg, dir, out);
    else if (scenario == "effectivity")
      outcome = run_effectivity(cfg, dir, out);
    else
      outcome = run_oracle_check(cfg, dir, out);

    const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    json manifest = {{"tool", "tsfem"},
                     {"version", version_string},
                     {"scenario", scenario},
                     {"status", outcome.code == exit_ok ? "ok" : kind_of(outcome.code)},
                     {"config", cfg.to_json()},
                     {"config_path", config_path},
                     {"seed", cfg.seed},
                     {"outputs", outcome.outputs},
                     {"summary", outcome.summary},
                     {"wall_time_seconds", wall},
                     {"versions",
                      {{"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                                   std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                   std::to_string(EIGEN_MINOR_VERSION)},
                       {"compiler", __VERSION__},
                       {"cxx_standard", __cplusplus}}}};
    std::ofstream mf(dir.path() / "manifest.json");
    mf << manifest.dump(2) << '\n';
    if (outcome.code != exit_ok) {
      report_error(outcome.code, outcome.message, dir_path, err, outcome.summary);
      return outcome.code;
    }
    return exit_ok;
  } catch (const ValidationError& e) {
    report_error(exit_validation, e.what(), dir_path, err);
    return exit_validation;
  } catch (const FormatError& e) {
    report_error(exit_validation, e.what(), dir_path, err);
    return exit_validation;
  } catch (const SolverError& e) {
    report_error(exit_solver, e.what(), dir_path, err);
    return exit_solver;
  } catch (const std::exception& e) {
    report_error(exit_usage, e.what(), dir_path, err);
    return exit_usage;
  }
}

} // namespace tsfem
