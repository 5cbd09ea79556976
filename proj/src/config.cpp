#include "tsfem/config.hpp"

#include "tsfem/error.hpp"
#include "tsfem/format.hpp"

#include <cmath>
#include <fstream>
#include <set>

namespace tsfem {

namespace {

using nlohmann::json;

void check_keys(const json& obj, const std::string& section, const std::set<std::string>& allowed)
{
  if (!obj.is_object())
    throw ValidationError("config section '" + section + "' must be an object");
  for (const auto& [key, value] : obj.items())
    if (!allowed.count(key))
      throw ValidationError("unknown config key '" + (section.empty() ? key : section + "." + key) +
                            "'");
}

double get_number(const json& obj, const std::string& key, double fallback,
                  const std::string& section)
{
  if (!obj.contains(key))
    return fallback;
  const json& v = obj.at(key);
  if (!v.is_number())
    throw ValidationError("config key '" + section + "." + key + "' must be a number");
  const double d = v.get<double>();
  if (!std::isfinite(d))
    throw ValidationError("config key '" + section + "." + key + "' must be finite");
  return d;
}

int get_int(const json& obj, const std::string& key, int fallback, const std::string& section)
{
  if (!obj.contains(key))
    return fallback;
  const json& v = obj.at(key);
  if (!v.is_number_integer())
    throw ValidationError("config key '" + section + "." + key + "' must be an integer");
  return v.get<int>();
}

std::string get_string(const json& obj, const std::string& key, const std::string& fallback,
                       const std::string& section)
{
  if (!obj.contains(key))
    return fallback;
  const json& v = obj.at(key);
  if (!v.is_string())
    throw ValidationError("config key '" + section + "." + key + "' must be a string");
  return v.get<std::string>();
}

void require_positive_int(int value, const std::string& what)
{
  if (value < 1)
    throw ValidationError(what + " must be at least 1, got " + std::to_string(value));
}

} // namespace

ReactionTerm RunConfig::reaction() const
{
  if (reaction_kind == "standard")
    return ReactionTerm::standard(c_f, model.theta);
  if (reaction_kind == "zero")
    return ReactionTerm::zero();
  throw ValidationError("unknown reaction kind '" + reaction_kind + "'");
}

ManufacturedProblem RunConfig::smooth_problem() const
{
  ManufacturedProblem base = ManufacturedProblem::smooth(model, reaction());
  if (reduction == base.reduction())
    return base;
  return ManufacturedProblem(base.name(), model, reaction(), reduction, base.macro_domain(),
                             base.micro_domain(), [](const Point& y) { return y.x() < 1e-12; },
                             base.pi_terms(), base.rho_terms());
}

ManufacturedProblem RunConfig::localized_problem() const
{
  return ManufacturedProblem::localized(adapt_center, adapt_radius, adapt_amplitude, model,
                                        reaction());
}

std::vector<StudyLevel> RunConfig::study_levels() const
{
  return doubling_levels(macro_n, dt, levels);
}

std::vector<int> RunConfig::effectivity_sizes() const
{
  std::vector<int> sizes;
  int n = macro_n;
  for (int k = 0; k < effectivity_levels; ++k, n *= 2)
    sizes.push_back(n);
  return sizes;
}

nlohmann::json RunConfig::to_json() const
{
  json doc;
  if (!scenario.empty())
    doc["scenario"] = scenario;
  doc["model"] = {{"A", model.A},         {"D", model.D},     {"kappa", model.kappa},
                  {"R", model.R},         {"p_F", model.p_F}, {"theta", model.theta},
                  {"T", model.T}};
  doc["reaction"] = {{"kind", reaction_kind}, {"c_f", c_f}};
  doc["reduction"] = std::string(to_string(reduction));
  doc["mesh"] = {{"macro_n", macro_n}, {"micro_n", micro_n}, {"levels", levels}};
  doc["time"] = {{"dt", dt},
                 {"scheme", std::string(to_string(scheme))},
                 {"coupling", std::string(to_string(coupling))}};
  doc["adapt"] = {{"eta_bar", eta_bar},
                  {"max_rounds", max_rounds},
                  {"macro_n", adapt_macro_n},
                  {"micro_n", adapt_micro_n},
                  {"center", {adapt_center.x(), adapt_center.y()}},
                  {"radius", adapt_radius},
                  {"amplitude", adapt_amplitude}};
  doc["effectivity"] = {{"levels", effectivity_levels}, {"micro_n", effectivity_micro_n}};
  doc["output"] = output;
  doc["seed"] = seed;
  return doc;
}

RunConfig parse_config(const nlohmann::json& doc)
{
  check_keys(doc, "",
             {"scenario", "model", "reaction", "reduction", "mesh", "time", "adapt", "effectivity",
              "output", "seed"});
  RunConfig c;
  c.scenario = get_string(doc, "scenario", "", "");
  c.model.theta = 3.0;

  if (doc.contains("model")) {
    const json& m = doc.at("model");
    check_keys(m, "model", {"A", "D", "kappa", "R", "p_F", "theta", "T"});
    c.model.A = get_number(m, "A", c.model.A, "model");
    c.model.D = get_number(m, "D", c.model.D, "model");
    c.model.kappa = get_number(m, "kappa", c.model.kappa, "model");
    c.model.R = get_number(m, "R", c.model.R, "model");
    c.model.p_F = get_number(m, "p_F", c.model.p_F, "model");
    c.model.theta = get_number(m, "theta", c.model.theta, "model");
    c.model.T = get_number(m, "T", c.model.T, "model");
  }
  if (doc.contains("reaction")) {
    const json& r = doc.at("reaction");
    check_keys(r, "reaction", {"kind", "c_f"});
    c.reaction_kind = get_string(r, "kind", c.reaction_kind, "reaction");
    c.c_f = get_number(r, "c_f", c.c_f, "reaction");
    if (c.reaction_kind != "standard" && c.reaction_kind != "zero")
      throw ValidationError("unknown reaction kind '" + c.reaction_kind +
                            "' (expected standard or zero)");
  }
  if (doc.contains("reduction"))
    c.reduction = parse_reduction(get_string(doc, "reduction", "mean_y", ""));
  if (doc.contains("mesh")) {
    const json& m = doc.at("mesh");
    check_keys(m, "mesh", {"macro_n", "micro_n", "levels"});
    c.macro_n = get_int(m, "macro_n", c.macro_n, "mesh");
    c.micro_n = get_int(m, "micro_n", c.micro_n, "mesh");
    c.levels = get_int(m, "levels", c.levels, "mesh");
  }
  if (doc.contains("time")) {
    const json& t = doc.at("time");
    check_keys(t, "time", {"dt", "scheme", "coupling"});
    c.dt = get_number(t, "dt", c.dt, "time");
    c.scheme = parse_scheme(get_string(t, "scheme", std::string(to_string(c.scheme)), "time"));
    c.coupling =
      parse_coupling(get_string(t, "coupling", std::string(to_string(c.coupling)), "time"));
  }
  if (doc.contains("adapt")) {
    const json& a = doc.at("adapt");
    check_keys(a, "adapt",
               {"eta_bar", "max_rounds", "macro_n", "micro_n", "center", "radius", "amplitude"});
    c.eta_bar = get_number(a, "eta_bar", c.eta_bar, "adapt");
    c.max_rounds = get_int(a, "max_rounds", c.max_rounds, "adapt");
    c.adapt_macro_n = get_int(a, "macro_n", c.adapt_macro_n, "adapt");
    c.adapt_micro_n = get_int(a, "micro_n", c.adapt_micro_n, "adapt");
    c.adapt_radius = get_number(a, "radius", c.adapt_radius, "adapt");
    c.adapt_amplitude = get_number(a, "amplitude", c.adapt_amplitude, "adapt");
    if (a.contains("center")) {
      const json& p = a.at("center");
      if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number())
        throw ValidationError("config key 'adapt.center' must be an array of two numbers");
      c.adapt_center = Point(p[0].get<double>(), p[1].get<double>());
    }
  }
  if (doc.contains("effectivity")) {
    const json& e = doc.at("effectivity");
    check_keys(e, "effectivity", {"levels", "micro_n"});
    c.effectivity_levels = get_int(e, "levels", c.effectivity_levels, "effectivity");
    c.effectivity_micro_n = get_int(e, "micro_n", c.effectivity_micro_n, "effectivity");
  }
  c.output = get_string(doc, "output", c.output, "");
  if (doc.contains("seed")) {
    const json& s = doc.at("seed");
    if (!s.is_number_unsigned() && !(s.is_number_integer() && s.get<std::int64_t>() >= 0))
      throw ValidationError("config key 'seed' must be a nonnegative integer");
    c.seed = s.get<std::uint64_t>();
  }
  return c;
}

RunConfig load_config(const std::filesystem::path& path)
{
  std::ifstream in(path);
  if (!in)
    throw ValidationError("cannot open config file '" + path.string() + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError("config file '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return parse_config(doc);
}

double measured_poincare(const Box& domain, int n)
{
  const FeSpace space(std::make_shared<const SimplicialMesh>(build_uniform(domain, n)));
  return 1.0 / smallest_dirichlet_eigenvalue(space);
}

void validate_config(const RunConfig& c, const std::string& scenario)
{
  if (!c.scenario.empty() && c.scenario != scenario)
    throw ValidationError("config names scenario '" + c.scenario + "' but '" + scenario +
                          "' was requested");
  const ReactionTerm reaction = c.reaction();
  const bool adapt = scenario == "adapt";
  const int n = adapt ? c.adapt_macro_n : c.macro_n;
  require_positive_int(n, adapt ? "adapt.macro_n" : "mesh.macro_n");
  require_positive_int(adapt ? c.adapt_micro_n : c.micro_n, adapt ? "adapt.micro_n" : "mesh.micro_n");
  c.model.validate_assumptions(reaction.c_pi, reaction.c_rho,
                               measured_poincare(Box::unit(2), std::max(n, 2)));
  reaction.validate(c.model.theta, c.seed);

  if (scenario == "simulate" || scenario == "converge") {
    if (!(c.dt > 0.0))
      throw ValidationError("time.dt must be positive, got " + format_double(c.dt));
    const double steps = c.model.T / c.dt;
    if (std::abs(steps - std::round(steps)) > 1e-9 * steps)
      throw ValidationError("time.dt = " + format_double(c.dt) + " does not divide T = " +
                            format_double(c.model.T));
  }
  if (scenario == "converge" && c.levels < 3)
    throw ValidationError("a convergence study needs mesh.levels >= 3, got " +
                          std::to_string(c.levels));
  if (scenario == "effectivity") {
    if (c.effectivity_levels < 4)
      throw ValidationError("an effectivity study needs effectivity.levels >= 4, got " +
                            std::to_string(c.effectivity_levels));
    require_positive_int(c.effectivity_micro_n, "effectivity.micro_n");
  }
  if (adapt) {
    if (!(c.eta_bar > 0.0))
      throw ValidationError("adapt.eta_bar must be positive, got " + format_double(c.eta_bar));
    require_positive_int(c.max_rounds, "adapt.max_rounds");
    if (!(c.adapt_radius > 0.0))
      throw ValidationError("adapt.radius must be positive");
    if (!Box::unit(2).contains(c.adapt_center))
      throw ValidationError("adapt.center must lie in the unit square");
  }
}

} // namespace tsfem
