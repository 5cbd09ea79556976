#include <doctest.h>

#include "tsfem/error.hpp"
#include "tsfem/harness.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

using namespace tsfem;

namespace {

constexpr double pi = std::numbers::pi;

MarkerRule left_end()
{
  return robin_where([](const Point& y) { return y.x() < 1e-12; });
}

SeparableComponent rho_component(std::function<double(double)> time,
                                 std::function<double(double)> dtime, double b, double c)
{
  // tau(t) (1 + x1) (1 + b y1 + c cos(pi y1))
  SeparableComponent r;
  r.time = std::move(time);
  r.time_derivative = std::move(dtime);
  r.macro.value = [](const Point& x) { return 1.0 + x.x(); };
  r.macro.gradient = [](const Point&) { return Point(1.0, 0.0); };
  r.macro_laplacian = [](const Point&) { return 0.0; };
  r.micro.value = [b, c](const Point& y) { return 1.0 + b * y.x() + c * std::cos(pi * y.x()); };
  r.micro.gradient = [b, c](const Point& y) {
    return Point(b - c * pi * std::sin(pi * y.x()), 0.0);
  };
  r.micro_laplacian = [c](const Point& y) { return -c * pi * pi * std::cos(pi * y.x()); };
  return r;
}

ManufacturedProblem pressure_free(const SeparableComponent& rho, double kappa = 1.0)
{
  ModelParams params;
  params.theta = 3.0;
  params.kappa = kappa;
  return ManufacturedProblem("pressure_free", params, ReactionTerm::standard(0.5, 3.0),
                             ReductionRule::MeanY, Box::unit(2), Box::unit(1),
                             [](const Point& y) { return y.x() < 1e-12; }, {}, {rho});
}

ManufacturedProblem zero_problem()
{
  ModelParams params;
  params.p_F = 0.0;
  params.theta = 3.0;
  return ManufacturedProblem("zero", params, ReactionTerm::zero(), ReductionRule::MeanY,
                             Box::unit(2), Box::unit(1),
                             [](const Point& y) { return y.x() < 1e-12; }, {}, {});
}

// Tensor Gauss quadrature of (rho - rho_h)^2 over Omega x Y, cell by cell.
double brute_rho_error_sq(const SystemOperators& ops, const ManufacturedProblem& problem,
                          const Matrix& beta, double t)
{
  const auto& mx = ops.macro.mesh();
  const auto& my = ops.micro.mesh();
  const QuadratureRule qx = simplex_rule(mx.dim(), 6);
  const QuadratureRule qy = simplex_rule(my.dim(), 6);
  double total = 0.0;
  for (Index a = 0; a < mx.n_cells(); ++a)
    for (std::size_t p = 0; p < qx.size(); ++p) {
      const Point x = mx.map_to_physical(a, qx.points[p]);
      Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(beta.cols());
      const auto vx = mx.cell(a);
      for (std::size_t i = 0; i < vx.size(); ++i)
        row += qx.points[p][static_cast<Eigen::Index>(i)] * beta.row(vx[i]);
      for (Index b = 0; b < my.n_cells(); ++b)
        for (std::size_t q = 0; q < qy.size(); ++q) {
          const Point y = my.map_to_physical(b, qy.points[q]);
          double v = 0.0;
          const auto vy = my.cell(b);
          for (std::size_t k = 0; k < vy.size(); ++k)
            v += qy.points[q][static_cast<Eigen::Index>(k)] * row[vy[k]];
          const double e = problem.rho(t, x, y) - v;
          total += mx.measure(a) * qx.weights[p] * my.measure(b) * qy.weights[q] * e * e;
        }
    }
  return total;
}

} // namespace

TEST_CASE("manufactured sources are consistent with the exact pair")
{
  const auto smooth = ManufacturedProblem::smooth();
  const ConsistencyReport a = source_consistency(smooth, 1);
  CHECK(a.max() <= 1e-6);

  ModelParams params;
  params.theta = 3.0;
  const auto bump = ManufacturedProblem::localized(Point(0.3, 0.3), 0.2, 1.0, params,
                                                   ReactionTerm::standard(0.5, 3.0));
  CHECK(source_consistency(bump, 2).max() <= 1e-6);

  // Wrong sign in a micro density is caught.
  const auto good = pressure_free(rho_component([](double t) { return std::exp(-t); },
                                                [](double t) { return -std::exp(-t); }, 0.3, 0.5));
  CHECK(source_consistency(good, 3).max() <= 1e-6);
  const auto bad = pressure_free(rho_component([](double t) { return std::exp(-t); },
                                               [](double t) { return std::exp(-t); }, 0.3, 0.5));
  CHECK(source_consistency(bad, 3).micro_volume > 1e-2);
}

TEST_CASE("exact problem values")
{
  const auto p = ManufacturedProblem::smooth();
  const Point x(0.25, 0.5);
  CHECK(p.pi(0.0, x) == doctest::Approx(std::sin(pi / 4.0)));
  CHECK(p.pi(1.0, x) == doctest::Approx(2.0 * std::sin(pi / 4.0)));
  CHECK(p.pi(0.5, Point(0.0, 0.3)) == doctest::Approx(0.0));
  // Mean of 1 + cos(pi y)/2 over [0, 1] is 1.
  CHECK(p.reduced_rho(0.0, x) == doctest::Approx(1.25).epsilon(1e-10));
  CHECK(p.reduced_rho(1.0, x) == doctest::Approx(1.25 * std::exp(-1.0)).epsilon(1e-10));
  CHECK(p.rho(0.0, x, Point(1.0, 0.0)) == doctest::Approx(1.25 * 0.5));
}

TEST_CASE("run_problem")
{
  SUBCASE("tensor-linear steady pair is reproduced nodally")
  {
    const auto problem = pressure_free(
      rho_component([](double) { return 1.0; }, [](double) { return 0.0; }, 0.7, 0.0));
    const Trajectory traj = run_problem(problem, 4, 4, 0.25, TimeScheme::ImplicitEuler);
    REQUIRE(traj.states.size() == 5);
    const auto& ops = *traj.ops;
    for (const auto& s : traj.states) {
      CHECK(s.alpha.cwiseAbs().maxCoeff() < 1e-8);
      for (Index i = 0; i < ops.n_macro(); ++i)
        for (Index k = 0; k < ops.n_micro(); ++k)
          CHECK(s.beta(i, k) == doctest::Approx(problem.rho(s.t, ops.macro.mesh().vertex(i),
                                                            ops.micro.mesh().vertex(k)))
                                  .epsilon(1e-8));
    }
    CHECK(traj.states.back().t == doctest::Approx(1.0));
  }

  SUBCASE("zero data stays zero")
  {
    const Trajectory traj = run_problem(zero_problem(), 4, 4, 0.125);
    for (const auto& s : traj.states) {
      CHECK(s.alpha.cwiseAbs().maxCoeff() == 0.0);
      CHECK(s.beta.cwiseAbs().maxCoeff() == 0.0);
    }
  }

  SUBCASE("implicit Euler error halves with dt")
  {
    // pi = 0 keeps alpha = 0, so each micro row is a linear ODE with
    // constant data and the exponential solution is exact in time.
    const auto problem = pressure_free(
      rho_component([](double) { return 1.0; }, [](double) { return 0.0; }, 0.0, 0.5), 2.0);
    double previous = 0.0;
    for (double dt : {0.1, 0.05, 0.025}) {
      const Trajectory traj = run_problem(problem, 2, 6, dt, TimeScheme::ImplicitEuler);
      const auto& ops = *traj.ops;
      const DiscreteForcing forcing(problem.forcing(), ops);
      const Matrix rhs = forcing.micro_rhs(0.0);
      const Matrix My = ops.My.to_dense();
      const Matrix Ky = ops.Ky.to_dense();
      double err = 0.0;
      for (Index i = 0; i < ops.n_macro(); ++i) {
        const Vector row_rhs = rhs.row(i).transpose() +
                               ops.params.kappa * ops.params.p_F * ops.g;
        const Vector exact = micro_exact_linear(My, Ky, traj.states.front().beta.row(i).transpose(),
                                                row_rhs, 1.0);
        const Vector d = traj.states.back().beta.row(i).transpose() - exact;
        err = std::max(err, std::sqrt(d.dot(My * d)));
      }
      CHECK(err > 0.0);
      if (previous > 0.0)
        CHECK(previous / err == doctest::Approx(2.0).epsilon(0.15));
      previous = err;
    }
  }

  CHECK_THROWS_AS(run_problem(zero_problem(), 2, 2, 0.3), ValidationError);
  CHECK_THROWS_AS(run_problem(zero_problem(), 2, 2, 0.0), ValidationError);
}

TEST_CASE("error norms")
{
  const auto problem = ManufacturedProblem::smooth();

  SUBCASE("separable expansion matches brute-force tensor quadrature")
  {
    const auto ops = problem_operators(problem, 3, 5);
    const Matrix beta = project_two_scale(*ops, problem.rho_at(0.4)) * 1.01;
    const double expansion = rho_error_sq(*ops, problem, beta, 0.4).first;
    CHECK(expansion == doctest::Approx(brute_rho_error_sq(*ops, problem, beta, 0.4)).epsilon(1e-8));
  }

  SUBCASE("nodal interpolant trajectory")
  {
    Trajectory traj;
    traj.ops = problem_operators(problem, 6, 6);
    traj.dt = 0.5;
    const auto& ops = *traj.ops;
    for (double t : {0.0, 0.5, 1.0}) {
      CoupledState s;
      s.t = t;
      s.alpha = ops.macro.interpolate(problem.pi_at(t).value);
      s.beta.resize(ops.n_macro(), ops.n_micro());
      for (Index i = 0; i < ops.n_macro(); ++i)
        for (Index k = 0; k < ops.n_micro(); ++k)
          s.beta(i, k) = problem.rho(t, ops.macro.mesh().vertex(i), ops.micro.mesh().vertex(k));
      traj.states.push_back(s);
    }
    const ErrorReport r = error_norms(traj, problem);
    // The interpolation error of pi scales with 1 + t/T, largest at T.
    const Vector last = traj.states.back().alpha;
    CHECK(r.e_pi_L2 == doctest::Approx(l2_error(ops.macro, last, problem.pi_at(1.0).value)));
    CHECK(r.e_pi_H1 ==
          doctest::Approx(h1_seminorm_error(ops.macro, last, problem.pi_at(1.0).gradient)));
    double trapezoid = 0.0;
    for (std::size_t n = 0; n < 3; ++n)
      trapezoid += (n == 1 ? 1.0 : 0.5) * 0.5 *
                   brute_rho_error_sq(ops, problem, traj.states[n].beta, traj.states[n].t);
    CHECK(r.e_rho == doctest::Approx(std::sqrt(trapezoid)).epsilon(1e-6));
    // Poincare with the continuous constant of the unit square.
    CHECK(r.e_pi_L2 <= r.e_pi_H1 / (pi * std::sqrt(2.0)));
  }

  SUBCASE("zero exact solution and zero trajectory")
  {
    const Trajectory traj = run_problem(zero_problem(), 3, 3, 0.5);
    const ErrorReport r = error_norms(traj, zero_problem());
    CHECK(r.e_pi_L2 == 0.0);
    CHECK(r.e_pi_H1 == 0.0);
    CHECK(r.e_rho == 0.0);
    CHECK(r.e_rho_y == 0.0);
  }
}

TEST_CASE("convergence study")
{
  const auto problem = ManufacturedProblem::smooth();
  const auto levels = doubling_levels(4, 1.0 / 16.0, 3);
  REQUIRE(levels.size() == 3);
  CHECK(levels[2].macro_n == 16);
  CHECK(levels[2].dt == doctest::Approx(1.0 / 256.0));

  const auto rows = convergence_study(problem, levels);
  REQUIRE(rows.size() == 3);
  CHECK_FALSE(rows[0].rate_pi_L2.has_value());
  for (std::size_t k = 1; k < rows.size(); ++k) {
    CHECK(*rows[k].rate_pi_L2 > 1.8);
    CHECK(*rows[k].rate_pi_L2 < 2.2);
    CHECK(*rows[k].rate_pi_H1 > 0.8);
    CHECK(*rows[k].rate_pi_H1 < 1.2);
    CHECK(*rows[k].rate_rho > 1.8);
    CHECK(*rows[k].rate_rho < 2.2);
    CHECK(rows[k].effectivity > 0.0);
  }

  std::ostringstream a;
  write_convergence_csv(a, rows);
  std::ostringstream b;
  write_convergence_csv(b, convergence_study(problem, levels));
  CHECK(a.str() == b.str());
  CHECK(a.str().rfind("level,H,h,dt,e_pi_L2,e_pi_H1,e_rho,rate_pi_L2,rate_pi_H1,rate_rho,eta_R,"
                      "effectivity\n0,",
                      0) == 0);

  std::ostringstream semi;
  write_seminorm_csv(semi, rows);
  CHECK(semi.str().rfind("level,H,h,e_rho_y,rate_rho_y\n", 0) == 0);

  CHECK_THROWS_AS(convergence_study(problem, doubling_levels(4, 0.25, 2)), ValidationError);
}

TEST_CASE("spatial errors do not depend on dt")
{
  const auto problem = ManufacturedProblem::smooth();
  const ErrorReport a = error_norms(run_problem(problem, 16, 16, 1.0 / 256.0), problem);
  const ErrorReport b = error_norms(run_problem(problem, 16, 16, 1.0 / 512.0), problem);
  CHECK(std::abs(a.e_pi_L2 - b.e_pi_L2) < 0.02 * b.e_pi_L2);
  CHECK(std::abs(a.e_pi_H1 - b.e_pi_H1) < 0.02 * b.e_pi_H1);
  CHECK(std::abs(a.e_rho - b.e_rho) < 0.02 * b.e_rho);
}

TEST_CASE("Ritz study")
{
  const RitzStudy s = ritz_study(ManufacturedProblem::smooth(), {4, 8, 16, 32});
  CHECK(s.slope_l2 == doctest::Approx(2.0).epsilon(0.1));
  CHECK(s.slope_h1 == doctest::Approx(1.0).epsilon(0.2));
  CHECK(s.slope_two_scale == doctest::Approx(2.0).epsilon(0.1));
}

TEST_CASE("effectivity study")
{
  SUBCASE("zero problem")
  {
    const EffectivityStudy s = effectivity_study(zero_problem(), {2, 4, 8, 16}, 4);
    for (const auto& r : s.rows) {
      CHECK(r.eta_R == 0.0);
      CHECK(r.e_pi_H1 == 0.0);
      CHECK(r.index == 1.0);
    }
    CHECK(s.ratio == 1.0);
  }

  SUBCASE("smooth problem")
  {
    const EffectivityStudy s = effectivity_study(ManufacturedProblem::smooth(), {4, 8, 16, 32}, 8);
    REQUIRE(s.rows.size() == 4);
    for (const auto& r : s.rows) {
      CHECK(r.e_pi_H1 > 0.0);
      CHECK(r.index > 0.0);
    }
    CHECK(s.ratio < 3.0);
    std::ostringstream csv;
    write_effectivity_csv(csv, s);
    CHECK(csv.str().rfind("level,H,eta_R,e_pi_H1,index\n", 0) == 0);
  }
}

TEST_CASE("adaptive refinement concentrates at a localized source")
{
  ModelParams params;
  params.theta = 3.0;
  const Point x0(0.3, 0.3);
  const double r = 0.2;
  const auto problem =
    ManufacturedProblem::localized(x0, r, 1.0, params, ReactionTerm::standard(0.5, 3.0));
  const AdaptHistory h = adapt_loop(adapt_problem(problem, 8, 4), 0.5, 12);
  CHECK(h.halted);
  CHECK(h.rounds.back().report.eta_global < 0.5);
  for (std::size_t k = 1; k < h.rounds.size(); ++k)
    CHECK(h.rounds[k].report.eta_global < h.rounds[k - 1].report.eta_global);
  CHECK(marked_fraction_in(h, Box::rectangle(x0.x() - r, x0.x() + r, x0.y() - r, x0.y() + r)) >=
        0.6);
}
