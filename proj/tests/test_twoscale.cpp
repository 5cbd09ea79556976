#include <doctest.h>

#include "tsfem/error.hpp"
#include "tsfem/oracles.hpp"
#include "tsfem/twoscale.hpp"

#include <Eigen/Cholesky>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

using namespace tsfem;

namespace {

constexpr double pi = std::numbers::pi;

std::shared_ptr<const SimplicialMesh> share(SimplicialMesh mesh)
{
  return std::make_shared<const SimplicialMesh>(std::move(mesh));
}

MarkerRule left_end()
{
  return robin_where([](const Point& y) { return y.x() < 1e-12; });
}

FeSpace interval_macro(int n)
{
  return FeSpace(share(build_uniform(Box::unit(1), n)));
}

FeSpace interval_micro(int n)
{
  return FeSpace(share(build_uniform(Box::unit(1), n, left_end())));
}

FeSpace square_macro(int n)
{
  return FeSpace(share(build_uniform(Box::unit(2), n)));
}

// Classical RK4 on My b' = rhs - Ky b with many small steps.
Vector rk4(const Matrix& My, const Matrix& Ky, const Vector& b0, const Vector& rhs, double t,
           int steps)
{
  const Eigen::LLT<Matrix> mass(My);
  const auto f = [&](const Vector& b) { return Vector(mass.solve(rhs - Ky * b)); };
  Vector b = b0;
  const double h = t / steps;
  for (int n = 0; n < steps; ++n) {
    const Vector k1 = f(b);
    const Vector k2 = f(b + 0.5 * h * k1);
    const Vector k3 = f(b + 0.5 * h * k2);
    const Vector k4 = f(b + h * k3);
    b += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return b;
}

// Dense Gaussian elimination.
Vector dense_solve(Matrix a, Vector b)
{
  const Index n = static_cast<Index>(a.rows());
  for (Index k = 0; k < n; ++k)
    for (Index i = k + 1; i < n; ++i) {
      const double l = a(i, k) / a(k, k);
      a.row(i) -= l * a.row(k);
      b[i] -= l * b[k];
    }
  Vector x(n);
  for (Index i = n - 1; i >= 0; --i)
    x[i] = (b[i] - a.row(i).tail(n - 1 - i).dot(x.tail(n - 1 - i))) / a(i, i);
  return x;
}

ModelParams sample_params()
{
  ModelParams p;
  p.A = 1.3;
  p.D = 0.7;
  p.kappa = 1.9;
  p.R = 0.8;
  p.p_F = 1.2;
  p.theta = 2.0;
  return p;
}

} // namespace

TEST_CASE("Kronecker structure on the smallest meshes")
{
  const FeSpace macro = interval_macro(2);
  const FeSpace micro = interval_micro(2);
  const ModelParams p = sample_params();
  const SystemOperators ops = assemble_system(macro, micro, p);

  // Closed forms for h = 1/2 on both scales, Gamma_R = {y = 0}.
  const double h = 0.5;
  Matrix Mx = Matrix::Zero(3, 3);
  Matrix Sy = Matrix::Zero(3, 3);
  for (int e = 0; e < 2; ++e) {
    Mx.block(e, e, 2, 2) += h / 6.0 * (Matrix(2, 2) << 2, 1, 1, 2).finished();
    Sy.block(e, e, 2, 2) += 1.0 / h * (Matrix(2, 2) << 1, -1, -1, 1).finished();
  }
  Matrix Gy = Matrix::Zero(3, 3);
  Gy(0, 0) = 1.0;
  Matrix Q(9, 9);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k)
        for (int l = 0; l < 3; ++l)
          Q(i * 3 + k, j * 3 + l) = Mx(i, j) * (p.D * Sy(k, l) + p.kappa * p.R * Gy(k, l));

  const Matrix brute = brute_force_Q(macro, micro, p);
  CHECK((brute - Q).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((ops.Mx.to_dense() - Mx).cwiseAbs().maxCoeff() <= 1e-14);
  CHECK((ops.Ky.to_dense() - (p.D * Sy + p.kappa * p.R * Gy)).cwiseAbs().maxCoeff() <= 1e-13);

  const OracleCheck check = kronecker_check(macro, micro, p);
  CHECK(check.passed);

  // c_ik = kappa p_F int xi_i int_{Gamma_R} eta_k with m = (h/2, h, h/2).
  const Matrix c = brute_force_c(macro, micro, p);
  const Vector m = (Vector(3) << h / 2, h, h / 2).finished();
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k)
      CHECK(c(i, k) == doctest::Approx(k == 0 ? p.kappa * p.p_F * m[i] : 0.0).epsilon(1e-13));
  CHECK((ops.m - m).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("Kronecker structure in 2D with at most 6 dofs per scale")
{
  const FeSpace macro = square_macro(1);
  const FeSpace micro(
    share(build_uniform(Box::unit(2), 1, robin_where([](const Point& y) { return y.y() < 1e-12; }))));
  const OracleCheck check = kronecker_check(macro, micro, sample_params());
  CHECK(check.passed);
  CHECK(check.measured <= 1e-12);
}

TEST_CASE("vanishing Robin coupling")
{
  ModelParams p = sample_params();
  p.kappa = 0.0;
  const SystemOperators ops = assemble_system(interval_macro(3), interval_micro(4), p);
  CHECK((ops.Ky.to_dense() - p.D * ops.Sy.to_dense()).cwiseAbs().maxCoeff() == 0.0);
  const Matrix c = brute_force_c(ops.macro, ops.micro, p);
  CHECK(c.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("assemble_system rejects invalid inputs")
{
  ModelParams p = sample_params();
  p.D = -1.0;
  CHECK_THROWS_AS(assemble_system(interval_macro(2), interval_micro(2), p), ValidationError);
  // Micro mesh with Dirichlet facets and macro without them.
  CHECK_THROWS_AS(assemble_system(interval_macro(2), interval_macro(2), sample_params()),
                  ValidationError);
  CHECK_THROWS_AS(assemble_system(interval_micro(2), interval_micro(2), sample_params()),
                  ValidationError);
  const FeSpace no_robin(
    share(build_uniform(Box::unit(1), 2, robin_where([](const Point&) { return false; }))));
  CHECK_THROWS_AS(assemble_system(interval_macro(2), no_robin, sample_params()), ValidationError);
}

TEST_CASE("parameter assumptions")
{
  ModelParams p = sample_params();
  CHECK_NOTHROW(p.validate_assumptions(0.5, 0.5, 0.05));
  CHECK_THROWS_AS(p.validate_assumptions(0.5, 0.5, 10.0), ValidationError);
  p.p_F = 0.0;
  CHECK_NOTHROW(p.validate_structure());
  CHECK_THROWS_AS(p.validate_assumptions(0.5, 0.5, 0.05), ValidationError);
  try {
    sample_params().validate_assumptions(0.9, 0.2, 2.0);
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("A = 1.3") != std::string::npos);
  }
}

TEST_CASE("reaction term validation")
{
  const ReactionTerm f = ReactionTerm::standard(0.8, 2.0);
  CHECK_NOTHROW(f.validate(2.0, 1));
  CHECK(f.f(0.0, 0.3) == 0.0);
  CHECK(f.f(2.5, 0.3) == 0.0);
  // Derivatives against central differences.
  for (double s : {-0.7, 0.3, 1.1, 1.9})
    for (double r : {-1.0, 0.2, 2.0}) {
      const double h = 1e-6;
      CHECK(f.df_ds(s, r) ==
            doctest::Approx((f.f(s + h, r) - f.f(s - h, r)) / (2 * h)).epsilon(1e-6));
      CHECK(f.df_dr(s, r) ==
            doctest::Approx((f.f(s, r + h) - f.f(s, r - h)) / (2 * h)).epsilon(1e-6));
    }
  CHECK_THROWS_AS(ReactionTerm::standard(1.2, 2.0).validate(2.0, 1), ValidationError);
  CHECK_THROWS_AS(ReactionTerm::linear_in_r(1.0).validate(2.0, 1), ValidationError);
  ReactionTerm lying = f;
  lying.c_rho = 0.01;
  CHECK_THROWS_AS(lying.validate(2.0, 1), ValidationError);
  CHECK_NOTHROW(ReactionTerm::zero().validate(1.0, 3));
}

TEST_CASE("eval_F examples")
{
  const SystemOperators ops = assemble_system(square_macro(3), interval_micro(4), sample_params());
  const Vector alpha = Vector::Random(ops.n_macro());
  const Matrix beta = Matrix::Random(ops.n_macro(), ops.n_micro());
  CHECK(eval_F(ops, ReactionTerm::zero(), alpha, beta).cwiseAbs().maxCoeff() == 0.0);

  const double c = 1.7;
  const Matrix constant = Matrix::Constant(ops.n_macro(), ops.n_micro(), c);
  const Vector F = eval_F(ops, ReactionTerm::linear_in_r(1.0), alpha, constant);
  CHECK((F - c * ops.m).cwiseAbs().maxCoeff() <= 1e-14);

  SystemOperators gamma = assemble_system(square_macro(3), interval_micro(4), sample_params(),
                                          ReductionRule::GammaRMean);
  const Vector Fg = eval_F(gamma, ReactionTerm::linear_in_r(1.0), alpha, constant);
  CHECK((Fg - c * gamma.m).cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("eval_F Lipschitz bound on sampled pairs")
{
  const SystemOperators ops = assemble_system(square_macro(4), interval_micro(4), sample_params());
  const ReactionTerm f = ReactionTerm::standard(0.9, 2.0);
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1.0, 3.0);
  const double max_load = ops.m.maxCoeff();
  for (int k = 0; k < 20; ++k) {
    Vector a1(ops.n_macro()), a2(ops.n_macro());
    for (Index i = 0; i < a1.size(); ++i) {
      a1[i] = u(rng);
      a2[i] = u(rng);
    }
    const Matrix beta = Matrix::Constant(ops.n_macro(), ops.n_micro(), u(rng));
    const double lhs = (eval_F(ops, f, a1, beta) - eval_F(ops, f, a2, beta)).cwiseAbs().maxCoeff();
    CHECK(lhs <= f.c_pi * max_load * (a1 - a2).cwiseAbs().maxCoeff() * (1 + 1e-12));
  }
}

TEST_CASE("elliptic_solve")
{
  const SystemOperators ops = assemble_system(square_macro(6), interval_micro(4), sample_params());
  const Matrix beta = Matrix::Constant(ops.n_macro(), ops.n_micro(), 0.4);

  SUBCASE("zero reaction gives zero")
  {
    const EllipticResult r = elliptic_solve(ops, ReactionTerm::zero(), beta, Vector());
    CHECK(r.alpha.cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("state-independent right-hand side is one direct solve")
  {
    const Vector load =
      assemble_load(ops.macro, [](const Point& x) { return std::exp(x.x()) * (1 + x.y()); });
    const EllipticResult r = elliptic_solve(ops, ReactionTerm::zero(), beta, Vector(), load);
    // Direct dense solve of the Dirichlet-eliminated system.
    Vector rhs = load;
    for (Index i = 0; i < rhs.size(); ++i)
      if (ops.macro.dirichlet_mask()[i])
        rhs[i] = 0.0;
    const Vector direct = dense_solve(ops.P.to_dense(), rhs);
    CHECK(r.update_norms.size() <= 2);
    CHECK((r.alpha - direct).cwiseAbs().maxCoeff() <= 1e-12 * direct.cwiseAbs().maxCoeff());
  }
  SUBCASE("contraction ratio bound for the standard reaction")
  {
    const ReactionTerm f = ReactionTerm::standard(0.9, 2.0);
    const Vector load = assemble_load(ops.macro, [](const Point&) { return 20.0; });
    const EllipticResult r = elliptic_solve(ops, f, beta, Vector(), load);
    const double cp = 1.0 / smallest_dirichlet_eigenvalue(ops.macro);
    CHECK(r.iterations > 2);
    CHECK_FALSE(r.ratios.empty());
    CHECK(r.max_ratio < 1.0);
    CHECK(r.max_ratio <= f.c_pi * cp / ops.params.A + 0.1);
    CHECK(r.alpha.maxCoeff() > 0.1);
  }
  SUBCASE("divergent iteration is reported")
  {
    ReactionTerm strong;
    strong.name = "strong";
    strong.f = [](double s, double) { return 200.0 * s; };
    const Vector load = assemble_load(ops.macro, [](const Point&) { return 1.0; });
    EllipticOptions opts;
    opts.max_iterations = 30;
    CHECK_THROWS_AS(elliptic_solve(ops, strong, beta, Vector(), load, opts), SolverError);
  }
}

TEST_CASE("initial state projections")
{
  const SystemOperators ops = assemble_system(interval_macro(3), interval_micro(4), sample_params());
  SUBCASE("constant")
  {
    const CoupledState s =
      initial_state(ops, [](const Point&, const Point&) { return 2.5; }, ReactionTerm::zero());
    CHECK((s.beta.array() - 2.5).abs().maxCoeff() <= 1e-12);
    CHECK(s.alpha.cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("tensor P1 function is reproduced")
  {
    const Matrix beta = Matrix::Random(ops.n_macro(), ops.n_micro());
    const FieldEvaluator eval(ops);
    CoupledState probe{0.0, Vector::Zero(ops.n_macro()), beta};
    const auto rho = [&](const Point& x, const Point& y) { return eval(probe, x, y).second; };
    const Matrix back = project_two_scale(ops, rho);
    CHECK((back - beta).cwiseAbs().maxCoeff() <= 1e-10);
  }
  SUBCASE("x y against a dense mass solve")
  {
    const Matrix beta = project_two_scale(ops, [](const Point& x, const Point& y) {
      return x.x() * y.x();
    });
    const Matrix Mx = ops.Mx.to_dense();
    const Matrix My = ops.My.to_dense();
    const Vector xs = ops.macro.interpolate([](const Point& x) { return x.x(); });
    const Vector ys = ops.micro.interpolate([](const Point& y) { return y.x(); });
    const Vector lx = Mx * xs;
    const Vector ly = My * ys;
    const Index nx = ops.n_macro(), ny = ops.n_micro();
    Matrix big(nx * ny, nx * ny);
    Vector load(nx * ny);
    for (Index i = 0; i < nx; ++i)
      for (Index k = 0; k < ny; ++k) {
        load[i * ny + k] = lx[i] * ly[k];
        for (Index j = 0; j < nx; ++j)
          for (Index l = 0; l < ny; ++l)
            big(i * ny + k, j * ny + l) = Mx(i, j) * My(k, l);
      }
    const Vector oracle = dense_solve(big, load);
    for (Index i = 0; i < nx; ++i)
      for (Index k = 0; k < ny; ++k)
        CHECK(beta(i, k) == doctest::Approx(oracle[i * ny + k]).epsilon(1e-10));
  }
}

TEST_CASE("micro exponential oracle")
{
  SUBCASE("scalar closed form")
  {
    const Matrix My = Matrix::Constant(1, 1, 2.0);
    const Matrix Ky = Matrix::Constant(1, 1, 3.0);
    const Vector b0 = Vector::Constant(1, 0.7);
    const Vector rhs = Vector::Constant(1, 1.1);
    const double q = 1.5;
    for (double t : {0.0, 0.1, 1.0, 4.0}) {
      const double exact = 0.7 * std::exp(-q * t) + (1.1 / 3.0) * (1.0 - std::exp(-q * t));
      CHECK(micro_exact_linear(My, Ky, b0, rhs, t)[0] == doctest::Approx(exact).epsilon(1e-14));
    }
  }
  SUBCASE("agrees with fine RK4, including the singular case")
  {
    for (double kappa : {1.5, 0.0}) {
      ModelParams p = sample_params();
      p.kappa = kappa;
      const SystemOperators ops = assemble_system(interval_macro(1), interval_micro(6), p);
      const Matrix My = ops.My.to_dense();
      const Matrix Ky = ops.Ky.to_dense();
      const Vector b0 = ops.micro.interpolate([](const Point& y) { return std::cos(pi * y.x()); });
      const Vector rhs = kappa > 0.0 ? Vector(kappa * 1.4 * ops.g) : Vector(0.3 * ops.w);
      const Vector exact = micro_exact_linear(My, Ky, b0, rhs, 0.8);
      const Vector oracle = rk4(My, Ky, b0, rhs, 0.8, 4000);
      CHECK((exact - oracle).cwiseAbs().maxCoeff() <= 1e-10);
    }
  }
  SUBCASE("t = 0 and large t")
  {
    const SystemOperators ops = assemble_system(interval_macro(1), interval_micro(5), sample_params());
    const Vector b0 = Vector::LinSpaced(ops.n_micro(), 0.0, 1.0);
    CHECK(micro_exact_linear(ops, b0, 0.3, 0.0) == b0);
    const Vector late = micro_exact_linear(ops, b0, 0.3, 200.0);
    const double target = (0.3 + ops.params.p_F) / ops.params.R;
    CHECK((late.array() - target).abs().maxCoeff() <= 1e-10);
  }
  SUBCASE("dimension limit")
  {
    const Index n = max_exponential_dim + 1;
    CHECK_THROWS_AS(micro_exact_linear(Matrix::Identity(n, n), Matrix::Identity(n, n),
                                       Vector::Zero(n), Vector::Zero(n), 1.0),
                    SolverError);
  }
}

TEST_CASE("frozen-alpha stepping converges to the exponential solution")
{
  ModelParams p;
  p.D = 0.05;
  const SystemOperators ops = assemble_system(interval_macro(1), interval_micro(8), p);
  const Vector b0 =
    ops.micro.interpolate([](const Point& y) { return 1.0 + 0.5 * std::cos(pi * y.x()); });
  const ExponentialStudy ie = exponential_study(ops, TimeScheme::ImplicitEuler, b0, 0.5, 1.0,
                                                0.125, 4);
  const ExponentialStudy cn = exponential_study(ops, TimeScheme::CrankNicolson, b0, 0.5, 1.0,
                                                0.125, 4);
  CHECK(ie.slope == doctest::Approx(1.0).epsilon(0.15));
  CHECK(cn.slope == doctest::Approx(2.0).epsilon(0.1));
  for (std::size_t k = 1; k < ie.errors.size(); ++k) {
    CHECK(ie.errors[k] < ie.errors[k - 1]);
    CHECK(cn.errors[k] < cn.errors[k - 1]);
  }
}

TEST_CASE("conservation without Robin coupling")
{
  ModelParams p = sample_params();
  p.kappa = 0.0;
  const SystemOperators ops = assemble_system(square_macro(3), interval_micro(6), p);
  Matrix beta0 = Matrix::Random(ops.n_macro(), ops.n_micro()).array() + 1.0;
  const OracleCheck check =
    conservation_check(ops, ReactionTerm::standard(0.7, p.theta), beta0, 0.1, 15);
  CHECK(check.passed);
  CHECK(check.measured <= 1e-13);
}

TEST_CASE("steady state for frozen alpha")
{
  const SystemOperators ops = assemble_system(square_macro(2), interval_micro(6), sample_params());
  Vector alpha = Vector::Zero(ops.n_macro());
  alpha[4] = 0.8;
  const OracleCheck check =
    steady_state_check(ops, alpha, Matrix::Zero(ops.n_macro(), ops.n_micro()), 0.25, 80.0);
  CHECK(check.passed);
}

TEST_CASE("coupled stepping")
{
  const ModelParams p = sample_params();
  const SystemOperators ops = assemble_system(square_macro(4), interval_micro(4), p);
  const ReactionTerm f = ReactionTerm::standard(0.8, p.theta);
  Forcing forcing;
  forcing.macro_source = [](double t, const Point& x) {
    return 10.0 * (1.0 + t) * std::sin(pi * x.x()) * std::sin(pi * x.y());
  };
  const DiscreteForcing discrete(forcing, ops);
  const CoupledState s0 =
    initial_state(ops, [](const Point&, const Point& y) { return y.x(); }, f, discrete);

  for (TimeScheme scheme : {TimeScheme::ImplicitEuler, TimeScheme::CrankNicolson}) {
    StepOptions iterated;
    iterated.scheme = scheme;
    const TimeStepper stepper(ops, f, 0.05, iterated, &discrete);
    StepStats stats;
    const CoupledState s1 = stepper.step(s0, &stats);
    CHECK(s1.t == doctest::Approx(0.05));
    CHECK(stats.outer_iterations >= 2);
    CHECK(stats.max_contraction < 1.0);
    // The iterated result is a coupled fixed point.
    const Matrix beta = stepper.micro_update(s0.beta, s0.t, s0.alpha, s1.alpha);
    CHECK((beta - s1.beta).cwiseAbs().maxCoeff() <= 1e-8);
    const EllipticResult again =
      elliptic_solve(ops, f, s1.beta, s1.alpha, discrete.macro_load(s1.t));
    CHECK((again.alpha - s1.alpha).cwiseAbs().maxCoeff() <= 1e-8);
    for (Index i = 0; i < ops.n_macro(); ++i)
      if (ops.macro.dirichlet_mask()[i])
        CHECK(s1.alpha[i] == 0.0);

    StepOptions segregated = iterated;
    segregated.mode = CouplingMode::Segregated;
    const CoupledState s2 = TimeStepper(ops, f, 0.05, segregated, &discrete).step(s0, &stats);
    CHECK(stats.outer_iterations == 1);
    CHECK((s2.alpha - s1.alpha).cwiseAbs().maxCoeff() < 1e-2);
  }
  CHECK_THROWS_AS(TimeStepper(ops, f, 0.0), ValidationError);
}

TEST_CASE("zero data stays zero")
{
  ModelParams p = sample_params();
  p.p_F = 0.0;
  const SystemOperators ops = assemble_system(square_macro(3), interval_micro(3), p);
  const ReactionTerm f = ReactionTerm::standard(0.8, p.theta);
  CoupledState s = initial_state(ops, [](const Point&, const Point&) { return 0.0; }, f);
  for (int n = 0; n < 5; ++n)
    s = step(s, 0.1, ops, f, CouplingMode::Iterated, TimeScheme::ImplicitEuler);
  CHECK(s.alpha.cwiseAbs().maxCoeff() == 0.0);
  CHECK(s.beta.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("reconstruction")
{
  const SystemOperators ops = assemble_system(square_macro(2), interval_micro(3), sample_params());
  CoupledState s{0.0, Vector::Random(ops.n_macro()), Matrix::Random(ops.n_macro(), ops.n_micro())};
  const auto& xm = ops.macro.mesh();
  const auto& ym = ops.micro.mesh();
  for (Index v = 0; v < ops.n_macro(); ++v)
    for (Index w = 0; w < ops.n_micro(); ++w) {
      const auto [pi_h, rho_h] = reconstruct(s, ops, xm.vertex(v), ym.vertex(w));
      CHECK(pi_h == doctest::Approx(s.alpha[v]).epsilon(1e-14));
      CHECK(rho_h == doctest::Approx(s.beta(v, w)).epsilon(1e-14));
    }
  const Point mid = 0.5 * (xm.vertex(0) + xm.vertex(1));
  CHECK(reconstruct(s, ops, mid, Point(0.3, 0.0)).first ==
        doctest::Approx(0.5 * (s.alpha[0] + s.alpha[1])));
  CoupledState flat{0.0, s.alpha, Matrix::Constant(ops.n_macro(), ops.n_micro(), -0.25)};
  CHECK(reconstruct(flat, ops, Point(0.31, 0.77), Point(0.9, 0.0)).second ==
        doctest::Approx(-0.25));
  CHECK_THROWS_AS(reconstruct(s, ops, Point(1.2, 0.5), Point(0.5, 0.0)), GeometryError);
}

TEST_CASE("checkpoint round trip")
{
  CoupledState s{0.1 + 0.2, Vector::Random(7), Matrix::Random(7, 4)};
  s.beta(2, 3) = 1e-300;
  s.alpha[1] = -0.0;
  for (bool binary : {false, true}) {
    std::stringstream buf;
    write_checkpoint(buf, s, binary);
    const CoupledState back = read_checkpoint(buf);
    CHECK(back.t == s.t);
    CHECK(back.alpha == s.alpha);
    CHECK(back.beta == s.beta);
  }
  std::stringstream text;
  write_checkpoint(text, s);
  std::string header;
  std::getline(text, header);
  CHECK(header == "0.30000000000000004 7 4");

  std::istringstream truncated("0.5 2 2\n1\n2\n3 4\n5\n");
  CHECK_THROWS_AS(read_checkpoint(truncated), FormatError);
  std::istringstream junk("0.5 1 1\n1\nabc\n");
  CHECK_THROWS_AS(read_checkpoint(junk), FormatError);
}
