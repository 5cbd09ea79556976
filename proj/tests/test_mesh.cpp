#include <doctest.h>

#include "tsfem/error.hpp"
#include "tsfem/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>
#include <sstream>

using namespace tsfem;

namespace {

// Independent edge census: counts incident cells per sorted vertex pair from
// the raw cell lists only.
std::map<FacetKey, int> edge_census(const SimplicialMesh& mesh)
{
  std::map<FacetKey, int> count;
  for (Index c = 0; c < mesh.n_cells(); ++c) {
    const auto v = mesh.cell(c);
    if (mesh.dim() == 1) {
      ++count[{v[0], v[0]}];
      ++count[{v[1], v[1]}];
    } else {
      for (int i = 0; i < 3; ++i)
        ++count[make_facet_key(v[i], v[(i + 1) % 3])];
    }
  }
  return count;
}

// A hanging node is a vertex lying strictly inside some cell edge.
bool has_hanging_node(const SimplicialMesh& mesh)
{
  if (mesh.dim() == 1)
    return false;
  for (const auto& [key, n] : edge_census(mesh)) {
    const Point a = mesh.vertex(key[0]);
    const Point b = mesh.vertex(key[1]);
    for (Index v = 0; v < mesh.n_vertices(); ++v) {
      if (v == key[0] || v == key[1])
        continue;
      const Point p = mesh.vertex(v);
      const double cross = (b - a).x() * (p - a).y() - (b - a).y() * (p - a).x();
      const double s = (p - a).dot(b - a) / (b - a).squaredNorm();
      if (std::abs(cross) < 1e-12 && s > 1e-12 && s < 1.0 - 1e-12)
        return true;
    }
  }
  return false;
}

double shoelace(const SimplicialMesh& mesh, Index c)
{
  const auto v = mesh.cell(c);
  if (mesh.dim() == 1)
    return std::abs(mesh.vertex(v[1]).x() - mesh.vertex(v[0]).x());
  const Point a = mesh.vertex(v[0]);
  const Point b = mesh.vertex(v[1]);
  const Point d = mesh.vertex(v[2]);
  return 0.5 * std::abs((b - a).x() * (d - a).y() - (b - a).y() * (d - a).x());
}

void check_valid(const SimplicialMesh& mesh, double domain_measure)
{
  double total = 0.0;
  for (Index c = 0; c < mesh.n_cells(); ++c) {
    const double a = shoelace(mesh, c);
    CHECK(a > 0.0);
    CHECK(mesh.measure(c) == doctest::Approx(a).epsilon(1e-12));
    total += a;
  }
  CHECK(std::abs(total - domain_measure) <= 1e-12 * domain_measure);
  const auto census = edge_census(mesh);
  int boundary = 0;
  for (const auto& [key, n] : census) {
    CHECK((n == 1 || n == 2));
    const auto f = mesh.find_facet(key);
    REQUIRE(f.has_value());
    const Facet& facet = mesh.facet(*f);
    CHECK(facet.on_boundary() == (n == 1));
    if (n == 1) {
      ++boundary;
      CHECK(facet.mark.has_value());
    }
  }
  CHECK(static_cast<std::size_t>(mesh.n_facets()) == census.size());
  CHECK_FALSE(has_hanging_node(mesh));
  (void)boundary;
}

} // namespace

TEST_CASE("uniform unit square with one subdivision")
{
  const SimplicialMesh mesh = build_uniform(Box::unit(2), 1);
  CHECK(mesh.n_vertices() == 4);
  CHECK(mesh.n_cells() == 2);
  CHECK(mesh.n_facets() == 5);
  int boundary = 0;
  for (const Facet& f : mesh.facets())
    boundary += f.on_boundary() ? 1 : 0;
  CHECK(boundary == 4);
  check_valid(mesh, 1.0);
}

TEST_CASE("uniform interval")
{
  const SimplicialMesh mesh = build_uniform(Box::unit(1), 4);
  CHECK(mesh.n_vertices() == 5);
  CHECK(mesh.n_cells() == 4);
  CHECK(mesh.total_measure() == doctest::Approx(1.0).epsilon(1e-15));
  check_valid(mesh, 1.0);
}

TEST_CASE("uniform square area identity")
{
  const SimplicialMesh mesh = build_uniform(Box::unit(2), 2);
  CHECK(std::abs(mesh.total_measure() - 1.0) <= 1e-12);
  check_valid(mesh, 1.0);
  const SimplicialMesh rect = build_uniform(Box::rectangle(-1.0, 2.0, 0.5, 1.0), 3);
  check_valid(rect, 1.5);
}

TEST_CASE("degenerate domains and subdivisions are rejected")
{
  CHECK_THROWS_AS(build_uniform(Box::rectangle(0.0, 0.0, 0.0, 1.0), 2), ValidationError);
  CHECK_THROWS_AS(build_uniform(Box::interval(1.0, 1.0), 2), ValidationError);
  CHECK_THROWS_AS(build_uniform(Box::unit(2), 0), ValidationError);
}

TEST_CASE("micro marker rule assigns GammaR and GammaN")
{
  const auto rule = robin_where([](const Point& p) { return p.y() < 1e-12; });
  const SimplicialMesh mesh = build_uniform(Box::unit(2), 3, rule);
  double robin = 0.0;
  double neumann = 0.0;
  for (Index f = 0; f < mesh.n_facets(); ++f) {
    const Facet& facet = mesh.facet(f);
    if (!facet.on_boundary())
      continue;
    REQUIRE(facet.mark.has_value());
    CHECK(*facet.mark != BoundaryMark::Dirichlet);
    (*facet.mark == BoundaryMark::GammaR ? robin : neumann) += mesh.facet_measure(f);
  }
  CHECK(robin == doctest::Approx(1.0));
  CHECK(neumann == doctest::Approx(3.0));
}

TEST_CASE("boundary normals point outward")
{
  const SimplicialMesh mesh = build_uniform(Box::unit(2), 2);
  for (Index f = 0; f < mesh.n_facets(); ++f) {
    if (!mesh.facet(f).on_boundary())
      continue;
    const Point mid = mesh.facet_midpoint(f);
    const Point probe = mid + 1e-3 * mesh.facet_normal(f);
    CHECK_FALSE(Box::unit(2).contains(probe, 0.0));
  }
}

TEST_CASE("red refinement of both triangles")
{
  const SimplicialMesh mesh = build_uniform(Box::unit(2), 1);
  const std::vector<Index> marked{0, 1};
  const SimplicialMesh fine = refine(mesh, marked);
  CHECK(fine.n_cells() == 8);
  CHECK(fine.total_measure() == doctest::Approx(1.0).epsilon(1e-14));
  check_valid(fine, 1.0);
  for (Index c = 0; c < fine.n_cells(); ++c)
    CHECK(fine.diameter(c) == doctest::Approx(0.5 * mesh.diameter(fine.origin()[c])).epsilon(1e-14));
}

TEST_CASE("red refinement of one triangle closes with a green bisection")
{
  const SimplicialMesh mesh = build_uniform(Box::unit(2), 1);
  const std::vector<Index> marked{0};
  const SimplicialMesh fine = refine(mesh, marked);
  CHECK(fine.n_cells() == 6);
  CHECK(fine.n_vertices() == 7);
  check_valid(fine, 1.0);
  int green = 0;
  for (const auto& rec : fine.green_records())
    green += rec.has_value() ? 1 : 0;
  CHECK(green == 2);
}

TEST_CASE("refining nothing returns the same mesh")
{
  const SimplicialMesh mesh = build_uniform(Box::unit(2), 3);
  const SimplicialMesh same = refine(mesh, std::vector<Index>{});
  REQUIRE(same.n_vertices() == mesh.n_vertices());
  REQUIRE(same.n_cells() == mesh.n_cells());
  for (Index v = 0; v < mesh.n_vertices(); ++v)
    CHECK(same.vertex(v) == mesh.vertex(v));
  for (Index c = 0; c < mesh.n_cells(); ++c)
    CHECK(same.raw_cell(c) == mesh.raw_cell(c));
  CHECK(same.boundary_marks() == mesh.boundary_marks());
}

TEST_CASE("refinement of a 1D mesh")
{
  const SimplicialMesh mesh = build_uniform(Box::unit(1), 4,
                                            robin_where([](const Point& p) { return p.x() < 0.5; }));
  const std::vector<Index> marked{0, 2};
  const SimplicialMesh fine = refine(mesh, marked);
  CHECK(fine.n_cells() == 6);
  check_valid(fine, 1.0);
  CHECK(fine.boundary_marks() == mesh.boundary_marks());
}

TEST_CASE("random adaptive refinement keeps the mesh conforming")
{
  std::mt19937_64 rng(20241);
  SimplicialMesh mesh = build_uniform(Box::rectangle(0.0, 2.0, 0.0, 1.0), 2);
  for (int round = 0; round < 7; ++round) {
    std::vector<Index> marked;
    std::bernoulli_distribution pick(0.2);
    for (Index c = 0; c < mesh.n_cells(); ++c)
      if (pick(rng))
        marked.push_back(c);
    if (marked.empty())
      marked.push_back(0);
    const SimplicialMesh fine = refine(mesh, marked);
    check_valid(fine, 2.0);
    // Marked cells that were not green closures are red-refined: every
    // child has half the parent diameter.
    for (Index c : marked) {
      if (mesh.green_records()[c].has_value())
        continue;
      int children = 0;
      for (Index k = 0; k < fine.n_cells(); ++k)
        if (fine.origin()[k] == c) {
          ++children;
          CHECK(fine.diameter(k) == doctest::Approx(0.5 * mesh.diameter(c)).epsilon(1e-12));
        }
      CHECK(children == 4);
    }
    // Boundary marks stay on the boundary.
    for (const auto& [key, mark] : fine.boundary_marks())
      CHECK(mark == BoundaryMark::Dirichlet);
    mesh = fine;
  }
}

TEST_CASE("patch index")
{
  const SimplicialMesh mesh = build_uniform(Box::unit(2), 1);
  const PatchIndex patches = patch_index(mesh);
  const auto diag = mesh.find_facet(make_facet_key(0, 3));
  REQUIRE(diag.has_value());
  CHECK(patches.omega_E[*diag].size() == 2);
  // Vertex 1 is the corner (1, 0), touched by one triangle only.
  CHECK(mesh.vertex(1) == Point(1.0, 0.0));
  CHECK(patches.omega_x[1].size() == 1);
  CHECK(patches.omega_x_measure[1] == doctest::Approx(0.5));
}

TEST_CASE("patch index properties on a refined mesh")
{
  const SimplicialMesh base = build_uniform(Box::unit(2), 3);
  const std::vector<Index> marked{0, 5, 11};
  const SimplicialMesh mesh = refine(base, marked);
  const PatchIndex p = patch_index(mesh);
  for (Index b = 0; b < mesh.n_cells(); ++b) {
    const auto& ob = p.omega_B[b];
    const auto& ot = p.omega_tilde_B[b];
    CHECK(std::find(ob.begin(), ob.end(), b) != ob.end());
    CHECK(std::find(ot.begin(), ot.end(), b) != ot.end());
    for (Index c : ob) {
      CHECK(std::find(ot.begin(), ot.end(), c) != ot.end());
      const auto& oc = p.omega_B[c];
      CHECK(std::find(oc.begin(), oc.end(), b) != oc.end());
    }
  }
  for (Index v = 0; v < mesh.n_vertices(); ++v) {
    double sum = 0.0;
    for (Index c : p.omega_x[v])
      sum += mesh.measure(c);
    CHECK(p.omega_x_measure[v] > 0.0);
    CHECK(p.omega_x_measure[v] == doctest::Approx(sum).epsilon(1e-14));
  }
}

TEST_CASE("point location")
{
  const SimplicialMesh mesh = build_uniform(Box::unit(2), 4);
  const PointLocator locator(mesh);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int k = 0; k < 200; ++k) {
    const Point p(u(rng), u(rng));
    const auto hit = locator.locate(p);
    REQUIRE(hit.has_value());
    CHECK((mesh.map_to_physical(hit->cell, hit->bary) - p).norm() < 1e-13);
    CHECK(hit->bary.minCoeff() >= -1e-12);
  }
  CHECK_FALSE(locator.locate(Point(1.5, 0.5)).has_value());
  CHECK_THROWS_AS(locator.locate_or_throw(Point(-0.1, 0.5)), GeometryError);
}

TEST_CASE("mesh dump round trip")
{
  const SimplicialMesh base = build_uniform(Box::unit(2), 2);
  const std::vector<Index> marked{1};
  const SimplicialMesh mesh = refine(base, marked);
  std::stringstream out;
  write_mesh(out, mesh);
  std::string header;
  std::getline(out, header);
  std::istringstream head(header);
  int dim = 0, nv = 0, nc = 0, nb = 0;
  head >> dim >> nv >> nc >> nb;
  CHECK(dim == 2);
  CHECK(nv == mesh.n_vertices());
  CHECK(nc == mesh.n_cells());
  CHECK(nb == static_cast<int>(mesh.boundary_marks().size()));
  out.seekg(0);
  const SimplicialMesh back = read_mesh(out);
  CHECK(back.n_cells() == mesh.n_cells());
  for (Index v = 0; v < mesh.n_vertices(); ++v)
    CHECK(back.vertex(v) == mesh.vertex(v));
  CHECK(back.boundary_marks() == mesh.boundary_marks());

  std::stringstream again;
  write_mesh(again, back);
  std::stringstream first;
  write_mesh(first, mesh);
  CHECK(again.str() == first.str());

  std::istringstream bad("2 3 1 0\n0 0\n1 0\n");
  CHECK_THROWS_AS(read_mesh(bad), FormatError);
}

TEST_CASE("1D mesh dump writes point facets twice")
{
  const SimplicialMesh mesh =
    build_uniform(Box::unit(1), 2, robin_where([](const Point& p) { return p.x() < 0.5; }));
  std::stringstream out;
  write_mesh(out, mesh);
  const std::string text = out.str();
  CHECK(text.find("0 0 GammaR") != std::string::npos);
  CHECK(text.find("2 2 GammaN") != std::string::npos);
  const SimplicialMesh back = read_mesh(out);
  CHECK(back.boundary_marks() == mesh.boundary_marks());
}
