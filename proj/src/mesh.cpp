#include "tsfem/mesh.hpp"

#include "tsfem/error.hpp"
#include "tsfem/format.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>
#include <string>

namespace tsfem {

std::string_view to_string(BoundaryMark mark)
{
  switch (mark) {
  case BoundaryMark::Dirichlet: return "Dirichlet";
  case BoundaryMark::GammaR: return "GammaR";
  case BoundaryMark::GammaN: return "GammaN";
  }
  return "?";
}

BoundaryMark parse_boundary_mark(std::string_view token)
{
  if (token == "Dirichlet")
    return BoundaryMark::Dirichlet;
  if (token == "GammaR")
    return BoundaryMark::GammaR;
  if (token == "GammaN")
    return BoundaryMark::GammaN;
  throw FormatError("unknown boundary marker '" + std::string(token) + "'");
}

Box Box::interval(double a, double b)
{
  return Box{1, Point(a, 0.0), Point(b, 0.0)};
}

Box Box::rectangle(double x0, double x1, double y0, double y1)
{
  return Box{2, Point(x0, y0), Point(x1, y1)};
}

Box Box::unit(int dim)
{
  return dim == 1 ? interval(0.0, 1.0) : rectangle(0.0, 1.0, 0.0, 1.0);
}

double Box::measure() const
{
  const Point extent = upper - lower;
  return dim == 1 ? extent.x() : extent.x() * extent.y();
}

bool Box::contains(const Point& p, double tol) const
{
  if (p.x() < lower.x() - tol || p.x() > upper.x() + tol)
    return false;
  if (dim == 1)
    return true;
  return p.y() >= lower.y() - tol && p.y() <= upper.y() + tol;
}

MarkerRule all_dirichlet()
{
  return [](const Point&, const Point&) { return BoundaryMark::Dirichlet; };
}

MarkerRule robin_where(std::function<bool(const Point&)> is_robin)
{
  return [is_robin = std::move(is_robin)](const Point& mid, const Point&) {
    return is_robin(mid) ? BoundaryMark::GammaR : BoundaryMark::GammaN;
  };
}

// SimplicialMesh ---------------------------------------------------------------

SimplicialMesh::SimplicialMesh(int dim, std::vector<Point> vertices, std::vector<Cell> cells,
                               const std::map<FacetKey, BoundaryMark>& marks)
  : dim_(dim), vertices_(std::move(vertices)), cells_(std::move(cells))
{
  if (dim_ != 1 && dim_ != 2)
    throw ValidationError("mesh dimension must be 1 or 2");
  if (cells_.empty())
    throw ValidationError("mesh has no cells");
  const auto nv = static_cast<Index>(vertices_.size());
  for (auto& cell : cells_) {
    if (dim_ == 1)
      cell[2] = -1;
    for (int i = 0; i <= dim_; ++i) {
      if (cell[i] < 0 || cell[i] >= nv)
        throw ValidationError("cell references a vertex out of range");
      for (int j = 0; j < i; ++j)
        if (cell[i] == cell[j])
          throw ValidationError("cell repeats a vertex");
    }
  }
  build_geometry();
  build_topology(marks);
  green_.assign(cells_.size(), std::nullopt);
  origin_.resize(cells_.size());
  std::iota(origin_.begin(), origin_.end(), Index{0});
}

void SimplicialMesh::build_geometry()
{
  measures_.resize(cells_.size());
  diameters_.resize(cells_.size());
  for (std::size_t c = 0; c < cells_.size(); ++c) {
    auto& cell = cells_[c];
    if (dim_ == 1) {
      const double length = std::abs(vertices_[cell[1]].x() - vertices_[cell[0]].x());
      measures_[c] = length;
      diameters_[c] = length;
      if (!(length > 0.0))
        throw ValidationError("cell " + std::to_string(c) + " has zero length");
      continue;
    }
    const Point& a = vertices_[cell[0]];
    const Point& b = vertices_[cell[1]];
    const Point& d = vertices_[cell[2]];
    const Point e1 = b - a;
    const Point e2 = d - a;
    double twice_area = e1.x() * e2.y() - e1.y() * e2.x();
    if (twice_area < 0.0) {
      std::swap(cell[1], cell[2]);
      twice_area = -twice_area;
    }
    const double diam = std::max({(b - a).norm(), (d - b).norm(), (a - d).norm()});
    if (!(twice_area > 1e-12 * diam * diam))
      throw ValidationError("cell " + std::to_string(c) + " is degenerate");
    measures_[c] = 0.5 * twice_area;
    diameters_[c] = diam;
  }
}

void SimplicialMesh::build_topology(const std::map<FacetKey, BoundaryMark>& marks)
{
  cell_facets_.assign(cells_.size(), {-1, -1, -1});
  facets_.clear();
  facet_lookup_.clear();
  for (std::size_t c = 0; c < cells_.size(); ++c) {
    const auto& cell = cells_[c];
    for (int i = 0; i <= dim_; ++i) {
      FacetKey key = dim_ == 1 ? FacetKey{cell[1 - i], cell[1 - i]}
                               : make_facet_key(cell[(i + 1) % 3], cell[(i + 2) % 3]);
      auto [it, inserted] = facet_lookup_.try_emplace(key, static_cast<Index>(facets_.size()));
      if (inserted) {
        Facet facet;
        facet.vertices = key;
        facet.cells[0] = static_cast<Index>(c);
        facets_.push_back(facet);
      } else {
        Facet& facet = facets_[it->second];
        if (facet.cells[1] >= 0)
          throw ValidationError("facet shared by more than two cells");
        facet.cells[1] = static_cast<Index>(c);
      }
      cell_facets_[c][i] = it->second;
    }
  }
  for (auto& facet : facets_) {
    if (!facet.on_boundary())
      continue;
    auto it = marks.find(facet.vertices);
    if (it == marks.end())
      throw ValidationError("boundary facet (" + std::to_string(facet.vertices[0]) + ", " +
                            std::to_string(facet.vertices[1]) +
                            ") carries no mark: hanging node or unmarked boundary");
    facet.mark = it->second;
  }
}

std::optional<Index> SimplicialMesh::find_facet(FacetKey key) const
{
  auto it = facet_lookup_.find(key);
  if (it == facet_lookup_.end())
    return std::nullopt;
  return it->second;
}

double SimplicialMesh::max_diameter() const
{
  return *std::max_element(diameters_.begin(), diameters_.end());
}

double SimplicialMesh::total_measure() const
{
  return std::accumulate(measures_.begin(), measures_.end(), 0.0);
}

Point SimplicialMesh::centroid(Index c) const
{
  Point sum = Point::Zero();
  for (Index v : cell(c))
    sum += vertices_[v];
  return sum / static_cast<double>(dim_ + 1);
}

double SimplicialMesh::facet_measure(Index f) const
{
  if (dim_ == 1)
    return 1.0;
  const auto& key = facets_[f].vertices;
  return (vertices_[key[1]] - vertices_[key[0]]).norm();
}

double SimplicialMesh::facet_size(Index f) const
{
  if (dim_ == 2)
    return facet_measure(f);
  const Facet& facet = facets_[f];
  if (facet.on_boundary())
    return diameters_[facet.cells[0]];
  return 0.5 * (diameters_[facet.cells[0]] + diameters_[facet.cells[1]]);
}

Point SimplicialMesh::facet_midpoint(Index f) const
{
  const auto& key = facets_[f].vertices;
  return 0.5 * (vertices_[key[0]] + vertices_[key[1]]);
}

Point SimplicialMesh::facet_normal(Index f) const
{
  const Facet& facet = facets_[f];
  const Point mid = facet_midpoint(f);
  const Point away = mid - centroid(facet.cells[0]);
  Point n;
  if (dim_ == 1) {
    n = Point(1.0, 0.0);
  } else {
    const Point t = vertices_[facet.vertices[1]] - vertices_[facet.vertices[0]];
    n = Point(t.y(), -t.x()).normalized();
  }
  if (n.dot(away) < 0.0)
    n = -n;
  return n;
}

std::array<Point, 3> SimplicialMesh::barycentric_gradients(Index c) const
{
  const auto& cell = cells_[c];
  std::array<Point, 3> grads{Point::Zero(), Point::Zero(), Point::Zero()};
  if (dim_ == 1) {
    const double dx = vertices_[cell[1]].x() - vertices_[cell[0]].x();
    grads[0] = Point(-1.0 / dx, 0.0);
    grads[1] = Point(1.0 / dx, 0.0);
    return grads;
  }
  Eigen::Matrix2d jac;
  jac.col(0) = vertices_[cell[1]] - vertices_[cell[0]];
  jac.col(1) = vertices_[cell[2]] - vertices_[cell[0]];
  const Eigen::Matrix2d inv = jac.inverse();
  grads[1] = inv.row(0).transpose();
  grads[2] = inv.row(1).transpose();
  grads[0] = -grads[1] - grads[2];
  return grads;
}

Eigen::Vector3d SimplicialMesh::barycentric(Index c, const Point& p) const
{
  const auto& cell = cells_[c];
  if (dim_ == 1) {
    const double x0 = vertices_[cell[0]].x();
    const double x1 = vertices_[cell[1]].x();
    const double s = (p.x() - x0) / (x1 - x0);
    return {1.0 - s, s, 0.0};
  }
  Eigen::Matrix2d jac;
  jac.col(0) = vertices_[cell[1]] - vertices_[cell[0]];
  jac.col(1) = vertices_[cell[2]] - vertices_[cell[0]];
  const Eigen::Vector2d local = jac.inverse() * (p - vertices_[cell[0]]);
  return {1.0 - local.x() - local.y(), local.x(), local.y()};
}

Point SimplicialMesh::map_to_physical(Index c, const Eigen::Vector3d& bary) const
{
  Point p = Point::Zero();
  const auto verts = cell(c);
  for (std::size_t i = 0; i < verts.size(); ++i)
    p += bary[static_cast<Eigen::Index>(i)] * vertices_[verts[i]];
  return p;
}

std::map<FacetKey, BoundaryMark> SimplicialMesh::boundary_marks() const
{
  std::map<FacetKey, BoundaryMark> marks;
  for (const auto& facet : facets_)
    if (facet.on_boundary() && facet.mark)
      marks.emplace(facet.vertices, *facet.mark);
  return marks;
}

// Construction -----------------------------------------------------------------

SimplicialMesh build_uniform(const Box& domain, int n, const MarkerRule& rule)
{
  if (n < 1)
    throw ValidationError("number of subdivisions must be at least 1");
  if (domain.dim != 1 && domain.dim != 2)
    throw ValidationError("domain dimension must be 1 or 2");
  const Point extent = domain.upper - domain.lower;
  const bool degenerate = !(extent.x() > 0.0) || !std::isfinite(extent.x()) ||
                          (domain.dim == 2 && (!(extent.y() > 0.0) || !std::isfinite(extent.y())));
  if (degenerate)
    throw ValidationError("degenerate domain: extents must be positive and finite");

  std::vector<Point> vertices;
  std::vector<SimplicialMesh::Cell> cells;
  std::map<FacetKey, BoundaryMark> marks;

  if (domain.dim == 1) {
    for (int i = 0; i <= n; ++i)
      vertices.emplace_back(domain.lower.x() + extent.x() * i / n, 0.0);
    for (Index i = 0; i < n; ++i)
      cells.push_back({i, i + 1, -1});
    marks[{0, 0}] = rule(vertices.front(), Point(-1.0, 0.0));
    marks[{n, n}] = rule(vertices.back(), Point(1.0, 0.0));
    return SimplicialMesh(1, std::move(vertices), std::move(cells), marks);
  }

  const auto id = [n](int i, int j) { return static_cast<Index>(i + j * (n + 1)); };
  for (int j = 0; j <= n; ++j)
    for (int i = 0; i <= n; ++i)
      vertices.emplace_back(domain.lower.x() + extent.x() * i / n,
                            domain.lower.y() + extent.y() * j / n);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) {
      cells.push_back({id(i, j), id(i + 1, j), id(i + 1, j + 1)});
      cells.push_back({id(i, j), id(i + 1, j + 1), id(i, j + 1)});
    }
  const auto mark = [&](Index a, Index b, const Point& normal) {
    marks[make_facet_key(a, b)] = rule(0.5 * (vertices[a] + vertices[b]), normal);
  };
  for (int i = 0; i < n; ++i) {
    mark(id(i, 0), id(i + 1, 0), Point(0.0, -1.0));
    mark(id(i, n), id(i + 1, n), Point(0.0, 1.0));
    mark(id(0, i), id(0, i + 1), Point(-1.0, 0.0));
    mark(id(n, i), id(n, i + 1), Point(1.0, 0.0));
  }
  return SimplicialMesh(2, std::move(vertices), std::move(cells), marks);
}

// Refinement -------------------------------------------------------------------

namespace {

struct WorkCell
{
  SimplicialMesh::Cell v{};
  std::optional<GreenRecord> green;
  Index origin = -1;
  bool alive = true;
  bool red = false;
};

std::array<FacetKey, 3> triangle_edges(const SimplicialMesh::Cell& v)
{
  return {make_facet_key(v[1], v[2]), make_facet_key(v[2], v[0]), make_facet_key(v[0], v[1])};
}

} // namespace

SimplicialMesh refine(const SimplicialMesh& mesh, std::span<const Index> marked)
{
  for (Index c : marked)
    if (c < 0 || c >= mesh.n_cells())
      throw ValidationError("marked cell id " + std::to_string(c) + " out of range");

  if (marked.empty()) {
    SimplicialMesh copy = mesh;
    std::iota(copy.origin_.begin(), copy.origin_.end(), Index{0});
    return copy;
  }

  std::vector<Point> vertices = mesh.vertices_;
  std::map<FacetKey, Index> midpoints = mesh.midpoints_;
  std::map<Index, FacetKey> midpoint_parent;
  for (const auto& [key, m] : midpoints)
    midpoint_parent.emplace(m, key);

  const auto midpoint = [&](Index a, Index b) {
    const FacetKey key = make_facet_key(a, b);
    auto it = midpoints.find(key);
    if (it != midpoints.end())
      return it->second;
    const auto m = static_cast<Index>(vertices.size());
    vertices.push_back(0.5 * (vertices[a] + vertices[b]));
    midpoints.emplace(key, m);
    midpoint_parent.emplace(m, key);
    return m;
  };

  std::vector<WorkCell> cells(static_cast<std::size_t>(mesh.n_cells()));
  std::map<Index, std::vector<std::size_t>> groups;
  for (Index c = 0; c < mesh.n_cells(); ++c) {
    cells[c].v = mesh.cells_[c];
    cells[c].green = mesh.green_[c];
    cells[c].origin = c;
    if (cells[c].green)
      groups[cells[c].green->group].push_back(static_cast<std::size_t>(c));
  }
  for (Index c : marked)
    cells[c].red = true;

  Index next_group = mesh.next_group_;

  if (mesh.dim_ == 1) {
    const std::size_t n = cells.size();
    for (std::size_t c = 0; c < n; ++c) {
      if (!cells[c].red)
        continue;
      const auto v = cells[c].v;
      const Index m = midpoint(v[0], v[1]);
      cells[c].alive = false;
      cells.push_back({{v[0], m, -1}, std::nullopt, cells[c].origin});
      cells.push_back({{m, v[1], -1}, std::nullopt, cells[c].origin});
    }
  } else {
    std::set<FacetKey> in_use;
    const auto split_edge = [&](const FacetKey& edge) -> std::optional<Index> {
      auto it = midpoints.find(edge);
      if (it == midpoints.end())
        return std::nullopt;
      const Index m = it->second;
      if (in_use.count(make_facet_key(edge[0], m)) || in_use.count(make_facet_key(m, edge[1])))
        return m;
      return std::nullopt;
    };
    const auto split_count = [&](const WorkCell& cell) {
      int k = 0;
      for (const auto& e : triangle_edges(cell.v))
        if (split_edge(e))
          ++k;
      return k;
    };

    bool changed = true;
    while (changed) {
      changed = false;
      // Marked green cells fall back to their parent, which is refined instead.
      for (std::size_t c = 0; c < cells.size(); ++c) {
        if (!cells[c].alive || !cells[c].red || !cells[c].green)
          continue;
        const GreenRecord record = *cells[c].green;
        const Index origin = cells[c].origin;
        for (std::size_t sibling : groups[record.group])
          cells[sibling].alive = false;
        WorkCell parent;
        parent.v = record.parent;
        parent.origin = origin;
        parent.red = true;
        cells.push_back(parent);
      }
      const std::size_t n = cells.size();
      for (std::size_t c = 0; c < n; ++c) {
        if (!cells[c].alive || !cells[c].red)
          continue;
        const auto v = cells[c].v;
        const Index origin = cells[c].origin;
        const Index m01 = midpoint(v[0], v[1]);
        const Index m12 = midpoint(v[1], v[2]);
        const Index m20 = midpoint(v[2], v[0]);
        cells[c].alive = false;
        cells.push_back({{v[0], m01, m20}, std::nullopt, origin});
        cells.push_back({{m01, v[1], m12}, std::nullopt, origin});
        cells.push_back({{m20, m12, v[2]}, std::nullopt, origin});
        cells.push_back({{m01, m12, m20}, std::nullopt, origin});
      }
      in_use.clear();
      for (const auto& cell : cells)
        if (cell.alive)
          for (const auto& e : triangle_edges(cell.v))
            in_use.insert(e);
      for (auto& cell : cells) {
        if (!cell.alive)
          continue;
        const int k = split_count(cell);
        if (k >= 2 || (k >= 1 && cell.green)) {
          cell.red = true;
          changed = true;
        }
      }
    }

    // Green closure: bisect every cell with exactly one split edge.
    const std::size_t n = cells.size();
    for (std::size_t c = 0; c < n; ++c) {
      if (!cells[c].alive)
        continue;
      const auto v = cells[c].v;
      const auto edges = triangle_edges(v);
      for (int i = 0; i < 3; ++i) {
        const auto m = split_edge(edges[i]);
        if (!m)
          continue;
        const Index apex = v[i];
        const Index b = v[(i + 1) % 3];
        const Index d = v[(i + 2) % 3];
        const GreenRecord record{next_group++, v};
        const Index origin = cells[c].origin;
        cells[c].alive = false;
        cells.push_back({{apex, b, *m}, record, origin});
        cells.push_back({{apex, *m, d}, record, origin});
        break;
      }
    }
  }

  // Assemble the refined mesh.
  std::vector<SimplicialMesh::Cell> out_cells;
  std::vector<std::optional<GreenRecord>> out_green;
  std::vector<Index> out_origin;
  for (const auto& cell : cells) {
    if (!cell.alive)
      continue;
    out_cells.push_back(cell.v);
    out_green.push_back(cell.green);
    out_origin.push_back(cell.origin);
  }

  const auto old_marks = mesh.boundary_marks();
  std::map<FacetKey, int> incidence;
  for (const auto& v : out_cells) {
    if (mesh.dim_ == 1) {
      ++incidence[{v[0], v[0]}];
      ++incidence[{v[1], v[1]}];
    } else {
      for (const auto& e : triangle_edges(v))
        ++incidence[e];
    }
  }
  std::function<BoundaryMark(const FacetKey&, int)> inherit = [&](const FacetKey& key, int depth) {
    if (auto it = old_marks.find(key); it != old_marks.end())
      return it->second;
    if (depth < 64) {
      for (int side = 0; side < 2; ++side) {
        auto parent = midpoint_parent.find(key[side]);
        if (parent == midpoint_parent.end())
          continue;
        const Index other = key[1 - side];
        if (parent->second[0] == other || parent->second[1] == other)
          return inherit(parent->second, depth + 1);
      }
    }
    throw GeometryError("refined boundary facet has no ancestor on the boundary");
  };
  std::map<FacetKey, BoundaryMark> marks;
  for (const auto& [key, count] : incidence)
    if (count == 1)
      marks.emplace(key, inherit(key, 0));

  SimplicialMesh result(mesh.dim_, std::move(vertices), std::move(out_cells), marks);
  result.green_ = std::move(out_green);
  result.origin_ = std::move(out_origin);
  result.midpoints_ = std::move(midpoints);
  result.next_group_ = next_group;
  return result;
}

SimplicialMesh refine_uniform(const SimplicialMesh& mesh)
{
  std::vector<Index> all(static_cast<std::size_t>(mesh.n_cells()));
  std::iota(all.begin(), all.end(), Index{0});
  return refine(mesh, all);
}

// Patches ----------------------------------------------------------------------

PatchIndex patch_index(const SimplicialMesh& mesh)
{
  PatchIndex patches;
  const auto nc = static_cast<std::size_t>(mesh.n_cells());
  patches.omega_x.resize(static_cast<std::size_t>(mesh.n_vertices()));
  patches.omega_x_measure.assign(static_cast<std::size_t>(mesh.n_vertices()), 0.0);
  for (Index c = 0; c < mesh.n_cells(); ++c)
    for (Index v : mesh.cell(c)) {
      patches.omega_x[v].push_back(c);
      patches.omega_x_measure[v] += mesh.measure(c);
    }

  patches.omega_E.resize(static_cast<std::size_t>(mesh.n_facets()));
  for (Index f = 0; f < mesh.n_facets(); ++f) {
    const Facet& facet = mesh.facet(f);
    patches.omega_E[f].push_back(facet.cells[0]);
    if (!facet.on_boundary())
      patches.omega_E[f].push_back(facet.cells[1]);
  }

  patches.omega_B.resize(nc);
  patches.omega_tilde_B.resize(nc);
  for (Index c = 0; c < mesh.n_cells(); ++c) {
    auto& edge_patch = patches.omega_B[c];
    edge_patch.push_back(c);
    for (Index f : mesh.cell_facets(c))
      for (Index other : patches.omega_E[f])
        if (other != c)
          edge_patch.push_back(other);
    std::sort(edge_patch.begin(), edge_patch.end());

    auto& vertex_patch = patches.omega_tilde_B[c];
    for (Index v : mesh.cell(c))
      vertex_patch.insert(vertex_patch.end(), patches.omega_x[v].begin(), patches.omega_x[v].end());
    std::sort(vertex_patch.begin(), vertex_patch.end());
    vertex_patch.erase(std::unique(vertex_patch.begin(), vertex_patch.end()), vertex_patch.end());
  }
  return patches;
}

// Point location ---------------------------------------------------------------

PointLocator::PointLocator(const SimplicialMesh& mesh) : mesh_(&mesh)
{
  Point lo = mesh.vertex(0);
  Point hi = lo;
  for (const Point& p : mesh.vertices()) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const int per_axis =
    std::max(1, static_cast<int>(std::sqrt(static_cast<double>(mesh.n_cells()))));
  nx_ = per_axis;
  ny_ = mesh.dim() == 1 ? 1 : per_axis;
  if (mesh.dim() == 1)
    nx_ = std::max(1, static_cast<int>(mesh.n_cells()));
  lower_ = lo;
  Point extent = hi - lo;
  if (extent.y() <= 0.0)
    extent.y() = 1.0;
  cell_size_ = Point(extent.x() / nx_, extent.y() / ny_);
  buckets_.resize(static_cast<std::size_t>(nx_) * ny_);

  const auto clamp_x = [this](double x) {
    return std::clamp(static_cast<int>(std::floor((x - lower_.x()) / cell_size_.x())), 0, nx_ - 1);
  };
  const auto clamp_y = [this](double y) {
    return std::clamp(static_cast<int>(std::floor((y - lower_.y()) / cell_size_.y())), 0, ny_ - 1);
  };
  for (Index c = 0; c < mesh.n_cells(); ++c) {
    Point clo = mesh.vertex(mesh.cell(c)[0]);
    Point chi = clo;
    for (Index v : mesh.cell(c)) {
      clo = clo.cwiseMin(mesh.vertex(v));
      chi = chi.cwiseMax(mesh.vertex(v));
    }
    const double pad = 1e-10 * mesh.diameter(c);
    for (int j = clamp_y(clo.y() - pad); j <= clamp_y(chi.y() + pad); ++j)
      for (int i = clamp_x(clo.x() - pad); i <= clamp_x(chi.x() + pad); ++i)
        buckets_[static_cast<std::size_t>(i + j * nx_)].push_back(c);
  }
}

std::optional<PointLocator::Hit> PointLocator::locate(const Point& p, double tol) const
{
  const int i = std::clamp(static_cast<int>(std::floor((p.x() - lower_.x()) / cell_size_.x())), 0, nx_ - 1);
  const int j = mesh_->dim() == 1
                  ? 0
                  : std::clamp(static_cast<int>(std::floor((p.y() - lower_.y()) / cell_size_.y())), 0, ny_ - 1);
  for (Index c : buckets_[static_cast<std::size_t>(i + j * nx_)]) {
    const Eigen::Vector3d bary = mesh_->barycentric(c, p);
    bool inside = true;
    for (int k = 0; k <= mesh_->dim(); ++k)
      inside = inside && bary[k] >= -tol;
    if (inside)
      return Hit{c, bary};
  }
  return std::nullopt;
}

PointLocator::Hit PointLocator::locate_or_throw(const Point& p) const
{
  if (auto hit = locate(p))
    return *hit;
  std::ostringstream msg;
  msg << "point (" << p.x() << ", " << p.y() << ") lies outside the mesh";
  throw GeometryError(msg.str());
}

// Text dump --------------------------------------------------------------------

void write_mesh(std::ostream& out, const SimplicialMesh& mesh)
{
  const auto marks = mesh.boundary_marks();
  out << mesh.dim() << ' ' << mesh.n_vertices() << ' ' << mesh.n_cells() << ' ' << marks.size()
      << '\n';
  for (const Point& p : mesh.vertices()) {
    out << format_double(p.x());
    if (mesh.dim() == 2)
      out << ' ' << format_double(p.y());
    out << '\n';
  }
  for (Index c = 0; c < mesh.n_cells(); ++c) {
    const auto cell = mesh.cell(c);
    for (std::size_t i = 0; i < cell.size(); ++i)
      out << (i ? " " : "") << cell[i];
    out << '\n';
  }
  for (const auto& [key, mark] : marks)
    out << key[0] << ' ' << key[1] << ' ' << to_string(mark) << '\n';
}

SimplicialMesh read_mesh(std::istream& in)
{
  int dim = 0;
  long nv = 0;
  long nc = 0;
  long nb = 0;
  if (!(in >> dim >> nv >> nc >> nb) || nv < 0 || nc < 0 || nb < 0)
    throw FormatError("malformed mesh header");
  std::vector<Point> vertices(static_cast<std::size_t>(nv), Point::Zero());
  std::string token;
  for (auto& p : vertices) {
    for (int k = 0; k < dim; ++k) {
      if (!(in >> token))
        throw FormatError("truncated vertex section");
      p[k] = parse_double(token);
    }
  }
  std::vector<SimplicialMesh::Cell> cells(static_cast<std::size_t>(nc), {-1, -1, -1});
  for (auto& cell : cells)
    for (int k = 0; k <= dim; ++k)
      if (!(in >> cell[k]))
        throw FormatError("truncated cell section");
  std::map<FacetKey, BoundaryMark> marks;
  for (long b = 0; b < nb; ++b) {
    Index v0 = 0;
    Index v1 = 0;
    if (!(in >> v0 >> v1 >> token))
      throw FormatError("truncated boundary section");
    marks[make_facet_key(v0, v1)] = parse_boundary_mark(token);
  }
  return SimplicialMesh(dim, std::move(vertices), std::move(cells), marks);
}

} // namespace tsfem
