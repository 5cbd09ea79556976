#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace tsfem {

using Index = std::int32_t;

/// Spatial point. One-dimensional meshes use the first component only.
using Point = Eigen::Vector2d;

enum class BoundaryMark : std::uint8_t
{
  Dirichlet = 0,
  GammaR = 1,
  GammaN = 2,
};

std::string_view to_string(BoundaryMark mark);
BoundaryMark parse_boundary_mark(std::string_view token);

/// Sorted vertex pair identifying a facet. Facets of 1D meshes are single
/// vertices and are stored as {v, v}.
using FacetKey = std::array<Index, 2>;

inline FacetKey make_facet_key(Index a, Index b)
{
  return a < b ? FacetKey{a, b} : FacetKey{b, a};
}

/// Axis-aligned interval (dim 1) or rectangle (dim 2).
struct Box
{
  int dim = 2;
  Point lower = Point::Zero();
  Point upper = Point::Ones();

  static Box interval(double a, double b);
  static Box rectangle(double x0, double x1, double y0, double y1);
  static Box unit(int dim);

  double measure() const;
  bool contains(const Point& p, double tol = 1e-12) const;
};

/// Assigns a boundary mark to a boundary facet from its midpoint and outward
/// unit normal.
using MarkerRule =
  std::function<BoundaryMark(const Point& midpoint, const Point& outward_normal)>;

/// Marks every boundary facet Dirichlet (macroscopic domains).
MarkerRule all_dirichlet();

/// Marks facets whose midpoint satisfies `is_robin` as GammaR, all others as
/// GammaN (microscopic cells).
MarkerRule robin_where(std::function<bool(const Point&)> is_robin);

struct Facet
{
  FacetKey vertices{};
  /// Incident cells, lower id first. cells[1] == -1 on the boundary.
  std::array<Index, 2> cells{-1, -1};
  std::optional<BoundaryMark> mark;

  bool on_boundary() const { return cells[1] < 0; }
};

/// Green closure bookkeeping: the cell is one half of a bisected parent.
struct GreenRecord
{
  Index group = -1;
  std::array<Index, 3> parent{};
};

/// Conforming simplicial mesh in 1D (intervals) or 2D (triangles).
///
/// Immutable after construction; refinement produces a new mesh. Triangles
/// are stored counter-clockwise. The i-th local facet of a cell is the one
/// opposite its i-th vertex.
class SimplicialMesh
{
public:
  using Cell = std::array<Index, 3>;

  /// Builds facets and geometry and validates the mesh. Every boundary facet
  /// must receive a mark from `marks`; a boundary facet without a mark is a
  /// hanging edge and is rejected.
  SimplicialMesh(int dim, std::vector<Point> vertices, std::vector<Cell> cells,
                 const std::map<FacetKey, BoundaryMark>& marks);

  int dim() const { return dim_; }
  int vertices_per_cell() const { return dim_ + 1; }

  Index n_vertices() const { return static_cast<Index>(vertices_.size()); }
  Index n_cells() const { return static_cast<Index>(cells_.size()); }
  Index n_facets() const { return static_cast<Index>(facets_.size()); }

  const Point& vertex(Index v) const { return vertices_[v]; }
  const std::vector<Point>& vertices() const { return vertices_; }

  std::span<const Index> cell(Index c) const
  {
    return {cells_[c].data(), static_cast<std::size_t>(dim_ + 1)};
  }
  const Cell& raw_cell(Index c) const { return cells_[c]; }

  /// Facet ids of a cell, ordered like its vertices (facet i opposite vertex i).
  std::span<const Index> cell_facets(Index c) const
  {
    return {cell_facets_[c].data(), static_cast<std::size_t>(dim_ + 1)};
  }

  const Facet& facet(Index f) const { return facets_[f]; }
  const std::vector<Facet>& facets() const { return facets_; }
  std::optional<Index> find_facet(FacetKey key) const;

  double measure(Index c) const { return measures_[c]; }
  double diameter(Index c) const { return diameters_[c]; }
  double max_diameter() const;
  double total_measure() const;
  Point centroid(Index c) const;

  /// Length of a facet in 2D; 1 for the point facets of 1D meshes.
  double facet_measure(Index f) const;

  /// Local length scale attached to a facet: its length in 2D, the mean
  /// diameter of the incident cells in 1D.
  double facet_size(Index f) const;

  /// Unit normal of a facet. Interior facets: points from cells[0] (lower id)
  /// into cells[1]. Boundary facets: outward.
  Point facet_normal(Index f) const;

  Point facet_midpoint(Index f) const;

  /// Constant gradients of the barycentric coordinates of a cell.
  std::array<Point, 3> barycentric_gradients(Index c) const;

  /// Barycentric coordinates of p with respect to cell c.
  Eigen::Vector3d barycentric(Index c, const Point& p) const;

  Point map_to_physical(Index c, const Eigen::Vector3d& bary) const;

  // Refinement bookkeeping ---------------------------------------------------

  const std::vector<std::optional<GreenRecord>>& green_records() const { return green_; }
  const std::map<FacetKey, Index>& midpoints() const { return midpoints_; }

  /// For each cell, the cell of the previous mesh it was carved from
  /// (itself for meshes that were not produced by refinement).
  const std::vector<Index>& origin() const { return origin_; }

  /// Boundary facet marks keyed by vertex pair.
  std::map<FacetKey, BoundaryMark> boundary_marks() const;

private:
  friend SimplicialMesh refine(const SimplicialMesh&, std::span<const Index>);

  void build_topology(const std::map<FacetKey, BoundaryMark>& marks);
  void build_geometry();

  int dim_ = 2;
  std::vector<Point> vertices_;
  std::vector<Cell> cells_;
  std::vector<std::array<Index, 3>> cell_facets_;
  std::vector<Facet> facets_;
  std::map<FacetKey, Index> facet_lookup_;
  std::vector<double> measures_;
  std::vector<double> diameters_;

  std::vector<std::optional<GreenRecord>> green_;
  std::map<FacetKey, Index> midpoints_;
  std::vector<Index> origin_;
  Index next_group_ = 0;
};

/// Uniform mesh of an interval (n cells) or rectangle (n x n squares, each
/// split into two triangles along the lower-left to upper-right diagonal).
SimplicialMesh build_uniform(const Box& domain, int n,
                             const MarkerRule& rule = all_dirichlet());

/// Red refinement of the marked cells with green closure. Marked green cells
/// are first merged back into their parent, which is then red-refined.
SimplicialMesh refine(const SimplicialMesh& mesh, std::span<const Index> marked);

/// Red refinement of every cell.
SimplicialMesh refine_uniform(const SimplicialMesh& mesh);

/// Patch neighbourhoods of cells, facets and vertices.
struct PatchIndex
{
  /// Cells sharing a facet with B, including B.
  std::vector<std::vector<Index>> omega_B;
  /// Cells sharing a vertex with B, including B.
  std::vector<std::vector<Index>> omega_tilde_B;
  /// Cells incident to each facet.
  std::vector<std::vector<Index>> omega_E;
  /// Cells incident to each vertex, and their total measure.
  std::vector<std::vector<Index>> omega_x;
  std::vector<double> omega_x_measure;
};

PatchIndex patch_index(const SimplicialMesh& mesh);

/// Point location through a uniform bucket grid over the cell bounding boxes.
class PointLocator
{
public:
  explicit PointLocator(const SimplicialMesh& mesh);

  struct Hit
  {
    Index cell;
    Eigen::Vector3d bary;
  };

  std::optional<Hit> locate(const Point& p, double tol = 1e-12) const;

  /// Like locate() but throws GeometryError for points outside the mesh.
  Hit locate_or_throw(const Point& p) const;

private:
  const SimplicialMesh* mesh_;
  Point lower_;
  Point cell_size_;
  int nx_ = 1;
  int ny_ = 1;
  std::vector<std::vector<Index>> buckets_;
};

/// Text dump: header `dim nv nc nb`, then nv vertex lines, nc cell lines and
/// nb boundary facet lines `v0 v1 marker` sorted lexicographically. For 1D
/// meshes the boundary point v is written as `v v marker`.
void write_mesh(std::ostream& out, const SimplicialMesh& mesh);
SimplicialMesh read_mesh(std::istream& in);

} // namespace tsfem
