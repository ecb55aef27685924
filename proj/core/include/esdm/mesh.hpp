#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "esdm/polygon.hpp"
#include "esdm/raster.hpp"

namespace esdm {

enum class Subdomain : std::uint8_t { water = 0, land = 1 };

using Triangle = std::array<int, 3>;

// Conforming triangulation with CCW triangles and a per-triangle
// water/land label.
struct Mesh {
  std::vector<Point> vertices;
  std::vector<Triangle> triangles;
  std::vector<Subdomain> subdomain;

  std::size_t num_vertices() const { return vertices.size(); }
  std::size_t num_triangles() const { return triangles.size(); }

  double triangle_area(std::size_t t) const;
  Point centroid(std::size_t t) const;
  std::size_t count(Subdomain s) const;

  // Throws InputError on out-of-range indices, non-positive areas, or
  // edges used by more than two triangles.
  void validate() const;

  // Vertices lying on an edge used by exactly one triangle.
  std::vector<bool> boundary_vertices() const;
};

struct MeshParams {
  double max_edge_inner = 1500.0;
  double max_edge_outer = 7500.0;
  double cutoff = 200.0;
  double offset_inner = 1500.0;
  double offset_outer = 5000.0;
};

struct MeshBuild {
  Mesh mesh;
  // Vertex index of each forced point, and how far it was moved by
  // cutoff merging.
  std::vector<int> forced_vertices;
  std::vector<double> forced_displacement;
  // Constraint sub-segments that could not be recovered as mesh edges
  // because splitting them would violate the cutoff.
  int unrecovered_segments = 0;
};

// Delaunay refinement over the raster extent grown by the inner and outer
// offsets. Barrier and extension-box edges are inserted as conforming
// constraints; triangles are labeled land when their centroid lies in a
// barrier polygon.
MeshBuild build_mesh(const RasterGeometry& domain, std::span<const Polygon> barriers,
                     const MeshParams& params, std::span<const Point> forced_points = {});

// Square lattice of near-`edge` spacing over the raster extent, each cell
// split along the same diagonal. All triangles water.
Mesh build_uniform_mesh(const RasterGeometry& domain, double edge);

// Relabels every triangle by centroid membership in `barriers`.
void label_subdomains(Mesh& mesh, std::span<const Polygon> barriers);

struct NeighborGraph {
  int num_vertices = 0;
  std::vector<std::pair<int, int>> edges;  // i < j, sorted, unique

  std::vector<std::vector<int>> neighbor_lists() const;
  std::vector<int> degrees() const;
};

NeighborGraph adjacency(const Mesh& mesh);

// Plain-text mesh: a VERTICES section ("x y" per line) followed by a
// TRIANGLES section ("i j k label", label water|land).
void write_mesh(std::ostream& out, const Mesh& mesh);
void write_mesh_file(const std::string& path, const Mesh& mesh);
Mesh read_mesh(std::istream& in);
Mesh read_mesh_file(const std::string& path);

}  // namespace esdm
