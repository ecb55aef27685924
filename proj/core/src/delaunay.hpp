#pragma once

#include <array>
#include <vector>

#include "esdm/raster.hpp"

namespace esdm::detail {

// Incremental Bowyer-Watson triangulation. Coordinates are mapped to the
// unit box [lo, hi] internally; vertices 0..2 belong to an enclosing
// super-triangle.
class Delaunay {
 public:
  static constexpr int kSuper = 3;

  Delaunay(Point lo, Point hi);

  // Inserts p and returns its vertex id. Ids of triangles created by the
  // insertion are appended to *created when non-null.
  int insert(Point p, std::vector<int>* created = nullptr);

  int num_vertices() const { return static_cast<int>(pts_.size()); }
  Point point(int v) const { return orig_[v]; }

  int triangle_slots() const { return static_cast<int>(tris_.size()); }
  bool alive(int t) const { return tris_[t].alive; }
  const std::array<int, 3>& tri(int t) const { return tris_[t].v; }
  bool touches_super(int t) const;

  bool has_edge(int a, int b) const;

  // Triangles (CCW, super-triangle excluded) in slot order.
  std::vector<std::array<int, 3>> triangles() const;

  // Circumcenter of triangle t in original coordinates.
  Point circumcenter(int t) const;

 private:
  struct Tri {
    std::array<int, 3> v;
    std::array<int, 3> nb;  // nb[i] shares the edge opposite v[i]
    bool alive = true;
  };
  struct P {
    double x, y;
  };

  P normalize(Point p) const;
  int locate(P p) const;
  int new_tri(const std::array<int, 3>& v);

  double lo_x_, lo_y_, scale_;
  std::vector<P> pts_;
  std::vector<Point> orig_;
  std::vector<Tri> tris_;
  std::vector<int> free_;
  std::vector<int> vertex_tri_;
  mutable int last_ = 0;
  mutable unsigned walk_seed_ = 0;
};

}  // namespace esdm::detail
