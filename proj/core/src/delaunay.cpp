#include "delaunay.hpp"

#include <algorithm>
#include <cmath>

#include "esdm/error.hpp"

namespace esdm::detail {
namespace {

constexpr double kOrientEps = 1e-15;

template <class Q>
double orient(const Q& a, const Q& b, const Q& c) {
  return (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
}

// Positive when d lies inside the circumcircle of CCW (a, b, c).
template <class Q>
double incircle(const Q& a, const Q& b, const Q& c, const Q& d) {
  const double adx = a.x - d.x, ady = a.y - d.y;
  const double bdx = b.x - d.x, bdy = b.y - d.y;
  const double cdx = c.x - d.x, cdy = c.y - d.y;
  const double ad = adx * adx + ady * ady;
  const double bd = bdx * bdx + bdy * bdy;
  const double cd = cdx * cdx + cdy * cdy;
  return adx * (bdy * cd - bd * cdy) - ady * (bdx * cd - bd * cdx) +
         ad * (bdx * cdy - bdy * cdx);
}

}  // namespace

Delaunay::Delaunay(Point lo, Point hi) {
  lo_x_ = lo.x;
  lo_y_ = lo.y;
  scale_ = std::max(hi.x - lo.x, hi.y - lo.y);
  if (!(scale_ > 0.0)) throw InputError("triangulation box has zero extent");
  constexpr double m = 100.0;
  pts_ = {{-m, -m}, {3 * m, -m}, {-m, 3 * m}};
  for (const P& p : pts_) orig_.push_back({lo_x_ + p.x * scale_, lo_y_ + p.y * scale_});
  tris_.push_back({{0, 1, 2}, {-1, -1, -1}, true});
  vertex_tri_ = {0, 0, 0};
}

Delaunay::P Delaunay::normalize(Point p) const {
  return {(p.x - lo_x_) / scale_, (p.y - lo_y_) / scale_};
}

bool Delaunay::touches_super(int t) const {
  const auto& v = tris_[t].v;
  return v[0] < kSuper || v[1] < kSuper || v[2] < kSuper;
}

int Delaunay::locate(P p) const {
  int t = last_;
  if (t < 0 || t >= static_cast<int>(tris_.size()) || !tris_[t].alive) {
    t = 0;
    while (!tris_[t].alive) ++t;
  }
  const int max_steps = 4 * static_cast<int>(tris_.size()) + 16;
  for (int step = 0; step < max_steps; ++step) {
    const Tri& tr = tris_[t];
    const int start = static_cast<int>(walk_seed_++ % 3);
    int next = -1;
    for (int k = 0; k < 3; ++k) {
      const int i = (start + k) % 3;
      const P& a = pts_[tr.v[(i + 1) % 3]];
      const P& b = pts_[tr.v[(i + 2) % 3]];
      if (orient(a, b, p) < -kOrientEps && tr.nb[i] >= 0) {
        next = tr.nb[i];
        break;
      }
    }
    if (next < 0) return t;
    t = next;
  }
  for (int s = 0; s < static_cast<int>(tris_.size()); ++s) {
    if (!tris_[s].alive) continue;
    const Tri& tr = tris_[s];
    bool inside = true;
    for (int i = 0; i < 3 && inside; ++i)
      inside = orient(pts_[tr.v[(i + 1) % 3]], pts_[tr.v[(i + 2) % 3]], p) >= -kOrientEps;
    if (inside) return s;
  }
  throw NumericalError("point location failed in triangulation");
}

int Delaunay::new_tri(const std::array<int, 3>& v) {
  if (!free_.empty()) {
    const int t = free_.back();
    free_.pop_back();
    tris_[t] = {v, {-1, -1, -1}, true};
    return t;
  }
  tris_.push_back({v, {-1, -1, -1}, true});
  return static_cast<int>(tris_.size()) - 1;
}

int Delaunay::insert(Point point, std::vector<int>* created) {
  const P p = normalize(point);
  if (p.x < -1.0 || p.x > 2.0 || p.y < -1.0 || p.y > 2.0)
    throw InputError("point lies outside the triangulation box");
  const int t0 = locate(p);

  std::vector<int> cavity{t0};
  std::vector<char> in_cavity(tris_.size(), 0);
  in_cavity[t0] = 1;
  // Neighbours across edges the point (nearly) lies on join the cavity so
  // no sliver is left behind.
  for (int i = 0; i < 3; ++i) {
    const Tri& tr = tris_[t0];
    const double o = orient(pts_[tr.v[(i + 1) % 3]], pts_[tr.v[(i + 2) % 3]], p);
    if (std::abs(o) <= kOrientEps && tr.nb[i] >= 0 && !in_cavity[tr.nb[i]]) {
      in_cavity[tr.nb[i]] = 1;
      cavity.push_back(tr.nb[i]);
    }
  }
  for (std::size_t k = 0; k < cavity.size(); ++k) {
    const Tri& tr = tris_[cavity[k]];
    for (int i = 0; i < 3; ++i) {
      const int n = tr.nb[i];
      if (n < 0 || in_cavity[n]) continue;
      const Tri& tn = tris_[n];
      if (incircle(pts_[tn.v[0]], pts_[tn.v[1]], pts_[tn.v[2]], p) > 0.0) {
        in_cavity[n] = 1;
        cavity.push_back(n);
      }
    }
  }

  struct Edge {
    int a, b, outside;
  };
  std::vector<Edge> boundary;
  for (;;) {
    boundary.clear();
    bool grown = false;
    for (std::size_t k = 0; k < cavity.size() && !grown; ++k) {
      const Tri& tr = tris_[cavity[k]];
      for (int i = 0; i < 3; ++i) {
        const int n = tr.nb[i];
        if (n >= 0 && in_cavity[n]) continue;
        const int a = tr.v[(i + 1) % 3], b = tr.v[(i + 2) % 3];
        if (orient(pts_[a], pts_[b], p) <= kOrientEps) {
          if (n < 0) throw NumericalError("insertion at triangulation hull");
          in_cavity[n] = 1;
          cavity.push_back(n);
          grown = true;
          break;
        }
        boundary.push_back({a, b, n});
      }
    }
    if (!grown) break;
  }
  if (boundary.size() != cavity.size() + 2)
    throw NumericalError("non-simple insertion cavity in triangulation");

  for (int c : cavity) {
    tris_[c].alive = false;
    free_.push_back(c);
  }

  const int pv = static_cast<int>(pts_.size());
  pts_.push_back(p);
  orig_.push_back(point);
  vertex_tri_.push_back(-1);

  std::vector<int> made(boundary.size());
  for (std::size_t k = 0; k < boundary.size(); ++k) {
    const Edge& e = boundary[k];
    const int t = new_tri({e.a, e.b, pv});
    made[k] = t;
    tris_[t].nb[2] = e.outside;
    if (e.outside >= 0) {
      Tri& o = tris_[e.outside];
      for (int i = 0; i < 3; ++i) {
        if (o.v[(i + 1) % 3] == e.b && o.v[(i + 2) % 3] == e.a) o.nb[i] = t;
      }
    }
    vertex_tri_[e.a] = t;
    vertex_tri_[e.b] = t;
  }
  // Fan linking: triangle (a,b,p) meets the one starting at b across edge
  // (b,p) and the one ending at a across edge (p,a).
  for (std::size_t k = 0; k < boundary.size(); ++k) {
    for (std::size_t m = 0; m < boundary.size(); ++m) {
      if (boundary[m].a == boundary[k].b) tris_[made[k]].nb[0] = made[m];
      if (boundary[m].b == boundary[k].a) tris_[made[k]].nb[1] = made[m];
    }
  }
  vertex_tri_[pv] = made[0];
  last_ = made[0];
  if (created) created->insert(created->end(), made.begin(), made.end());
  return pv;
}

bool Delaunay::has_edge(int a, int b) const {
  const int start = vertex_tri_[a];
  if (start < 0) return false;
  // Rotate around a in both directions; hull edges stop a direction.
  for (int dir = 0; dir < 2; ++dir) {
    int t = start;
    for (int guard = 0; guard < 4096 && t >= 0; ++guard) {
      const Tri& tr = tris_[t];
      int i = 0;
      while (tr.v[i] != a) ++i;
      if (tr.v[(i + 1) % 3] == b || tr.v[(i + 2) % 3] == b) return true;
      t = dir == 0 ? tr.nb[(i + 2) % 3] : tr.nb[(i + 1) % 3];
      if (t == start) return false;
    }
  }
  return false;
}

std::vector<std::array<int, 3>> Delaunay::triangles() const {
  std::vector<std::array<int, 3>> out;
  for (int t = 0; t < static_cast<int>(tris_.size()); ++t) {
    if (tris_[t].alive && !touches_super(t)) out.push_back(tris_[t].v);
  }
  return out;
}

Point Delaunay::circumcenter(int t) const {
  const P& a = pts_[tris_[t].v[0]];
  const P& b = pts_[tris_[t].v[1]];
  const P& c = pts_[tris_[t].v[2]];
  const double bx = b.x - a.x, by = b.y - a.y;
  const double cx = c.x - a.x, cy = c.y - a.y;
  const double d = 2.0 * (bx * cy - by * cx);
  const double b2 = bx * bx + by * by, c2 = cx * cx + cy * cy;
  const double ux = (cy * b2 - by * c2) / d;
  const double uy = (bx * c2 - cx * b2) / d;
  return {lo_x_ + (a.x + ux) * scale_, lo_y_ + (a.y + uy) * scale_};
}

}  // namespace esdm::detail
