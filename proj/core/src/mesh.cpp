#include "esdm/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <unordered_map>

#include "delaunay.hpp"
#include "esdm/error.hpp"

namespace esdm {
namespace {

double dist(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

struct Box {
  double x0, y0, x1, y1;
  bool contains(Point p, double tol = 0.0) const {
    return p.x >= x0 - tol && p.x <= x1 + tol && p.y >= y0 - tol && p.y <= y1 + tol;
  }
};

// Spatial hash for cutoff queries.
class PointGrid {
 public:
  explicit PointGrid(double cell) : cell_(cell) {}

  void add(Point p, int id) { cells_[key(cell_of(p.x), cell_of(p.y))].push_back({p, id}); }

  // Nearest point strictly closer than r, or -1.
  int nearest_within(Point p, double r, double* d_out = nullptr) const {
    const long cx = cell_of(p.x), cy = cell_of(p.y);
    const long span = static_cast<long>(std::ceil(r / cell_));
    int best = -1;
    double best_d = r;
    for (long i = cx - span; i <= cx + span; ++i) {
      for (long j = cy - span; j <= cy + span; ++j) {
        auto it = cells_.find(key(i, j));
        if (it == cells_.end()) continue;
        for (const auto& [q, id] : it->second) {
          const double d = dist(p, q);
          if (d < best_d || (d == best_d && best >= 0 && id < best)) {
            best_d = d;
            best = id;
          }
        }
      }
    }
    if (best >= 0 && d_out) *d_out = best_d;
    return best;
  }

 private:
  long cell_of(double v) const { return static_cast<long>(std::floor(v / cell_)); }
  static long long key(long i, long j) { return (static_cast<long long>(i) << 32) ^ (j & 0xffffffffLL); }

  double cell_;
  std::unordered_map<long long, std::vector<std::pair<Point, int>>> cells_;
};

class Builder {
 public:
  Builder(const Box& outer, double cutoff, double hash_cell)
      : tri_({outer.x0, outer.y0}, {outer.x1, outer.y1}), grid_(hash_cell), cutoff_(cutoff) {}

  detail::Delaunay& tri() { return tri_; }

  // Inserts p unless an existing vertex is closer than cutoff; returns the
  // vertex representing p.
  int add(Point p, std::vector<int>* created = nullptr, double* moved = nullptr) {
    if (cutoff_ > 0.0) {
      double d = 0.0;
      const int near = grid_.nearest_within(p, cutoff_, &d);
      if (near >= 0) {
        if (moved) *moved = d;
        return near;
      }
    }
    const int v = tri_.insert(p, created);
    grid_.add(p, v);
    if (moved) *moved = 0.0;
    return v;
  }

  bool too_close(Point p) const { return cutoff_ > 0.0 && grid_.nearest_within(p, cutoff_) >= 0; }

  // Adds a subdivided polyline edge as constraint sub-segments.
  void add_segment(Point a, Point b, double max_len) {
    const int k = std::max(1, static_cast<int>(std::ceil(dist(a, b) / max_len - 1e-9)));
    int prev = add(a);
    for (int i = 1; i <= k; ++i) {
      const double t = static_cast<double>(i) / k;
      const int v = add({a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)});
      if (v != prev) segments_.push_back({prev, v});
      prev = v;
    }
  }

  // Splits segments missing from the triangulation until all are present
  // or can no longer be split. Returns the number still missing.
  int recover_segments(std::vector<int>* created) {
    for (int pass = 0; pass < 64; ++pass) {
      bool changed = false;
      std::vector<std::array<int, 2>> next;
      for (const auto& s : segments_) {
        if (tri_.has_edge(s[0], s[1]) || !split(s, &next, created)) {
          next.push_back(s);
        } else {
          changed = true;
        }
      }
      segments_.swap(next);
      if (!changed) break;
    }
    int missing = 0;
    for (const auto& s : segments_) missing += !tri_.has_edge(s[0], s[1]);
    return missing;
  }

  // Index of a splittable segment whose diametral circle strictly contains p.
  int encroached(Point p) const {
    for (std::size_t i = 0; i < segments_.size(); ++i) {
      const Point a = tri_.point(segments_[i][0]), b = tri_.point(segments_[i][1]);
      const Point m{0.5 * (a.x + b.x), 0.5 * (a.y + b.y)};
      if (dist(p, m) < 0.5 * dist(a, b) * (1.0 - 1e-12)) return static_cast<int>(i);
    }
    return -1;
  }

  bool split_segment(int index, std::vector<int>* created) {
    std::vector<std::array<int, 2>> parts;
    const auto s = segments_[index];
    if (!split(s, &parts, created)) return false;
    segments_.erase(segments_.begin() + index);
    segments_.insert(segments_.end(), parts.begin(), parts.end());
    return true;
  }

 private:
  bool split(const std::array<int, 2>& s, std::vector<std::array<int, 2>>* out,
             std::vector<int>* created) {
    const Point a = tri_.point(s[0]), b = tri_.point(s[1]);
    const Point m{0.5 * (a.x + b.x), 0.5 * (a.y + b.y)};
    if (too_close(m)) return false;
    const int v = add(m, created);
    out->push_back({s[0], v});
    out->push_back({v, s[1]});
    return true;
  }

  detail::Delaunay tri_;
  PointGrid grid_;
  double cutoff_;
  std::vector<std::array<int, 2>> segments_;
};

void add_box(Builder& b, const Box& box, double max_len) {
  const Point c[4] = {{box.x0, box.y0}, {box.x1, box.y0}, {box.x1, box.y1}, {box.x0, box.y1}};
  for (int i = 0; i < 4; ++i) b.add_segment(c[i], c[(i + 1) % 4], max_len);
}

}  // namespace

double Mesh::triangle_area(std::size_t t) const {
  const Point& a = vertices[triangles[t][0]];
  const Point& b = vertices[triangles[t][1]];
  const Point& c = vertices[triangles[t][2]];
  return 0.5 * ((b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x));
}

Point Mesh::centroid(std::size_t t) const {
  const Point& a = vertices[triangles[t][0]];
  const Point& b = vertices[triangles[t][1]];
  const Point& c = vertices[triangles[t][2]];
  return {(a.x + b.x + c.x) / 3.0, (a.y + b.y + c.y) / 3.0};
}

std::size_t Mesh::count(Subdomain s) const {
  return static_cast<std::size_t>(std::count(subdomain.begin(), subdomain.end(), s));
}

void Mesh::validate() const {
  if (subdomain.size() != triangles.size())
    throw InputError("mesh: subdomain labels do not match triangle count");
  const int n = static_cast<int>(vertices.size());
  std::map<std::pair<int, int>, int> directed;
  for (std::size_t t = 0; t < triangles.size(); ++t) {
    for (int v : triangles[t]) {
      if (v < 0 || v >= n) throw InputError("mesh: triangle " + std::to_string(t) + " has invalid vertex index");
    }
    if (!(triangle_area(t) > 0.0))
      throw InputError("mesh: triangle " + std::to_string(t) + " is degenerate or clockwise");
    for (int i = 0; i < 3; ++i) {
      const int a = triangles[t][i], b = triangles[t][(i + 1) % 3];
      if (++directed[{a, b}] > 1)
        throw InputError("mesh: edge (" + std::to_string(a) + "," + std::to_string(b) + ") is not conforming");
    }
  }
}

std::vector<bool> Mesh::boundary_vertices() const {
  std::map<std::pair<int, int>, int> uses;
  for (const Triangle& t : triangles) {
    for (int i = 0; i < 3; ++i) {
      const int a = t[i], b = t[(i + 1) % 3];
      ++uses[{std::min(a, b), std::max(a, b)}];
    }
  }
  std::vector<bool> out(vertices.size(), false);
  for (const auto& [e, k] : uses) {
    if (k == 1) out[e.first] = out[e.second] = true;
  }
  return out;
}

void label_subdomains(Mesh& mesh, std::span<const Polygon> barriers) {
  mesh.subdomain.assign(mesh.triangles.size(), Subdomain::water);
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    if (point_in_any(mesh.centroid(t), barriers)) mesh.subdomain[t] = Subdomain::land;
  }
}

MeshBuild build_mesh(const RasterGeometry& domain, std::span<const Polygon> barriers,
                     const MeshParams& p, std::span<const Point> forced_points) {
  domain.validate();
  if (!(domain.area() > 0.0)) throw InputError("build_mesh: domain has zero area");
  if (!(p.max_edge_inner > 0.0) || !(p.max_edge_outer > 0.0))
    throw InputError("build_mesh: max edge lengths must be positive");
  if (p.max_edge_inner > p.max_edge_outer)
    throw InputError("build_mesh: max_edge_inner must not exceed max_edge_outer");
  if (!(p.cutoff >= 0.0) || p.cutoff >= p.max_edge_inner)
    throw InputError("build_mesh: cutoff must lie in [0, max_edge_inner)");
  if (p.offset_inner < 0.0 || p.offset_outer < 0.0)
    throw InputError("build_mesh: offsets must be non-negative");

  const Box dom{domain.origin.x, domain.origin.y, domain.origin.x + domain.width(),
                domain.origin.y + domain.height()};
  const double oi = p.offset_inner;
  const double oo = std::max(p.offset_inner, p.offset_outer);
  const Box inner{dom.x0 - oi, dom.y0 - oi, dom.x1 + oi, dom.y1 + oi};
  const Box outer{dom.x0 - oo, dom.y0 - oo, dom.x1 + oo, dom.y1 + oo};

  const double tol = 1e-9 * std::max(domain.width(), domain.height());
  for (const Point& f : forced_points) {
    if (!outer.contains(f, tol)) throw InputError("build_mesh: forced point outside the extended domain");
  }

  // Zero cutoff still merges coincident points.
  const double merge = std::max(p.cutoff, tol);
  Builder b(outer, merge, p.cutoff > 0.0 ? p.cutoff : p.max_edge_inner);
  MeshBuild result;

  // Corners go in first so the hull is exactly the outer box.
  const Point corners[4] = {{outer.x0, outer.y0}, {outer.x1, outer.y0}, {outer.x1, outer.y1}, {outer.x0, outer.y1}};
  for (const Point& c : corners) b.add(c);
  for (const Point& f : forced_points) {
    double moved = 0.0;
    result.forced_vertices.push_back(b.add(f, nullptr, &moved));
    result.forced_displacement.push_back(moved);
  }
  add_box(b, outer, p.max_edge_outer);
  if (oo > oi) add_box(b, inner, p.max_edge_inner);
  for (const Polygon& poly : barriers) {
    for (std::size_t i = 0; i < poly.size(); ++i) {
      const Point a = poly[i], c = poly[(i + 1) % poly.size()];
      if (outer.contains(a, tol) && outer.contains(c, tol)) b.add_segment(a, c, p.max_edge_inner);
    }
  }

  detail::Delaunay& tri = b.tri();
  b.recover_segments(nullptr);

  std::deque<int> work;
  for (int t = 0; t < tri.triangle_slots(); ++t) work.push_back(t);
  const double lim_in = p.max_edge_inner * (1.0 + 1e-9);
  const double lim_out = p.max_edge_outer * (1.0 + 1e-9);
  std::vector<int> created;
  while (!work.empty()) {
    const int t = work.front();
    work.pop_front();
    if (t >= tri.triangle_slots() || !tri.alive(t) || tri.touches_super(t)) continue;
    const auto v = tri.tri(t);
    const Point q[3] = {tri.point(v[0]), tri.point(v[1]), tri.point(v[2])};
    int longest = 0;
    double len = 0.0;
    for (int i = 0; i < 3; ++i) {
      const double l = dist(q[i], q[(i + 1) % 3]);
      if (l > len) {
        len = l;
        longest = i;
      }
    }
    const Point cen{(q[0].x + q[1].x + q[2].x) / 3.0, (q[0].y + q[1].y + q[2].y) / 3.0};
    if (len <= (inner.contains(cen) ? lim_in : lim_out)) continue;

    Point cand = tri.circumcenter(t);
    const Point mid{0.5 * (q[longest].x + q[(longest + 1) % 3].x),
                    0.5 * (q[longest].y + q[(longest + 1) % 3].y)};
    if (!outer.contains(cand) || b.too_close(cand)) cand = mid;

    created.clear();
    const int enc = b.encroached(cand);
    if (enc >= 0) {
      if (b.split_segment(enc, &created)) {
        work.insert(work.end(), created.begin(), created.end());
        work.push_back(t);
      }
      continue;
    }
    if (b.too_close(cand)) continue;
    b.add(cand, &created);
    work.insert(work.end(), created.begin(), created.end());
  }
  result.unrecovered_segments = b.recover_segments(nullptr);

  // Renumber without super-triangle vertices.
  Mesh& mesh = result.mesh;
  const int nv = tri.num_vertices();
  for (int v = detail::Delaunay::kSuper; v < nv; ++v) mesh.vertices.push_back(tri.point(v));
  for (const auto& t : tri.triangles()) {
    mesh.triangles.push_back({t[0] - detail::Delaunay::kSuper, t[1] - detail::Delaunay::kSuper,
                              t[2] - detail::Delaunay::kSuper});
  }
  for (int& f : result.forced_vertices) f -= detail::Delaunay::kSuper;
  label_subdomains(mesh, barriers);
  mesh.validate();
  return result;
}

Mesh build_uniform_mesh(const RasterGeometry& domain, double edge) {
  domain.validate();
  if (!(edge > 0.0)) throw InputError("build_uniform_mesh: edge must be positive");
  if (edge >= std::min(domain.width(), domain.height()))
    throw InputError("build_uniform_mesh: edge must be smaller than the domain extent");
  const int nx = static_cast<int>(std::ceil(domain.width() / edge - 1e-9));
  const int ny = static_cast<int>(std::ceil(domain.height() / edge - 1e-9));
  const double hx = domain.width() / nx, hy = domain.height() / ny;
  Mesh mesh;
  for (int j = 0; j <= ny; ++j) {
    for (int i = 0; i <= nx; ++i) mesh.vertices.push_back({domain.origin.x + i * hx, domain.origin.y + j * hy});
  }
  auto id = [nx](int i, int j) { return j * (nx + 1) + i; };
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      mesh.triangles.push_back({id(i, j), id(i + 1, j), id(i + 1, j + 1)});
      mesh.triangles.push_back({id(i, j), id(i + 1, j + 1), id(i, j + 1)});
    }
  }
  mesh.subdomain.assign(mesh.triangles.size(), Subdomain::water);
  return mesh;
}

std::vector<std::vector<int>> NeighborGraph::neighbor_lists() const {
  std::vector<std::vector<int>> out(num_vertices);
  for (const auto& [a, b] : edges) {
    out[a].push_back(b);
    out[b].push_back(a);
  }
  for (auto& l : out) std::sort(l.begin(), l.end());
  return out;
}

std::vector<int> NeighborGraph::degrees() const {
  std::vector<int> d(num_vertices, 0);
  for (const auto& [a, b] : edges) {
    ++d[a];
    ++d[b];
  }
  return d;
}

NeighborGraph adjacency(const Mesh& mesh) {
  NeighborGraph g;
  g.num_vertices = static_cast<int>(mesh.num_vertices());
  for (const Triangle& t : mesh.triangles) {
    for (int i = 0; i < 3; ++i) {
      const int a = t[i], b = t[(i + 1) % 3];
      if (a != b) g.edges.emplace_back(std::min(a, b), std::max(a, b));
    }
  }
  std::sort(g.edges.begin(), g.edges.end());
  g.edges.erase(std::unique(g.edges.begin(), g.edges.end()), g.edges.end());
  return g;
}

void write_mesh(std::ostream& out, const Mesh& mesh) {
  char buf[96];
  out << "VERTICES\n";
  for (const Point& v : mesh.vertices) {
    std::snprintf(buf, sizeof buf, "%.17g %.17g\n", v.x, v.y);
    out << buf;
  }
  out << "TRIANGLES\n";
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    const auto& tr = mesh.triangles[t];
    out << tr[0] << ' ' << tr[1] << ' ' << tr[2] << ' '
        << (mesh.subdomain[t] == Subdomain::land ? "land" : "water") << '\n';
  }
}

void write_mesh_file(const std::string& path, const Mesh& mesh) {
  std::ofstream out(path);
  if (!out) throw InputError(path + ": cannot open for writing");
  write_mesh(out, mesh);
  if (!out) throw InputError(path + ": write failed");
}

Mesh read_mesh(std::istream& in) {
  Mesh mesh;
  enum { none, verts, tris } section = none;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    std::string head;
    ls >> head;
    if (head == "VERTICES") {
      section = verts;
      continue;
    }
    if (head == "TRIANGLES") {
      section = tris;
      continue;
    }
    std::istringstream row(line);
    auto fail = [&]() { return InputError("mesh line " + std::to_string(lineno) + ": malformed entry"); };
    if (section == verts) {
      Point p;
      if (!(row >> p.x >> p.y)) throw fail();
      mesh.vertices.push_back(p);
    } else if (section == tris) {
      Triangle t;
      std::string label;
      if (!(row >> t[0] >> t[1] >> t[2] >> label)) throw fail();
      Subdomain s;
      if (label == "water" || label == "0") {
        s = Subdomain::water;
      } else if (label == "land" || label == "1") {
        s = Subdomain::land;
      } else {
        throw InputError("mesh line " + std::to_string(lineno) + ": unknown label '" + label + "'");
      }
      mesh.triangles.push_back(t);
      mesh.subdomain.push_back(s);
    } else {
      throw InputError("mesh line " + std::to_string(lineno) + ": data before section header");
    }
  }
  mesh.validate();
  return mesh;
}

Mesh read_mesh_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError(path + ": cannot open mesh file");
  try {
    return read_mesh(in);
  } catch (const InputError& e) {
    throw InputError(path + ": " + e.what());
  }
}

}  // namespace esdm
