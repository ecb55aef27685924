#include "esdm/polygon.hpp"

#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "esdm/error.hpp"

namespace esdm {

bool point_in_polygon(Point p, const Polygon& polygon) {
  bool inside = false;
  const std::size_t n = polygon.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const Point& a = polygon[i];
    const Point& b = polygon[j];
    if ((a.y > p.y) != (b.y > p.y)) {
      const double x_cross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
      if (p.x < x_cross) inside = !inside;
    }
  }
  return inside;
}

bool point_in_any(Point p, std::span<const Polygon> polygons) {
  for (const auto& poly : polygons)
    if (point_in_polygon(p, poly)) return true;
  return false;
}

double polygon_area(const Polygon& polygon) {
  double twice = 0.0;
  const std::size_t n = polygon.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++)
    twice += polygon[j].x * polygon[i].y - polygon[i].x * polygon[j].y;
  return 0.5 * twice;
}

Polygon rectangle(double x0, double y0, double x1, double y1) {
  return {{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}};
}

std::vector<Polygon> read_polygons(std::istream& in) {
  std::vector<Polygon> out;
  Polygon current;
  std::string line;
  int line_no = 0;
  auto flush = [&]() {
    if (current.empty()) return;
    if (current.size() < 3)
      throw InputError("polygon ending at line " + std::to_string(line_no) +
                       " has fewer than 3 vertices");
    out.push_back(std::move(current));
    current.clear();
  };
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) {
      flush();
      continue;
    }
    if (line[first] == '#') continue;
    std::istringstream ss(line);
    Point p;
    if (!(ss >> p.x >> p.y))
      throw InputError("polygon file line " + std::to_string(line_no) + ": expected 'x y'");
    current.push_back(p);
  }
  flush();
  return out;
}

std::vector<Polygon> read_polygons_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open polygon file " + path);
  return read_polygons(in);
}

void write_polygons(std::ostream& out, std::span<const Polygon> polygons) {
  char buf[96];
  for (std::size_t k = 0; k < polygons.size(); ++k) {
    if (k) out << '\n';
    for (const auto& p : polygons[k]) {
      std::snprintf(buf, sizeof buf, "%.17g %.17g\n", p.x, p.y);
      out << buf;
    }
  }
}

void write_polygons_file(const std::string& path, std::span<const Polygon> polygons) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write polygon file " + path);
  write_polygons(out, polygons);
}

}  // namespace esdm
