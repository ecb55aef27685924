#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "esdm/raster.hpp"

namespace esdm {

// Simple polygon given by its vertex ring (closing edge implied).
using Polygon = std::vector<Point>;

// Even-odd rule. Points on the boundary may fall on either side.
bool point_in_polygon(Point p, const Polygon& polygon);

bool point_in_any(Point p, std::span<const Polygon> polygons);

double polygon_area(const Polygon& polygon);  // signed, CCW positive

// Axis-aligned rectangle as a CCW polygon.
Polygon rectangle(double x0, double y0, double x1, double y1);

// One polygon per block of "x y" lines; blocks separated by blank lines.
// Lines starting with '#' are ignored.
std::vector<Polygon> read_polygons(std::istream& in);
std::vector<Polygon> read_polygons_file(const std::string& path);
void write_polygons(std::ostream& out, std::span<const Polygon> polygons);
void write_polygons_file(const std::string& path, std::span<const Polygon> polygons);

}  // namespace esdm
