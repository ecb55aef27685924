#pragma once

#include <cmath>
#include <cstddef>
#include <iosfwd>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace esdm {

struct Point {
  double x = 0.0;
  double y = 0.0;

  bool operator==(const Point&) const = default;
};

inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

inline bool is_missing(double v) { return std::isnan(v); }

// Axis-aligned cell lattice. Row 0 is the northernmost row, matching the
// ESRI ASCII grid value order.
struct RasterGeometry {
  int ncols = 0;
  int nrows = 0;
  double cell_size = 0.0;
  Point origin;  // lower-left corner of the lower-left cell

  std::size_t size() const { return static_cast<std::size_t>(ncols) * nrows; }
  double width() const { return ncols * cell_size; }
  double height() const { return nrows * cell_size; }
  double area() const { return width() * height(); }

  Point cell_center(int row, int col) const {
    return {origin.x + (col + 0.5) * cell_size,
            origin.y + (nrows - row - 0.5) * cell_size};
  }
  Point cell_center(std::size_t index) const {
    return cell_center(static_cast<int>(index / ncols),
                       static_cast<int>(index % ncols));
  }
  std::vector<Point> cell_centers() const;

  // Index of the cell containing p; cells are closed on their west and
  // south sides, and the domain's east and north edges are inclusive.
  std::optional<std::size_t> cell_index(Point p) const;

  bool contains(Point p) const { return cell_index(p).has_value(); }

  void validate() const;

  bool operator==(const RasterGeometry&) const = default;
};

// Real-valued grid; categorical layers store 1..4 as doubles. NaN marks
// missing (NODATA) entries.
struct Raster {
  RasterGeometry geometry;
  std::vector<double> values;

  Raster() = default;
  Raster(RasterGeometry g, double fill);
  Raster(RasterGeometry g, std::vector<double> v);

  double& at(int row, int col) { return values[index(row, col)]; }
  double at(int row, int col) const { return values[index(row, col)]; }
  std::size_t index(int row, int col) const {
    return static_cast<std::size_t>(row) * geometry.ncols + col;
  }
};

// Validates a categorical raster: entries must be 1..4 or missing.
void validate_categorical(const Raster& raster);

// ESRI ASCII grid (ncols, nrows, xllcorner|xllcenter, yllcorner|yllcenter,
// cellsize, optional NODATA_value, then row-major values).
Raster read_ascii_grid(std::istream& in);
Raster read_ascii_grid_file(const std::string& path);
void write_ascii_grid(std::ostream& out, const Raster& raster,
                      double nodata_value = -9999.0);
void write_ascii_grid_file(const std::string& path, const Raster& raster,
                           double nodata_value = -9999.0);

}  // namespace esdm
