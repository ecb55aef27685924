#include "esdm/raster.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "esdm/error.hpp"

namespace esdm {

std::vector<Point> RasterGeometry::cell_centers() const {
  std::vector<Point> out;
  out.reserve(size());
  for (int r = 0; r < nrows; ++r)
    for (int c = 0; c < ncols; ++c) out.push_back(cell_center(r, c));
  return out;
}

std::optional<std::size_t> RasterGeometry::cell_index(Point p) const {
  const double fx = (p.x - origin.x) / cell_size;
  const double fy = (p.y - origin.y) / cell_size;
  if (!(fx >= 0.0 && fy >= 0.0 && fx <= ncols && fy <= nrows)) return std::nullopt;
  const int col = std::min(static_cast<int>(fx), ncols - 1);
  const int row_from_bottom = std::min(static_cast<int>(fy), nrows - 1);
  const int row = nrows - 1 - row_from_bottom;
  return static_cast<std::size_t>(row) * ncols + col;
}

void RasterGeometry::validate() const {
  if (ncols < 1 || nrows < 1)
    throw InputError("raster must have ncols >= 1 and nrows >= 1");
  if (!(cell_size > 0.0) || !std::isfinite(cell_size))
    throw InputError("raster cell size must be positive");
  if (!std::isfinite(origin.x) || !std::isfinite(origin.y))
    throw InputError("raster origin must be finite");
}

Raster::Raster(RasterGeometry g, double fill) : geometry(g), values(g.size(), fill) {
  geometry.validate();
}

Raster::Raster(RasterGeometry g, std::vector<double> v)
    : geometry(g), values(std::move(v)) {
  geometry.validate();
  if (values.size() != geometry.size())
    throw InputError("raster value count does not match its geometry");
}

void validate_categorical(const Raster& raster) {
  for (double v : raster.values) {
    if (is_missing(v)) continue;
    if (v != 1.0 && v != 2.0 && v != 3.0 && v != 4.0)
      throw InputError("categorical raster entries must be 1, 2, 3, 4 or NODATA");
  }
}

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

double parse_number(const std::string& token, const char* what) {
  char* end = nullptr;
  const double v = std::strtod(token.c_str(), &end);
  if (end == token.c_str() || *end != '\0')
    throw InputError(std::string("ASCII grid: cannot parse ") + what + " '" + token + "'");
  return v;
}

}  // namespace

Raster read_ascii_grid(std::istream& in) {
  RasterGeometry g;
  bool center_x = false, center_y = false;
  bool have[5] = {false, false, false, false, false};
  std::optional<double> nodata;
  std::vector<double> values;

  std::string key;
  while (in >> key) {
    const std::string k = lower(key);
    std::string val;
    auto next = [&]() {
      if (!(in >> val)) throw InputError("ASCII grid: header value missing after " + key);
      return val;
    };
    if (k == "ncols") {
      g.ncols = static_cast<int>(parse_number(next(), "ncols"));
      have[0] = true;
    } else if (k == "nrows") {
      g.nrows = static_cast<int>(parse_number(next(), "nrows"));
      have[1] = true;
    } else if (k == "xllcorner" || k == "xllcenter") {
      g.origin.x = parse_number(next(), "xllcorner");
      center_x = (k == "xllcenter");
      have[2] = true;
    } else if (k == "yllcorner" || k == "yllcenter") {
      g.origin.y = parse_number(next(), "yllcorner");
      center_y = (k == "yllcenter");
      have[3] = true;
    } else if (k == "cellsize") {
      g.cell_size = parse_number(next(), "cellsize");
      have[4] = true;
    } else if (k == "nodata_value") {
      nodata = parse_number(next(), "NODATA_value");
    } else {
      // First data token.
      values.push_back(parse_number(key, "grid value"));
      break;
    }
  }
  for (bool h : have)
    if (!h) throw InputError("ASCII grid: incomplete header");
  if (center_x) g.origin.x -= 0.5 * g.cell_size;
  if (center_y) g.origin.y -= 0.5 * g.cell_size;
  g.validate();

  values.reserve(g.size());
  std::string tok;
  while (values.size() < g.size() && in >> tok) values.push_back(parse_number(tok, "grid value"));
  if (values.size() != g.size())
    throw InputError("ASCII grid: expected " + std::to_string(g.size()) + " values, found " +
                     std::to_string(values.size()));
  if (nodata) {
    for (double& v : values)
      if (v == *nodata) v = kMissing;
  }
  return Raster(g, std::move(values));
}

Raster read_ascii_grid_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open raster file " + path);
  try {
    return read_ascii_grid(in);
  } catch (const InputError& e) {
    throw InputError(path + ": " + e.what());
  }
}

void write_ascii_grid(std::ostream& out, const Raster& raster, double nodata_value) {
  const auto& g = raster.geometry;
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  out << "ncols " << g.ncols << '\n'
      << "nrows " << g.nrows << '\n'
      << "xllcorner " << num(g.origin.x) << '\n'
      << "yllcorner " << num(g.origin.y) << '\n'
      << "cellsize " << num(g.cell_size) << '\n'
      << "NODATA_value " << num(nodata_value) << '\n';
  for (int r = 0; r < g.nrows; ++r) {
    for (int c = 0; c < g.ncols; ++c) {
      const double v = raster.at(r, c);
      if (c) out << ' ';
      out << num(is_missing(v) ? nodata_value : v);
    }
    out << '\n';
  }
}

void write_ascii_grid_file(const std::string& path, const Raster& raster, double nodata_value) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write raster file " + path);
  write_ascii_grid(out, raster, nodata_value);
  if (!out) throw InputError("error writing raster file " + path);
}

}  // namespace esdm
