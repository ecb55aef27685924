#include "esdm/projection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "esdm/error.hpp"

namespace esdm {
namespace {

constexpr double kBaryTol = 1e-12;

}  // namespace

TriangleLocator::TriangleLocator(const Mesh& mesh) : mesh_(mesh) {
  if (mesh.triangles.empty()) return;
  double x1 = -std::numeric_limits<double>::infinity(), y1 = x1;
  x0_ = y0_ = std::numeric_limits<double>::infinity();
  for (const Point& v : mesh.vertices) {
    x0_ = std::min(x0_, v.x);
    y0_ = std::min(y0_, v.y);
    x1 = std::max(x1, v.x);
    y1 = std::max(y1, v.y);
  }
  const double w = x1 - x0_, h = y1 - y0_;
  cell_ = std::max(std::sqrt(w * h / static_cast<double>(mesh.num_triangles())), 1e-9 * std::max(w, h));
  nx_ = std::clamp(static_cast<int>(std::ceil(w / cell_)), 1, 4096);
  ny_ = std::clamp(static_cast<int>(std::ceil(h / cell_)), 1, 4096);
  cell_ = std::max(w / nx_, h / ny_);
  buckets_.assign(static_cast<std::size_t>(nx_) * ny_, {});
  const double pad = 1e-9 * cell_;
  auto bucket = [this](double v, double o, int n) {
    return std::clamp(static_cast<int>(std::floor((v - o) / cell_)), 0, n - 1);
  };
  for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
    double bx0 = std::numeric_limits<double>::infinity(), by0 = bx0, bx1 = -bx0, by1 = -bx0;
    for (int v : mesh.triangles[t]) {
      bx0 = std::min(bx0, mesh.vertices[v].x);
      by0 = std::min(by0, mesh.vertices[v].y);
      bx1 = std::max(bx1, mesh.vertices[v].x);
      by1 = std::max(by1, mesh.vertices[v].y);
    }
    const int i0 = bucket(bx0 - pad, x0_, nx_), i1 = bucket(bx1 + pad, x0_, nx_);
    const int j0 = bucket(by0 - pad, y0_, ny_), j1 = bucket(by1 + pad, y0_, ny_);
    for (int j = j0; j <= j1; ++j) {
      for (int i = i0; i <= i1; ++i) buckets_[static_cast<std::size_t>(j) * nx_ + i].push_back(static_cast<int>(t));
    }
  }
}

int TriangleLocator::locate(Point p, double bary[3]) const {
  if (buckets_.empty()) return -1;
  const double pad = 1e-9 * cell_;
  if (p.x < x0_ - pad || p.y < y0_ - pad || p.x > x0_ + nx_ * cell_ + pad || p.y > y0_ + ny_ * cell_ + pad)
    return -1;
  const int i = std::clamp(static_cast<int>(std::floor((p.x - x0_) / cell_)), 0, nx_ - 1);
  const int j = std::clamp(static_cast<int>(std::floor((p.y - y0_) / cell_)), 0, ny_ - 1);
  for (int t : buckets_[static_cast<std::size_t>(j) * nx_ + i]) {
    const auto& tr = mesh_.triangles[t];
    const Point& a = mesh_.vertices[tr[0]];
    const Point& b = mesh_.vertices[tr[1]];
    const Point& c = mesh_.vertices[tr[2]];
    const double det = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
    const double l1 = ((p.x - a.x) * (c.y - a.y) - (p.y - a.y) * (c.x - a.x)) / det;
    const double l2 = ((b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x)) / det;
    const double l0 = 1.0 - l1 - l2;
    if (l0 >= -kBaryTol && l1 >= -kBaryTol && l2 >= -kBaryTol) {
      bary[0] = l0;
      bary[1] = l1;
      bary[2] = l2;
      return t;
    }
  }
  return -1;
}

ProjectionMatrix projection_matrix(const Mesh& mesh, std::span<const Point> points) {
  TriangleLocator loc(mesh);
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(points.size() * 3);
  for (std::size_t i = 0; i < points.size(); ++i) {
    double w[3];
    const int t = loc.locate(points[i], w);
    if (t < 0) continue;
    double sum = 0.0;
    for (double& x : w) {
      if (x <= kBaryTol) x = 0.0;
      sum += x;
    }
    for (int k = 0; k < 3; ++k) {
      if (w[k] > 0.0) trip.emplace_back(static_cast<int>(i), mesh.triangles[t][k], w[k] / sum);
    }
  }
  ProjectionMatrix a(static_cast<Eigen::Index>(points.size()), static_cast<Eigen::Index>(mesh.num_vertices()));
  a.setFromTriplets(trip.begin(), trip.end());
  a.makeCompressed();
  return a;
}

ProjectionMatrix reverse_projection(const ProjectionMatrix& a) {
  ProjectionMatrix at = a.transpose();
  for (Eigen::Index r = 0; r < at.outerSize(); ++r) {
    double sum = 0.0;
    for (ProjectionMatrix::InnerIterator it(at, r); it; ++it) sum += it.value();
    if (sum > 0.0) {
      for (ProjectionMatrix::InnerIterator it(at, r); it; ++it) it.valueRef() /= sum;
    }
  }
  at.makeCompressed();
  return at;
}

std::vector<double> project_to_mesh(const ProjectionMatrix& a_tilde, std::span<const double> values,
                                    bool categorical) {
  if (static_cast<Eigen::Index>(values.size()) != a_tilde.cols())
    throw InputError("project_to_mesh: value count " + std::to_string(values.size()) +
                     " does not match projection columns " + std::to_string(a_tilde.cols()));
  std::vector<double> out(static_cast<std::size_t>(a_tilde.rows()), kMissing);
  for (Eigen::Index r = 0; r < a_tilde.outerSize(); ++r) {
    double wsum = 0.0, acc = 0.0;
    for (ProjectionMatrix::InnerIterator it(a_tilde, r); it; ++it) {
      const double v = values[static_cast<std::size_t>(it.col())];
      if (is_missing(v)) continue;
      wsum += it.value();
      acc += it.value() * v;
    }
    if (wsum <= 0.0) continue;
    const double mean = acc / wsum;
    out[static_cast<std::size_t>(r)] = categorical ? std::clamp(std::floor(mean + 0.5), 1.0, 4.0) : mean;
  }
  return out;
}

}  // namespace esdm
