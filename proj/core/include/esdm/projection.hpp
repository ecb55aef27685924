#pragma once

#include <span>
#include <vector>

#include <Eigen/SparseCore>

#include "esdm/mesh.hpp"

namespace esdm {

using ProjectionMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

// Barycentric weights of each point in its containing triangle. Points on
// shared edges go to the lowest-index triangle; the mesh boundary is
// inclusive. Weights below 1e-12 are dropped and the rest renormalized.
ProjectionMatrix projection_matrix(const Mesh& mesh, std::span<const Point> points);

// Transpose of A with every nonzero row rescaled to sum to one.
ProjectionMatrix reverse_projection(const ProjectionMatrix& a);

// Ã·v with row weights renormalized over non-missing entries of v. Rows
// with no non-missing contributor are missing. Categorical mode rounds
// half up.
std::vector<double> project_to_mesh(const ProjectionMatrix& a_tilde, std::span<const double> values,
                                    bool categorical);

// Locates points in a mesh through a uniform bucket grid.
class TriangleLocator {
 public:
  explicit TriangleLocator(const Mesh& mesh);

  // Lowest-index triangle containing p, or -1. On success the barycentric
  // coordinates are written to bary.
  int locate(Point p, double bary[3]) const;

 private:
  const Mesh& mesh_;
  double x0_ = 0, y0_ = 0, cell_ = 1;
  int nx_ = 1, ny_ = 1;
  std::vector<std::vector<int>> buckets_;
};

}  // namespace esdm
