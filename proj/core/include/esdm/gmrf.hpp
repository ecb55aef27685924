#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include "esdm/cholesky.hpp"
#include "esdm/mesh.hpp"

namespace esdm {

// Symmetric precision stored with both triangles present.
struct SparsePrecision {
  SparseMatrix matrix;

  Eigen::Index dim() const { return matrix.rows(); }
};

struct BarrierHyper {
  double sigma = 1.0;
  double range = 1000.0;           // m, through water
  double barrier_fraction = 0.2;   // r_b / r

  void validate() const;
};

struct BymHyper {
  double tau_u = 1.0;
  double tau_v = 1.0;

  void validate() const;
};

// τ_u R + τ_v I with R the graph Laplacian of `graph`.
SparsePrecision bym_precision(const NeighborGraph& graph, const BymHyper& hyper);

// Graph Laplacian (degree on the diagonal, -1 per edge).
SparseMatrix structure_matrix(const NeighborGraph& graph);

// Barrier SPDE discretization on a fixed mesh. Finite-element matrices are
// assembled once; precision() rebuilds Q for new hyperparameters.
class BarrierModel {
 public:
  explicit BarrierModel(const Mesh& mesh);

  // Q scaled so the median of diag(Q⁻¹) over water-interior vertices is
  // sigma².
  SparsePrecision precision(const BarrierHyper& hyper) const;

  // Q before marginal-variance normalization, at unit sigma.
  SparseMatrix raw_precision(double range, double barrier_fraction) const;

  // Median of diag(Q⁻¹) over reference vertices for the raw precision.
  double median_variance(double range, double barrier_fraction) const;

  const std::vector<int>& reference_vertices() const { return reference_; }
  Eigen::Index dim() const { return c_water_.size(); }

 private:
  Eigen::VectorXd c_water_, c_land_;  // lumped mass per vertex
  SparseMatrix g_water_, g_land_;     // stiffness per subdomain
  std::vector<int> reference_;
};

SparsePrecision barrier_precision(const Mesh& mesh, const BarrierHyper& hyper);

// log N(x | 0, Q⁻¹).
double gmrf_logpdf(const Eigen::VectorXd& x, const SparsePrecision& q);
double gmrf_logpdf(const Eigen::VectorXd& x, const SparsePrecision& q, const SparseCholesky& chol);

// dim × n matrix of independent draws from N(0, Q⁻¹).
Eigen::MatrixXd gmrf_sample(const SparsePrecision& q, int n, std::uint64_t seed);

// Coordinate text: a "dim" line, then "row col value" for the upper triangle.
void write_precision(std::ostream& out, const SparsePrecision& q);
SparsePrecision read_precision(std::istream& in);

}  // namespace esdm
