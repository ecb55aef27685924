#pragma once

#include <memory>

#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

namespace esdm {

using SparseMatrix = Eigen::SparseMatrix<double>;

struct JitterPolicy {
  // Relative diagonal jitter (times max diagonal) tried after a plain
  // factorization fails, escalated by `factor` up to `max`.
  double initial = 1e-10;
  double max = 1e-6;
  double factor = 10.0;
};

// LLᵀ of a symmetric positive-definite matrix under AMD ordering.
class SparseCholesky {
 public:
  SparseCholesky() = default;
  // Throws NumericalError naming the first non-positive pivot when the
  // matrix is not positive definite even after jitter escalation.
  explicit SparseCholesky(const SparseMatrix& q, const JitterPolicy& policy = {});

  Eigen::Index dim() const { return dim_; }
  double log_det() const { return log_det_; }
  // Absolute jitter added to the diagonal (0 when none was needed).
  double jitter() const { return jitter_; }

  Eigen::VectorXd solve(const Eigen::VectorXd& b) const;
  Eigen::MatrixXd solve(const Eigen::MatrixXd& b) const;

  // x with Cov(x) = Q⁻¹ when z is standard normal.
  Eigen::VectorXd sample_transform(const Eigen::VectorXd& z) const;

  // diag(Q⁻¹) by selected (Takahashi) inversion on the factor pattern.
  Eigen::VectorXd inverse_diagonal() const;

 private:
  using Llt = Eigen::SimplicialLLT<SparseMatrix, Eigen::Lower, Eigen::AMDOrdering<int>>;

  Eigen::Index dim_ = 0;
  double log_det_ = 0.0;
  double jitter_ = 0.0;
  std::shared_ptr<Llt> llt_;
};

}  // namespace esdm
