#include "esdm/cholesky.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "esdm/error.hpp"

namespace esdm {
namespace {

// Position, in factorization order, of the first non-positive pivot.
Eigen::Index failing_pivot(const SparseMatrix& q) {
  Eigen::SimplicialLDLT<SparseMatrix, Eigen::Lower, Eigen::AMDOrdering<int>> ldlt(q);
  if (ldlt.info() != Eigen::Success) return 0;
  const Eigen::VectorXd d = ldlt.vectorD();
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    if (!(d[i] > 0.0)) return i;
  }
  return -1;
}

}  // namespace

SparseCholesky::SparseCholesky(const SparseMatrix& q, const JitterPolicy& policy) : dim_(q.rows()) {
  if (q.rows() != q.cols()) throw InputError("cholesky: matrix is not square");
  double max_diag = 0.0;
  for (Eigen::Index i = 0; i < q.rows(); ++i) max_diag = std::max(max_diag, std::abs(q.coeff(i, i)));
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    if (!std::isfinite(q.coeff(i, i))) throw NumericalError("cholesky: non-finite diagonal at index " + std::to_string(i));
  }

  llt_ = std::make_shared<Llt>();
  llt_->analyzePattern(q);
  llt_->factorize(q);
  double rel = policy.initial;
  SparseMatrix eye(q.rows(), q.cols());
  eye.setIdentity();
  while (llt_->info() != Eigen::Success) {
    if (rel > policy.max * (1.0 + 1e-12)) {
      const Eigen::Index k = failing_pivot(q);
      throw NumericalError("cholesky: matrix of dimension " + std::to_string(q.rows()) +
                           " is not positive definite (leading minor " + std::to_string(k + 1) +
                           " in factorization order), jitter up to " + std::to_string(policy.max) +
                           " x max diagonal did not help");
    }
    jitter_ = rel * max_diag;
    llt_->factorize(q + jitter_ * eye);
    rel *= policy.factor;
  }
  const SparseMatrix& l = llt_->matrixL().nestedExpression();
  double ld = 0.0;
  for (Eigen::Index j = 0; j < l.outerSize(); ++j) {
    for (SparseMatrix::InnerIterator it(l, j); it; ++it) {
      if (it.row() == j) {
        ld += std::log(it.value());
        break;
      }
    }
  }
  log_det_ = 2.0 * ld;
  if (!std::isfinite(log_det_)) throw NumericalError("cholesky: non-finite log-determinant");
}

Eigen::VectorXd SparseCholesky::solve(const Eigen::VectorXd& b) const { return llt_->solve(b); }

Eigen::MatrixXd SparseCholesky::solve(const Eigen::MatrixXd& b) const { return llt_->solve(b); }

Eigen::VectorXd SparseCholesky::sample_transform(const Eigen::VectorXd& z) const {
  const Eigen::VectorXd y = llt_->matrixU().solve(z);
  return llt_->permutationPinv() * y;
}

Eigen::VectorXd SparseCholesky::inverse_diagonal() const {
  const SparseMatrix& l = llt_->matrixL().nestedExpression();
  const Eigen::Index n = l.cols();
  // Column-wise sorted copy of the factor pattern; sigma shares it.
  std::vector<std::vector<int>> rows(n);
  std::vector<std::vector<double>> vals(n), sig(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    std::vector<std::pair<int, double>> col;
    for (SparseMatrix::InnerIterator it(l, j); it; ++it) col.emplace_back(static_cast<int>(it.row()), it.value());
    std::sort(col.begin(), col.end());
    for (const auto& [r, v] : col) {
      rows[j].push_back(r);
      vals[j].push_back(v);
    }
    sig[j].assign(col.size(), 0.0);
  }
  auto lookup = [&](int a, int b) -> double {
    const int c = std::min(a, b), r = std::max(a, b);
    const auto& rc = rows[c];
    const auto it = std::lower_bound(rc.begin(), rc.end(), r);
    if (it == rc.end() || *it != r) return 0.0;
    return sig[c][static_cast<std::size_t>(it - rc.begin())];
  };
  for (Eigen::Index ii = n - 1; ii >= 0; --ii) {
    const int i = static_cast<int>(ii);
    const auto& ri = rows[i];
    const auto& vi = vals[i];
    const double lii = vi[0];
    for (std::size_t a = ri.size(); a-- > 1;) {
      const int j = ri[a];
      double s = 0.0;
      for (std::size_t k = 1; k < ri.size(); ++k) s += vi[k] * lookup(ri[k], j);
      sig[i][a] = -s / lii;
    }
    double s = 0.0;
    for (std::size_t k = 1; k < ri.size(); ++k) s += vi[k] * sig[i][k];
    sig[i][0] = 1.0 / (lii * lii) - s / lii;
  }
  Eigen::VectorXd d(n);
  for (Eigen::Index j = 0; j < n; ++j) d[j] = sig[j][0];
  return llt_->permutationPinv() * d;
}

}  // namespace esdm
