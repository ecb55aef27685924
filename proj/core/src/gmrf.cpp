#include "esdm/gmrf.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <numbers>
#include <ostream>
#include <random>
#include <sstream>

#include "esdm/error.hpp"

namespace esdm {

void BarrierHyper::validate() const {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw InputError("barrier hyper: sigma must be positive");
  if (!(range > 0.0) || !std::isfinite(range)) throw InputError("barrier hyper: range must be positive");
  if (!(barrier_fraction > 0.0 && barrier_fraction < 1.0))
    throw InputError("barrier hyper: barrier_fraction must lie in (0, 1)");
}

void BymHyper::validate() const {
  if (!(tau_u >= 0.0) || !std::isfinite(tau_u)) throw InputError("bym hyper: tau_u must be non-negative");
  if (!(tau_v > 0.0) || !std::isfinite(tau_v)) throw InputError("bym hyper: tau_v must be positive");
}

SparseMatrix structure_matrix(const NeighborGraph& graph) {
  std::vector<Eigen::Triplet<double>> trip;
  const auto deg = graph.degrees();
  for (int i = 0; i < graph.num_vertices; ++i) trip.emplace_back(i, i, deg[i]);
  for (const auto& [a, b] : graph.edges) {
    trip.emplace_back(a, b, -1.0);
    trip.emplace_back(b, a, -1.0);
  }
  SparseMatrix r(graph.num_vertices, graph.num_vertices);
  r.setFromTriplets(trip.begin(), trip.end());
  return r;
}

SparsePrecision bym_precision(const NeighborGraph& graph, const BymHyper& hyper) {
  std::vector<Eigen::Triplet<double>> trip;
  const auto deg = graph.degrees();
  for (int i = 0; i < graph.num_vertices; ++i) trip.emplace_back(i, i, hyper.tau_u * deg[i] + hyper.tau_v);
  for (const auto& [a, b] : graph.edges) {
    trip.emplace_back(a, b, -hyper.tau_u);
    trip.emplace_back(b, a, -hyper.tau_u);
  }
  SparsePrecision q;
  q.matrix.resize(graph.num_vertices, graph.num_vertices);
  q.matrix.setFromTriplets(trip.begin(), trip.end());
  return q;
}

BarrierModel::BarrierModel(const Mesh& mesh) {
  mesh.validate();
  if (mesh.count(Subdomain::water) == 0) throw InputError("barrier model: mesh has no water triangles");
  const auto n = static_cast<Eigen::Index>(mesh.num_vertices());
  c_water_ = Eigen::VectorXd::Zero(n);
  c_land_ = Eigen::VectorXd::Zero(n);
  std::vector<Eigen::Triplet<double>> gw, gl;
  std::vector<bool> touches_land(mesh.num_vertices(), false);
  for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
    const auto& tr = mesh.triangles[t];
    const double area = mesh.triangle_area(t);
    const bool water = mesh.subdomain[t] == Subdomain::water;
    // Edge vectors opposite each vertex.
    Eigen::Vector2d e[3];
    for (int i = 0; i < 3; ++i) {
      const Point& a = mesh.vertices[tr[(i + 1) % 3]];
      const Point& b = mesh.vertices[tr[(i + 2) % 3]];
      e[i] = {b.x - a.x, b.y - a.y};
    }
    for (int i = 0; i < 3; ++i) {
      (water ? c_water_ : c_land_)[tr[i]] += area / 3.0;
      if (!water) touches_land[tr[i]] = true;
      for (int j = 0; j < 3; ++j) (water ? gw : gl).emplace_back(tr[i], tr[j], e[i].dot(e[j]) / (4.0 * area));
    }
  }
  g_water_.resize(n, n);
  g_water_.setFromTriplets(gw.begin(), gw.end());
  g_land_.resize(n, n);
  g_land_.setFromTriplets(gl.begin(), gl.end());

  const auto boundary = mesh.boundary_vertices();
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!boundary[i] && !touches_land[i] && c_water_[i] > 0.0) reference_.push_back(static_cast<int>(i));
  }
  if (reference_.empty()) {
    for (Eigen::Index i = 0; i < n; ++i) {
      if (c_water_[i] > 0.0) reference_.push_back(static_cast<int>(i));
    }
  }
}

SparseMatrix BarrierModel::raw_precision(double range, double fraction) const {
  const double rb = fraction * range;
  const Eigen::VectorXd c = c_water_ + c_land_;
  SparseMatrix op = (range * range / 8.0) * g_water_ + (rb * rb / 8.0) * g_land_;
  for (Eigen::Index i = 0; i < c.size(); ++i) op.coeffRef(i, i) += c[i];
  const Eigen::VectorXd noise = (std::numbers::pi / 2.0) * (range * range * c_water_ + rb * rb * c_land_);
  const Eigen::VectorXd inv = noise.cwiseInverse();
  SparseMatrix scaled = inv.asDiagonal() * op;
  SparseMatrix q = op * scaled;
  // Symmetrize away rounding asymmetry.
  SparseMatrix qt = q.transpose();
  q = 0.5 * (q + qt);
  q.prune(0.0);
  return q;
}

double BarrierModel::median_variance(double range, double fraction) const {
  SparseCholesky chol(raw_precision(range, fraction));
  const Eigen::VectorXd d = chol.inverse_diagonal();
  std::vector<double> v;
  v.reserve(reference_.size());
  for (int i : reference_) v.push_back(d[i]);
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  if (v.size() % 2 == 1) return v[mid];
  const double upper = v[mid];
  std::nth_element(v.begin(), v.begin() + mid - 1, v.end());
  return 0.5 * (v[mid - 1] + upper);
}

SparsePrecision BarrierModel::precision(const BarrierHyper& hyper) const {
  hyper.validate();
  const double med = median_variance(hyper.range, hyper.barrier_fraction);
  SparsePrecision q;
  q.matrix = raw_precision(hyper.range, hyper.barrier_fraction) * (med / (hyper.sigma * hyper.sigma));
  return q;
}

SparsePrecision barrier_precision(const Mesh& mesh, const BarrierHyper& hyper) {
  return BarrierModel(mesh).precision(hyper);
}

double gmrf_logpdf(const Eigen::VectorXd& x, const SparsePrecision& q, const SparseCholesky& chol) {
  if (x.size() != q.dim()) throw InputError("gmrf_logpdf: dimension mismatch");
  const double quad = x.dot(q.matrix * x);
  return -0.5 * static_cast<double>(x.size()) * std::log(2.0 * std::numbers::pi) + 0.5 * chol.log_det() - 0.5 * quad;
}

double gmrf_logpdf(const Eigen::VectorXd& x, const SparsePrecision& q) {
  if (x.size() != q.dim()) throw InputError("gmrf_logpdf: dimension mismatch");
  return gmrf_logpdf(x, q, SparseCholesky(q.matrix));
}

Eigen::MatrixXd gmrf_sample(const SparsePrecision& q, int n, std::uint64_t seed) {
  if (n < 0) throw InputError("gmrf_sample: negative sample count");
  SparseCholesky chol(q.matrix);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Eigen::MatrixXd out(q.dim(), n);
  Eigen::VectorXd z(q.dim());
  for (int s = 0; s < n; ++s) {
    for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = normal(rng);
    out.col(s) = chol.sample_transform(z);
  }
  return out;
}

void write_precision(std::ostream& out, const SparsePrecision& q) {
  out << q.dim() << '\n';
  char buf[96];
  for (Eigen::Index j = 0; j < q.matrix.outerSize(); ++j) {
    std::vector<std::pair<Eigen::Index, double>> col;
    for (SparseMatrix::InnerIterator it(q.matrix, j); it; ++it) {
      if (it.row() <= j) col.emplace_back(it.row(), it.value());
    }
    std::sort(col.begin(), col.end());
    for (const auto& [r, v] : col) {
      std::snprintf(buf, sizeof buf, "%ld %ld %.17g\n", static_cast<long>(r), static_cast<long>(j), v);
      out << buf;
    }
  }
}

SparsePrecision read_precision(std::istream& in) {
  long dim = -1;
  std::string line;
  int lineno = 0;
  std::vector<Eigen::Triplet<double>> trip;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    auto bad = [&](const std::string& what) {
      return InputError("precision line " + std::to_string(lineno) + ": " + what);
    };
    if (dim < 0) {
      if (!(ls >> dim) || dim < 0) throw bad("expected dimension header");
      continue;
    }
    long r = 0, c = 0;
    double v = 0;
    if (!(ls >> r >> c >> v)) throw bad("expected 'row col value'");
    if (r < 0 || c < 0 || r >= dim || c >= dim) throw bad("index out of range");
    if (r > c) throw bad("entry below the diagonal");
    trip.emplace_back(r, c, v);
    if (r != c) trip.emplace_back(c, r, v);
  }
  if (dim < 0) throw InputError("precision: missing dimension header");
  SparsePrecision q;
  q.matrix.resize(dim, dim);
  q.matrix.setFromTriplets(trip.begin(), trip.end());
  return q;
}

}  // namespace esdm
