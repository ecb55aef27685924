#include "esdm/quadrature.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <numbers>

#include <Eigen/Eigenvalues>

#include "esdm/error.hpp"

namespace esdm {

const GaussHermite& gauss_hermite(int n) {
  if (n < 1) throw InputError("gauss_hermite: need at least one node");
  static std::mutex mu;
  static std::map<int, GaussHermite> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(n, n);
  for (int k = 1; k < n; ++k) jac(k, k - 1) = jac(k - 1, k) = std::sqrt(k / 2.0);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jac);
  GaussHermite rule;
  for (int k = 0; k < n; ++k) {
    rule.nodes.push_back(es.eigenvalues()[k]);
    const double v = es.eigenvectors()(0, k);
    rule.weights.push_back(std::sqrt(std::numbers::pi) * v * v);
  }
  return cache.emplace(n, std::move(rule)).first->second;
}

GaussianExpectation gaussian_expectation(const std::function<double(double)>& f, double mean, double variance,
                                         double rel_tol, int initial_nodes, int max_nodes) {
  if (!(variance >= 0.0)) throw InputError("gaussian_expectation: negative variance");
  GaussianExpectation out;
  if (variance == 0.0) {
    out.value = f(mean);
    out.nodes = 1;
    out.converged = true;
    return out;
  }
  const double s = std::sqrt(2.0 * variance);
  auto eval = [&](int n) {
    const GaussHermite& r = gauss_hermite(n);
    double acc = 0.0;
    for (int k = 0; k < n; ++k) acc += r.weights[k] * f(mean + s * r.nodes[k]);
    return acc / std::sqrt(std::numbers::pi);
  };
  int n = initial_nodes;
  double prev = eval(n);
  while (2 * n <= max_nodes) {
    n *= 2;
    const double cur = eval(n);
    const bool done = std::abs(cur - prev) <= rel_tol * std::abs(cur);
    prev = cur;
    if (done) {
      out.converged = true;
      break;
    }
  }
  out.value = prev;
  out.nodes = n;
  return out;
}

}  // namespace esdm
