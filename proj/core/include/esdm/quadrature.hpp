#pragma once

#include <functional>
#include <vector>

namespace esdm {

struct GaussHermite {
  std::vector<double> nodes;
  std::vector<double> weights;  // for weight function exp(-x²)
};

// n-point rule by Golub-Welsch; cached per n, thread-safe.
const GaussHermite& gauss_hermite(int n);

struct GaussianExpectation {
  double value = 0.0;
  int nodes = 0;
  bool converged = false;
};

// E[f(η)] for η ~ N(mean, variance), doubling the node count from
// `initial_nodes` until the relative change falls below `rel_tol`.
GaussianExpectation gaussian_expectation(const std::function<double(double)>& f, double mean, double variance,
                                         double rel_tol = 1e-8, int initial_nodes = 21, int max_nodes = 336);

}  // namespace esdm
