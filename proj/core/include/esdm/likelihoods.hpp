#pragma once

#include <array>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace esdm {

struct ExpertObsParams {
  double mu_bar = 0.5;
  double s_bar = 2.0;

  void validate() const;
  double a() const { return mu_bar * s_bar; }
  double b() const { return (1.0 - mu_bar) * s_bar; }
};

struct CategoryCutoffs {
  std::array<double, 3> values{0.1, 0.5, 0.9};

  void validate() const;
};

// Binomial stand-in for category likelihoods: category z has probability
// Bin(psi[z-1] | trials[z-1], mu).
struct BinomialApprox {
  std::vector<int> trials;
  std::vector<int> psi;
  std::vector<double> error;  // achieved objective per category

  // Common N across categories, or -1 when they differ.
  int n_trials() const;
  void validate() const;
};

// Value and first two derivatives of a log-likelihood term in its linear
// predictor.
struct LogLikTerm {
  double value = 0.0;
  double d1 = 0.0;
  double d2 = 0.0;
};

double negbin_loglik(int y, double mean, double r);
double bernoulli_loglik(int present, double pi, bool* clamped = nullptr);

// Pr(z | mu_bar, s_bar) for z = 1..4 (four categories at the cutoffs).
double expert_category_prob(const ExpertObsParams& params, int z, const CategoryCutoffs& cutoffs = {});
// Two-category collapse at the middle cutoff: z = 1 below, z = 2 above.
double expert_binary_prob(const ExpertObsParams& params, int z, const CategoryCutoffs& cutoffs = {});

// Per-category grid search minimizing the mean of
// (target_z(μ_i) - Bin(ψ | N, μ_i))² over N = 1..grid_n,
// ψ = 0..min(N, grid_psi), μ_i = i / (mesh_points + 1). Ties go to the
// smaller N, then the smaller ψ.
BinomialApprox fit_binomial_approx(double s_bar, const CategoryCutoffs& cutoffs, int grid_n = 10,
                                   int grid_psi = 10, int mesh_points = 1000);
BinomialApprox fit_binomial_approx_binary(double s_bar, const CategoryCutoffs& cutoffs, int grid_n = 10,
                                          int grid_psi = 10, int mesh_points = 1000);
BinomialApprox fit_binomial_curves(const std::vector<std::function<double(double)>>& targets, int grid_n,
                                   int grid_psi, int mesh_points);

// Objective of one (N, ψ) grid point against a target curve.
double binomial_fit_objective(const std::function<double(double)>& target, int n, int psi, int mesh_points);

double binomial_approx_loglik(double mu_bar, const BinomialApprox& approx, int z);

// Key-value text: "N=3" (when common), then "N.z=" and "psi.z=" lines.
void write_binomial_approx(std::ostream& out, const BinomialApprox& approx);
BinomialApprox read_binomial_approx(std::istream& in);

// Linear-predictor parameterizations used by the model.
// Counts: mean = exposure * exp(eta).
LogLikTerm negbin_term(int y, double eta, double exposure, double r);
// Presence: pi = inv_logit(eta).
LogLikTerm bernoulli_term(int y, double eta);
LogLikTerm gaussian_term(double y, double eta, double variance);
// Expert categories with theta = logit(mu_bar). `binary` selects the
// two-category collapse (z in {1, 2}).
LogLikTerm expert_exact_term(int z, double theta, double s_bar, const CategoryCutoffs& cutoffs, bool binary);
LogLikTerm expert_binomial_term(int z, double theta, const BinomialApprox& approx);

}  // namespace esdm
