#pragma once

namespace esdm {

// Penalized-complexity prior for a Matérn-type field: Pr(sigma > sigma_upper)
// = sigma_tail and Pr(range < range_lower) = range_tail.
struct PcPrior {
  double sigma_upper = 1.0;
  double sigma_tail = 0.01;
  double range_lower = 500.0;  // m
  double range_tail = 0.01;

  void validate() const;
  double sigma_rate() const;  // λ_σ
  double range_rate() const;  // λ_r
};

// Shape-rate parameterization.
struct GammaPrior {
  double shape = 2.0;
  double rate = 8.0;

  void validate() const;
};

enum class PriorKind { pc_sigma, pc_range, gamma };

struct PriorSpec {
  PriorKind kind = PriorKind::gamma;
  PcPrior pc;
  GammaPrior gamma;
};

// Exponential with rate λ_σ.
double pc_sigma_logpdf(double sigma, const PcPrior& prior);
// λ_r r⁻² exp(-λ_r / r).
double pc_range_logpdf(double range, const PcPrior& prior);
double gamma_logpdf(double x, const GammaPrior& prior);
double normal_logpdf(double x, double mean, double variance);

// -inf outside the support; *out_of_support is set when given.
double hyperprior_logpdf(double theta, const PriorSpec& spec, bool* out_of_support = nullptr);

}  // namespace esdm
