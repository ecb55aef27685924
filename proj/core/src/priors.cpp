#include "esdm/priors.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "esdm/error.hpp"

namespace esdm {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

bool is_prob(double p) { return p > 0.0 && p < 1.0; }

}  // namespace

void PcPrior::validate() const {
  if (!(sigma_upper > 0.0) || !(range_lower > 0.0)) throw InputError("pc prior: thresholds must be positive");
  if (!is_prob(sigma_tail) || !is_prob(range_tail))
    throw InputError("pc prior: tail probabilities must lie in (0, 1)");
}

double PcPrior::sigma_rate() const { return -std::log(sigma_tail) / sigma_upper; }

double PcPrior::range_rate() const { return -std::log(range_tail) * range_lower; }

void GammaPrior::validate() const {
  if (!(shape > 0.0) || !(rate > 0.0)) throw InputError("gamma prior: shape and rate must be positive");
}

double pc_sigma_logpdf(double sigma, const PcPrior& prior) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) return kNegInf;
  const double lam = prior.sigma_rate();
  return std::log(lam) - lam * sigma;
}

double pc_range_logpdf(double range, const PcPrior& prior) {
  if (!(range > 0.0) || !std::isfinite(range)) return kNegInf;
  const double lam = prior.range_rate();
  return std::log(lam) - 2.0 * std::log(range) - lam / range;
}

double gamma_logpdf(double x, const GammaPrior& prior) {
  if (!(x > 0.0) || !std::isfinite(x)) return kNegInf;
  return prior.shape * std::log(prior.rate) - std::lgamma(prior.shape) + (prior.shape - 1.0) * std::log(x) -
         prior.rate * x;
}

double normal_logpdf(double x, double mean, double variance) {
  const double d = x - mean;
  return -0.5 * std::log(2.0 * std::numbers::pi * variance) - 0.5 * d * d / variance;
}

double hyperprior_logpdf(double theta, const PriorSpec& spec, bool* out_of_support) {
  double v = kNegInf;
  switch (spec.kind) {
    case PriorKind::pc_sigma:
      v = pc_sigma_logpdf(theta, spec.pc);
      break;
    case PriorKind::pc_range:
      v = pc_range_logpdf(theta, spec.pc);
      break;
    case PriorKind::gamma:
      v = gamma_logpdf(theta, spec.gamma);
      break;
  }
  if (out_of_support) *out_of_support = !(v > kNegInf);
  return v;
}

}  // namespace esdm
