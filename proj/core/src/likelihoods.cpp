#include "esdm/likelihoods.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <sstream>

#include "esdm/error.hpp"
#include "esdm/special_functions.hpp"

namespace esdm {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// log(Γ(y + r) / Γ(r)).
double log_rising(int y, double r) {
  if (y < 64) {
    double s = 0.0;
    for (int k = 0; k < y; ++k) s += std::log(r + k);
    return s;
  }
  return std::lgamma(y + r) - std::lgamma(r);
}

// log I_x(a, b) and its first two derivatives along ∂a - ∂b, from the
// power series in x.
struct LogTail {
  double log = 0.0, d1 = 0.0, d2 = 0.0;
};

LogTail series_log_ibeta(double a, double b, double x) {
  double t = 1.0, s = 1.0, s1 = 0.0, s2 = 0.0;
  double dn = 0.0, en = 0.0;  // D log t_n and D² log t_n
  for (int n = 0; n < 100000; ++n) {
    const double f = (a + b + n) / (a + 1.0 + n) * x;
    const double inv = 1.0 / (a + 1.0 + n);
    t *= f;
    dn -= inv;
    en += inv * inv;
    s += t;
    s1 += t * dn;
    s2 += t * (dn * dn + en);
    if (t < 1e-17 * s && f < 1.0) break;
  }
  LogTail out;
  const double ls1 = s1 / s;
  out.log = a * std::log(x) + b * std::log1p(-x) - std::lgamma(a + 1.0) - std::lgamma(b) + std::lgamma(a + b) +
            std::log(s);
  out.d1 = logit(x) - digamma(a + 1.0) + digamma(b) + ls1;
  out.d2 = -trigamma(a + 1.0) - trigamma(b) + s2 / s - ls1 * ls1;
  return out;
}

// log(1 - e^L) with derivatives, given L and its derivatives.
LogTail complement(const LogTail& f) {
  const double p = std::exp(f.log);
  const double q = -std::expm1(f.log);
  LogTail g;
  g.log = std::log(q);
  g.d1 = -p * f.d1 / q;
  g.d2 = -p * (f.d2 + f.d1 * f.d1) / q - g.d1 * g.d1;
  return g;
}

// Lower (F) and upper (G) tails at x.
struct Tails {
  LogTail lower, upper;
};

Tails tails(double a, double b, double x) {
  Tails t;
  if (x <= 0.5) {
    t.lower = series_log_ibeta(a, b, x);
    if (t.lower.log <= -std::numbers::ln2) {
      t.upper = complement(t.lower);
      return t;
    }
  }
  LogTail u = series_log_ibeta(b, a, 1.0 - x);
  u.d1 = -u.d1;
  t.upper = u;
  if (x > 0.5 && u.log > -std::numbers::ln2) {
    t.lower = series_log_ibeta(a, b, x);
  } else {
    t.lower = complement(u);
  }
  return t;
}

// log(A - B) with derivatives, where A ≥ B are given in log form.
LogTail log_difference(const LogTail& a, const LogTail* b) {
  if (!b) return a;
  const double rho = std::exp(b->log - a.log);
  if (!(rho < 1.0)) return {kNegInf, 0.0, 0.0};
  LogTail out;
  out.log = a.log + std::log1p(-rho);
  const double p1 = a.d1 - rho * b->d1;
  const double p2 = (a.d2 + a.d1 * a.d1) - rho * (b->d2 + b->d1 * b->d1);
  out.d1 = p1 / (1.0 - rho);
  out.d2 = p2 / (1.0 - rho) - out.d1 * out.d1;
  return out;
}

// Interval [lo, hi] of the subjective probability for category z.
std::pair<double, double> interval(int z, const CategoryCutoffs& c, bool binary) {
  if (binary) {
    if (z == 1) return {0.0, c.values[1]};
    if (z == 2) return {c.values[1], 1.0};
    throw InputError("binary expert category must be 1 or 2, got " + std::to_string(z));
  }
  switch (z) {
    case 1: return {0.0, c.values[0]};
    case 2: return {c.values[0], c.values[1]};
    case 3: return {c.values[1], c.values[2]};
    case 4: return {c.values[2], 1.0};
    default: throw InputError("expert category must be 1..4, got " + std::to_string(z));
  }
}

double interval_prob(double a, double b, double lo, double hi) {
  if (lo <= 0.0) return regularized_incomplete_beta(a, b, hi);
  if (hi >= 1.0) return regularized_incomplete_beta(b, a, 1.0 - lo);
  const double fh = regularized_incomplete_beta(a, b, hi);
  const double gl = regularized_incomplete_beta(b, a, 1.0 - lo);
  if (fh <= gl) return fh - regularized_incomplete_beta(a, b, lo);
  return gl - regularized_incomplete_beta(b, a, 1.0 - hi);
}

double binom_pmf(int k, int n, double mu) {
  return std::exp(log_binomial_coefficient(n, k) + (k > 0 ? k * std::log(mu) : 0.0) +
                  (n - k > 0 ? (n - k) * std::log1p(-mu) : 0.0));
}

}  // namespace

void ExpertObsParams::validate() const {
  if (!(mu_bar > 0.0 && mu_bar < 1.0)) throw InputError("expert params: mu_bar must lie in (0, 1)");
  if (!(s_bar > 0.0) || !std::isfinite(s_bar)) throw InputError("expert params: s_bar must be positive");
}

void CategoryCutoffs::validate() const {
  double prev = 0.0;
  for (double v : values) {
    if (!(v > prev && v < 1.0)) throw InputError("cutoffs must be strictly increasing within (0, 1)");
    prev = v;
  }
}

int BinomialApprox::n_trials() const {
  if (trials.empty()) return -1;
  for (int n : trials) {
    if (n != trials.front()) return -1;
  }
  return trials.front();
}

void BinomialApprox::validate() const {
  if (psi.empty() || trials.size() != psi.size())
    throw InputError("binomial approximation: need one N and one psi per category");
  for (std::size_t i = 0; i < psi.size(); ++i) {
    if (trials[i] < 1) throw InputError("binomial approximation: N must be at least 1");
    if (psi[i] < 0 || psi[i] > trials[i]) throw InputError("binomial approximation: psi outside 0..N");
    if (i > 0 && psi[i] < psi[i - 1]) throw InputError("binomial approximation: psi must be nondecreasing");
  }
}

double negbin_loglik(int y, double mean, double r) {
  if (!(mean > 0.0) || !(r > 0.0)) throw InputError("negbin_loglik: mean and r must be positive");
  if (y < 0) throw InputError("negbin_loglik: count must be non-negative");
  return negbin_term(y, std::log(mean), 1.0, r).value;
}

double bernoulli_loglik(int present, double pi, bool* clamped) {
  if (present != 0 && present != 1) throw InputError("bernoulli_loglik: response must be 0 or 1");
  const double p = std::clamp(pi, 1e-12, 1.0 - 1e-12);
  if (clamped) *clamped = p != pi;
  return present ? std::log(p) : std::log1p(-p);
}

double expert_category_prob(const ExpertObsParams& params, int z, const CategoryCutoffs& cutoffs) {
  params.validate();
  cutoffs.validate();
  const auto [lo, hi] = interval(z, cutoffs, false);
  return interval_prob(params.a(), params.b(), lo, hi);
}

double expert_binary_prob(const ExpertObsParams& params, int z, const CategoryCutoffs& cutoffs) {
  params.validate();
  cutoffs.validate();
  const auto [lo, hi] = interval(z, cutoffs, true);
  return interval_prob(params.a(), params.b(), lo, hi);
}

double binomial_fit_objective(const std::function<double(double)>& target, int n, int psi, int mesh_points) {
  double s = 0.0;
  for (int i = 1; i <= mesh_points; ++i) {
    const double mu = static_cast<double>(i) / (mesh_points + 1);
    const double d = target(mu) - binom_pmf(psi, n, mu);
    s += d * d;
  }
  return s / mesh_points;
}

BinomialApprox fit_binomial_curves(const std::vector<std::function<double(double)>>& targets, int grid_n,
                                   int grid_psi, int mesh_points) {
  if (grid_n < 1 || grid_psi < 0 || targets.empty()) throw InputError("fit_binomial_approx: empty grid");
  if (mesh_points < 100) throw InputError("fit_binomial_approx: mesh_points must be at least 100");
  std::vector<double> mus(mesh_points);
  for (int i = 0; i < mesh_points; ++i) mus[i] = static_cast<double>(i + 1) / (mesh_points + 1);
  BinomialApprox best;
  for (const auto& target : targets) {
    std::vector<double> tab(mesh_points);
    for (int i = 0; i < mesh_points; ++i) tab[i] = target(mus[i]);
    int best_n = -1, best_psi = -1;
    double e_best = std::numeric_limits<double>::infinity();
    for (int n = 1; n <= grid_n; ++n) {
      for (int psi = 0; psi <= std::min(n, grid_psi); ++psi) {
        double s = 0.0;
        for (int i = 0; i < mesh_points; ++i) {
          const double d = tab[i] - binom_pmf(psi, n, mus[i]);
          s += d * d;
        }
        s /= mesh_points;
        if (s < e_best) {
          e_best = s;
          best_n = n;
          best_psi = psi;
        }
      }
    }
    best.trials.push_back(best_n);
    best.psi.push_back(best_psi);
    best.error.push_back(e_best);
  }
  return best;
}

BinomialApprox fit_binomial_approx(double s_bar, const CategoryCutoffs& cutoffs, int grid_n, int grid_psi,
                                   int mesh_points) {
  cutoffs.validate();
  if (!(s_bar > 0.0)) throw InputError("fit_binomial_approx: s_bar must be positive");
  std::vector<std::function<double(double)>> targets;
  for (int z = 1; z <= 4; ++z) {
    targets.push_back([=](double mu) { return expert_category_prob({mu, s_bar}, z, cutoffs); });
  }
  return fit_binomial_curves(targets, grid_n, grid_psi, mesh_points);
}

BinomialApprox fit_binomial_approx_binary(double s_bar, const CategoryCutoffs& cutoffs, int grid_n, int grid_psi,
                                          int mesh_points) {
  cutoffs.validate();
  if (!(s_bar > 0.0)) throw InputError("fit_binomial_approx: s_bar must be positive");
  std::vector<std::function<double(double)>> targets;
  for (int z = 1; z <= 2; ++z) {
    targets.push_back([=](double mu) { return expert_binary_prob({mu, s_bar}, z, cutoffs); });
  }
  return fit_binomial_curves(targets, grid_n, grid_psi, mesh_points);
}

double binomial_approx_loglik(double mu_bar, const BinomialApprox& approx, int z) {
  if (z < 1 || z > static_cast<int>(approx.psi.size()))
    throw InputError("binomial_approx_loglik: category out of range");
  const int n = approx.trials[z - 1], k = approx.psi[z - 1];
  double v = log_binomial_coefficient(n, k);
  if (k > 0) v += k * std::log(mu_bar);
  if (n - k > 0) v += (n - k) * std::log1p(-mu_bar);
  return v;
}

void write_binomial_approx(std::ostream& out, const BinomialApprox& approx) {
  if (approx.n_trials() > 0) out << "N=" << approx.n_trials() << '\n';
  for (std::size_t z = 0; z < approx.psi.size(); ++z) {
    out << "N." << z + 1 << '=' << approx.trials[z] << '\n';
    out << "psi." << z + 1 << '=' << approx.psi[z] << '\n';
  }
}

BinomialApprox read_binomial_approx(std::istream& in) {
  BinomialApprox a;
  int common = -1;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw InputError("binomial approximation: malformed line '" + line + "'");
    const std::string key = line.substr(0, eq);
    const int value = std::stoi(line.substr(eq + 1));
    auto slot = [&](std::vector<int>& v, std::size_t prefix) -> int& {
      const int z = std::stoi(key.substr(prefix));
      if (z < 1 || z > 16) throw InputError("binomial approximation: bad category key '" + key + "'");
      if (static_cast<int>(v.size()) < z) v.resize(z, -1);
      return v[z - 1];
    };
    if (key == "N") {
      common = value;
    } else if (key.rfind("N.", 0) == 0) {
      slot(a.trials, 2) = value;
    } else if (key.rfind("psi.", 0) == 0) {
      slot(a.psi, 4) = value;
    }
  }
  if (a.trials.size() < a.psi.size()) a.trials.resize(a.psi.size(), -1);
  for (int& n : a.trials) {
    if (n < 0) n = common;
  }
  a.validate();
  return a;
}

LogLikTerm negbin_term(int y, double eta, double exposure, double r) {
  const double log_m = std::log(exposure) + eta;
  const double log_rm = log_sum_exp(std::log(r), log_m);
  LogLikTerm t;
  t.value = log_rising(y, r) - std::lgamma(y + 1.0) - r * std::log1p(std::exp(log_m - std::log(r))) + y * (log_m - log_rm);
  const double frac = std::exp(log_m - log_rm);  // m / (r + m)
  t.d1 = y - (y + r) * frac;
  t.d2 = -(y + r) * frac * (1.0 - frac);
  return t;
}

LogLikTerm bernoulli_term(int y, double eta) {
  const double pi = inv_logit(eta);
  LogLikTerm t;
  t.value = y ? log_inv_logit(eta) : log1m_inv_logit(eta);
  t.d1 = y - pi;
  t.d2 = -pi * inv_logit(-eta);
  return t;
}

LogLikTerm gaussian_term(double y, double eta, double variance) {
  const double d = y - eta;
  return {-0.5 * std::log(2.0 * std::numbers::pi * variance) - 0.5 * d * d / variance, d / variance, -1.0 / variance};
}

LogLikTerm expert_exact_term(int z, double theta, double s_bar, const CategoryCutoffs& cutoffs, bool binary) {
  const auto [lo, hi] = interval(z, cutoffs, binary);
  if (!std::isfinite(theta) || std::abs(theta) > 700.0) return {kNegInf, 0.0, 0.0};
  const double mu = inv_logit(theta), nu = inv_logit(-theta);
  const double a = mu * s_bar, b = nu * s_bar;
  LogTail lt;
  if (lo <= 0.0) {
    lt = tails(a, b, hi).lower;
  } else if (hi >= 1.0) {
    lt = tails(a, b, lo).upper;
  } else {
    const Tails th = tails(a, b, hi), tl = tails(a, b, lo);
    // P = F(hi) - F(lo) = G(lo) - G(hi); subtract from the smaller minuend.
    lt = th.lower.log <= tl.upper.log ? log_difference(th.lower, &tl.lower) : log_difference(tl.upper, &th.upper);
  }
  const double kappa = s_bar * mu * nu;
  const double dkappa = kappa * (nu - mu);
  LogLikTerm t;
  t.value = lt.log;
  t.d1 = kappa * lt.d1;
  t.d2 = kappa * kappa * lt.d2 + dkappa * lt.d1;
  return t;
}

LogLikTerm expert_binomial_term(int z, double theta, const BinomialApprox& approx) {
  if (z < 1 || z > static_cast<int>(approx.psi.size()))
    throw InputError("expert_binomial_term: category out of range");
  const int n = approx.trials[z - 1], k = approx.psi[z - 1];
  const double mu = inv_logit(theta);
  LogLikTerm t;
  t.value = log_binomial_coefficient(n, k) + k * log_inv_logit(theta) + (n - k) * log1m_inv_logit(theta);
  t.d1 = k - n * mu;
  t.d2 = -n * mu * inv_logit(-theta);
  return t;
}

}  // namespace esdm
