#include "esdm/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "esdm/error.hpp"
#include "esdm/raster.hpp"

namespace esdm {

double lpd(std::span<const double> cpo) {
  if (cpo.empty()) throw InputError("lpd: no observations");
  double s = 0.0;
  for (double c : cpo) {
    if (!(c > 0.0)) throw InputError("lpd: CPO values must be positive");
    s += std::log(c);
  }
  return s / static_cast<double>(cpo.size());
}

double acc(std::span<const double> cpo) {
  if (cpo.empty()) throw InputError("acc: no observations");
  std::size_t hit = 0;
  for (double c : cpo) {
    if (!(c > 0.0 && c <= 1.0)) throw InputError("acc: CPO values must lie in (0, 1]; ACC applies to presence models only");
    hit += c >= 0.5;
  }
  return static_cast<double>(hit) / static_cast<double>(cpo.size());
}

double bacc(std::span<const double> cpo, std::span<const double> y) {
  if (cpo.size() != y.size()) throw InputError("bacc: CPO and response lengths differ");
  std::size_t pos = 0, neg = 0, tp = 0, tn = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!(cpo[i] > 0.0 && cpo[i] <= 1.0)) throw InputError("bacc: CPO values must lie in (0, 1]");
    if (y[i] == 1.0) {
      ++pos;
      tp += cpo[i] >= 0.5;
    } else if (y[i] == 0.0) {
      ++neg;
      tn += cpo[i] >= 0.5;
    } else {
      throw InputError("bacc: responses must be 0 or 1");
    }
  }
  if (pos == 0 || neg == 0) throw InputError("bacc: responses contain a single class; balanced accuracy is undefined");
  return 0.5 * (static_cast<double>(tp) / pos + static_cast<double>(tn) / neg);
}

double crps_bernoulli(double pi_hat, int y) {
  if (!(pi_hat >= 0.0 && pi_hat <= 1.0)) throw InputError("crps_bernoulli: probability must lie in [0, 1]");
  if (y != 0 && y != 1) throw InputError("crps_bernoulli: response must be 0 or 1");
  // (1 - CPO)² with CPO the probability of the observed class.
  const double cpo = y == 1 ? pi_hat : 1.0 - pi_hat;
  return (1.0 - cpo) * (1.0 - cpo);
}

void ScoreReport::validate() const {
  if (n < 1) throw InputError("score report: no observations");
  for (const auto& v : {acc, bacc}) {
    if (v && !(*v >= 0.0 && *v <= 1.0)) throw InputError("score report: accuracy outside [0, 1]");
  }
  if (crps && !(*crps >= 0.0 && *crps <= 1.0)) throw InputError("score report: CRPS outside [0, 1]");
}

namespace {

void collect(std::span<const double> cpo, std::span<const double> y, ScoreReport& r, std::size_t* skipped) {
  if (cpo.size() != y.size()) throw InputError("score: CPO and response lengths differ");
  std::size_t skip = 0;
  for (std::size_t i = 0; i < cpo.size(); ++i) {
    if (is_missing(cpo[i]) || is_missing(y[i])) {
      ++skip;
      continue;
    }
    r.cpo.push_back(cpo[i]);
    r.y.push_back(y[i]);
  }
  if (skipped) *skipped = skip;
  r.n = r.cpo.size();
  r.lpd = lpd(r.cpo);
}

}  // namespace

ScoreReport score_presence(std::span<const double> cpo, std::span<const double> y, std::size_t* skipped) {
  ScoreReport r;
  collect(cpo, y, r, skipped);
  r.acc = acc(r.cpo);
  r.bacc = bacc(r.cpo, r.y);
  double s = 0.0;
  for (double c : r.cpo) {
    // CPO is the predictive probability of the observed class.
    const double t = (1.0 - c) * (1.0 - c);
    r.crps_terms.push_back(t);
    s += t;
  }
  r.crps = s / static_cast<double>(r.n);
  r.validate();
  return r;
}

ScoreReport score_counts(std::span<const double> cpo, std::span<const double> y, std::size_t* skipped) {
  ScoreReport r;
  collect(cpo, y, r, skipped);
  r.validate();
  return r;
}

void write_score_table(std::ostream& out, const std::vector<std::string>& labels,
                       const std::vector<ScoreReport>& reports) {
  std::size_t width = 5;
  for (const auto& l : labels) width = std::max(width, l.size());
  char buf[64];
  auto cell = [&](const std::optional<double>& v) {
    if (!v) return std::string(25, ' ');
    std::snprintf(buf, sizeof buf, " %24.17g", *v);
    return std::string(buf);
  };
  out << std::string(width, ' ');
  for (const char* h : {"lpd", "ACC", "bACC", "CRPS"}) {
    std::snprintf(buf, sizeof buf, " %24s", h);
    out << buf;
  }
  out << '\n';
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const std::string label = i < labels.size() ? labels[i] : "";
    out << label << std::string(width - label.size(), ' ') << cell(reports[i].lpd) << cell(reports[i].acc)
        << cell(reports[i].bacc) << cell(reports[i].crps) << '\n';
  }
}

}  // namespace esdm
