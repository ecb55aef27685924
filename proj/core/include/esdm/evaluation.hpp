#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace esdm {

double lpd(std::span<const double> cpo);
double acc(std::span<const double> cpo);
// (TPR + TNR) / 2; y must contain both classes.
double bacc(std::span<const double> cpo, std::span<const double> y);
// π̂² for y = 0, (1 - π̂)² for y = 1.
double crps_bernoulli(double pi_hat, int y);

struct ScoreReport {
  std::size_t n = 0;
  double lpd = 0.0;
  std::optional<double> acc, bacc, crps;  // presence models only
  std::vector<double> cpo;
  std::vector<double> y;
  std::vector<double> crps_terms;

  void validate() const;
};

// Presence models get all four statistics; count models only lpd. Rows
// with missing CPO are skipped and counted in `skipped`.
ScoreReport score_presence(std::span<const double> cpo, std::span<const double> y, std::size_t* skipped = nullptr);
ScoreReport score_counts(std::span<const double> cpo, std::span<const double> y, std::size_t* skipped = nullptr);

// Column order lpd, ACC, bACC, CRPS; blanks for absent statistics.
void write_score_table(std::ostream& out, const std::vector<std::string>& labels,
                       const std::vector<ScoreReport>& reports);

}  // namespace esdm
