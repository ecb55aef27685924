#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "esdm/error.hpp"
#include "esdm/evaluation.hpp"

using namespace esdm;

namespace {

// E|Y - y| - ½ E|Y - Y'| for Y, Y' iid Bernoulli(p), by enumeration.
double crps_enumerated(double p, int y) {
  const double pr[2] = {1 - p, p};
  double first = 0.0, second = 0.0;
  for (int a = 0; a < 2; ++a) {
    first += pr[a] * std::abs(a - y);
    for (int b = 0; b < 2; ++b) second += pr[a] * pr[b] * std::abs(a - b);
  }
  return first - 0.5 * second;
}

}  // namespace

TEST(Lpd, Examples) {
  const std::vector<double> ones(5, 1.0);
  EXPECT_EQ(lpd(ones), 0.0);
  const std::vector<double> c{std::exp(-1.0), std::exp(-3.0)};
  EXPECT_NEAR(lpd(c), -2.0, 1e-15);
}

TEST(Lpd, MatchesDirectSummationAndIsPermutationInvariant) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(1e-6, 1.0);
  std::vector<double> c(337);
  for (auto& v : c) v = u(rng);
  long double sum = 0.0L;
  for (double v : c) sum += std::log(static_cast<long double>(v));
  EXPECT_NEAR(lpd(c), static_cast<double>(sum / c.size()), 1e-12);
  std::vector<double> d = c;
  std::shuffle(d.begin(), d.end(), rng);
  EXPECT_NEAR(lpd(d), lpd(c), 1e-12);
}

TEST(Lpd, RejectsNonPositive) {
  const std::vector<double> c{0.5, 0.0};
  EXPECT_THROW(lpd(c), InputError);
  const std::vector<double> empty;
  EXPECT_THROW(lpd(empty), InputError);
}

TEST(Acc, Examples) {
  EXPECT_EQ(acc(std::vector<double>(4, 0.9)), 1.0);
  EXPECT_EQ(acc(std::vector<double>{0.6, 0.4}), 0.5);
  EXPECT_EQ(acc(std::vector<double>{0.5}), 1.0);
  EXPECT_THROW(acc(std::vector<double>{1.5}), InputError);
}

TEST(Bacc, Examples) {
  EXPECT_EQ(bacc(std::vector<double>{0.9, 0.8, 0.7, 0.6}, std::vector<double>{1, 1, 0, 0}), 1.0);
  EXPECT_EQ(bacc(std::vector<double>{0.9, 0.8, 0.2, 0.1}, std::vector<double>{1, 1, 0, 0}), 0.5);
  EXPECT_THROW(bacc(std::vector<double>{0.9, 0.8}, std::vector<double>{1, 1}), InputError);
}

TEST(Bacc, SkewedSetByClassPartition) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> c(200), y(200);
  for (std::size_t i = 0; i < c.size(); ++i) {
    y[i] = u(rng) < 0.15 ? 1.0 : 0.0;
    c[i] = std::clamp(u(rng) + (y[i] > 0 ? -0.1 : 0.2), 0.01, 1.0);
  }
  double pos = 0, pos_ok = 0, neg = 0, neg_ok = 0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    (y[i] > 0 ? pos : neg) += 1;
    if (c[i] >= 0.5) (y[i] > 0 ? pos_ok : neg_ok) += 1;
  }
  const double tpr = pos_ok / pos, tnr = neg_ok / neg;
  EXPECT_NEAR(bacc(c, y), 0.5 * (tpr + tnr), 1e-15);
  const double a = acc(c);
  EXPECT_GE(a, std::min(tpr, tnr) - 1e-15);
  EXPECT_LE(a, std::max(tpr, tnr) + 1e-15);
}

TEST(Crps, ExamplesAndEnumeration) {
  EXPECT_EQ(crps_bernoulli(0.5, 1), 0.25);
  EXPECT_EQ(crps_bernoulli(1.0, 1), 0.0);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int k = 0; k < 1000; ++k) {
    const double p = u(rng);
    const int y = u(rng) < 0.5 ? 0 : 1;
    EXPECT_NEAR(crps_bernoulli(p, y), crps_enumerated(p, y), 1e-12);
    const double cpo = y == 1 ? p : 1 - p;
    EXPECT_EQ(crps_bernoulli(p, y), (1 - cpo) * (1 - cpo));
    EXPECT_DOUBLE_EQ(crps_bernoulli(p, y), crps_bernoulli(1 - p, 1 - y));
  }
}

TEST(Crps, IsProper) {
  for (int i = 0; i <= 20; ++i) {
    const double p = i / 20.0;
    auto expected = [p](double q) { return p * crps_bernoulli(q, 1) + (1 - p) * crps_bernoulli(q, 0); };
    for (int j = 0; j <= 20; ++j) EXPECT_GE(expected(j / 20.0), expected(p) - 1e-15);
  }
}

TEST(ScoreReport, PresenceAndCounts) {
  const std::vector<double> cpo{0.9, 0.3, std::nan(""), 0.6};
  const std::vector<double> y{1, 0, 1, 0};
  std::size_t skipped = 0;
  const ScoreReport r = score_presence(cpo, y, &skipped);
  EXPECT_EQ(skipped, 1u);
  EXPECT_EQ(r.n, 3u);
  EXPECT_NEAR(r.lpd, (std::log(0.9) + std::log(0.3) + std::log(0.6)) / 3, 1e-15);
  ASSERT_TRUE(r.acc && r.bacc && r.crps);
  EXPECT_NEAR(*r.acc, 2.0 / 3, 1e-15);
  EXPECT_NEAR(*r.bacc, 0.5 * (1.0 + 0.5), 1e-15);
  EXPECT_NEAR(*r.crps, (0.01 + 0.49 + 0.16) / 3, 1e-15);

  const std::vector<double> ccpo{0.2, 0.05};
  const std::vector<double> yc{3, 0};
  const ScoreReport c = score_counts(ccpo, yc);
  EXPECT_FALSE(c.acc || c.bacc || c.crps);
  EXPECT_NEAR(c.lpd, 0.5 * (std::log(0.2) + std::log(0.05)), 1e-15);
}

TEST(ScoreReport, AllCorrectGivesUnitAccuracy) {
  const std::vector<double> cpo{0.99, 0.97, 0.95, 0.9};
  const std::vector<double> y{1, 0, 1, 0};
  const ScoreReport r = score_presence(cpo, y);
  EXPECT_EQ(*r.acc, 1.0);
  EXPECT_EQ(*r.bacc, 1.0);
}

TEST(ScoreTable, ColumnOrderAndBlanks) {
  const std::vector<double> cpo{0.9, 0.3, 0.6};
  const std::vector<double> y{1, 0, 0};
  std::ostringstream out;
  write_score_table(out, {"p/a --", "abu --"}, {score_presence(cpo, y), score_counts(cpo, std::vector<double>{1, 2, 0})});
  const std::string s = out.str();
  const auto l = s.find("lpd"), a = s.find("ACC"), b = s.find("bACC"), c = s.find("CRPS");
  EXPECT_LT(l, a);
  EXPECT_LT(a, b);
  EXPECT_LT(b, c);
  std::istringstream in(s);
  std::string header, row1, row2;
  std::getline(in, header);
  std::getline(in, row1);
  std::getline(in, row2);
  EXPECT_EQ(row1.rfind("p/a --", 0), 0u);
  EXPECT_EQ(row2.rfind("abu --", 0), 0u);
  // Count rows carry lpd only.
  std::istringstream r2(row2.substr(6));
  double v;
  int fields = 0;
  while (r2 >> v) ++fields;
  EXPECT_EQ(fields, 1);
}
