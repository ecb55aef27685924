#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <gtest/gtest.h>

#include "esdm/cholesky.hpp"
#include "esdm/error.hpp"
#include "esdm/gmrf.hpp"
#include "esdm/priors.hpp"
#include "fixtures.hpp"

using namespace esdm;
using esdm::testing::dense;

namespace {

NeighborGraph path_graph(int n) {
  NeighborGraph g;
  g.num_vertices = n;
  for (int i = 0; i + 1 < n; ++i) g.edges.push_back({i, i + 1});
  return g;
}

SparseMatrix random_spd(int n, std::mt19937_64& rng, double density = 0.2) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> p(0.0, 1.0);
  Eigen::MatrixXd b = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) {
      if (i == j || p(rng) < density) b(i, j) = u(rng);
    }
  }
  Eigen::MatrixXd a = b * b.transpose() + 0.5 * Eigen::MatrixXd::Identity(n, n);
  return a.sparseView();
}

double sample_corr(const Eigen::MatrixXd& s, int a, int b) {
  const Eigen::VectorXd x = s.row(a).transpose(), y = s.row(b).transpose();
  const double mx = x.mean(), my = y.mean();
  const double sxy = ((x.array() - mx) * (y.array() - my)).sum();
  return sxy / std::sqrt((x.array() - mx).square().sum() * (y.array() - my).square().sum());
}

}  // namespace

TEST(Cholesky, MatchesDenseOracle) {
  std::mt19937_64 rng(11);
  for (int rep = 0; rep < 20; ++rep) {
    const int n = 5 + static_cast<int>(rng() % 40);
    const SparseMatrix q = random_spd(n, rng);
    const Eigen::MatrixXd d = dense(q);
    const SparseCholesky c(q);
    EXPECT_EQ(c.jitter(), 0.0);
    Eigen::LLT<Eigen::MatrixXd> llt(d);
    const Eigen::MatrixXd l = llt.matrixL();
    EXPECT_NEAR(c.log_det(), 2.0 * l.diagonal().array().log().sum(), 1e-9);
    const Eigen::VectorXd b = Eigen::VectorXd::Random(n);
    EXPECT_LT((c.solve(b) - llt.solve(b)).norm(), 1e-9 * (1.0 + llt.solve(b).norm()));
    const Eigen::VectorXd inv_diag = d.inverse().diagonal();
    EXPECT_LT((c.inverse_diagonal() - inv_diag).lpNorm<Eigen::Infinity>(), 1e-9 * inv_diag.lpNorm<Eigen::Infinity>());
  }
}

TEST(Cholesky, SampleTransformHasPrecisionCovariance) {
  std::mt19937_64 rng(3);
  const SparseMatrix q = random_spd(6, rng, 0.5);
  const SparseCholesky c(q);
  // x = T z with Cov = T Tᵀ; recover T column by column.
  Eigen::MatrixXd t(6, 6);
  for (int k = 0; k < 6; ++k) t.col(k) = c.sample_transform(Eigen::VectorXd::Unit(6, k));
  EXPECT_LT((t * t.transpose() - dense(q).inverse()).norm(), 1e-10);
}

TEST(Cholesky, JitterRescuesSemidefiniteAndRejectsIndefinite) {
  Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(3, 3);
  const SparseMatrix r = ones.sparseView();  // rank one, exact zero pivots
  const SparseCholesky c(r);
  EXPECT_GT(c.jitter(), 0.0);
  EXPECT_LE(c.jitter(), 1e-6 * (1 + 1e-12));
  SparseMatrix bad = structure_matrix(path_graph(4));
  bad.coeffRef(2, 2) = -1.0;
  try {
    SparseCholesky fail(bad);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("leading minor"), std::string::npos);
  }
}

TEST(Bym, PathGraphStructure) {
  const Eigen::MatrixXd r = dense(structure_matrix(path_graph(3)));
  Eigen::MatrixXd want(3, 3);
  want << 1, -1, 0, -1, 2, -1, 0, -1, 1;
  EXPECT_EQ(r, want);
}

TEST(Bym, IdentityAndTwoVertexCases) {
  const Mesh m = build_uniform_mesh(RasterGeometry{3, 3, 1.0, {0, 0}}, 1.0);
  const Eigen::MatrixXd q = dense(bym_precision(adjacency(m), BymHyper{0.0, 2.0}).matrix);
  EXPECT_EQ(q, 2.0 * Eigen::MatrixXd::Identity(q.rows(), q.cols()));
  const Eigen::MatrixXd q2 = dense(bym_precision(path_graph(2), BymHyper{2.0, 1.0}).matrix);
  Eigen::MatrixXd want(2, 2);
  want << 3, -2, -2, 3;
  EXPECT_EQ(q2, want);
}

TEST(Bym, RowSumsEqualTauV) {
  const Mesh m = build_uniform_mesh(RasterGeometry{5, 4, 1.0, {0, 0}}, 0.8);
  const Eigen::MatrixXd q = dense(bym_precision(adjacency(m), BymHyper{3.5, 0.7}).matrix);
  for (Eigen::Index i = 0; i < q.rows(); ++i) EXPECT_NEAR(q.row(i).sum(), 0.7, 1e-12);
}

TEST(GmrfLogpdf, ClosedFormExamples) {
  SparsePrecision eye{SparseMatrix(2, 2)};
  eye.matrix.setIdentity();
  EXPECT_NEAR(gmrf_logpdf(Eigen::Vector2d(0, 0), eye), -std::log(2 * M_PI), 1e-14);
  EXPECT_NEAR(gmrf_logpdf(Eigen::Vector2d(1, 0), eye), -std::log(2 * M_PI) - 0.5, 1e-14);
}

TEST(GmrfLogpdf, MatchesDenseOracle) {
  std::mt19937_64 rng(5);
  const SparsePrecision q = bym_precision(path_graph(5), BymHyper{1.7, 0.4});
  for (int rep = 0; rep < 10; ++rep) {
    std::normal_distribution<double> z;
    Eigen::VectorXd x(5);
    for (auto& v : x) v = z(rng);
    EXPECT_NEAR(gmrf_logpdf(x, q), esdm::testing::dense_gaussian_logpdf(x, dense(q.matrix)), 1e-10);
  }
}

TEST(GmrfSample, DiagonalVarianceAndDeterminism) {
  SparsePrecision q{SparseMatrix(3, 3)};
  q.matrix.setIdentity();
  q.matrix *= 4.0;
  const Eigen::MatrixXd s = gmrf_sample(q, 100000, 42);
  for (int i = 0; i < 3; ++i) {
    const double m = s.row(i).mean();
    EXPECT_NEAR((s.row(i).array() - m).square().mean(), 0.25, 0.01);
  }
  EXPECT_EQ(gmrf_sample(q, 50, 7), gmrf_sample(q, 50, 7));
  EXPECT_NE(gmrf_sample(q, 50, 7), gmrf_sample(q, 50, 8));
}

TEST(GmrfSample, TwoByTwoCovariance) {
  SparsePrecision q{SparseMatrix(2, 2)};
  q.matrix.insert(0, 0) = 2;
  q.matrix.insert(1, 1) = 2;
  q.matrix.insert(0, 1) = -1;
  q.matrix.insert(1, 0) = -1;
  const Eigen::MatrixXd s = gmrf_sample(q, 100000, 1);
  const Eigen::MatrixXd cov = s * s.transpose() / 100000.0;
  Eigen::Matrix2d want;
  want << 2.0 / 3, 1.0 / 3, 1.0 / 3, 2.0 / 3;
  EXPECT_LT((cov - want).cwiseAbs().maxCoeff(), 0.02);
}

TEST(Precision, TextRoundTrip) {
  const SparsePrecision q = bym_precision(path_graph(4), BymHyper{1.0 / 3.0, 0.1});
  std::stringstream s;
  write_precision(s, q);
  const SparsePrecision back = read_precision(s);
  EXPECT_EQ(dense(back.matrix), dense(q.matrix));
}

class BarrierTest : public ::testing::Test {
 protected:
  static Mesh square(bool strip) {
    const RasterGeometry g{20, 20, 100.0, {0, 0}};
    std::vector<Polygon> bars;
    if (strip) bars.push_back(rectangle(900, -5000, 1100, 5000));
    return build_mesh(g, bars, MeshParams{100.0, 400.0, 20.0, 400.0, 1000.0}).mesh;
  }
};

TEST_F(BarrierTest, SymmetricAndNormalized) {
  const Mesh m = square(true);
  const BarrierModel model(m);
  const BarrierHyper h{1.3, 600.0, 0.2};
  const SparseMatrix q = model.precision(h).matrix;
  const Eigen::MatrixXd d = dense(q);
  EXPECT_LT((d - d.transpose()).cwiseAbs().maxCoeff(), 1e-12 * d.cwiseAbs().maxCoeff());
  const SparseCholesky c(q);
  EXPECT_EQ(c.jitter(), 0.0);
  Eigen::VectorXd var = c.inverse_diagonal();
  std::vector<double> ref;
  for (int v : model.reference_vertices()) ref.push_back(var[v]);
  std::sort(ref.begin(), ref.end());
  const std::size_t k = ref.size() / 2;
  const double med = ref.size() % 2 ? ref[k] : 0.5 * (ref[k - 1] + ref[k]);
  EXPECT_NEAR(med, 1.69, 1e-9);
}

TEST_F(BarrierTest, SigmaScalesSampleSd) {
  const Mesh m = square(false);
  const BarrierModel model(m);
  const Eigen::MatrixXd a = gmrf_sample(model.precision({1.0, 600.0, 0.2}), 10000, 1);
  const Eigen::MatrixXd b = gmrf_sample(model.precision({2.0, 600.0, 0.2}), 10000, 2);
  const int v = model.reference_vertices()[model.reference_vertices().size() / 2];
  auto sd = [](const Eigen::VectorXd& x) { return std::sqrt((x.array() - x.mean()).square().mean()); };
  EXPECT_NEAR(sd(b.row(v)) / sd(a.row(v)), 2.0, 0.1);
}

TEST_F(BarrierTest, CorrelationAtRangeNearMaternValue) {
  const RasterGeometry g{30, 30, 100.0, {0, 0}};
  const Mesh m = build_mesh(g, {}, MeshParams{80.0, 400.0, 20.0, 1000.0, 2000.0}).mesh;
  const BarrierModel model(m);
  const double r = 800.0;
  const Eigen::MatrixXd s = gmrf_sample(model.precision({1.0, r, 0.2}), 10000, 9);
  // Vertex pairs near the domain center separated by about r.
  std::vector<double> corr;
  for (std::size_t a = 0; a < m.num_vertices() && corr.size() < 40; ++a) {
    const Point p = m.vertices[a];
    if (std::hypot(p.x - 1500, p.y - 1500) > 500) continue;
    for (std::size_t b = a + 1; b < m.num_vertices(); ++b) {
      const double d = std::hypot(m.vertices[b].x - p.x, m.vertices[b].y - p.y);
      if (std::abs(d - r) < 30.0) {
        corr.push_back(sample_corr(s, static_cast<int>(a), static_cast<int>(b)));
        break;
      }
    }
  }
  ASSERT_GE(corr.size(), 10u);
  double mean = 0.0;
  for (double c : corr) mean += c / static_cast<double>(corr.size());
  EXPECT_NEAR(mean, 0.13, 0.05);
}

TEST_F(BarrierTest, RejectsDryMesh) {
  Mesh m = build_uniform_mesh(RasterGeometry{2, 2, 1.0, {0, 0}}, 1.0);
  const Polygon all = rectangle(-1, -1, 3, 3);
  label_subdomains(m, std::span<const Polygon>(&all, 1));
  EXPECT_THROW(BarrierModel{m}, InputError);
}

TEST(Priors, PcSigmaAtOriginAndNormalization) {
  const PcPrior pc;
  EXPECT_NEAR(pc.sigma_rate(), 4.605170185988091, 1e-12);
  EXPECT_NEAR(pc_sigma_logpdf(0.0, pc), std::log(4.605170185988091), 1e-12);
  boost::math::quadrature::exp_sinh<double> integ;
  const double total = integ.integrate([&](double s) { return std::exp(pc_sigma_logpdf(s, pc)); });
  EXPECT_NEAR(total, 1.0, 1e-8);
  const double tail = 1.0 - boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
                                [&](double s) { return std::exp(pc_sigma_logpdf(s, pc)); }, 0.0, 1.0, 15, 1e-14);
  EXPECT_NEAR(tail, 0.01, 1e-8);
}

TEST(Priors, PcRangeTail) {
  const PcPrior pc;
  const double below = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
      [&](double r) { return r > 0 ? std::exp(pc_range_logpdf(r, pc)) : 0.0; }, 0.0, 500.0, 15, 1e-14);
  EXPECT_NEAR(below, 0.01, 1e-8);
  boost::math::quadrature::exp_sinh<double> integ;
  EXPECT_NEAR(integ.integrate([&](double r) { return std::exp(pc_range_logpdf(r, pc)); }), 1.0, 1e-8);
}

TEST(Priors, GammaDensity) {
  EXPECT_NEAR(std::exp(gamma_logpdf(0.25, GammaPrior{2.0, 8.0})), 64.0 * 0.25 * std::exp(-2.0), 1e-12);
  EXPECT_NEAR(std::exp(gamma_logpdf(0.25, GammaPrior{2.0, 8.0})), 2.1654, 1e-4);
  boost::math::quadrature::exp_sinh<double> integ;
  EXPECT_NEAR(integ.integrate([](double t) { return std::exp(gamma_logpdf(t, GammaPrior{2.0, 8.0})); }), 1.0, 1e-10);
}

TEST(Priors, OutOfSupportIsFlagged) {
  PriorSpec s;
  s.kind = PriorKind::gamma;
  bool flag = false;
  EXPECT_EQ(hyperprior_logpdf(-1.0, s, &flag), -std::numeric_limits<double>::infinity());
  EXPECT_TRUE(flag);
  EXPECT_TRUE(std::isfinite(hyperprior_logpdf(0.5, s, &flag)));
  EXPECT_FALSE(flag);
  s.kind = PriorKind::pc_range;
  EXPECT_EQ(hyperprior_logpdf(0.0, s, &flag), -std::numeric_limits<double>::infinity());
  EXPECT_TRUE(flag);
}
