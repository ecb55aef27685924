#include "fixtures.hpp"

#include <cmath>

#include <boost/math/distributions/binomial.hpp>
#include <boost/math/distributions/negative_binomial.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/beta.hpp>

#include "esdm/gmrf.hpp"
#include "esdm/projection.hpp"

namespace esdm::testing {

SmallModel make_small_model(const SmallOptions& o, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  SmallModel sm;
  const RasterGeometry g{4, 4, 100.0, {0.0, 0.0}};
  sm.field_mesh = build_uniform_mesh(g, 150.0);
  if (o.barrier) {
    const Polygon strip = rectangle(150.0, -10.0, 250.0, 410.0);
    label_subdomains(sm.field_mesh, std::span<const Polygon>(&strip, 1));
  }
  sm.expert_mesh = build_uniform_mesh(g, 200.0);

  ModelSpec spec;
  spec.survey = o.survey;
  spec.num_experts = o.num_experts;
  spec.expert_categories = o.categories;
  spec.expert_approximation = o.approximation;
  LatentLayout L;
  L.num_covariates = o.covariates;
  L.num_field = static_cast<int>(sm.field_mesh.num_vertices());
  L.num_experts = o.num_experts;
  L.num_bias = o.num_experts > 0 ? static_cast<int>(sm.expert_mesh.num_vertices()) : 0;

  auto missing = [&] { return unif(rng) < o.missing_fraction; };
  std::vector<DesignBlock> blocks;
  {
    DesignBlock b;
    b.kind = BlockKind::survey;
    std::vector<Point> pts;
    for (int i = 0; i < o.survey_rows; ++i) pts.push_back({400.0 * unif(rng), 400.0 * unif(rng)});
    b.field_proj = projection_matrix(sm.field_mesh, pts);
    b.bias_proj = ProjectionMatrix(o.survey_rows, L.num_bias);
    b.covariates.resize(o.survey_rows, o.covariates);
    for (int i = 0; i < o.survey_rows; ++i) {
      for (int m = 0; m < o.covariates; ++m) b.covariates(i, m) = normal(rng);
      double y = 0.0;
      if (o.survey == SurveyLikelihood::presence) y = unif(rng) < 0.5 ? 1.0 : 0.0;
      else if (o.survey == SurveyLikelihood::count) y = std::floor(6.0 * unif(rng));
      else y = normal(rng);
      b.response.push_back(missing() ? kMissing : y);
      b.exposure.push_back(0.5 + unif(rng));
    }
    blocks.push_back(std::move(b));
  }
  for (int j = 0; j < o.num_experts; ++j) {
    DesignBlock b;
    b.kind = BlockKind::expert;
    b.expert = j;
    std::vector<Point> pts;
    std::vector<Eigen::Triplet<double>> t;
    for (int r = 0; r < o.expert_rows; ++r) {
      const int k = static_cast<int>(unif(rng) * L.num_bias) % L.num_bias;
      pts.push_back(sm.expert_mesh.vertices[k]);
      t.emplace_back(r, k, 1.0);
      b.response.push_back(missing() ? kMissing : 1.0 + std::floor(4.0 * unif(rng)));
    }
    b.field_proj = projection_matrix(sm.field_mesh, pts);
    b.bias_proj = ProjectionMatrix(o.expert_rows, L.num_bias);
    b.bias_proj.setFromTriplets(t.begin(), t.end());
    b.covariates.resize(o.expert_rows, o.covariates);
    for (int r = 0; r < o.expert_rows; ++r) {
      for (int m = 0; m < o.covariates; ++m) b.covariates(r, m) = normal(rng);
    }
    blocks.push_back(std::move(b));
  }
  auto field = std::make_shared<const BarrierModel>(sm.field_mesh);
  std::shared_ptr<const SparseMatrix> bias;
  if (o.num_experts > 0) bias = std::make_shared<const SparseMatrix>(structure_matrix(adjacency(sm.expert_mesh)));
  sm.model = std::make_shared<JointModel>(spec, L, std::move(blocks), field, bias);

  sm.hyper.field = {0.5 + unif(rng), 150.0 + 300.0 * unif(rng), 0.2};
  for (int j = 0; j < o.num_experts; ++j) sm.hyper.experts.push_back({0.5 + 2.0 * unif(rng), 0.5 + 2.0 * unif(rng)});
  sm.hyper.overdispersion = 1.0 + 5.0 * unif(rng);
  return sm;
}

Eigen::VectorXd random_state(const LatentLayout& layout, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> normal(0.0, scale);
  Eigen::VectorXd x(layout.dim());
  for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = normal(rng);
  return x;
}

Eigen::MatrixXd dense(const SparseMatrix& m) { return Eigen::MatrixXd(m); }
Eigen::MatrixXd dense(const ProjectionMatrix& m) { return Eigen::MatrixXd(m); }

double dense_gaussian_logpdf(const Eigen::VectorXd& x, const Eigen::MatrixXd& q) {
  const Eigen::LLT<Eigen::MatrixXd> llt(q);
  const Eigen::MatrixXd l = llt.matrixL();
  const double log_det = 2.0 * l.diagonal().array().log().sum();
  return -0.5 * static_cast<double>(x.size()) * std::log(2.0 * M_PI) + 0.5 * log_det - 0.5 * x.dot(q * x);
}

namespace {

double normal_log(double x, double var) { return -0.5 * std::log(2.0 * M_PI * var) - 0.5 * x * x / var; }

double expert_log_prob(const ModelSpec& spec, int z, double theta) {
  const double mu = 1.0 / (1.0 + std::exp(-theta));
  if (spec.expert_approximation == ExpertApproximation::binomial) {
    int zz = z;
    const BinomialApprox& a = spec.approx;
    if (spec.expert_categories == ExpertCategories::binary) zz = z <= 2 ? 1 : 2;
    boost::math::binomial_distribution<double> bin(a.trials[zz - 1], mu);
    return std::log(boost::math::pdf(bin, a.psi[zz - 1]));
  }
  const double as = mu * spec.s_bar, bs = (1.0 - mu) * spec.s_bar;
  auto cdf = [&](double c) { return boost::math::ibeta(as, bs, c); };
  const auto& c = spec.cutoffs.values;
  if (spec.expert_categories == ExpertCategories::binary) {
    return std::log(z <= 2 ? cdf(c[1]) : 1.0 - cdf(c[1]));
  }
  switch (z) {
    case 1: return std::log(cdf(c[0]));
    case 2: return std::log(cdf(c[1]) - cdf(c[0]));
    case 3: return std::log(cdf(c[2]) - cdf(c[1]));
    default: return std::log(1.0 - cdf(c[2]));
  }
}

}  // namespace

double flat_log_density(const JointModel& model, const Eigen::VectorXd& x, const Hyper& hyper) {
  const ModelSpec& spec = model.spec();
  const LatentLayout& L = model.layout();
  const ModelPriors& pr = spec.priors;
  double total = normal_log(x[0], pr.fixed_variance);
  for (int m = 0; m < L.num_covariates; ++m) total += normal_log(x[1 + m], pr.fixed_variance);
  const Eigen::VectorXd phi = x.segment(1 + L.num_covariates, L.num_field);
  total += dense_gaussian_logpdf(phi, dense(model.field_model().precision(hyper.field).matrix));
  const Eigen::MatrixXd r = L.num_experts > 0 ? dense(model.bias_structure()) : Eigen::MatrixXd();
  std::vector<Eigen::VectorXd> bias(L.num_experts);
  for (int j = 0; j < L.num_experts; ++j) {
    const int base = 1 + L.num_covariates + L.num_field + j * (2 + L.num_bias);
    total += normal_log(x[base], pr.alpha_bar_sd * pr.alpha_bar_sd);
    total += normal_log(x[base + 1], pr.c_bar_sd * pr.c_bar_sd);
    bias[j] = x.segment(base + 2, L.num_bias);
    const Eigen::MatrixXd q =
        hyper.experts[j].tau_u * r + hyper.experts[j].tau_v * Eigen::MatrixXd::Identity(L.num_bias, L.num_bias);
    total += dense_gaussian_logpdf(bias[j], q);
  }
  const Eigen::VectorXd beta = x.segment(1, L.num_covariates);
  for (std::size_t bi = 0; bi < model.num_blocks(); ++bi) {
    const DesignBlock& b = model.block(bi);
    if (b.kind != BlockKind::survey && b.kind != BlockKind::expert) continue;
    const Eigen::VectorXd u = b.covariates * beta + dense(b.field_proj) * phi;
    for (std::size_t i = 0; i < b.rows(); ++i) {
      const double y = b.response[i];
      const double w = b.weight.empty() ? 1.0 : b.weight[i];
      if (std::isnan(y) || w == 0.0) continue;
      const auto ii = static_cast<Eigen::Index>(i);
      if (b.kind == BlockKind::survey) {
        const double eta = x[0] + u[ii];
        double ll = 0.0;
        if (spec.survey == SurveyLikelihood::presence) {
          const double pi = 1.0 / (1.0 + std::exp(-eta));
          ll = y > 0.5 ? std::log(pi) : std::log(1.0 - pi);
        } else if (spec.survey == SurveyLikelihood::count) {
          const double mean = b.exposure[i] * std::exp(eta);
          const double rr = hyper.overdispersion;
          boost::math::negative_binomial_distribution<double> nb(rr, rr / (rr + mean));
          ll = std::log(boost::math::pdf(nb, y));
        } else {
          ll = normal_log(y - eta, spec.gaussian_variance);
        }
        total += w * ll;
      } else {
        const int j = b.expert;
        const int base = 1 + L.num_covariates + L.num_field + j * (2 + L.num_bias);
        const double theta = x[base] + x[base + 1] * u[ii] + (dense(b.bias_proj).row(ii) * bias[j])(0);
        total += w * expert_log_prob(spec, static_cast<int>(y), theta);
      }
    }
  }
  return total;
}

Eigen::MatrixXd dense_prior(const JointModel& m, const Hyper& h) {
  const LatentLayout& L = m.layout();
  const ModelPriors& pr = m.spec().priors;
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(L.dim(), L.dim());
  for (int i = 0; i <= L.num_covariates; ++i) q(i, i) = 1.0 / pr.fixed_variance;
  q.block(L.phi(0), L.phi(0), L.num_field, L.num_field) = dense(m.field_model().precision(h.field).matrix);
  for (int j = 0; j < L.num_experts; ++j) {
    q(L.alpha_bar(j), L.alpha_bar(j)) = 1.0 / (pr.alpha_bar_sd * pr.alpha_bar_sd);
    q(L.c_bar(j), L.c_bar(j)) = 1.0 / (pr.c_bar_sd * pr.c_bar_sd);
    q.block(L.bias(j, 0), L.bias(j, 0), L.num_bias, L.num_bias) =
        h.experts[j].tau_u * dense(m.bias_structure()) +
        h.experts[j].tau_v * Eigen::MatrixXd::Identity(L.num_bias, L.num_bias);
  }
  return q;
}

Eigen::MatrixXd survey_design(const JointModel& m, const DesignBlock& b) {
  const LatentLayout& L = m.layout();
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(b.rows()), L.dim());
  h.col(0).setOnes();
  if (L.num_covariates > 0) h.block(0, 1, h.rows(), L.num_covariates) = b.covariates;
  h.block(0, L.phi(0), h.rows(), L.num_field) = dense(b.field_proj);
  return h;
}

double flat_presence_cpo(const Eigen::MatrixXd& h, const Eigen::VectorXd& y, const Eigen::MatrixXd& q0, int skip) {
  const Eigen::Index d = q0.rows();
  Eigen::VectorXd x = Eigen::VectorXd::Zero(d);
  Eigen::MatrixXd p;
  for (int it = 0; it < 200; ++it) {
    Eigen::VectorXd g = -q0 * x;
    p = q0;
    for (Eigen::Index k = 0; k < h.rows(); ++k) {
      if (k == skip) continue;
      const double eta = h.row(k).dot(x);
      const double pi = 1.0 / (1.0 + std::exp(-eta));
      g += (y[k] - pi) * h.row(k).transpose();
      p += pi * (1 - pi) * h.row(k).transpose() * h.row(k);
    }
    const Eigen::VectorXd step = p.ldlt().solve(g);
    x += step;
    if (step.lpNorm<Eigen::Infinity>() < 1e-14) break;
  }
  const Eigen::VectorXd hi = h.row(skip).transpose();
  const double m = hi.dot(x), v = hi.dot(p.ldlt().solve(hi));
  const double yi = y[skip];
  auto f = [&](double eta) {
    const double pi = 1.0 / (1.0 + std::exp(-eta));
    const double lik = yi > 0.5 ? pi : 1 - pi;
    return lik * std::exp(-0.5 * (eta - m) * (eta - m) / v) / std::sqrt(2 * M_PI * v);
  };
  const double sd = std::sqrt(v);
  return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, m - 14 * sd, m + 14 * sd, 20, 1e-14);
}

}  // namespace esdm::testing
