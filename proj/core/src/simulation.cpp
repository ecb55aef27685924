#include "esdm/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "esdm/error.hpp"
#include "esdm/projection.hpp"
#include "esdm/special_functions.hpp"

namespace esdm {
namespace {

enum Stream : std::uint64_t { kCovariates = 1, kField = 2, kSurvey = 3, kExperts = 16 };

// log of a Gamma(shape, 1) draw; stable for small shapes.
double log_gamma_draw(double shape, std::mt19937_64& rng) {
  if (shape >= 1.0) return std::log(std::gamma_distribution<double>(shape, 1.0)(rng));
  const double g = std::gamma_distribution<double>(shape + 1.0, 1.0)(rng);
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  return std::log(g) + std::log(std::max(u, 1e-300)) / shape;
}

Eigen::VectorXd standard_normal(Eigen::Index n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Eigen::VectorXd z(n);
  for (Eigen::Index i = 0; i < n; ++i) z[i] = normal(rng);
  return z;
}

bool in_region(Point p, const Polygon& region) { return region.empty() || point_in_polygon(p, region); }

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

void TruthScenario::validate() const {
  geometry.validate();
  field.validate();
  for (const auto& e : experts) e.bym.validate();
  if (survey != SurveyLikelihood::count && survey != SurveyLikelihood::presence)
    throw InputError("scenario: survey must be count or presence");
  if (survey_points < 1) throw InputError("scenario: survey_points must be positive");
  if (!(volume > 0.0)) throw InputError("scenario: volume must be positive");
  if (!(overdispersion > 0.0)) throw InputError("scenario: overdispersion must be positive");
  if (!(s_bar > 0.0)) throw InputError("scenario: s_bar must be positive");
  if (beta.size() != 3) throw InputError("scenario: beta must have one weight per simulated covariate (3)");
  cutoffs.validate();
}

TruthScenario default_scenario(std::uint64_t seed) {
  TruthScenario t;
  t.seed = seed;
  t.geometry = {30, 40, 150.0, {0.0, 0.0}};
  t.barriers = {rectangle(1650.0, 2550.0, 2700.0, 3300.0), rectangle(300.0, 450.0, 1050.0, 1050.0)};
  t.alpha = -0.3;
  t.beta = {0.8, -0.6, 0.4};
  t.field = {1.0, 1500.0, 0.2};
  const Polygon most = rectangle(0.0, 0.0, 4500.0, 6000.0);
  t.experts = {
      {0.3, 0.8, {10.0, 10.0}, most},
      {-0.2, 0.0, {10.0, 10.0}, rectangle(0.0, 1500.0, 4500.0, 6000.0)},
      {0.0, 0.8, {1.0, 0.1}, rectangle(0.0, 0.0, 4500.0, 4500.0)},
  };
  t.survey = SurveyLikelihood::presence;
  t.survey_points = 80;
  t.volume = 1.0;
  t.overdispersion = 5.0;
  t.mesh = {500.0, 2000.0, 100.0, 500.0, 2000.0};
  t.expert_mesh_edge = 500.0;
  return t;
}

std::vector<Raster> simulate_covariates(const RasterGeometry& g, std::uint64_t seed) {
  g.validate();
  const double scale = std::sqrt(g.width() * g.height());
  const double ranges[3] = {0.08 * scale, 0.12 * scale, 0.18 * scale};
  // Extend the simulation mesh beyond the raster to damp boundary effects.
  const double pad = ranges[2];
  RasterGeometry ext = g;
  const double edge = std::max(ranges[0] / 4.0, g.cell_size / 2.0);
  ext.origin = {g.origin.x - pad, g.origin.y - pad};
  ext.ncols = static_cast<int>(std::ceil((g.width() + 2 * pad) / edge));
  ext.nrows = static_cast<int>(std::ceil((g.height() + 2 * pad) / edge));
  ext.cell_size = edge;
  const Mesh mesh = build_uniform_mesh(ext, edge);
  const BarrierModel fem(mesh);
  const auto centers = g.cell_centers();
  const ProjectionMatrix a = projection_matrix(mesh, centers);
  std::mt19937_64 rng = stream_rng(seed, kCovariates);
  std::vector<Raster> out;
  for (double r : ranges) {
    const SparseCholesky chol(fem.raw_precision(r, 0.5));
    const Eigen::VectorXd field = chol.sample_transform(standard_normal(chol.dim(), rng));
    Eigen::VectorXd v = a * field;
    const double mean = v.mean();
    const double sd = std::sqrt((v.array() - mean).square().sum() / static_cast<double>(v.size()));
    v = (v.array() - mean) / sd;
    out.emplace_back(g, std::vector<double>(v.data(), v.data() + v.size()));
  }
  return out;
}

Eigen::VectorXd simulate_field(const TruthScenario& truth, const Mesh& mesh) {
  const SparsePrecision q = BarrierModel(mesh).precision(truth.field);
  const SparseCholesky chol(q.matrix);
  std::mt19937_64 rng = stream_rng(truth.seed, kField);
  return chol.sample_transform(standard_normal(chol.dim(), rng));
}

SurveyTable simulate_survey(const TruthScenario& truth, const Mesh& mesh, const Eigen::VectorXd& phi,
                            const std::vector<Raster>& covariates) {
  truth.validate();
  if (covariates.size() != truth.beta.size()) throw InputError("simulate_survey: covariate count mismatch");
  const RasterGeometry& g = truth.geometry;
  std::mt19937_64 rng = stream_rng(truth.seed, kSurvey);
  std::uniform_real_distribution<double> ux(g.origin.x, g.origin.x + g.width());
  std::uniform_real_distribution<double> uy(g.origin.y, g.origin.y + g.height());
  SurveyTable t;
  t.presence = truth.survey == SurveyLikelihood::presence;
  int guard = 0;
  while (static_cast<int>(t.size()) < truth.survey_points) {
    if (++guard > 1000 * truth.survey_points) throw InputError("simulate_survey: survey region contains no water");
    const Point p{ux(rng), uy(rng)};
    if (point_in_any(p, truth.barriers) || !in_region(p, truth.survey_region)) continue;
    t.locations.push_back(p);
  }
  const ProjectionMatrix a = projection_matrix(mesh, t.locations);
  const Eigen::VectorXd field = a * phi;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const std::size_t cell = *g.cell_index(t.locations[i]);
    double eta = truth.alpha + field[static_cast<Eigen::Index>(i)];
    for (std::size_t m = 0; m < covariates.size(); ++m) eta += truth.beta[m] * covariates[m].values[cell];
    t.volume.push_back(truth.volume);
    if (t.presence) {
      t.response.push_back(std::bernoulli_distribution(inv_logit(eta))(rng) ? 1.0 : 0.0);
    } else {
      // Gamma-Poisson mixture with mean V·λ and shape r.
      const double mean = truth.volume * std::exp(eta);
      const double lam = std::gamma_distribution<double>(truth.overdispersion, mean / truth.overdispersion)(rng);
      t.response.push_back(static_cast<double>(std::poisson_distribution<long>(lam)(rng)));
    }
  }
  return t;
}

int draw_category(double mu_bar, double s_bar, const CategoryCutoffs& cutoffs, std::mt19937_64& rng) {
  const double lx = log_gamma_draw(mu_bar * s_bar, rng);
  const double ly = log_gamma_draw((1.0 - mu_bar) * s_bar, rng);
  const double lse = log_sum_exp(lx, ly);
  const double log_pi = lx - lse;
  int z = 1;
  for (double c : cutoffs.values) z += log_pi >= std::log(c);
  return z;
}

std::vector<Raster> simulate_experts(const TruthScenario& truth, const Mesh& expert_mesh, const Mesh& field_mesh,
                                     const Eigen::VectorXd& phi, const std::vector<Raster>& covariates,
                                     std::vector<Eigen::VectorXd>* bias) {
  truth.validate();
  const RasterGeometry& g = truth.geometry;
  const auto centers = g.cell_centers();
  const ProjectionMatrix af = projection_matrix(field_mesh, centers);
  const ProjectionMatrix ab = projection_matrix(expert_mesh, centers);
  const Eigen::VectorXd field = af * phi;
  const SparseMatrix r = structure_matrix(adjacency(expert_mesh));
  std::vector<Raster> out;
  if (bias) bias->clear();
  for (std::size_t j = 0; j < truth.experts.size(); ++j) {
    const ExpertProfile& e = truth.experts[j];
    std::mt19937_64 rng = stream_rng(truth.seed, kExperts + j);
    SparseMatrix q = e.bym.tau_u * r;
    for (Eigen::Index i = 0; i < q.rows(); ++i) q.coeffRef(i, i) += e.bym.tau_v;
    const SparseCholesky chol(q);
    const Eigen::VectorXd vb = chol.sample_transform(standard_normal(chol.dim(), rng));
    const Eigen::VectorXd cell_bias = ab * vb;
    Raster z(g, kMissing);
    for (std::size_t c = 0; c < centers.size(); ++c) {
      double u = field[static_cast<Eigen::Index>(c)];
      for (std::size_t m = 0; m < covariates.size(); ++m) u += truth.beta[m] * covariates[m].values[c];
      const double theta = e.alpha_bar + e.c_bar * u + cell_bias[static_cast<Eigen::Index>(c)];
      const int cat = draw_category(inv_logit(theta), truth.s_bar, truth.cutoffs, rng);
      if (in_region(centers[c], e.region) && !point_in_any(centers[c], truth.barriers)) z.values[c] = cat;
    }
    out.push_back(std::move(z));
    if (bias) bias->push_back(vb);
  }
  return out;
}

SimulatedDataset simulate(const TruthScenario& truth) {
  truth.validate();
  SimulatedDataset d;
  d.truth = truth;
  d.covariates = simulate_covariates(truth.geometry, truth.seed);
  d.field_mesh = build_mesh(truth.geometry, truth.barriers, truth.mesh).mesh;
  d.expert_mesh = build_uniform_mesh(truth.geometry, truth.expert_mesh_edge);
  d.phi = simulate_field(truth, d.field_mesh);
  d.survey = simulate_survey(truth, d.field_mesh, d.phi, d.covariates);
  d.experts = simulate_experts(truth, d.expert_mesh, d.field_mesh, d.phi, d.covariates, &d.bias);
  return d;
}

void SurveyTable::validate() const {
  if (volume.size() != locations.size() || response.size() != locations.size())
    throw InputError("survey table: column lengths differ");
  for (std::size_t i = 0; i < size(); ++i) {
    if (!(volume[i] > 0.0)) throw InputError("survey table: row " + std::to_string(i + 1) + " has non-positive volume");
    const double y = response[i];
    if (is_missing(y)) continue;
    if (presence ? (y != 0.0 && y != 1.0) : (y < 0.0 || std::floor(y) != y))
      throw InputError("survey table: row " + std::to_string(i + 1) + " has an invalid response");
  }
}

void write_survey_csv(std::ostream& out, const SurveyTable& t) {
  out << "x,y,volume," << (t.presence ? "present" : "count") << '\n';
  for (std::size_t i = 0; i < t.size(); ++i) {
    out << fmt(t.locations[i].x) << ',' << fmt(t.locations[i].y) << ',' << fmt(t.volume[i]) << ','
        << (is_missing(t.response[i]) ? std::string("NA") : fmt(t.response[i])) << '\n';
  }
}

void write_survey_csv_file(const std::string& path, const SurveyTable& t) {
  std::ofstream out(path);
  if (!out) throw InputError(path + ": cannot open for writing");
  write_survey_csv(out, t);
  if (!out) throw InputError(path + ": write failed");
}

SurveyTable read_survey_csv(std::istream& in) {
  SurveyTable t;
  std::string line;
  if (!std::getline(in, line)) throw InputError("survey csv: empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> head;
  {
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, ',')) head.push_back(col);
  }
  if (head.size() != 4 || head[0] != "x" || head[1] != "y" || head[2] != "volume" ||
      (head[3] != "count" && head[3] != "present"))
    throw InputError("survey csv: header must be x,y,volume,count or x,y,volume,present");
  t.presence = head[3] == "present";
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::stringstream ss(line);
    std::string f[4];
    for (auto& s : f) {
      if (!std::getline(ss, s, ',')) throw InputError("survey csv line " + std::to_string(lineno) + ": expected 4 fields");
    }
    try {
      t.locations.push_back({std::stod(f[0]), std::stod(f[1])});
      t.volume.push_back(std::stod(f[2]));
      t.response.push_back(f[3] == "NA" || f[3].empty() ? kMissing : std::stod(f[3]));
    } catch (const std::logic_error&) {
      throw InputError("survey csv line " + std::to_string(lineno) + ": malformed number");
    }
  }
  t.validate();
  return t;
}

SurveyTable read_survey_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError(path + ": cannot open survey file");
  try {
    return read_survey_csv(in);
  } catch (const InputError& e) {
    throw InputError(path + ": " + e.what());
  }
}

}  // namespace esdm
