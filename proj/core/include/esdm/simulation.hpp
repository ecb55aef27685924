#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "esdm/gmrf.hpp"
#include "esdm/likelihoods.hpp"
#include "esdm/mesh.hpp"
#include "esdm/model.hpp"
#include "esdm/polygon.hpp"
#include "esdm/survey.hpp"

namespace esdm {

struct ExpertProfile {
  double alpha_bar = 0.0;
  double c_bar = 0.0;
  BymHyper bym{10.0, 10.0};
  Polygon region;  // assessment region; empty = whole domain
};

struct TruthScenario {
  std::uint64_t seed = 1;
  RasterGeometry geometry;
  std::vector<Polygon> barriers;
  double alpha = 0.0;
  std::vector<double> beta;
  BarrierHyper field;
  std::vector<ExpertProfile> experts;
  SurveyLikelihood survey = SurveyLikelihood::presence;
  int survey_points = 80;
  double volume = 1.0;
  double overdispersion = 5.0;
  Polygon survey_region;  // empty = whole domain
  double s_bar = 2.0;
  CategoryCutoffs cutoffs;
  MeshParams mesh;
  double expert_mesh_edge = 500.0;

  void validate() const;
};

// 30 × 40 cells of 150 m, two islands, ~80 survey points and three
// experts: skilled (c̄ = 0.8), unskilled (c̄ = 0) and skilled with a strong
// structured bias.
TruthScenario default_scenario(std::uint64_t seed = 1);

// Three standardized smooth surfaces with distinct correlation ranges.
std::vector<Raster> simulate_covariates(const RasterGeometry& geometry, std::uint64_t seed);

// Barrier-field draw at mesh vertices.
Eigen::VectorXd simulate_field(const TruthScenario& truth, const Mesh& mesh);

// Survey points drawn uniformly over water inside the survey region.
SurveyTable simulate_survey(const TruthScenario& truth, const Mesh& mesh, const Eigen::VectorXd& phi,
                            const std::vector<Raster>& covariates);

// Categorical rasters (1..4, NaN outside the region or on land), one per
// expert. The drawn BYM fields are written to *bias when non-null.
std::vector<Raster> simulate_experts(const TruthScenario& truth, const Mesh& expert_mesh, const Mesh& field_mesh,
                                     const Eigen::VectorXd& phi, const std::vector<Raster>& covariates,
                                     std::vector<Eigen::VectorXd>* bias = nullptr);

// Category of one subjective-probability draw at mean μ̄.
int draw_category(double mu_bar, double s_bar, const CategoryCutoffs& cutoffs, std::mt19937_64& rng);

// Independent generator for a named stream of a scenario seed.
std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t stream);

struct SimulatedDataset {
  TruthScenario truth;
  std::vector<Raster> covariates;
  Mesh field_mesh;
  Mesh expert_mesh;
  Eigen::VectorXd phi;
  std::vector<Eigen::VectorXd> bias;
  SurveyTable survey;
  std::vector<Raster> experts;
};

SimulatedDataset simulate(const TruthScenario& truth);

}  // namespace esdm
