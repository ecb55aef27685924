#pragma once

#include <cstdint>
#include <memory>
#include <random>

#include <Eigen/Dense>

#include "esdm/inference.hpp"
#include "esdm/mesh.hpp"
#include "esdm/model.hpp"

namespace esdm::testing {

struct SmallOptions {
  SurveyLikelihood survey = SurveyLikelihood::presence;
  int num_experts = 0;
  ExpertCategories categories = ExpertCategories::four;
  ExpertApproximation approximation = ExpertApproximation::exact;
  int survey_rows = 12;
  int expert_rows = 6;
  int covariates = 2;
  bool barrier = true;
  double missing_fraction = 0.1;
};

struct SmallModel {
  std::shared_ptr<JointModel> model;
  Hyper hyper;
  Mesh field_mesh;
  Mesh expert_mesh;
};

// 400 m square with a 4 × 4 vertex field mesh (optionally a land strip)
// and a 3 × 3 expert mesh; responses drawn at random.
SmallModel make_small_model(const SmallOptions& options, std::uint64_t seed);

Eigen::VectorXd random_state(const LatentLayout& layout, std::mt19937_64& rng, double scale = 0.5);

Eigen::MatrixXd dense(const SparseMatrix& m);
Eigen::MatrixXd dense(const ProjectionMatrix& m);

// log N(x | 0, Q⁻¹) from a dense LLᵀ.
double dense_gaussian_logpdf(const Eigen::VectorXd& x, const Eigen::MatrixXd& q);

// Straight-line joint log-density: dense matrices, explicit loops and
// Boost distributions; no use of the block machinery.
double flat_log_density(const JointModel& model, const Eigen::VectorXd& x, const Hyper& hyper);

// Dense prior precision assembled entry by entry from the hyperparameters.
Eigen::MatrixXd dense_prior(const JointModel& model, const Hyper& hyper);

// Rows of η = α + Xβ + Aφ for a survey-type block.
Eigen::MatrixXd survey_design(const JointModel& model, const DesignBlock& block);

// Dense Newton on the presence model with row `skip` removed, then the
// Laplace predictive at that row; nothing shared with the engine.
double flat_presence_cpo(const Eigen::MatrixXd& h, const Eigen::VectorXd& y, const Eigen::MatrixXd& q0, int skip);

}  // namespace esdm::testing
