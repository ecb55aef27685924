#pragma once

#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include "esdm/cholesky.hpp"
#include "esdm/gmrf.hpp"
#include "esdm/likelihoods.hpp"
#include "esdm/priors.hpp"
#include "esdm/projection.hpp"

namespace esdm {

enum class SurveyLikelihood { count, presence, gaussian };
enum class ExpertCategories { binary, four };
enum class ExpertApproximation { exact, binomial };

std::string to_string(SurveyLikelihood s);
std::string to_string(ExpertCategories c);
std::string to_string(ExpertApproximation a);
SurveyLikelihood parse_survey_likelihood(const std::string& s);
ExpertCategories parse_expert_categories(const std::string& s);
ExpertApproximation parse_expert_approximation(const std::string& s);

struct ModelPriors {
  double fixed_variance = 100.0;  // α and each β
  double alpha_bar_sd = 2.0;
  double c_bar_sd = 0.5;
  PcPrior field;
  GammaPrior tau_u{2.0, 8.0};
  GammaPrior tau_v{2.0, 8.0};
  GammaPrior overdispersion{3.1622776601683795, 0.31622776601683794};
  double barrier_fraction = 0.2;

  void validate() const;
};

struct ModelSpec {
  SurveyLikelihood survey = SurveyLikelihood::presence;
  ExpertCategories expert_categories = ExpertCategories::four;
  ExpertApproximation expert_approximation = ExpertApproximation::exact;
  std::vector<std::string> covariate_names;
  int num_experts = 0;
  ModelPriors priors;
  double s_bar = 2.0;
  CategoryCutoffs cutoffs;
  double gaussian_variance = 1.0;  // Gaussian pseudo-likelihood noise
  // Filled by prepare() when the binomial approximation is selected.
  BinomialApprox approx;

  void validate() const;
  void prepare();
  bool has_overdispersion() const { return survey == SurveyLikelihood::count; }

  // Log-likelihood of one expert response z (1..4) at θ = logit μ̄.
  LogLikTerm expert_term(int z, double theta) const;
  // Log-likelihood of one survey response at linear predictor η.
  LogLikTerm survey_term(double y, double eta, double exposure, double overdispersion) const;
};

// Latent vector order: α, β (p), φ (barrier mesh), then per expert
// ᾱ_j, c̄_j, φ̄_j (expert mesh).
struct LatentLayout {
  int num_covariates = 0;
  int num_field = 0;
  int num_experts = 0;
  int num_bias = 0;

  int alpha() const { return 0; }
  int beta(int m) const { return 1 + m; }
  int phi(int k) const { return 1 + num_covariates + k; }
  int expert_base(int j) const { return 1 + num_covariates + num_field + j * (2 + num_bias); }
  int alpha_bar(int j) const { return expert_base(j); }
  int c_bar(int j) const { return expert_base(j) + 1; }
  int bias(int j, int k) const { return expert_base(j) + 2 + k; }
  int dim() const { return expert_base(num_experts); }
};

struct Hyper {
  BarrierHyper field;
  std::vector<BymHyper> experts;
  double overdispersion = 10.0;
};

enum class BlockKind { survey, expert, survey_prediction, expert_prediction, link };
std::string to_string(BlockKind k);

struct DesignBlock {
  BlockKind kind = BlockKind::survey;
  int expert = -1;
  std::vector<double> response;  // NaN = missing
  std::vector<double> exposure;  // sampling volume, count surveys
  std::vector<double> weight;    // per-row likelihood weight
  Eigen::MatrixXd covariates;    // rows × p, standardized
  ProjectionMatrix field_proj;   // rows × barrier-mesh vertices
  ProjectionMatrix bias_proj;    // rows × expert-mesh vertices

  std::size_t rows() const { return response.size(); }
  bool has_likelihood() const { return kind == BlockKind::survey || kind == BlockKind::expert; }
  void validate(const LatentLayout& layout) const;
};

// η = α + Xβ + Aφ.
Eigen::VectorXd linear_predictor_survey(const LatentLayout& layout, const Eigen::VectorXd& state,
                                        const Eigen::MatrixXd& covariates, const ProjectionMatrix& proj);
// logit μ̄ = ᾱ_j + c̄_j (Xβ + Aφ) + Bφ̄_j.
Eigen::VectorXd linear_predictor_expert(const LatentLayout& layout, const Eigen::VectorXd& state, int j,
                                        const Eigen::MatrixXd& covariates, const ProjectionMatrix& proj_field,
                                        const ProjectionMatrix& proj_bias);

// Predictor of one block row at x (η, logit μ̄, or the shared term for link
// rows); its gradient w.r.t. x is appended to *grad when non-null.
double row_predictor(const LatentLayout& layout, const DesignBlock& block, std::size_t row, const Eigen::VectorXd& x,
                     std::vector<std::pair<int, double>>* grad = nullptr);

// Prior precision blocks for one hyperparameter value.
struct PriorPrecision {
  Hyper hyper;
  SparseMatrix field;
  double field_log_det = 0.0;
  std::vector<SparseMatrix> bias;
  std::vector<double> bias_log_det;
};

struct DensityBreakdown {
  double fixed_prior = 0.0;    // α, β
  double expert_prior = 0.0;   // ᾱ, c̄
  double field_prior = 0.0;    // φ
  double bias_prior = 0.0;     // φ̄ over experts
  std::vector<double> blocks;  // likelihood per design block

  double total() const;
};

class JointModel {
 public:
  JointModel(ModelSpec spec, LatentLayout layout, std::vector<DesignBlock> blocks,
             std::shared_ptr<const BarrierModel> field, std::shared_ptr<const SparseMatrix> bias_structure);

  const ModelSpec& spec() const { return spec_; }
  const LatentLayout& layout() const { return layout_; }
  std::size_t num_blocks() const { return blocks_.size(); }
  const DesignBlock& block(std::size_t b) const { return *blocks_[b]; }
  const BarrierModel& field_model() const { return *field_; }
  const SparseMatrix& bias_structure() const { return *bias_structure_; }

  // Copy with one row's likelihood weight replaced; other blocks shared.
  JointModel with_row_weight(std::size_t block, std::size_t row, double weight) const;
  // Copy with one block removed.
  JointModel without_block(std::size_t block) const;
  // Copy with blocks reordered by `order`.
  JointModel reordered(const std::vector<std::size_t>& order) const;

  PriorPrecision prior_precision(const Hyper& hyper) const;

  // Throws NumericalError naming block and row for non-finite terms.
  double log_density(const Eigen::VectorXd& x, const PriorPrecision& prior, DensityBreakdown* parts = nullptr) const;

  // Gradient and Hessian of log_density.
  void gradient_hessian(const Eigen::VectorXd& x, const PriorPrecision& prior, Eigen::VectorXd& gradient,
                        SparseMatrix& hessian) const;

  // Log prior of the hyperparameters (natural scale).
  double log_hyperprior(const Hyper& hyper) const;

  // Latent prior mode: zero.
  Eigen::VectorXd prior_mode() const { return Eigen::VectorXd::Zero(layout_.dim()); }

 private:
  ModelSpec spec_;
  LatentLayout layout_;
  std::vector<std::shared_ptr<const DesignBlock>> blocks_;
  std::shared_ptr<const BarrierModel> field_;
  std::shared_ptr<const SparseMatrix> bias_structure_;
};

// Named log-scale hyperparameter vector for optimization.
std::vector<std::string> hyper_names(const ModelSpec& spec);
Eigen::VectorXd hyper_to_log(const Hyper& hyper, const ModelSpec& spec);
Hyper hyper_from_log(const Eigen::VectorXd& log_theta, const ModelSpec& spec, const Hyper& base);
Hyper default_hyper(const ModelSpec& spec);

}  // namespace esdm
