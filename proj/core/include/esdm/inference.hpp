#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "esdm/cholesky.hpp"
#include "esdm/error.hpp"
#include "esdm/model.hpp"

namespace esdm {

class ConvergenceError : public NumericalError {
 public:
  ConvergenceError(const std::string& what, double grad_norm) : NumericalError(what), grad_norm_(grad_norm) {}
  double grad_norm() const { return grad_norm_; }

 private:
  double grad_norm_;
};

struct NewtonOptions {
  double tolerance = 1e-6;  // max |gradient|
  int max_iterations = 100;
  JitterPolicy jitter;
};

struct GaussianApprox {
  Eigen::VectorXd mode;
  SparseMatrix precision;  // negative Hessian at the mode
  std::shared_ptr<const SparseCholesky> factor;
  double log_density = 0.0;   // joint latent log-density at the mode
  double log_evidence = 0.0;  // Laplace estimate of log p(data | hyper)
  double log_marginal = 0.0;  // log_evidence + log p(hyper)
  int iterations = 0;
  double grad_norm = 0.0;
  double jitter = 0.0;
};

GaussianApprox laplace_fit(const JointModel& model, const PriorPrecision& prior, const NewtonOptions& options = {},
                           const Eigen::VectorXd* init = nullptr);
GaussianApprox laplace_fit(const JointModel& model, const Hyper& hyper, const NewtonOptions& options = {},
                           const Eigen::VectorXd* init = nullptr);

struct OptimizeOptions {
  double tolerance = 1e-4;     // nats per sweep
  int max_sweeps = 60;
  double initial_step = 0.5;   // on the log scale
  double min_step = 0.02;
  double max_step = 1.5;
  double bound = 12.0;         // |log θ - log θ_init| limit
  std::vector<bool> free;      // per hyper_names entry; empty = all free
  NewtonOptions newton;
  std::function<void(const std::string&)> log;
};

struct FitDiagnostics {
  int sweeps = 0;
  int evaluations = 0;
  int failed_evaluations = 0;
  int newton_iterations = 0;
  double grad_norm = 0.0;
  double jitter = 0.0;
  bool converged = false;
};

struct FitResult {
  Hyper hyper_map;
  GaussianApprox approx;
  PriorPrecision prior;
  double objective = 0.0;  // log_marginal + log-Jacobian of the log transform
  FitDiagnostics diagnostics;
};

// Objective maximized over log hyperparameters.
double hyper_objective(const GaussianApprox& approx, const Eigen::VectorXd& log_hyper);

FitResult optimize_hyperparameters(const JointModel& model, const Hyper& init, const OptimizeOptions& options = {});

// Fit at fixed hyperparameters.
FitResult fit_fixed(const JointModel& model, const Hyper& hyper, const NewtonOptions& options = {});

struct RowPrediction {
  std::vector<double> mean;
  std::vector<double> sd;
};

// Posterior mean and sd of each row's predictor (η for survey rows, logit μ̄
// for expert rows by the delta method) under the Gaussian approximation.
RowPrediction predict_rows(const JointModel& model, const GaussianApprox& approx, const DesignBlock& block);

struct LooOptions {
  NewtonOptions newton;
  int threads = 1;
  double quadrature_tolerance = 1e-8;
};

struct LooResult {
  std::vector<double> cpo;               // NaN when the refit failed or y missing
  std::vector<double> predictive_mean;   // of η
  std::vector<double> predictive_sd;
  std::vector<double> prob_present;      // presence models: Pr(y = 1)
  std::vector<std::string> failures;
};

// Leave-one-out CPO for every row of a survey block, refitting the latent
// mode with the row's weight set to zero at the fitted hyperparameters.
LooResult loo_cpo(const JointModel& model, std::size_t survey_block, const FitResult& fit,
                  const LooOptions& options = {});

// Predictive density of y under η ~ N(mean, variance).
double predictive_density(const ModelSpec& spec, double y, double exposure, double overdispersion, double mean,
                          double variance, double tolerance = 1e-8);

}  // namespace esdm
