#include "esdm/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "esdm/error.hpp"

namespace esdm {
namespace {

using Triplets = std::vector<Eigen::Triplet<double>>;

// Predictor of one row and its gradient w.r.t. the latent vector.
struct RowLinear {
  double value = 0.0;
  double inner = 0.0;  // shared term Xβ + Aφ (experts)
  std::vector<std::pair<int, double>> grad;
};

double shared_term(const LatentLayout& L, const DesignBlock& b, std::size_t r, const Eigen::VectorXd& x) {
  double u = 0.0;
  for (int m = 0; m < L.num_covariates; ++m) u += b.covariates(static_cast<Eigen::Index>(r), m) * x[L.beta(m)];
  for (ProjectionMatrix::InnerIterator it(b.field_proj, static_cast<Eigen::Index>(r)); it; ++it)
    u += it.value() * x[L.phi(static_cast<int>(it.col()))];
  return u;
}

RowLinear row_linear(const LatentLayout& L, const DesignBlock& b, std::size_t r, const Eigen::VectorXd& x,
                     bool with_grad) {
  RowLinear out;
  const auto ri = static_cast<Eigen::Index>(r);
  const double u = shared_term(L, b, r, x);
  out.inner = u;
  const bool survey = b.kind == BlockKind::survey || b.kind == BlockKind::survey_prediction;
  if (b.kind == BlockKind::link) {
    out.value = u;
    return out;
  }
  if (survey) {
    out.value = x[L.alpha()] + u;
    if (with_grad) {
      out.grad.emplace_back(L.alpha(), 1.0);
      for (int m = 0; m < L.num_covariates; ++m) out.grad.emplace_back(L.beta(m), b.covariates(ri, m));
      for (ProjectionMatrix::InnerIterator it(b.field_proj, ri); it; ++it)
        out.grad.emplace_back(L.phi(static_cast<int>(it.col())), it.value());
    }
    return out;
  }
  const int j = b.expert;
  const double c = x[L.c_bar(j)];
  double bias = 0.0;
  for (ProjectionMatrix::InnerIterator it(b.bias_proj, ri); it; ++it)
    bias += it.value() * x[L.bias(j, static_cast<int>(it.col()))];
  out.value = x[L.alpha_bar(j)] + c * u + bias;
  if (with_grad) {
    out.grad.emplace_back(L.alpha_bar(j), 1.0);
    out.grad.emplace_back(L.c_bar(j), u);
    for (int m = 0; m < L.num_covariates; ++m) out.grad.emplace_back(L.beta(m), c * b.covariates(ri, m));
    for (ProjectionMatrix::InnerIterator it(b.field_proj, ri); it; ++it)
      out.grad.emplace_back(L.phi(static_cast<int>(it.col())), c * it.value());
    for (ProjectionMatrix::InnerIterator it(b.bias_proj, ri); it; ++it)
      out.grad.emplace_back(L.bias(j, static_cast<int>(it.col())), it.value());
  }
  return out;
}

LogLikTerm row_term(const ModelSpec& spec, const DesignBlock& b, std::size_t r, double pred, double overdispersion) {
  const double y = b.response[r];
  if (b.kind == BlockKind::survey) {
    const double v = b.exposure.empty() ? 1.0 : b.exposure[r];
    return spec.survey_term(y, pred, v, overdispersion);
  }
  return spec.expert_term(static_cast<int>(y), pred);
}

double gauss_quad_logdens(const Eigen::VectorXd& v, const SparseMatrix& q, double log_det) {
  return -0.5 * static_cast<double>(v.size()) * std::log(2.0 * std::numbers::pi) + 0.5 * log_det -
         0.5 * v.dot(q * v);
}

void add_block(Triplets& t, const SparseMatrix& q, int offset, double scale) {
  for (Eigen::Index k = 0; k < q.outerSize(); ++k) {
    for (SparseMatrix::InnerIterator it(q, k); it; ++it)
      t.emplace_back(offset + static_cast<int>(it.row()), offset + static_cast<int>(it.col()), scale * it.value());
  }
}

[[noreturn]] void non_finite(std::size_t block, std::size_t row, const std::string& what) {
  throw NumericalError("non-finite " + what + " in design block " + std::to_string(block) + ", row " +
                       std::to_string(row));
}

}  // namespace

double row_predictor(const LatentLayout& layout, const DesignBlock& block, std::size_t row, const Eigen::VectorXd& x,
                     std::vector<std::pair<int, double>>* grad) {
  RowLinear lin = row_linear(layout, block, row, x, grad != nullptr);
  if (grad) grad->insert(grad->end(), lin.grad.begin(), lin.grad.end());
  return lin.value;
}

std::string to_string(SurveyLikelihood s) {
  switch (s) {
    case SurveyLikelihood::count: return "count";
    case SurveyLikelihood::presence: return "presence";
    case SurveyLikelihood::gaussian: return "gaussian";
  }
  return "?";
}

std::string to_string(ExpertCategories c) { return c == ExpertCategories::binary ? "binary" : "four"; }

std::string to_string(ExpertApproximation a) { return a == ExpertApproximation::exact ? "exact" : "binomial"; }

std::string to_string(BlockKind k) {
  switch (k) {
    case BlockKind::survey: return "survey";
    case BlockKind::expert: return "expert";
    case BlockKind::survey_prediction: return "survey_prediction";
    case BlockKind::expert_prediction: return "expert_prediction";
    case BlockKind::link: return "link";
  }
  return "?";
}

SurveyLikelihood parse_survey_likelihood(const std::string& s) {
  if (s == "count") return SurveyLikelihood::count;
  if (s == "presence") return SurveyLikelihood::presence;
  if (s == "gaussian") return SurveyLikelihood::gaussian;
  throw InputError("unknown survey likelihood '" + s + "' (expected count|presence|gaussian)");
}

ExpertCategories parse_expert_categories(const std::string& s) {
  if (s == "binary") return ExpertCategories::binary;
  if (s == "four") return ExpertCategories::four;
  throw InputError("unknown expert categories '" + s + "' (expected binary|four)");
}

ExpertApproximation parse_expert_approximation(const std::string& s) {
  if (s == "exact") return ExpertApproximation::exact;
  if (s == "binomial") return ExpertApproximation::binomial;
  throw InputError("unknown expert likelihood '" + s + "' (expected exact|binomial)");
}

void ModelPriors::validate() const {
  if (!(fixed_variance > 0.0) || !(alpha_bar_sd > 0.0) || !(c_bar_sd > 0.0))
    throw InputError("priors: variances must be positive");
  field.validate();
  tau_u.validate();
  tau_v.validate();
  overdispersion.validate();
  if (!(barrier_fraction > 0.0 && barrier_fraction < 1.0))
    throw InputError("priors: barrier_fraction must lie in (0, 1)");
}

void ModelSpec::validate() const {
  priors.validate();
  cutoffs.validate();
  if (num_experts < 0) throw InputError("model: expert count must be non-negative");
  if (!(s_bar > 0.0)) throw InputError("model: s_bar must be positive");
  if (!(gaussian_variance > 0.0)) throw InputError("model: gaussian_variance must be positive");
}

void ModelSpec::prepare() {
  validate();
  if (num_experts > 0 && expert_approximation == ExpertApproximation::binomial) {
    approx = expert_categories == ExpertCategories::four ? fit_binomial_approx(s_bar, cutoffs)
                                                         : fit_binomial_approx_binary(s_bar, cutoffs);
  }
}

LogLikTerm ModelSpec::expert_term(int z, double theta) const {
  if (z < 1 || z > 4) throw InputError("expert response must be a category 1..4, got " + std::to_string(z));
  const bool binary = expert_categories == ExpertCategories::binary;
  const int zz = binary ? (z >= 3 ? 2 : 1) : z;
  if (expert_approximation == ExpertApproximation::binomial) {
    if (approx.psi.empty()) throw InputError("model: binomial approximation not prepared");
    return expert_binomial_term(zz, theta, approx);
  }
  return expert_exact_term(zz, theta, s_bar, cutoffs, binary);
}

LogLikTerm ModelSpec::survey_term(double y, double eta, double exposure, double overdispersion) const {
  switch (survey) {
    case SurveyLikelihood::count: {
      if (y < 0 || std::floor(y) != y) throw InputError("count response must be a non-negative integer");
      return negbin_term(static_cast<int>(y), eta, exposure, overdispersion);
    }
    case SurveyLikelihood::presence: {
      if (y != 0.0 && y != 1.0) throw InputError("presence response must be 0 or 1");
      return bernoulli_term(static_cast<int>(y), eta);
    }
    case SurveyLikelihood::gaussian:
      return gaussian_term(y, eta, gaussian_variance);
  }
  return {};
}

void DesignBlock::validate(const LatentLayout& layout) const {
  const auto n = static_cast<Eigen::Index>(rows());
  const std::string tag = "design block (" + to_string(kind) + "): ";
  if (covariates.rows() != n || covariates.cols() != layout.num_covariates)
    throw InputError(tag + "covariate matrix has wrong shape");
  if (field_proj.rows() != n || field_proj.cols() != layout.num_field)
    throw InputError(tag + "field projection has wrong shape");
  if (!weight.empty() && weight.size() != rows()) throw InputError(tag + "weight length mismatch");
  if (!exposure.empty()) {
    if (exposure.size() != rows()) throw InputError(tag + "exposure length mismatch");
    for (double v : exposure) {
      if (!(v > 0.0)) throw InputError(tag + "exposure must be positive");
    }
  }
  if (kind == BlockKind::expert || kind == BlockKind::expert_prediction) {
    if (expert < 0 || expert >= layout.num_experts) throw InputError(tag + "expert index out of range");
    if (bias_proj.rows() != n || bias_proj.cols() != layout.num_bias)
      throw InputError(tag + "bias projection has wrong shape");
  }
}

Eigen::VectorXd linear_predictor_survey(const LatentLayout& layout, const Eigen::VectorXd& state,
                                        const Eigen::MatrixXd& covariates, const ProjectionMatrix& proj) {
  if (state.size() != layout.dim()) throw InputError("linear_predictor_survey: state dimension mismatch");
  if (covariates.cols() != layout.num_covariates || proj.cols() != layout.num_field || proj.rows() != covariates.rows())
    throw InputError("linear_predictor_survey: dimension mismatch");
  const Eigen::VectorXd beta = state.segment(layout.beta(0), layout.num_covariates);
  const Eigen::VectorXd phi = state.segment(layout.phi(0), layout.num_field);
  Eigen::VectorXd eta = covariates * beta + proj * phi;
  eta.array() += state[layout.alpha()];
  return eta;
}

Eigen::VectorXd linear_predictor_expert(const LatentLayout& layout, const Eigen::VectorXd& state, int j,
                                        const Eigen::MatrixXd& covariates, const ProjectionMatrix& proj_field,
                                        const ProjectionMatrix& proj_bias) {
  if (j < 0 || j >= layout.num_experts) throw InputError("linear_predictor_expert: no expert " + std::to_string(j));
  if (state.size() != layout.dim()) throw InputError("linear_predictor_expert: state dimension mismatch");
  if (covariates.cols() != layout.num_covariates || proj_field.cols() != layout.num_field ||
      proj_bias.cols() != layout.num_bias || proj_field.rows() != covariates.rows() ||
      proj_bias.rows() != covariates.rows())
    throw InputError("linear_predictor_expert: dimension mismatch");
  const Eigen::VectorXd beta = state.segment(layout.beta(0), layout.num_covariates);
  const Eigen::VectorXd phi = state.segment(layout.phi(0), layout.num_field);
  const Eigen::VectorXd bias = state.segment(layout.bias(j, 0), layout.num_bias);
  Eigen::VectorXd theta = state[layout.c_bar(j)] * (covariates * beta + proj_field * phi) + proj_bias * bias;
  theta.array() += state[layout.alpha_bar(j)];
  return theta;
}

double DensityBreakdown::total() const {
  double s = fixed_prior + expert_prior + field_prior + bias_prior;
  for (double b : blocks) s += b;
  return s;
}

JointModel::JointModel(ModelSpec spec, LatentLayout layout, std::vector<DesignBlock> blocks,
                       std::shared_ptr<const BarrierModel> field, std::shared_ptr<const SparseMatrix> bias_structure)
    : spec_(std::move(spec)), layout_(layout), field_(std::move(field)), bias_structure_(std::move(bias_structure)) {
  spec_.validate();
  if (layout_.num_experts != spec_.num_experts) throw InputError("model: layout expert count differs from spec");
  if (static_cast<int>(spec_.covariate_names.size()) != layout_.num_covariates && !spec_.covariate_names.empty())
    throw InputError("model: covariate names do not match covariate count");
  if (!field_ || field_->dim() != layout_.num_field) throw InputError("model: field mesh does not match layout");
  if (layout_.num_experts > 0 && (!bias_structure_ || bias_structure_->rows() != layout_.num_bias))
    throw InputError("model: expert mesh does not match layout");
  if (spec_.expert_approximation == ExpertApproximation::binomial && layout_.num_experts > 0 &&
      spec_.approx.psi.empty())
    spec_.prepare();
  for (auto& b : blocks) {
    b.validate(layout_);
    if (b.weight.empty()) b.weight.assign(b.rows(), 1.0);
    blocks_.push_back(std::make_shared<const DesignBlock>(std::move(b)));
  }
}

JointModel JointModel::with_row_weight(std::size_t block, std::size_t row, double weight) const {
  JointModel copy = *this;
  auto b = std::make_shared<DesignBlock>(*blocks_.at(block));
  b->weight.at(row) = weight;
  copy.blocks_[block] = std::move(b);
  return copy;
}

JointModel JointModel::without_block(std::size_t block) const {
  JointModel copy = *this;
  copy.blocks_.erase(copy.blocks_.begin() + static_cast<std::ptrdiff_t>(block));
  return copy;
}

JointModel JointModel::reordered(const std::vector<std::size_t>& order) const {
  JointModel copy = *this;
  copy.blocks_.clear();
  for (std::size_t i : order) copy.blocks_.push_back(blocks_.at(i));
  return copy;
}

PriorPrecision JointModel::prior_precision(const Hyper& hyper) const {
  PriorPrecision p;
  p.hyper = hyper;
  p.field = field_->precision(hyper.field).matrix;
  p.field_log_det = SparseCholesky(p.field).log_det();
  if (static_cast<int>(hyper.experts.size()) != layout_.num_experts)
    throw InputError("hyper: expected " + std::to_string(layout_.num_experts) + " expert hyperparameter sets");
  for (const BymHyper& h : hyper.experts) {
    h.validate();
    SparseMatrix q = h.tau_u * (*bias_structure_);
    for (Eigen::Index i = 0; i < q.rows(); ++i) q.coeffRef(i, i) += h.tau_v;
    p.bias_log_det.push_back(SparseCholesky(q).log_det());
    p.bias.push_back(std::move(q));
  }
  if (spec_.has_overdispersion() && !(hyper.overdispersion > 0.0))
    throw InputError("hyper: overdispersion must be positive");
  return p;
}

double JointModel::log_density(const Eigen::VectorXd& x, const PriorPrecision& prior, DensityBreakdown* parts) const {
  if (x.size() != layout_.dim()) throw InputError("log_density: state dimension mismatch");
  const ModelPriors& pr = spec_.priors;
  DensityBreakdown d;
  d.fixed_prior += normal_logpdf(x[layout_.alpha()], 0.0, pr.fixed_variance);
  for (int m = 0; m < layout_.num_covariates; ++m) d.fixed_prior += normal_logpdf(x[layout_.beta(m)], 0.0, pr.fixed_variance);
  d.field_prior = gauss_quad_logdens(x.segment(layout_.phi(0), layout_.num_field), prior.field, prior.field_log_det);
  for (int j = 0; j < layout_.num_experts; ++j) {
    d.expert_prior += normal_logpdf(x[layout_.alpha_bar(j)], 0.0, pr.alpha_bar_sd * pr.alpha_bar_sd);
    d.expert_prior += normal_logpdf(x[layout_.c_bar(j)], 0.0, pr.c_bar_sd * pr.c_bar_sd);
    d.bias_prior += gauss_quad_logdens(x.segment(layout_.bias(j, 0), layout_.num_bias), prior.bias[j],
                                       prior.bias_log_det[j]);
  }
  d.blocks.assign(blocks_.size(), 0.0);
  for (std::size_t bi = 0; bi < blocks_.size(); ++bi) {
    const DesignBlock& b = *blocks_[bi];
    if (!b.has_likelihood()) continue;
    double s = 0.0;
    for (std::size_t r = 0; r < b.rows(); ++r) {
      if (is_missing(b.response[r]) || b.weight[r] == 0.0) continue;
      const RowLinear lin = row_linear(layout_, b, r, x, false);
      if (!std::isfinite(lin.value)) non_finite(bi, r, "linear predictor");
      const LogLikTerm t = row_term(spec_, b, r, lin.value, prior.hyper.overdispersion);
      if (!std::isfinite(t.value)) non_finite(bi, r, "log-likelihood");
      s += b.weight[r] * t.value;
    }
    d.blocks[bi] = s;
  }
  const double total = d.total();
  if (parts) *parts = std::move(d);
  return total;
}

void JointModel::gradient_hessian(const Eigen::VectorXd& x, const PriorPrecision& prior, Eigen::VectorXd& g,
                                  SparseMatrix& h) const {
  if (x.size() != layout_.dim()) throw InputError("gradient_hessian: state dimension mismatch");
  const ModelPriors& pr = spec_.priors;
  const int n = layout_.dim();
  g = Eigen::VectorXd::Zero(n);
  Triplets t;
  auto diag_prior = [&](int i, double var) {
    g[i] -= x[i] / var;
    t.emplace_back(i, i, -1.0 / var);
  };
  diag_prior(layout_.alpha(), pr.fixed_variance);
  for (int m = 0; m < layout_.num_covariates; ++m) diag_prior(layout_.beta(m), pr.fixed_variance);
  const int p0 = layout_.phi(0);
  g.segment(p0, layout_.num_field) -= prior.field * x.segment(p0, layout_.num_field);
  add_block(t, prior.field, p0, -1.0);
  for (int j = 0; j < layout_.num_experts; ++j) {
    diag_prior(layout_.alpha_bar(j), pr.alpha_bar_sd * pr.alpha_bar_sd);
    diag_prior(layout_.c_bar(j), pr.c_bar_sd * pr.c_bar_sd);
    const int b0 = layout_.bias(j, 0);
    g.segment(b0, layout_.num_bias) -= prior.bias[j] * x.segment(b0, layout_.num_bias);
    add_block(t, prior.bias[j], b0, -1.0);
  }
  for (std::size_t bi = 0; bi < blocks_.size(); ++bi) {
    const DesignBlock& b = *blocks_[bi];
    if (!b.has_likelihood()) continue;
    for (std::size_t r = 0; r < b.rows(); ++r) {
      const double w = b.weight[r];
      if (is_missing(b.response[r]) || w == 0.0) continue;
      const RowLinear lin = row_linear(layout_, b, r, x, true);
      const LogLikTerm term = row_term(spec_, b, r, lin.value, prior.hyper.overdispersion);
      if (!std::isfinite(term.d1) || !std::isfinite(term.d2)) non_finite(bi, r, "likelihood derivative");
      for (const auto& [i, gi] : lin.grad) {
        g[i] += w * term.d1 * gi;
        for (const auto& [k, gk] : lin.grad) t.emplace_back(i, k, w * term.d2 * gi * gk);
      }
      if (b.kind == BlockKind::expert) {
        // Bilinear coupling: ∂²θ/∂c̄∂β = x and ∂²θ/∂c̄∂φ = A.
        const int c = layout_.c_bar(b.expert);
        const auto ri = static_cast<Eigen::Index>(r);
        const double s = w * term.d1;
        for (int m = 0; m < layout_.num_covariates; ++m) {
          const double v = s * b.covariates(ri, m);
          t.emplace_back(c, layout_.beta(m), v);
          t.emplace_back(layout_.beta(m), c, v);
        }
        for (ProjectionMatrix::InnerIterator it(b.field_proj, ri); it; ++it) {
          const int k = layout_.phi(static_cast<int>(it.col()));
          t.emplace_back(c, k, s * it.value());
          t.emplace_back(k, c, s * it.value());
        }
      }
    }
  }
  h.resize(n, n);
  h.setFromTriplets(t.begin(), t.end());
}

double JointModel::log_hyperprior(const Hyper& hyper) const {
  const ModelPriors& pr = spec_.priors;
  double s = pc_sigma_logpdf(hyper.field.sigma, pr.field) + pc_range_logpdf(hyper.field.range, pr.field);
  for (const BymHyper& h : hyper.experts) s += gamma_logpdf(h.tau_u, pr.tau_u) + gamma_logpdf(h.tau_v, pr.tau_v);
  if (spec_.has_overdispersion()) s += gamma_logpdf(hyper.overdispersion, pr.overdispersion);
  return s;
}

std::vector<std::string> hyper_names(const ModelSpec& spec) {
  std::vector<std::string> names{"field.sigma", "field.range"};
  for (int j = 0; j < spec.num_experts; ++j) {
    names.push_back("expert" + std::to_string(j + 1) + ".tau_u");
    names.push_back("expert" + std::to_string(j + 1) + ".tau_v");
  }
  if (spec.has_overdispersion()) names.push_back("overdispersion");
  return names;
}

Eigen::VectorXd hyper_to_log(const Hyper& hyper, const ModelSpec& spec) {
  std::vector<double> v{hyper.field.sigma, hyper.field.range};
  for (int j = 0; j < spec.num_experts; ++j) {
    v.push_back(hyper.experts.at(j).tau_u);
    v.push_back(hyper.experts.at(j).tau_v);
  }
  if (spec.has_overdispersion()) v.push_back(hyper.overdispersion);
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) out[static_cast<Eigen::Index>(i)] = std::log(v[i]);
  return out;
}

Hyper hyper_from_log(const Eigen::VectorXd& lt, const ModelSpec& spec, const Hyper& base) {
  if (lt.size() != static_cast<Eigen::Index>(hyper_names(spec).size()))
    throw InputError("hyper_from_log: dimension mismatch");
  // Entries equal to log(base) keep the base value bit for bit.
  auto take = [](double l, double b) { return b > 0.0 && l == std::log(b) ? b : std::exp(l); };
  Hyper h = base;
  Eigen::Index i = 0;
  h.field.sigma = take(lt[i++], base.field.sigma);
  h.field.range = take(lt[i++], base.field.range);
  h.experts.resize(spec.num_experts);
  for (int j = 0; j < spec.num_experts; ++j) {
    h.experts[j].tau_u = take(lt[i++], h.experts[j].tau_u);
    h.experts[j].tau_v = take(lt[i++], h.experts[j].tau_v);
  }
  if (spec.has_overdispersion()) h.overdispersion = take(lt[i++], base.overdispersion);
  return h;
}

Hyper default_hyper(const ModelSpec& spec) {
  Hyper h;
  h.field.sigma = 1.0;
  h.field.range = 2.0 * spec.priors.field.range_lower;
  h.field.barrier_fraction = spec.priors.barrier_fraction;
  h.experts.assign(spec.num_experts, BymHyper{1.0, 1.0});
  h.overdispersion = spec.priors.overdispersion.shape / spec.priors.overdispersion.rate;
  return h;
}

}  // namespace esdm
