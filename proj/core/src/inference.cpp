#include "esdm/inference.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <mutex>
#include <numbers>
#include <sstream>
#include <thread>

#include "esdm/quadrature.hpp"

namespace esdm {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double safe_log_density(const JointModel& m, const Eigen::VectorXd& x, const PriorPrecision& p) {
  try {
    const double v = m.log_density(x, p);
    return std::isfinite(v) ? v : kNegInf;
  } catch (const NumericalError&) {
    return kNegInf;
  }
}

double max_diagonal(const SparseMatrix& a) {
  double m = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) m = std::max(m, std::abs(a.coeff(i, i)));
  return m;
}

SparseMatrix shifted(const SparseMatrix& a, double lam) {
  SparseMatrix b = a;
  if (lam > 0.0) {
    for (Eigen::Index i = 0; i < b.rows(); ++i) b.coeffRef(i, i) += lam;
  }
  return b;
}

}  // namespace

GaussianApprox laplace_fit(const JointModel& model, const PriorPrecision& prior, const NewtonOptions& opt,
                           const Eigen::VectorXd* init) {
  Eigen::VectorXd x = init ? *init : model.prior_mode();
  double f = safe_log_density(model, x, prior);
  if (!std::isfinite(f) && init) {
    x = model.prior_mode();
    f = safe_log_density(model, x, prior);
  }
  if (!std::isfinite(f)) throw NumericalError("laplace_fit: joint log-density is not finite at the initial state");

  const JitterPolicy plain{1.0, 0.0, 10.0};
  Eigen::VectorXd g;
  SparseMatrix h;
  GaussianApprox out;
  double gn = std::numeric_limits<double>::infinity();
  int it = 0;
  for (;; ++it) {
    model.gradient_hessian(x, prior, g, h);
    gn = g.lpNorm<Eigen::Infinity>();
    if (gn <= opt.tolerance || it >= opt.max_iterations) break;
    const SparseMatrix p = -h;
    const double md = std::max(max_diagonal(p), 1e-300);
    double lam = 0.0;
    bool moved = false;
    for (int attempt = 0; attempt < 30 && !moved; ++attempt) {
      Eigen::VectorXd d;
      try {
        d = SparseCholesky(shifted(p, lam), plain).solve(g);
      } catch (const NumericalError&) {
        lam = lam == 0.0 ? 1e-8 * md : lam * 10.0;
        continue;
      }
      const double slope = g.dot(d);
      // Predicted gain below the rounding of f: comparisons of f are noise,
      // so take the undamped step.
      if (lam == 0.0 && slope >= 0.0 && slope <= 1e3 * std::numeric_limits<double>::epsilon() * (1.0 + std::abs(f))) {
        x += d;
        f = safe_log_density(model, x, prior);
        moved = true;
        break;
      }
      double t = 1.0;
      for (int k = 0; k < 50; ++k, t *= 0.5) {
        const Eigen::VectorXd xn = x + t * d;
        const double fn = safe_log_density(model, xn, prior);
        if (fn >= f + 1e-4 * t * slope) {
          x = xn;
          f = fn;
          moved = true;
          break;
        }
      }
      if (!moved) {
        // At the resolution of f the sufficient-increase test cannot pass;
        // take the full step if it does not decrease f.
        const Eigen::VectorXd xn = x + d;
        const double fn = safe_log_density(model, xn, prior);
        if (fn >= f) {
          x = xn;
          f = fn;
          moved = true;
        } else {
          lam = lam == 0.0 ? 1e-8 * md : lam * 10.0;
        }
      }
    }
    if (!moved) break;
  }
  out.iterations = it;
  out.grad_norm = gn;
  if (!(gn <= opt.tolerance)) {
    std::ostringstream msg;
    msg << "laplace_fit: Newton did not converge after " << it << " iterations (max |gradient| = " << gn << ")";
    throw ConvergenceError(msg.str(), gn);
  }
  out.mode = x;
  out.log_density = f;
  out.precision = -h;
  std::shared_ptr<const SparseCholesky> factor;
  try {
    factor = std::make_shared<const SparseCholesky>(out.precision, opt.jitter);
  } catch (const NumericalError& e) {
    throw NumericalError(std::string("laplace_fit: Hessian at the mode is not positive definite: ") + e.what());
  }
  out.factor = factor;
  out.jitter = factor->jitter();
  const double dim = static_cast<double>(x.size());
  out.log_evidence = f + 0.5 * dim * std::log(2.0 * std::numbers::pi) - 0.5 * factor->log_det();
  out.log_marginal = out.log_evidence + model.log_hyperprior(prior.hyper);
  return out;
}

GaussianApprox laplace_fit(const JointModel& model, const Hyper& hyper, const NewtonOptions& options,
                           const Eigen::VectorXd* init) {
  return laplace_fit(model, model.prior_precision(hyper), options, init);
}

double hyper_objective(const GaussianApprox& approx, const Eigen::VectorXd& log_hyper) {
  return approx.log_marginal + log_hyper.sum();
}

FitResult fit_fixed(const JointModel& model, const Hyper& hyper, const NewtonOptions& options) {
  FitResult r;
  r.hyper_map = hyper;
  r.prior = model.prior_precision(hyper);
  r.approx = laplace_fit(model, r.prior, options);
  r.objective = hyper_objective(r.approx, hyper_to_log(hyper, model.spec()));
  r.diagnostics.evaluations = 1;
  r.diagnostics.newton_iterations = r.approx.iterations;
  r.diagnostics.grad_norm = r.approx.grad_norm;
  r.diagnostics.jitter = r.approx.jitter;
  r.diagnostics.converged = true;
  return r;
}

FitResult optimize_hyperparameters(const JointModel& model, const Hyper& init, const OptimizeOptions& opt) {
  const ModelSpec& spec = model.spec();
  const auto names = hyper_names(spec);
  const auto nh = static_cast<int>(names.size());
  if (!opt.free.empty() && static_cast<int>(opt.free.size()) != nh)
    throw InputError("optimize_hyperparameters: free mask length does not match hyperparameter count");
  auto is_free = [&](int i) { return opt.free.empty() || opt.free[i]; };
  auto log = [&](const std::string& s) {
    if (opt.log) opt.log(s);
  };

  const Eigen::VectorXd t_init = hyper_to_log(init, spec);
  FitResult best;
  FitDiagnostics diag;
  Eigen::VectorXd t = t_init;

  struct Eval {
    double obj = kNegInf;
    PriorPrecision prior;
    GaussianApprox approx;
  };
  auto evaluate = [&](const Eigen::VectorXd& tt, const Eigen::VectorXd* warm) {
    Eval e;
    ++diag.evaluations;
    try {
      const Hyper h = hyper_from_log(tt, spec, init);
      e.prior = model.prior_precision(h);
      try {
        e.approx = laplace_fit(model, e.prior, opt.newton, warm);
      } catch (const ConvergenceError&) {
        if (!warm) throw;
        e.approx = laplace_fit(model, e.prior, opt.newton, nullptr);
      }
      diag.newton_iterations += e.approx.iterations;
      e.obj = hyper_objective(e.approx, tt);
      if (!std::isfinite(e.obj)) e.obj = kNegInf;
    } catch (const std::exception& ex) {
      ++diag.failed_evaluations;
      log(std::string("hyper evaluation failed: ") + ex.what());
      e.obj = kNegInf;
    }
    return e;
  };

  Eval cur = evaluate(t, nullptr);
  if (!std::isfinite(cur.obj)) throw NumericalError("optimize_hyperparameters: objective is not finite at the initial hyperparameters");

  std::vector<double> step(nh, opt.initial_step);
  for (int sweep = 0; sweep < opt.max_sweeps; ++sweep) {
    const double start = cur.obj;
    for (int i = 0; i < nh; ++i) {
      if (!is_free(i)) continue;
      const double h = step[i];
      auto at = [&](double delta) {
        Eigen::VectorXd tt = t;
        tt[i] = std::clamp(t[i] + delta, t_init[i] - opt.bound, t_init[i] + opt.bound);
        return tt;
      };
      const Eigen::VectorXd warm = cur.approx.mode;
      Eval plus = evaluate(at(h), &warm);
      Eval minus = evaluate(at(-h), &warm);
      double best_delta = 0.0;
      Eval* chosen = &cur;
      if (plus.obj > chosen->obj) {
        chosen = &plus;
        best_delta = h;
      }
      if (minus.obj > chosen->obj) {
        chosen = &minus;
        best_delta = -h;
      }
      Eval extra;
      double delta = 0.0;
      if (std::isfinite(plus.obj) && std::isfinite(minus.obj)) {
        const double a = (plus.obj + minus.obj - 2.0 * cur.obj) / (2.0 * h * h);
        const double b = (plus.obj - minus.obj) / (2.0 * h);
        if (a < 0.0) {
          delta = std::clamp(-b / (2.0 * a), -4.0 * h, 4.0 * h);
        } else {
          delta = (plus.obj > minus.obj ? 3.0 : -3.0) * h;
        }
      } else if (std::isfinite(plus.obj) && plus.obj > cur.obj) {
        delta = 2.0 * h;
      } else if (std::isfinite(minus.obj) && minus.obj > cur.obj) {
        delta = -2.0 * h;
      }
      if (delta != 0.0 && std::abs(std::abs(delta) - h) > 1e-3 * h) {
        extra = evaluate(at(delta), &warm);
        if (extra.obj > chosen->obj) {
          chosen = &extra;
          best_delta = delta;
        }
      }
      if (chosen != &cur) {
        t = at(best_delta);
        cur = std::move(*chosen);
      }
      step[i] = best_delta == 0.0 ? std::max(opt.min_step, 0.5 * h)
                                  : std::clamp(std::abs(best_delta), opt.min_step, opt.max_step);
    }
    ++diag.sweeps;
    std::ostringstream msg;
    msg << "sweep " << diag.sweeps << ": objective " << cur.obj << " (+" << cur.obj - start << ")";
    log(msg.str());
    if (cur.obj - start < opt.tolerance) {
      diag.converged = true;
      break;
    }
  }
  best.hyper_map = hyper_from_log(t, spec, init);
  best.prior = std::move(cur.prior);
  best.approx = std::move(cur.approx);
  best.objective = cur.obj;
  diag.grad_norm = best.approx.grad_norm;
  diag.jitter = best.approx.jitter;
  best.diagnostics = diag;
  return best;
}

RowPrediction predict_rows(const JointModel& model, const GaussianApprox& approx, const DesignBlock& block) {
  const LatentLayout& L = model.layout();
  block.validate(L);
  RowPrediction out;
  const std::size_t n = block.rows();
  out.mean.resize(n);
  out.sd.resize(n);
  constexpr std::size_t chunk = 256;
  std::vector<std::pair<int, double>> grad;
  for (std::size_t r0 = 0; r0 < n; r0 += chunk) {
    const std::size_t r1 = std::min(n, r0 + chunk);
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(L.dim(), static_cast<Eigen::Index>(r1 - r0));
    for (std::size_t r = r0; r < r1; ++r) {
      grad.clear();
      out.mean[r] = row_predictor(L, block, r, approx.mode, &grad);
      for (const auto& [i, v] : grad) a(i, static_cast<Eigen::Index>(r - r0)) += v;
    }
    const Eigen::MatrixXd s = approx.factor->solve(a);
    for (std::size_t r = r0; r < r1; ++r) {
      const auto c = static_cast<Eigen::Index>(r - r0);
      out.sd[r] = std::sqrt(std::max(0.0, a.col(c).dot(s.col(c))));
    }
  }
  return out;
}

double predictive_density(const ModelSpec& spec, double y, double exposure, double overdispersion, double mean,
                          double variance, double tolerance) {
  auto f = [&](double eta) { return std::exp(spec.survey_term(y, eta, exposure, overdispersion).value); };
  return gaussian_expectation(f, mean, variance, tolerance).value;
}

LooResult loo_cpo(const JointModel& model, std::size_t survey_block, const FitResult& fit, const LooOptions& opt) {
  const DesignBlock& block = model.block(survey_block);
  if (block.kind != BlockKind::survey) throw InputError("loo_cpo: block is not a survey block");
  const std::size_t n = block.rows();
  LooResult out;
  out.cpo.assign(n, kMissing);
  out.predictive_mean.assign(n, kMissing);
  out.predictive_sd.assign(n, kMissing);
  out.prob_present.assign(n, kMissing);
  std::mutex mu;
  const double r = fit.hyper_map.overdispersion;

  auto one = [&](std::size_t i) {
    if (is_missing(block.response[i])) return;
    try {
      const JointModel loo = model.with_row_weight(survey_block, i, 0.0);
      const GaussianApprox a = laplace_fit(loo, fit.prior, opt.newton, &fit.approx.mode);
      std::vector<std::pair<int, double>> grad;
      const double m = row_predictor(model.layout(), block, i, a.mode, &grad);
      Eigen::VectorXd av = Eigen::VectorXd::Zero(model.layout().dim());
      for (const auto& [k, v] : grad) av[k] += v;
      const double var = std::max(0.0, av.dot(a.factor->solve(av)));
      const double v_exp = block.exposure.empty() ? 1.0 : block.exposure[i];
      out.predictive_mean[i] = m;
      out.predictive_sd[i] = std::sqrt(var);
      out.cpo[i] = predictive_density(model.spec(), block.response[i], v_exp, r, m, var, opt.quadrature_tolerance);
      if (model.spec().survey == SurveyLikelihood::presence) {
        out.prob_present[i] = predictive_density(model.spec(), 1.0, v_exp, r, m, var, opt.quadrature_tolerance);
      }
    } catch (const std::exception& e) {
      std::lock_guard<std::mutex> lock(mu);
      out.failures.push_back("observation " + std::to_string(i) + ": " + e.what());
    }
  };

  const int threads = std::max(1, opt.threads);
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int k = 0; k < threads; ++k) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) one(i);
      });
    }
    for (auto& th : pool) th.join();
  }
  std::sort(out.failures.begin(), out.failures.end());
  return out;
}

}  // namespace esdm
