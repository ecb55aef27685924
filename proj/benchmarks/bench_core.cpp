#include <benchmark/benchmark.h>

#include "esdm/gmrf.hpp"
#include "esdm/inference.hpp"
#include "esdm/likelihoods.hpp"
#include "esdm/pipeline.hpp"
#include "esdm/simulation.hpp"

using namespace esdm;

namespace {

// Default scenario assembled once; survey plus three experts.
struct Fixture {
  SimulatedDataset sim;
  ModelData data;
  AssembledModel assembled;
  Hyper hyper;

  Fixture() : sim(simulate(default_scenario(1))) {
    data.survey = sim.survey;
    data.covariates = sim.covariates;
    data.experts = sim.experts;
    data.barriers = sim.truth.barriers;
    ModelSpec spec;
    spec.num_experts = static_cast<int>(data.experts.size());
    spec.covariate_names = {"covariate_1", "covariate_2", "covariate_3"};
    MeshSettings ms;
    ms.params = sim.truth.mesh;
    const Mesh field = obtain_field_mesh(data, ms, "");
    const Mesh expert = build_uniform_mesh(data.geometry(), sim.truth.expert_mesh_edge);
    assembled = assemble_model(spec, data, field, &expert);
    hyper = default_hyper(spec);
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

void BM_CategoryProb(benchmark::State& state) {
  double mu = 0.01;
  for (auto _ : state) {
    benchmark::DoNotOptimize(expert_category_prob({mu, 2.0}, 2));
    mu = mu > 0.98 ? 0.01 : mu + 0.013;
  }
}
BENCHMARK(BM_CategoryProb);

void BM_FitBinomialApprox(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(fit_binomial_approx(2.0, CategoryCutoffs{}, 10));
}
BENCHMARK(BM_FitBinomialApprox)->Unit(benchmark::kMillisecond);

void BM_BarrierPrecision(benchmark::State& state) {
  const JointModel& m = *fixture().assembled.model;
  for (auto _ : state) benchmark::DoNotOptimize(m.field_model().precision(fixture().hyper.field));
  state.counters["vertices"] = static_cast<double>(m.field_model().dim());
}
BENCHMARK(BM_BarrierPrecision)->Unit(benchmark::kMillisecond);

void BM_LaplaceFit(benchmark::State& state) {
  const JointModel& m = *fixture().assembled.model;
  const PriorPrecision prior = m.prior_precision(fixture().hyper);
  for (auto _ : state) benchmark::DoNotOptimize(laplace_fit(m, prior));
  state.counters["dim"] = static_cast<double>(m.layout().dim());
}
BENCHMARK(BM_LaplaceFit)->Unit(benchmark::kMillisecond);

void BM_LooCpo(benchmark::State& state) {
  const Fixture& f = fixture();
  const FitResult fit = fit_fixed(*f.assembled.model, f.hyper);
  LooOptions opt;
  opt.threads = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(loo_cpo(*f.assembled.model, f.assembled.survey_block, fit, opt));
}
BENCHMARK(BM_LooCpo)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
