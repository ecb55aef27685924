#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include <gtest/gtest.h>
#include <json.hpp>

#include "esdm/error.hpp"
#include "esdm/pipeline.hpp"
#include "esdm/raster.hpp"

using namespace esdm;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliRun {
  int code = -1;
  std::string output;
};

CliRun run_cli(const std::string& args) {
  const std::string cmd = std::string(ESDM_CLI_PATH) + " " + args + " 2>&1";
  CliRun r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  while (std::fgets(buf, sizeof buf, p)) r.output += buf;
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

const char* kScenario = R"({"seed": 5, "geometry": {"ncols": 12, "nrows": 10, "cell_size": 150, "origin": [0, 0]},
 "barriers": [[750, 0, 900, 900]],
 "experts": [{"alpha_bar": 0, "c_bar": 0.8, "tau_u": 4, "tau_v": 4}],
 "survey": {"points": 30},
 "mesh": {"max_edge_inner": 300, "max_edge_outer": 1000, "cutoff": 50, "offset_inner": 300, "offset_outer": 1000},
 "expert_mesh_edge": 300})";

json model_config(const std::string& data, bool experts, const std::string& out) {
  json c;
  c["label"] = out;
  c["data"] = {{"survey", data + "/survey.csv"},
               {"covariates", {data + "/covariate_1.asc", data + "/covariate_2.asc", data + "/covariate_3.asc"}},
               {"barriers", data + "/truth.json"}};
  if (experts) c["data"]["experts"] = {data + "/expert_1.asc"};
  c["model"] = {{"survey", "presence"}};
  c["mesh"] = {{"max_edge_inner", 300}, {"max_edge_outer", 1000}, {"cutoff", 50},
               {"offset_inner", 300},   {"offset_outer", 1000},    {"expert_edge", 300}};
  c["output_dir"] = out;
  return c;
}

class Pipeline : public ::testing::Test {
 protected:
  static fs::path dir;

  static void SetUpTestSuite() {
    dir = fs::temp_directory_path() / ("esdm_pipeline_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    spit(dir / "scenario.json", kScenario);
    ASSERT_EQ(run_cli("simulate --config " + (dir / "scenario.json").string() + " --out " + (dir / "data").string()).code, 0);
    spit(dir / "se.json", model_config("data", true, "se").dump(1));
    spit(dir / "so.json", model_config("data", false, "so").dump(1));
    for (const char* m : {"se", "so"}) {
      const std::string cfg = (dir / (std::string(m) + ".json")).string();
      const std::string out = (dir / m).string();
      ASSERT_EQ(run_cli("fit --config " + cfg + " --out " + out).code, 0);
      ASSERT_EQ(run_cli("predict --config " + cfg + " --out " + out).code, 0);
      ASSERT_EQ(run_cli("evaluate --config " + cfg + " --out " + out).code, 0);
    }
  }

  static void TearDownTestSuite() { fs::remove_all(dir); }
};

fs::path Pipeline::dir;

}  // namespace

TEST_F(Pipeline, SimulateWritesTheFileContractAndRepeatsByteForByte) {
  const fs::path a = dir / "sim_a", b = dir / "sim_b";
  ASSERT_EQ(run_cli("simulate --seed 11 --out " + a.string()).code, 0);
  ASSERT_EQ(run_cli("simulate --seed 11 --out " + b.string()).code, 0);
  std::set<std::string> names;
  for (const auto& e : fs::directory_iterator(a)) names.insert(e.path().filename().string());
  const std::set<std::string> expected{"covariate_1.asc", "covariate_2.asc", "covariate_3.asc", "survey.csv",
                                       "expert_1.asc",    "expert_2.asc",    "expert_3.asc",    "truth.json"};
  EXPECT_EQ(names, expected);
  for (const auto& n : names) EXPECT_EQ(slurp(a / n), slurp(b / n)) << n;
  ASSERT_EQ(run_cli("simulate --seed 12 --out " + (dir / "sim_c").string()).code, 0);
  EXPECT_NE(slurp(a / "survey.csv"), slurp(dir / "sim_c" / "survey.csv"));
}

TEST_F(Pipeline, MalformedScenarioIsAnInputErrorWithLocation) {
  spit(dir / "bad.json", "{\"seed\": 3,\n \"survey\": {\"points\": }\n}");
  const CliRun r = run_cli("simulate --config " + (dir / "bad.json").string() + " --out " + (dir / "bad").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("line 2"), std::string::npos) << r.output;
}

TEST_F(Pipeline, UnwritableOutputIsRejected) {
  spit(dir / "blocker", "x");
  const CliRun r = run_cli("simulate --out " + (dir / "blocker" / "sub").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("cannot create output directory"), std::string::npos) << r.output;
}

TEST_F(Pipeline, ExpertsWithoutRastersIsAnInputError) {
  json c = model_config("data", false, "noexp");
  c["model"]["num_experts"] = 1;
  spit(dir / "noexp.json", c.dump());
  const CliRun r = run_cli("fit --config " + (dir / "noexp.json").string() + " --out " + (dir / "noexp").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("no expert rasters"), std::string::npos) << r.output;
}

TEST_F(Pipeline, PredictWithoutFitIsAnInputError) {
  const CliRun r = run_cli("predict --config " + (dir / "so.json").string() + " --out " + (dir / "empty").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("run fit first"), std::string::npos) << r.output;
  EXPECT_EQ(run_cli("evaluate --config " + (dir / "so.json").string() + " --out " + (dir / "empty").string()).code, 2);
}

TEST_F(Pipeline, NonConvergenceExitsThreeWithDiagnostics) {
  json c = model_config("data", true, "nc");
  c["inference"] = {{"newton_max_iterations", 1}, {"newton_tolerance", 1e-14}};
  spit(dir / "nc.json", c.dump());
  const CliRun r = run_cli("fit --config " + (dir / "nc.json").string() + " --out " + (dir / "nc").string());
  EXPECT_EQ(r.code, 3) << r.output;
  EXPECT_TRUE(fs::exists(dir / "nc" / "fit_diagnostics.json"));
  EXPECT_FALSE(fs::exists(dir / "nc" / "fit_state.json"));
}

TEST_F(Pipeline, PredictionFilesMatchTheInProcessApi) {
  for (const char* m : {"se", "so"}) {
    const RunConfig cfg = load_run_config((dir / (std::string(m) + ".json")).string());
    const ModelData data = load_model_data(cfg);
    const Mesh field = obtain_field_mesh(data, cfg.mesh, (dir / m).string());
    Mesh expert;
    if (cfg.spec.num_experts > 0) expert = build_uniform_mesh(data.geometry(), cfg.mesh.expert_edge);
    const AssembledModel am = assemble_model(cfg.spec, data, field, cfg.spec.num_experts > 0 ? &expert : nullptr);
    const FitResult fit = load_fit_state(slurp(dir / m / "fit_state.json"), am, cfg.newton);
    const PredictiveRaster pr = posterior_predict(am, fit, data);
    auto check = [&](const Raster& api, const std::string& file) {
      const Raster disk = read_ascii_grid_file((dir / m / file).string());
      ASSERT_EQ(disk.values.size(), api.values.size()) << file;
      for (std::size_t c = 0; c < api.values.size(); ++c) {
        ASSERT_EQ(is_missing(disk.values[c]), is_missing(api.values[c])) << file << " cell " << c;
        if (!is_missing(api.values[c])) EXPECT_NEAR(disk.values[c], api.values[c], 1e-12) << file << " cell " << c;
      }
    };
    check(pr.mean, "mean.asc");
    check(pr.sd, "sd.asc");
    ASSERT_EQ(pr.expert_mean.size(), static_cast<std::size_t>(cfg.spec.num_experts));
    for (std::size_t j = 0; j < pr.expert_mean.size(); ++j) {
      check(pr.expert_mean[j], "expert_" + std::to_string(j + 1) + "_mean.asc");
      check(pr.expert_sd[j], "expert_" + std::to_string(j + 1) + "_sd.asc");
    }
    EXPECT_EQ(fs::exists(dir / m / "expert_1_mean.asc"), cfg.spec.num_experts > 0);
  }
}

TEST_F(Pipeline, CellsWithMissingCovariatesPredictAsNodata) {
  const fs::path d = dir / "holes";
  fs::create_directories(d);
  for (const auto& e : fs::directory_iterator(dir / "data")) fs::copy_file(e.path(), d / e.path().filename());
  Raster cov = read_ascii_grid_file((d / "covariate_2.asc").string());
  const SurveyTable survey = read_survey_csv_file((d / "survey.csv").string());
  std::vector<bool> occupied(cov.values.size(), false);
  for (const Point& q : survey.locations) {
    const auto c = cov.geometry.cell_index(q);
    if (c) occupied[*c] = true;
  }
  std::vector<std::size_t> holes;
  for (std::size_t c = 0; c < occupied.size() && holes.size() < 3; ++c)
    if (!occupied[c]) holes.push_back(c);
  ASSERT_EQ(holes.size(), 3u);
  for (auto c : holes) cov.values[c] = kMissing;
  write_ascii_grid_file((d / "covariate_2.asc").string(), cov);
  spit(dir / "holes.json", model_config("holes", false, "holes_out").dump());
  const std::string args = " --config " + (dir / "holes.json").string() + " --out " + (dir / "holes_out").string();
  ASSERT_EQ(run_cli("fit" + args).code, 0);
  ASSERT_EQ(run_cli("predict" + args).code, 0);
  const Raster mean = read_ascii_grid_file((dir / "holes_out" / "mean.asc").string());
  std::size_t missing = 0;
  for (double v : mean.values) missing += is_missing(v);
  EXPECT_EQ(missing, holes.size());
  for (auto c : holes) EXPECT_TRUE(is_missing(mean.values[c]));
}

TEST_F(Pipeline, RefitFromStateReproducesHyperMap) {
  const json state = json::parse(slurp(dir / "se" / "fit_state.json"));
  json c = model_config("data", true, "refit");
  c["inference"] = {{"initial_hyper", state.at("hyper")}};
  spit(dir / "refit.json", c.dump());
  ASSERT_EQ(run_cli("fit --config " + (dir / "refit.json").string() + " --out " + (dir / "refit").string()).code, 0);
  const json again = json::parse(slurp(dir / "refit" / "fit_state.json"));
  const double s0 = state["hyper"]["field"]["sigma"], s1 = again["hyper"]["field"]["sigma"];
  const double r0 = state["hyper"]["field"]["range"], r1 = again["hyper"]["field"]["range"];
  EXPECT_NEAR(s1, s0, 1e-10 * s0);
  EXPECT_NEAR(r1, r0, 1e-10 * r0);
  for (std::size_t j = 0; j < state["hyper"]["experts"].size(); ++j) {
    for (const char* k : {"tau_u", "tau_v"}) {
      const double a = state["hyper"]["experts"][j][k], b = again["hyper"]["experts"][j][k];
      EXPECT_NEAR(b, a, 1e-10 * a) << k;
    }
  }
}

TEST_F(Pipeline, FitIsDeterministic) {
  ASSERT_EQ(run_cli("fit --config " + (dir / "se.json").string() + " --out " + (dir / "se_again").string()).code, 0);
  EXPECT_EQ(slurp(dir / "se_again" / "fit_state.json"), slurp(dir / "se" / "fit_state.json"));
  EXPECT_EQ(slurp(dir / "se_again" / "fit.json"), slurp(dir / "se" / "fit.json"));
}

TEST_F(Pipeline, JsonAndTextReportsAgree) {
  for (const char* m : {"se", "so"}) {
    const json j = json::parse(slurp(dir / m / "scores.json"));
    std::istringstream in(slurp(dir / m / "scores.txt"));
    std::string header, row;
    std::getline(in, header);
    std::getline(in, row);
    EXPECT_EQ(row.rfind(j.at("survey").get<std::string>() + " " + j.at("expert").get<std::string>(), 0), 0u);
    std::istringstream cells(row.substr(row.find(' ', 4)));
    double lpd_v, acc_v, bacc_v, crps_v;
    ASSERT_TRUE(cells >> lpd_v >> acc_v >> bacc_v >> crps_v);
    EXPECT_EQ(lpd_v, j.at("lpd").get<double>());
    EXPECT_EQ(acc_v, j.at("acc").get<double>());
    EXPECT_EQ(bacc_v, j.at("bacc").get<double>());
    EXPECT_EQ(crps_v, j.at("crps").get<double>());
    EXPECT_EQ(j.at("n").get<std::size_t>(), j.at("cpo").size());
  }
}

TEST_F(Pipeline, CompareTabulatesAndRejectsMismatchedSurveys) {
  const CliRun ok = run_cli("compare --config " + (dir / "se.json").string() + " --config " +
                         (dir / "so.json").string() + " --out " + (dir / "cmp").string());
  ASSERT_EQ(ok.code, 0) << ok.output;
  std::istringstream in(ok.output);
  std::string header, r1, r2, extra;
  std::getline(in, header);
  std::getline(in, r1);
  std::getline(in, r2);
  EXPECT_FALSE(std::getline(in, extra) && !extra.empty());
  EXPECT_EQ(r1.rfind("p/a abu", 0), 0u);
  EXPECT_EQ(r2.rfind("p/a --", 0), 0u);
  EXPECT_EQ(slurp(dir / "cmp" / "comparison.txt"), ok.output);
  const double l1 = json::parse(slurp(dir / "se" / "scores.json")).at("lpd");
  const double l2 = json::parse(slurp(dir / "so" / "scores.json")).at("lpd");
  double c1, c2;
  std::istringstream(r1.substr(8)) >> c1;
  std::istringstream(r2.substr(8)) >> c2;
  EXPECT_EQ(c1, l1);
  EXPECT_EQ(c2, l2);

  // Same model on a different survey draw.
  spit(dir / "scenario2.json", json::parse(kScenario).dump());
  ASSERT_EQ(run_cli("simulate --seed 6 --config " + (dir / "scenario2.json").string() + " --out " +
                    (dir / "data2").string())
                .code,
            0);
  spit(dir / "so2.json", model_config("data2", false, "so2").dump());
  const std::string args = " --config " + (dir / "so2.json").string() + " --out " + (dir / "so2").string();
  ASSERT_EQ(run_cli("fit" + args).code, 0);
  ASSERT_EQ(run_cli("evaluate" + args).code, 0);
  const CliRun bad = run_cli("compare --config " + (dir / "so.json").string() + " --config " +
                          (dir / "so2" / "scores.json").string());
  EXPECT_EQ(bad.code, 2);
  EXPECT_NE(bad.output.find("different survey dataset"), std::string::npos) << bad.output;
  EXPECT_THROW(cmd_compare({(dir / "so.json").string(), (dir / "so2.json").string()}, "", nullptr), InputError);
  EXPECT_THROW(cmd_compare({(dir / "so.json").string()}, "", nullptr), InputError);
}

TEST_F(Pipeline, CountModelsLeaveClassificationScoresBlank) {
  json s = json::parse(kScenario);
  s["survey"]["likelihood"] = "count";
  s["survey"]["volume"] = 2.0;
  spit(dir / "count_scenario.json", s.dump());
  ASSERT_EQ(run_cli("simulate --config " + (dir / "count_scenario.json").string() + " --out " +
                    (dir / "count_data").string())
                .code,
            0);
  json c = model_config("count_data", false, "count");
  c["model"]["survey"] = "count";
  spit(dir / "count.json", c.dump());
  const std::string args = " --config " + (dir / "count.json").string() + " --out " + (dir / "count").string();
  ASSERT_EQ(run_cli("fit" + args).code, 0);
  ASSERT_EQ(run_cli("evaluate" + args).code, 0);
  const json j = json::parse(slurp(dir / "count" / "scores.json"));
  EXPECT_EQ(j.at("survey"), "abu");
  EXPECT_TRUE(j.at("acc").is_null());
  EXPECT_TRUE(j.at("bacc").is_null());
  EXPECT_TRUE(j.at("crps").is_null());
  EXPECT_TRUE(std::isfinite(j.at("lpd").get<double>()));
  EXPECT_TRUE(json::parse(slurp(dir / "count" / "fit.json")).at("hyper").contains("overdispersion"));
}

TEST_F(Pipeline, EvaluationIsThreadInvariant) {
  const std::string cfg = (dir / "se.json").string();
  ASSERT_EQ(run_cli("evaluate --threads 3 --config " + cfg + " --out " + (dir / "se").string()).code, 0);
  const json a = json::parse(slurp(dir / "se" / "scores.json"));
  ASSERT_EQ(run_cli("evaluate --threads 1 --config " + cfg + " --out " + (dir / "se").string()).code, 0);
  const json b = json::parse(slurp(dir / "se" / "scores.json"));
  EXPECT_EQ(a.dump(), b.dump());
}

// Near its mode this fit reaches steps whose gain is below the rounding of
// the joint log-density.
TEST(SyntheticFit, NewtonFinishesBelowObjectiveResolution) {
  TruthScenario t = default_scenario(1019);
  ExpertProfile e;
  e.c_bar = 0.8;
  t.experts = {e};
  t.survey_points = 40;
  const SimulatedDataset d = simulate(t);
  ModelData data;
  data.survey = d.survey;
  data.covariates = d.covariates;
  data.experts = d.experts;
  data.barriers = t.barriers;
  ModelSpec spec;
  spec.num_experts = 1;
  spec.covariate_names = {"c1", "c2", "c3"};
  MeshSettings ms;
  ms.params = t.mesh;
  const Mesh field = obtain_field_mesh(data, ms, "");
  const Mesh expert = build_uniform_mesh(data.geometry(), t.expert_mesh_edge);
  const AssembledModel am = assemble_model(spec, data, field, &expert);
  const GaussianApprox a = laplace_fit(*am.model, default_hyper(spec));
  EXPECT_LE(a.grad_norm, NewtonOptions{}.tolerance);
}

TEST(ScenarioDocument, DefaultsAndRejections) {
  const TruthScenario t = parse_scenario("{}");
  const TruthScenario d = default_scenario();
  EXPECT_EQ(t.geometry.ncols, d.geometry.ncols);
  EXPECT_EQ(t.experts.size(), 3u);
  EXPECT_THROW(parse_scenario("{\"preset\": \"other\"}"), InputError);
  EXPECT_THROW(parse_scenario("[1, 2]"), InputError);
  EXPECT_THROW(parse_scenario("{\"survey\": {\"points\": \"many\"}}"), InputError);
}

TEST(RunConfigDocument, ResolvesPathsAndValidates) {
  const json c = model_config("data", true, "out");
  const RunConfig r = parse_run_config(c.dump(), "/base");
  EXPECT_EQ(r.survey_path, "/base/data/survey.csv");
  EXPECT_EQ(r.output_dir, "/base/out");
  EXPECT_EQ(r.spec.num_experts, 1);
  EXPECT_EQ(r.spec.covariate_names, (std::vector<std::string>{"covariate_1", "covariate_2", "covariate_3"}));
  json bad = c;
  bad["inference"] = {{"fixed", {"field.nonsense"}}};
  EXPECT_THROW(parse_run_config(bad.dump(), "/base"), InputError);
  json fixed = c;
  fixed["inference"] = {{"fixed", {"field.range"}}};
  const RunConfig f = parse_run_config(fixed.dump(), "/base");
  ASSERT_EQ(f.optimize.free.size(), hyper_names(f.spec).size());
  EXPECT_FALSE(f.optimize.free[1]);
  EXPECT_TRUE(f.optimize.free[0]);
  EXPECT_THROW(parse_run_config("{\"data\": {}}", "/base"), InputError);
}

TEST(SurveyHash, Fnv1aReference) {
  EXPECT_EQ(fnv1a_hex(""), "cbf29ce484222325");
  EXPECT_EQ(fnv1a_hex("a"), "af63dc4c8601ec8c");
}
