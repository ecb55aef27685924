#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "esdm/evaluation.hpp"
#include "esdm/inference.hpp"
#include "esdm/mesh.hpp"
#include "esdm/model.hpp"
#include "esdm/simulation.hpp"
#include "esdm/survey.hpp"

namespace esdm {

struct MeshSettings {
  MeshParams params;
  double expert_edge = 500.0;
  std::string cache_dir;  // empty = output directory
};

struct RunConfig {
  std::filesystem::path base_dir;
  std::string label;
  std::string survey_path;
  std::vector<std::string> covariate_paths;
  std::vector<std::string> expert_paths;
  std::string barrier_path;  // polygon text, or a JSON document with a "barriers" array
  std::string output_dir;    // used by compare to locate scores
  ModelSpec spec;
  MeshSettings mesh;
  NewtonOptions newton;
  OptimizeOptions optimize;
  int threads = 1;
  std::optional<Hyper> initial_hyper;
  bool optimize_hyper = true;
};

// JSON model configuration; relative paths resolve against base_dir.
RunConfig parse_run_config(const std::string& json_text, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::string& path);

struct ModelData {
  SurveyTable survey;
  std::vector<Raster> covariates;
  std::vector<Raster> experts;
  std::vector<Polygon> barriers;

  const RasterGeometry& geometry() const { return covariates.at(0).geometry; }
  void validate(const ModelSpec& spec) const;
};

ModelData load_model_data(const RunConfig& config);

// Barrier mesh with survey points forced as vertices; cached on disk under
// a hash of its inputs when cache_dir is non-empty.
Mesh obtain_field_mesh(const ModelData& data, const MeshSettings& settings, const std::string& cache_dir,
                       std::string* cache_file = nullptr);
std::string field_mesh_hash(const ModelData& data, const MeshParams& params);

struct AssembledModel {
  std::shared_ptr<const Mesh> field_mesh;
  std::shared_ptr<const Mesh> expert_mesh;
  std::shared_ptr<const JointModel> model;
  std::vector<double> covariate_mean, covariate_sd;
  std::size_t survey_block = 0;
  std::vector<std::size_t> expert_blocks;
  std::vector<std::vector<int>> expert_vertices;  // expert-mesh vertex per row
  std::vector<Point> survey_locations;
};

AssembledModel assemble_model(const ModelSpec& spec, const ModelData& data, const Mesh& field_mesh,
                              const Mesh* expert_mesh);

struct PredictiveRaster {
  Raster mean, sd;
  std::vector<Raster> expert_mean, expert_sd;  // logit μ̄ surfaces
};

PredictiveRaster posterior_predict(const AssembledModel& assembled, const FitResult& fit, const ModelData& data);

// Fit state: hyperparameters and latent mode at full precision.
std::string fit_state_json(const AssembledModel& assembled, const FitResult& fit);
FitResult load_fit_state(const std::string& json_text, const AssembledModel& assembled, const NewtonOptions& newton);
std::string fit_report_json(const AssembledModel& assembled, const FitResult& fit, const RunConfig& config);

struct EvaluationOutput {
  ScoreReport report;
  LooResult loo;
  std::string survey_hash;
};

EvaluationOutput evaluate_fit(const AssembledModel& assembled, const FitResult& fit, const ModelData& data,
                              const LooOptions& options);

std::string survey_label(const ModelSpec& spec);
std::string expert_label(const ModelSpec& spec);
std::string scores_json(const EvaluationOutput& eval, const RunConfig& config);
std::string scores_text(const EvaluationOutput& eval, const RunConfig& config);

std::string fnv1a_hex(const std::string& bytes);

// Scenario document (JSON); missing keys take default_scenario values.
TruthScenario parse_scenario(const std::string& json_text);
std::string truth_json(const SimulatedDataset& data);

// Command drivers writing into `out_dir`. `log` receives progress lines.
using Logger = std::function<void(const std::string&)>;
void cmd_simulate(const std::optional<std::string>& scenario_path, const std::string& out_dir,
                  std::optional<std::uint64_t> seed, const Logger& log);
void cmd_fit(const std::string& config_path, const std::string& out_dir, int threads, const Logger& log);
void cmd_predict(const std::string& config_path, const std::string& out_dir, const Logger& log);
void cmd_evaluate(const std::string& config_path, const std::string& out_dir, int threads, const Logger& log);
// Each path is a scores.json file or a model config whose output_dir holds one.
std::string cmd_compare(const std::vector<std::string>& paths, const std::string& out_dir, const Logger& log);

}  // namespace esdm
