#include "esdm/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "esdm/error.hpp"
#include "esdm/gmrf.hpp"
#include "esdm/projection.hpp"
#include "esdm/special_functions.hpp"

namespace esdm {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string read_text(const fs::path& p, const std::string& what) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw InputError("cannot open " + what + " '" + p.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw InputError("cannot write '" + p.string() + "'");
  out << text;
  if (!out) throw InputError("write failed for '" + p.string() + "'");
}

fs::path ensure_dir(const std::string& dir) {
  const fs::path p = dir.empty() ? fs::path(".") : fs::path(dir);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec || !fs::is_directory(p)) throw InputError("cannot create output directory '" + p.string() + "'");
  return p;
}

json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw InputError("malformed " + what + ": " + e.what());
  }
}

// Typed field access with InputError on type mismatches.
template <class T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.is_object() || !j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw InputError(std::string("config: field '") + key + "' has the wrong type");
  }
}

const json& object_or_empty(const json& j, const char* key) {
  static const json empty = json::object();
  if (!j.is_object() || !j.contains(key)) return empty;
  const json& v = j.at(key);
  if (!v.is_object()) throw InputError(std::string("config: '") + key + "' must be an object");
  return v;
}

std::string resolve(const fs::path& base, const std::string& p) {
  if (p.empty()) return p;
  const fs::path q(p);
  return (q.is_absolute() ? q : base / q).lexically_normal().string();
}

Polygon parse_polygon(const json& j) {
  if (!j.is_array()) throw InputError("polygon must be an array");
  if (j.size() == 4 && j[0].is_number()) {
    const auto v = j.get<std::vector<double>>();
    return rectangle(v[0], v[1], v[2], v[3]);
  }
  Polygon poly;
  for (const auto& pt : j) {
    if (!pt.is_array() || pt.size() != 2) throw InputError("polygon vertices must be [x, y] pairs");
    poly.push_back({pt[0].get<double>(), pt[1].get<double>()});
  }
  if (poly.size() < 3) throw InputError("polygon needs at least three vertices");
  return poly;
}

json polygon_json(const Polygon& poly) {
  json a = json::array();
  for (const Point& p : poly) a.push_back({p.x, p.y});
  return a;
}

GammaPrior parse_gamma(const json& j, GammaPrior fallback) {
  if (j.is_null()) return fallback;
  return {get_or(j, "shape", fallback.shape), get_or(j, "rate", fallback.rate)};
}

ModelPriors parse_priors(const json& j) {
  ModelPriors p;
  p.fixed_variance = get_or(j, "fixed_variance", p.fixed_variance);
  p.alpha_bar_sd = get_or(j, "alpha_bar_sd", p.alpha_bar_sd);
  p.c_bar_sd = get_or(j, "c_bar_sd", p.c_bar_sd);
  const json& f = object_or_empty(j, "field");
  p.field.sigma_upper = get_or(f, "sigma_upper", p.field.sigma_upper);
  p.field.sigma_tail = get_or(f, "sigma_tail", p.field.sigma_tail);
  p.field.range_lower = get_or(f, "range_lower", p.field.range_lower);
  p.field.range_tail = get_or(f, "range_tail", p.field.range_tail);
  if (j.contains("tau_u")) p.tau_u = parse_gamma(j.at("tau_u"), p.tau_u);
  if (j.contains("tau_v")) p.tau_v = parse_gamma(j.at("tau_v"), p.tau_v);
  if (j.contains("overdispersion")) p.overdispersion = parse_gamma(j.at("overdispersion"), p.overdispersion);
  p.barrier_fraction = get_or(j, "barrier_fraction", p.barrier_fraction);
  p.validate();
  return p;
}

CategoryCutoffs parse_cutoffs(const json& j, CategoryCutoffs fallback) {
  if (j.is_null()) return fallback;
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 3) throw InputError("cutoffs must have three values");
  CategoryCutoffs c;
  std::copy(v.begin(), v.end(), c.values.begin());
  c.validate();
  return c;
}

MeshParams parse_mesh_params(const json& j, MeshParams p) {
  p.max_edge_inner = get_or(j, "max_edge_inner", p.max_edge_inner);
  p.max_edge_outer = get_or(j, "max_edge_outer", p.max_edge_outer);
  p.cutoff = get_or(j, "cutoff", p.cutoff);
  p.offset_inner = get_or(j, "offset_inner", p.offset_inner);
  p.offset_outer = get_or(j, "offset_outer", p.offset_outer);
  return p;
}

Hyper parse_hyper(const json& j, const ModelSpec& spec) {
  Hyper h = default_hyper(spec);
  const json& f = object_or_empty(j, "field");
  h.field.sigma = get_or(f, "sigma", h.field.sigma);
  h.field.range = get_or(f, "range", h.field.range);
  if (j.contains("experts")) {
    const json& e = j.at("experts");
    if (!e.is_array() || static_cast<int>(e.size()) != spec.num_experts)
      throw InputError("initial hyper: one entry per expert required");
    for (int k = 0; k < spec.num_experts; ++k) {
      h.experts[k].tau_u = get_or(e[k], "tau_u", h.experts[k].tau_u);
      h.experts[k].tau_v = get_or(e[k], "tau_v", h.experts[k].tau_v);
    }
  }
  h.overdispersion = get_or(j, "overdispersion", h.overdispersion);
  return h;
}

json hyper_json(const Hyper& h, const ModelSpec& spec) {
  json j;
  j["field"] = {{"sigma", h.field.sigma}, {"range", h.field.range}, {"barrier_fraction", h.field.barrier_fraction}};
  json e = json::array();
  for (const auto& b : h.experts) e.push_back({{"tau_u", b.tau_u}, {"tau_v", b.tau_v}});
  j["experts"] = e;
  if (spec.has_overdispersion()) j["overdispersion"] = h.overdispersion;
  return j;
}

std::vector<Polygon> load_barriers(const std::string& path) {
  if (path.empty()) return {};
  if (fs::path(path).extension() == ".json") {
    const json j = parse_json(read_text(path, "barrier document"), "barrier document '" + path + "'");
    if (!j.contains("barriers")) throw InputError("barrier document '" + path + "' has no 'barriers' array");
    std::vector<Polygon> out;
    for (const auto& p : j.at("barriers")) out.push_back(parse_polygon(p));
    return out;
  }
  return read_polygons_file(path);
}

Eigen::VectorXd solve_unit(const SparseCholesky& f, Eigen::Index dim, int i) {
  Eigen::VectorXd e = Eigen::VectorXd::Zero(dim);
  e[i] = 1.0;
  return f.solve(e);
}

json posterior_summary(const GaussianApprox& a, int i) {
  const Eigen::VectorXd col = solve_unit(*a.factor, a.mode.size(), i);
  return {{"mean", a.mode[i]}, {"sd", std::sqrt(std::max(0.0, col[i]))}};
}

ProjectionMatrix unit_rows(const std::vector<int>& cols, Eigen::Index ncols) {
  ProjectionMatrix m(static_cast<Eigen::Index>(cols.size()), ncols);
  std::vector<Eigen::Triplet<double>> t;
  for (std::size_t r = 0; r < cols.size(); ++r) t.emplace_back(static_cast<int>(r), cols[r], 1.0);
  m.setFromTriplets(t.begin(), t.end());
  return m;
}

ProjectionMatrix select_rows(const ProjectionMatrix& a, const std::vector<int>& rows) {
  ProjectionMatrix m(static_cast<Eigen::Index>(rows.size()), a.cols());
  std::vector<Eigen::Triplet<double>> t;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (ProjectionMatrix::InnerIterator it(a, rows[r]); it; ++it)
      t.emplace_back(static_cast<int>(r), static_cast<int>(it.col()), it.value());
  }
  m.setFromTriplets(t.begin(), t.end());
  return m;
}

}  // namespace

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

RunConfig parse_run_config(const std::string& text, const fs::path& base_dir) {
  const json j = parse_json(text, "model config");
  if (!j.is_object()) throw InputError("model config must be a JSON object");
  RunConfig c;
  c.base_dir = base_dir;
  try {
    c.label = get_or<std::string>(j, "label", "");
    const json& d = object_or_empty(j, "data");
    c.survey_path = resolve(base_dir, get_or<std::string>(d, "survey", ""));
    for (const auto& p : get_or(d, "covariates", std::vector<std::string>{})) c.covariate_paths.push_back(resolve(base_dir, p));
    for (const auto& p : get_or(d, "experts", std::vector<std::string>{})) c.expert_paths.push_back(resolve(base_dir, p));
    c.barrier_path = resolve(base_dir, get_or<std::string>(d, "barriers", ""));
    c.output_dir = resolve(base_dir, get_or<std::string>(j, "output_dir", ""));

    const json& m = object_or_empty(j, "model");
    ModelSpec& s = c.spec;
    s.survey = parse_survey_likelihood(get_or<std::string>(m, "survey", "presence"));
    s.expert_categories = parse_expert_categories(get_or<std::string>(m, "expert_categories", "four"));
    s.expert_approximation = parse_expert_approximation(get_or<std::string>(m, "expert_approximation", "exact"));
    s.num_experts = get_or(m, "num_experts", static_cast<int>(c.expert_paths.size()));
    s.covariate_names = get_or(m, "covariate_names", std::vector<std::string>{});
    s.s_bar = get_or(m, "s_bar", s.s_bar);
    s.cutoffs = parse_cutoffs(m.contains("cutoffs") ? m.at("cutoffs") : json(), s.cutoffs);
    s.gaussian_variance = get_or(m, "gaussian_variance", s.gaussian_variance);
    s.priors = parse_priors(object_or_empty(m, "priors"));

    const json& me = object_or_empty(j, "mesh");
    c.mesh.params = parse_mesh_params(me, c.mesh.params);
    c.mesh.expert_edge = get_or(me, "expert_edge", c.mesh.expert_edge);
    c.mesh.cache_dir = resolve(base_dir, get_or<std::string>(me, "cache_dir", ""));

    const json& inf = object_or_empty(j, "inference");
    c.newton.tolerance = get_or(inf, "newton_tolerance", c.newton.tolerance);
    c.newton.max_iterations = get_or(inf, "newton_max_iterations", c.newton.max_iterations);
    c.optimize.tolerance = get_or(inf, "hyper_tolerance", c.optimize.tolerance);
    c.optimize.max_sweeps = get_or(inf, "max_sweeps", c.optimize.max_sweeps);
    c.optimize.newton = c.newton;
    c.optimize_hyper = get_or(inf, "optimize", true);
    c.threads = get_or(inf, "threads", c.threads);
    s.validate();
    if (inf.contains("initial_hyper")) c.initial_hyper = parse_hyper(inf.at("initial_hyper"), s);
    if (inf.contains("fixed")) {
      const auto fixed = inf.at("fixed").get<std::vector<std::string>>();
      const auto names = hyper_names(s);
      c.optimize.free.assign(names.size(), true);
      for (const auto& f : fixed) {
        const auto it = std::find(names.begin(), names.end(), f);
        if (it == names.end()) throw InputError("config: unknown hyperparameter '" + f + "' in inference.fixed");
        c.optimize.free[static_cast<std::size_t>(it - names.begin())] = false;
      }
    }
  } catch (const json::exception& e) {
    throw InputError(std::string("model config: ") + e.what());
  }
  if (c.survey_path.empty()) throw InputError("model config: data.survey is required");
  if (c.covariate_paths.empty()) throw InputError("model config: data.covariates must list at least one raster");
  if (c.spec.num_experts > 0 && c.expert_paths.empty())
    throw InputError("model config: experts requested but no expert rasters given");
  if (c.spec.num_experts != static_cast<int>(c.expert_paths.size()))
    throw InputError("model config: num_experts does not match the number of expert rasters");
  if (c.spec.covariate_names.empty()) {
    for (std::size_t i = 0; i < c.covariate_paths.size(); ++i)
      c.spec.covariate_names.push_back(fs::path(c.covariate_paths[i]).stem().string());
  }
  if (c.spec.covariate_names.size() != c.covariate_paths.size())
    throw InputError("model config: covariate_names does not match data.covariates");
  if (c.label.empty()) c.label = survey_label(c.spec) + "/" + expert_label(c.spec);
  return c;
}

RunConfig load_run_config(const std::string& path) {
  const std::string text = read_text(path, "model config");
  return parse_run_config(text, fs::absolute(path).parent_path());
}

void ModelData::validate(const ModelSpec& spec) const {
  if (covariates.empty()) throw InputError("data: no covariate rasters");
  for (const auto& r : covariates) {
    if (!(r.geometry == geometry())) throw InputError("data: covariate rasters have different geometries");
  }
  for (const auto& r : experts) {
    if (!(r.geometry == geometry())) throw InputError("data: expert raster geometry differs from the covariates");
    validate_categorical(r);
  }
  if (static_cast<int>(experts.size()) != spec.num_experts)
    throw InputError("data: expected " + std::to_string(spec.num_experts) + " expert rasters");
  survey.validate();
  if (survey.size() == 0) throw InputError("data: survey table is empty");
  if (survey.presence != (spec.survey == SurveyLikelihood::presence) && spec.survey != SurveyLikelihood::gaussian)
    throw InputError(std::string("data: survey table holds ") + (survey.presence ? "presences" : "counts") +
                     " but the model expects " + to_string(spec.survey));
  for (std::size_t i = 0; i < survey.size(); ++i) {
    if (!geometry().contains(survey.locations[i]))
      throw InputError("data: survey point " + std::to_string(i) + " lies outside the raster domain");
  }
}

ModelData load_model_data(const RunConfig& config) {
  ModelData d;
  d.survey = read_survey_csv_file(config.survey_path);
  for (const auto& p : config.covariate_paths) d.covariates.push_back(read_ascii_grid_file(p));
  for (const auto& p : config.expert_paths) d.experts.push_back(read_ascii_grid_file(p));
  d.barriers = load_barriers(config.barrier_path);
  d.validate(config.spec);
  return d;
}

std::string field_mesh_hash(const ModelData& data, const MeshParams& p) {
  std::ostringstream s;
  const RasterGeometry& g = data.geometry();
  s << "g " << g.ncols << ' ' << g.nrows << ' ' << fmt(g.cell_size) << ' ' << fmt(g.origin.x) << ' '
    << fmt(g.origin.y) << '\n';
  s << "p " << fmt(p.max_edge_inner) << ' ' << fmt(p.max_edge_outer) << ' ' << fmt(p.cutoff) << ' '
    << fmt(p.offset_inner) << ' ' << fmt(p.offset_outer) << '\n';
  for (const auto& poly : data.barriers) {
    s << "b";
    for (const Point& q : poly) s << ' ' << fmt(q.x) << ' ' << fmt(q.y);
    s << '\n';
  }
  for (const Point& q : data.survey.locations) s << "f " << fmt(q.x) << ' ' << fmt(q.y) << '\n';
  return fnv1a_hex(s.str());
}

Mesh obtain_field_mesh(const ModelData& data, const MeshSettings& settings, const std::string& cache_dir,
                       std::string* cache_file) {
  fs::path file;
  if (!cache_dir.empty()) {
    file = ensure_dir(cache_dir) / ("mesh_" + field_mesh_hash(data, settings.params) + ".txt");
    if (cache_file) *cache_file = file.string();
    if (fs::exists(file)) {
      Mesh m = read_mesh_file(file.string());
      m.validate();
      return m;
    }
  }
  MeshBuild b = build_mesh(data.geometry(), data.barriers, settings.params, data.survey.locations);
  if (!file.empty()) write_mesh_file(file.string(), b.mesh);
  return std::move(b.mesh);
}

AssembledModel assemble_model(const ModelSpec& spec_in, const ModelData& data, const Mesh& field_mesh,
                              const Mesh* expert_mesh) {
  ModelSpec spec = spec_in;
  spec.validate();
  data.validate(spec);
  if (spec.num_experts > 0 && !expert_mesh) throw InputError("assemble: experts require an expert mesh");
  if (spec.expert_approximation == ExpertApproximation::binomial && spec.num_experts > 0) spec.prepare();

  AssembledModel out;
  out.field_mesh = std::make_shared<const Mesh>(field_mesh);
  if (spec.num_experts > 0) out.expert_mesh = std::make_shared<const Mesh>(*expert_mesh);
  const RasterGeometry& g = data.geometry();
  const auto centers = g.cell_centers();
  const int p = static_cast<int>(data.covariates.size());

  // Standardize over field-mesh vertices with Ã-projected covariates.
  const ProjectionMatrix at_field = reverse_projection(projection_matrix(field_mesh, centers));
  for (const Raster& r : data.covariates) {
    const auto v = project_to_mesh(at_field, r.values, false);
    double sum = 0.0, n = 0.0;
    for (double x : v) {
      if (!is_missing(x)) sum += x, n += 1.0;
    }
    if (n < 2.0) throw InputError("assemble: covariate has fewer than two values on the mesh");
    const double mean = sum / n;
    double ss = 0.0;
    for (double x : v) {
      if (!is_missing(x)) ss += (x - mean) * (x - mean);
    }
    const double sd = std::sqrt(ss / n);
    if (!(sd > 0.0)) throw InputError("assemble: covariate is constant over the mesh");
    out.covariate_mean.push_back(mean);
    out.covariate_sd.push_back(sd);
  }
  auto standardized = [&](int m, double v) { return (v - out.covariate_mean[m]) / out.covariate_sd[m]; };

  LatentLayout layout;
  layout.num_covariates = p;
  layout.num_field = static_cast<int>(field_mesh.num_vertices());
  layout.num_experts = spec.num_experts;
  layout.num_bias = spec.num_experts > 0 ? static_cast<int>(expert_mesh->num_vertices()) : 0;

  std::vector<DesignBlock> blocks;
  {
    DesignBlock b;
    b.kind = BlockKind::survey;
    const std::size_t n = data.survey.size();
    b.covariates.resize(static_cast<Eigen::Index>(n), p);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t cell = *g.cell_index(data.survey.locations[i]);
      for (int m = 0; m < p; ++m) {
        const double v = data.covariates[m].values[cell];
        if (is_missing(v))
          throw InputError("assemble: covariate " + std::to_string(m + 1) + " is missing at survey point " +
                           std::to_string(i));
        b.covariates(static_cast<Eigen::Index>(i), m) = standardized(m, v);
      }
    }
    b.response = data.survey.response;
    b.exposure = data.survey.volume;
    b.field_proj = projection_matrix(field_mesh, data.survey.locations);
    for (Eigen::Index i = 0; i < b.field_proj.rows(); ++i) {
      if (b.field_proj.row(i).nonZeros() == 0)
        throw InputError("assemble: survey point " + std::to_string(i) + " is not covered by the mesh");
    }
    b.bias_proj = ProjectionMatrix(static_cast<Eigen::Index>(n), layout.num_bias);
    out.survey_block = blocks.size();
    out.survey_locations = data.survey.locations;
    blocks.push_back(std::move(b));
  }

  std::shared_ptr<const SparseMatrix> bias_structure;
  if (spec.num_experts > 0) {
    const Mesh& em = *expert_mesh;
    bias_structure = std::make_shared<const SparseMatrix>(structure_matrix(adjacency(em)));
    const ProjectionMatrix at_expert = reverse_projection(projection_matrix(em, centers));
    std::vector<std::vector<double>> cov_v;
    for (const Raster& r : data.covariates) cov_v.push_back(project_to_mesh(at_expert, r.values, false));
    const ProjectionMatrix field_at_vertices = projection_matrix(field_mesh, em.vertices);
    std::vector<int> usable;
    for (int k = 0; k < layout.num_bias; ++k) {
      bool ok = field_at_vertices.row(k).nonZeros() > 0;
      for (int m = 0; m < p && ok; ++m) ok = !is_missing(cov_v[m][k]);
      if (ok) usable.push_back(k);
    }
    auto design_rows = [&](DesignBlock& b, const std::vector<int>& verts) {
      b.covariates.resize(static_cast<Eigen::Index>(verts.size()), p);
      for (std::size_t r = 0; r < verts.size(); ++r) {
        for (int m = 0; m < p; ++m) b.covariates(static_cast<Eigen::Index>(r), m) = standardized(m, cov_v[m][verts[r]]);
      }
      b.field_proj = select_rows(field_at_vertices, verts);
      b.bias_proj = unit_rows(verts, layout.num_bias);
    };
    for (int j = 0; j < spec.num_experts; ++j) {
      const auto z = project_to_mesh(at_expert, data.experts[j].values, true);
      std::vector<int> verts;
      for (int k : usable) {
        if (!is_missing(z[k])) verts.push_back(k);
      }
      DesignBlock b;
      b.kind = BlockKind::expert;
      b.expert = j;
      for (int k : verts) b.response.push_back(z[k]);
      design_rows(b, verts);
      out.expert_blocks.push_back(blocks.size());
      out.expert_vertices.push_back(verts);
      blocks.push_back(std::move(b));
    }
    // Shared predictor at expert-mesh vertices, scaled by c̄_j in each
    // expert row; carries no likelihood of its own.
    DesignBlock link;
    link.kind = BlockKind::link;
    link.response.assign(usable.size(), kMissing);
    design_rows(link, usable);
    blocks.push_back(std::move(link));
  }

  auto field = std::make_shared<const BarrierModel>(field_mesh);
  out.model = std::make_shared<const JointModel>(spec, layout, std::move(blocks), std::move(field),
                                                 std::move(bias_structure));
  return out;
}

PredictiveRaster posterior_predict(const AssembledModel& am, const FitResult& fit, const ModelData& data) {
  const JointModel& model = *am.model;
  const LatentLayout& L = model.layout();
  const RasterGeometry& g = data.geometry();
  const auto centers = g.cell_centers();
  const int p = L.num_covariates;
  const ProjectionMatrix af = projection_matrix(*am.field_mesh, centers);
  std::vector<int> cells;
  for (std::size_t c = 0; c < centers.size(); ++c) {
    bool ok = af.row(static_cast<Eigen::Index>(c)).nonZeros() > 0;
    for (int m = 0; m < p && ok; ++m) ok = !is_missing(data.covariates[m].values[c]);
    if (ok) cells.push_back(static_cast<int>(c));
  }
  DesignBlock b;
  b.kind = BlockKind::survey_prediction;
  b.response.assign(cells.size(), kMissing);
  b.covariates.resize(static_cast<Eigen::Index>(cells.size()), p);
  for (std::size_t r = 0; r < cells.size(); ++r) {
    for (int m = 0; m < p; ++m)
      b.covariates(static_cast<Eigen::Index>(r), m) =
          (data.covariates[m].values[cells[r]] - am.covariate_mean[m]) / am.covariate_sd[m];
  }
  b.field_proj = select_rows(af, cells);
  b.bias_proj = ProjectionMatrix(static_cast<Eigen::Index>(cells.size()), L.num_bias);

  auto to_raster = [&](const std::vector<double>& v) {
    Raster r(g, kMissing);
    for (std::size_t k = 0; k < cells.size(); ++k) r.values[cells[k]] = v[k];
    return r;
  };
  PredictiveRaster out;
  const RowPrediction sp = predict_rows(model, fit.approx, b);
  out.mean = to_raster(sp.mean);
  out.sd = to_raster(sp.sd);
  if (L.num_experts > 0) {
    const ProjectionMatrix ab = projection_matrix(*am.expert_mesh, centers);
    DesignBlock e = b;
    e.kind = BlockKind::expert_prediction;
    e.bias_proj = select_rows(ab, cells);
    for (int j = 0; j < L.num_experts; ++j) {
      e.expert = j;
      const RowPrediction ep = predict_rows(model, fit.approx, e);
      out.expert_mean.push_back(to_raster(ep.mean));
      out.expert_sd.push_back(to_raster(ep.sd));
    }
  }
  return out;
}

std::string fit_state_json(const AssembledModel& am, const FitResult& fit) {
  const ModelSpec& spec = am.model->spec();
  json j;
  j["hyper"] = hyper_json(fit.hyper_map, spec);
  j["dim"] = am.model->layout().dim();
  j["mode"] = std::vector<double>(fit.approx.mode.data(), fit.approx.mode.data() + fit.approx.mode.size());
  j["objective"] = fit.objective;
  return j.dump(1) + "\n";
}

FitResult load_fit_state(const std::string& text, const AssembledModel& am, const NewtonOptions& newton) {
  const JointModel& model = *am.model;
  const json j = parse_json(text, "fit state");
  FitResult r;
  Eigen::VectorXd mode;
  try {
    r.hyper_map = parse_hyper(j.at("hyper"), model.spec());
    r.hyper_map.field.barrier_fraction =
        get_or(j.at("hyper").at("field"), "barrier_fraction", r.hyper_map.field.barrier_fraction);
    const auto v = j.at("mode").get<std::vector<double>>();
    mode = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
  } catch (const json::exception& e) {
    throw InputError(std::string("fit state: ") + e.what());
  }
  if (mode.size() != model.layout().dim())
    throw InputError("fit state: latent dimension does not match the assembled model");
  r.prior = model.prior_precision(r.hyper_map);
  r.approx = laplace_fit(model, r.prior, newton, &mode);
  r.objective = hyper_objective(r.approx, hyper_to_log(r.hyper_map, model.spec()));
  r.diagnostics.evaluations = 1;
  r.diagnostics.newton_iterations = r.approx.iterations;
  r.diagnostics.grad_norm = r.approx.grad_norm;
  r.diagnostics.jitter = r.approx.jitter;
  r.diagnostics.converged = true;
  return r;
}

std::string fit_report_json(const AssembledModel& am, const FitResult& fit, const RunConfig& config) {
  const JointModel& model = *am.model;
  const ModelSpec& spec = model.spec();
  const LatentLayout& L = model.layout();
  json j;
  j["label"] = config.label;
  j["model"] = {{"survey", to_string(spec.survey)},
                {"num_experts", spec.num_experts},
                {"expert_categories", to_string(spec.expert_categories)},
                {"expert_approximation", to_string(spec.expert_approximation)},
                {"s_bar", spec.s_bar}};
  j["hyper"] = hyper_json(fit.hyper_map, spec);
  json fixed;
  fixed["alpha"] = posterior_summary(fit.approx, L.alpha());
  for (int m = 0; m < L.num_covariates; ++m) fixed[spec.covariate_names[m]] = posterior_summary(fit.approx, L.beta(m));
  j["fixed_effects"] = fixed;
  json experts = json::array();
  for (int e = 0; e < L.num_experts; ++e) {
    experts.push_back({{"alpha_bar", posterior_summary(fit.approx, L.alpha_bar(e))},
                       {"c_bar", posterior_summary(fit.approx, L.c_bar(e))},
                       {"rows", am.expert_vertices[e].size()}});
  }
  j["experts"] = experts;
  json stand = json::array();
  for (int m = 0; m < L.num_covariates; ++m)
    stand.push_back({{"name", spec.covariate_names[m]}, {"mean", am.covariate_mean[m]}, {"sd", am.covariate_sd[m]}});
  j["standardization"] = stand;
  // Survey points are forced into the mesh up to cutoff merging.
  double displacement = 0.0;
  for (const Point& q : am.survey_locations) {
    double best = std::numeric_limits<double>::infinity();
    for (const Point& v : am.field_mesh->vertices) best = std::min(best, std::hypot(v.x - q.x, v.y - q.y));
    displacement = std::max(displacement, best);
  }
  j["mesh"] = {{"field_vertices", L.num_field},
               {"field_triangles", am.field_mesh->num_triangles()},
               {"expert_vertices", L.num_bias},
               {"max_survey_displacement", displacement}};
  j["log_marginal"] = fit.approx.log_marginal;
  j["objective"] = fit.objective;
  const FitDiagnostics& d = fit.diagnostics;
  j["diagnostics"] = {{"sweeps", d.sweeps},
                      {"evaluations", d.evaluations},
                      {"failed_evaluations", d.failed_evaluations},
                      {"newton_iterations", d.newton_iterations},
                      {"grad_norm", d.grad_norm},
                      {"jitter", d.jitter},
                      {"converged", d.converged}};
  if (spec.expert_approximation == ExpertApproximation::binomial && spec.num_experts > 0) {
    j["binomial_approx"] = {{"trials", spec.approx.trials}, {"psi", spec.approx.psi}, {"error", spec.approx.error}};
  }
  return j.dump(1) + "\n";
}

EvaluationOutput evaluate_fit(const AssembledModel& am, const FitResult& fit, const ModelData& data,
                              const LooOptions& options) {
  EvaluationOutput out;
  out.loo = loo_cpo(*am.model, am.survey_block, fit, options);
  const auto& y = data.survey.response;
  std::size_t skipped = 0;
  out.report = am.model->spec().survey == SurveyLikelihood::presence ? score_presence(out.loo.cpo, y, &skipped)
                                                                     : score_counts(out.loo.cpo, y, &skipped);
  std::ostringstream s;
  write_survey_csv(s, data.survey);
  out.survey_hash = fnv1a_hex(s.str());
  return out;
}

std::string survey_label(const ModelSpec& spec) {
  switch (spec.survey) {
    case SurveyLikelihood::presence: return "p/a";
    case SurveyLikelihood::count: return "abu";
    case SurveyLikelihood::gaussian: return "gauss";
  }
  return "?";
}

std::string expert_label(const ModelSpec& spec) {
  if (spec.num_experts == 0) return "--";
  return spec.expert_categories == ExpertCategories::binary ? "p/a" : "abu";
}

std::string scores_json(const EvaluationOutput& ev, const RunConfig& config) {
  const ScoreReport& r = ev.report;
  json j;
  j["label"] = config.label;
  j["survey"] = survey_label(config.spec);
  j["expert"] = expert_label(config.spec);
  j["survey_hash"] = ev.survey_hash;
  j["n"] = r.n;
  j["lpd"] = r.lpd;
  j["acc"] = r.acc ? json(*r.acc) : json();
  j["bacc"] = r.bacc ? json(*r.bacc) : json();
  j["crps"] = r.crps ? json(*r.crps) : json();
  json cpo = json::array();
  for (double c : ev.loo.cpo) cpo.push_back(is_missing(c) ? json() : json(c));
  j["cpo"] = cpo;
  j["failures"] = ev.loo.failures;
  return j.dump(1) + "\n";
}

std::string scores_text(const EvaluationOutput& ev, const RunConfig& config) {
  std::ostringstream s;
  write_score_table(s, {survey_label(config.spec) + " " + expert_label(config.spec)}, {ev.report});
  return s.str();
}

TruthScenario parse_scenario(const std::string& text) {
  const json j = parse_json(text, "scenario");
  if (!j.is_object()) throw InputError("scenario must be a JSON object");
  const auto preset = get_or<std::string>(j, "preset", "default");
  if (preset != "default") throw InputError("scenario: unknown preset '" + preset + "'");
  TruthScenario t = default_scenario(get_or<std::uint64_t>(j, "seed", 1));
  try {
    if (j.contains("geometry")) {
      const json& g = j.at("geometry");
      t.geometry.ncols = get_or(g, "ncols", t.geometry.ncols);
      t.geometry.nrows = get_or(g, "nrows", t.geometry.nrows);
      t.geometry.cell_size = get_or(g, "cell_size", t.geometry.cell_size);
      if (g.contains("origin")) {
        const auto o = g.at("origin").get<std::vector<double>>();
        if (o.size() != 2) throw InputError("scenario: geometry.origin must be [x, y]");
        t.geometry.origin = {o[0], o[1]};
      }
    }
    if (j.contains("barriers")) {
      t.barriers.clear();
      for (const auto& p : j.at("barriers")) t.barriers.push_back(parse_polygon(p));
    }
    t.alpha = get_or(j, "alpha", t.alpha);
    t.beta = get_or(j, "beta", t.beta);
    const json& f = object_or_empty(j, "field");
    t.field.sigma = get_or(f, "sigma", t.field.sigma);
    t.field.range = get_or(f, "range", t.field.range);
    t.field.barrier_fraction = get_or(f, "barrier_fraction", t.field.barrier_fraction);
    if (j.contains("experts")) {
      t.experts.clear();
      for (const auto& e : j.at("experts")) {
        ExpertProfile p;
        p.alpha_bar = get_or(e, "alpha_bar", p.alpha_bar);
        p.c_bar = get_or(e, "c_bar", p.c_bar);
        p.bym.tau_u = get_or(e, "tau_u", p.bym.tau_u);
        p.bym.tau_v = get_or(e, "tau_v", p.bym.tau_v);
        if (e.contains("region") && !e.at("region").is_null()) p.region = parse_polygon(e.at("region"));
        t.experts.push_back(std::move(p));
      }
    }
    const json& s = object_or_empty(j, "survey");
    if (s.contains("likelihood")) t.survey = parse_survey_likelihood(s.at("likelihood").get<std::string>());
    t.survey_points = get_or(s, "points", t.survey_points);
    t.volume = get_or(s, "volume", t.volume);
    t.overdispersion = get_or(s, "overdispersion", t.overdispersion);
    if (s.contains("region") && !s.at("region").is_null()) t.survey_region = parse_polygon(s.at("region"));
    t.s_bar = get_or(j, "s_bar", t.s_bar);
    t.cutoffs = parse_cutoffs(j.contains("cutoffs") ? j.at("cutoffs") : json(), t.cutoffs);
    t.mesh = parse_mesh_params(object_or_empty(j, "mesh"), t.mesh);
    t.expert_mesh_edge = get_or(j, "expert_mesh_edge", t.expert_mesh_edge);
  } catch (const json::exception& e) {
    throw InputError(std::string("scenario: ") + e.what());
  }
  t.validate();
  return t;
}

std::string truth_json(const SimulatedDataset& d) {
  const TruthScenario& t = d.truth;
  json j;
  j["seed"] = t.seed;
  j["geometry"] = {{"ncols", t.geometry.ncols},
                   {"nrows", t.geometry.nrows},
                   {"cell_size", t.geometry.cell_size},
                   {"origin", {t.geometry.origin.x, t.geometry.origin.y}}};
  json bars = json::array();
  for (const auto& b : t.barriers) bars.push_back(polygon_json(b));
  j["barriers"] = bars;
  j["alpha"] = t.alpha;
  j["beta"] = t.beta;
  j["field"] = {{"sigma", t.field.sigma}, {"range", t.field.range}, {"barrier_fraction", t.field.barrier_fraction}};
  json ex = json::array();
  for (const auto& e : t.experts) {
    ex.push_back({{"alpha_bar", e.alpha_bar},
                  {"c_bar", e.c_bar},
                  {"tau_u", e.bym.tau_u},
                  {"tau_v", e.bym.tau_v},
                  {"region", e.region.empty() ? json() : polygon_json(e.region)}});
  }
  j["experts"] = ex;
  j["survey"] = {{"likelihood", to_string(t.survey)},
                 {"points", t.survey_points},
                 {"volume", t.volume},
                 {"overdispersion", t.overdispersion},
                 {"region", t.survey_region.empty() ? json() : polygon_json(t.survey_region)}};
  j["s_bar"] = t.s_bar;
  j["cutoffs"] = t.cutoffs.values;
  j["mesh"] = {{"max_edge_inner", t.mesh.max_edge_inner}, {"max_edge_outer", t.mesh.max_edge_outer},
               {"cutoff", t.mesh.cutoff},           {"offset_inner", t.mesh.offset_inner},
               {"offset_outer", t.mesh.offset_outer}};
  j["expert_mesh_edge"] = t.expert_mesh_edge;
  // True survey predictor per cell (row-major, row 0 north).
  const auto centers = t.geometry.cell_centers();
  const Eigen::VectorXd field = projection_matrix(d.field_mesh, centers) * d.phi;
  std::vector<double> eta(centers.size());
  for (std::size_t c = 0; c < centers.size(); ++c) {
    double v = t.alpha + field[static_cast<Eigen::Index>(c)];
    for (std::size_t m = 0; m < d.covariates.size(); ++m) v += t.beta[m] * d.covariates[m].values[c];
    eta[c] = v;
  }
  j["eta"] = eta;
  return j.dump(1) + "\n";
}

namespace {

void log_line(const Logger& log, const std::string& s) {
  if (log) log(s);
}

struct Prepared {
  RunConfig config;
  ModelData data;
  AssembledModel assembled;
};

Prepared prepare(const std::string& config_path, const std::string& out_dir, const Logger& log) {
  Prepared p;
  p.config = load_run_config(config_path);
  p.data = load_model_data(p.config);
  const std::string cache = p.config.mesh.cache_dir.empty() ? out_dir : p.config.mesh.cache_dir;
  std::string cache_file;
  const Mesh field = obtain_field_mesh(p.data, p.config.mesh, cache, &cache_file);
  log_line(log, "field mesh: " + std::to_string(field.num_vertices()) + " vertices (" + cache_file + ")");
  Mesh expert;
  if (p.config.spec.num_experts > 0) expert = build_uniform_mesh(p.data.geometry(), p.config.mesh.expert_edge);
  p.assembled = assemble_model(p.config.spec, p.data, field, p.config.spec.num_experts > 0 ? &expert : nullptr);
  return p;
}

FitResult load_state(const Prepared& p, const fs::path& out) {
  const fs::path state = out / "fit_state.json";
  if (!fs::exists(state)) throw InputError("no fit result at '" + state.string() + "'; run fit first");
  return load_fit_state(read_text(state, "fit state"), p.assembled, p.config.newton);
}

}  // namespace

void cmd_simulate(const std::optional<std::string>& scenario_path, const std::string& out_dir,
                  std::optional<std::uint64_t> seed, const Logger& log) {
  TruthScenario t = scenario_path ? parse_scenario(read_text(*scenario_path, "scenario")) : default_scenario();
  if (seed) t.seed = *seed;
  t.validate();
  const fs::path out = ensure_dir(out_dir);
  log_line(log, "simulating scenario with seed " + std::to_string(t.seed));
  const SimulatedDataset d = simulate(t);
  for (std::size_t m = 0; m < d.covariates.size(); ++m)
    write_ascii_grid_file((out / ("covariate_" + std::to_string(m + 1) + ".asc")).string(), d.covariates[m]);
  write_survey_csv_file((out / "survey.csv").string(), d.survey);
  for (std::size_t j = 0; j < d.experts.size(); ++j)
    write_ascii_grid_file((out / ("expert_" + std::to_string(j + 1) + ".asc")).string(), d.experts[j]);
  write_text(out / "truth.json", truth_json(d));
}

void cmd_fit(const std::string& config_path, const std::string& out_dir, int threads, const Logger& log) {
  const fs::path out = ensure_dir(out_dir);
  Prepared p = prepare(config_path, out.string(), log);
  (void)threads;
  const JointModel& model = *p.assembled.model;
  const Hyper init = p.config.initial_hyper.value_or(default_hyper(model.spec()));
  FitResult fit;
  try {
    if (p.config.optimize_hyper) {
      OptimizeOptions opt = p.config.optimize;
      opt.log = log;
      fit = optimize_hyperparameters(model, init, opt);
    } else {
      fit = fit_fixed(model, init, p.config.newton);
    }
  } catch (const NumericalError& e) {
    json d;
    d["error"] = e.what();
    if (const auto* c = dynamic_cast<const ConvergenceError*>(&e)) d["grad_norm"] = c->grad_norm();
    write_text(out / "fit_diagnostics.json", d.dump(1) + "\n");
    throw;
  }
  write_text(out / "fit.json", fit_report_json(p.assembled, fit, p.config));
  write_text(out / "fit_state.json", fit_state_json(p.assembled, fit));
  if (model.spec().expert_approximation == ExpertApproximation::binomial && model.spec().num_experts > 0) {
    std::ostringstream s;
    write_binomial_approx(s, model.spec().approx);
    write_text(out / "binomial_approx.txt", s.str());
  }
  log_line(log, "fit written to " + out.string());
}

void cmd_predict(const std::string& config_path, const std::string& out_dir, const Logger& log) {
  const fs::path out = ensure_dir(out_dir);
  Prepared p = prepare(config_path, out.string(), log);
  const FitResult fit = load_state(p, out);
  const PredictiveRaster pr = posterior_predict(p.assembled, fit, p.data);
  write_ascii_grid_file((out / "mean.asc").string(), pr.mean);
  write_ascii_grid_file((out / "sd.asc").string(), pr.sd);
  for (std::size_t j = 0; j < pr.expert_mean.size(); ++j) {
    const std::string k = std::to_string(j + 1);
    write_ascii_grid_file((out / ("expert_" + k + "_mean.asc")).string(), pr.expert_mean[j]);
    write_ascii_grid_file((out / ("expert_" + k + "_sd.asc")).string(), pr.expert_sd[j]);
  }
  log_line(log, "predictions written to " + out.string());
}

void cmd_evaluate(const std::string& config_path, const std::string& out_dir, int threads, const Logger& log) {
  const fs::path out = ensure_dir(out_dir);
  Prepared p = prepare(config_path, out.string(), log);
  const FitResult fit = load_state(p, out);
  LooOptions opt;
  opt.newton = p.config.newton;
  opt.threads = threads > 0 ? threads : p.config.threads;
  const EvaluationOutput ev = evaluate_fit(p.assembled, fit, p.data, opt);
  for (const auto& f : ev.loo.failures) log_line(log, "loo refit failed: " + f);
  write_text(out / "scores.json", scores_json(ev, p.config));
  write_text(out / "scores.txt", scores_text(ev, p.config));
  log_line(log, "scores written to " + out.string());
}

std::string cmd_compare(const std::vector<std::string>& paths, const std::string& out_dir, const Logger& log) {
  if (paths.size() < 2) throw InputError("compare: at least two evaluated fits are required");
  std::vector<std::string> labels;
  std::vector<ScoreReport> reports;
  std::string hash;
  for (const auto& path : paths) {
    fs::path scores = path;
    if (fs::path(path).filename() != "scores.json") {
      const RunConfig c = load_run_config(path);
      if (c.output_dir.empty()) throw InputError("compare: config '" + path + "' has no output_dir");
      scores = fs::path(c.output_dir) / "scores.json";
    }
    const json j = parse_json(read_text(scores, "scores"), "scores '" + scores.string() + "'");
    ScoreReport r;
    std::string h;
    try {
      h = j.at("survey_hash").get<std::string>();
      r.n = j.at("n").get<std::size_t>();
      r.lpd = j.at("lpd").get<double>();
      if (!j.at("acc").is_null()) r.acc = j.at("acc").get<double>();
      if (!j.at("bacc").is_null()) r.bacc = j.at("bacc").get<double>();
      if (!j.at("crps").is_null()) r.crps = j.at("crps").get<double>();
      labels.push_back(j.at("survey").get<std::string>() + " " + j.at("expert").get<std::string>());
    } catch (const json::exception& e) {
      throw InputError("compare: '" + scores.string() + "': " + e.what());
    }
    if (hash.empty()) hash = h;
    if (h != hash) throw InputError("compare: '" + scores.string() + "' was scored on a different survey dataset");
    reports.push_back(std::move(r));
    log_line(log, "loaded " + scores.string());
  }
  std::ostringstream s;
  write_score_table(s, labels, reports);
  if (!out_dir.empty()) write_text(ensure_dir(out_dir) / "comparison.txt", s.str());
  return s.str();
}

}  // namespace esdm
