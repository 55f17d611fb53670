// handfit: synthesize benchmarks, fit hands to 2D landmarks, evaluate fits
// and audit poses against the joint limits.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "handfit/dataset.hpp"
#include "handfit/error.hpp"
#include "handfit/file_format.hpp"
#include "handfit/fitter.hpp"
#include "handfit/penetration.hpp"
#include "handfit/pose_prior.hpp"

namespace fs = std::filesystem;
using namespace handfit;

namespace {

struct Globals {
  std::string model;
  std::string limits;
  std::string config;
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  std::optional<double> focal;
  std::optional<double> image_size;
};

HandShapeModel load_model_or_default(const Globals& g) {
  // Loading validates every model invariant.
  return g.model.empty() ? synth_test_model(0) : load_model(g.model);
}

JointLimitTable load_limits_or_default(const Globals& g) {
  return g.limits.empty() ? default_limits() : load_limits(g.limits);
}

// Defaults, then the config file, then global flags. Fit flags go on top.
FitConfig base_config(const Globals& g) {
  FitConfig c;
  if (!g.config.empty()) c = config_from_json(read_json_file(g.config), c);
  if (g.seed) c.seed = *g.seed;
  if (g.focal) c.focal = *g.focal;
  if (g.image_size) c.image_size = *g.image_size;
  return c;
}

// Every FitConfig field as an optional flag of the fit command.
struct ConfigFlags {
  std::optional<double> lambda1, lambda2, lambda3, d_tol, step_size, sigma_init, neighbor_radius;
  std::optional<int> stage1_iters, stage2_iters, restarts;
  std::optional<std::string> gradient_mode;
  std::optional<bool> anatomy, bend_from_splay, branch_search, nll;

  void add(CLI::App* app) {
    app->add_option("--lambda1", lambda1, "Pose prior weight");
    app->add_option("--lambda2", lambda2, "Non-penetration weight");
    app->add_option("--lambda3", lambda3, "Shape prior weight");
    app->add_option("--d-tol", d_tol, "Penetration tolerance, meters");
    app->add_option("--stage1-iters", stage1_iters, "MSE stage iterations");
    app->add_option("--stage2-iters", stage2_iters, "NLL stage iterations");
    app->add_option("--step-size", step_size, "Initial step size");
    app->add_option("--gradient-mode", gradient_mode, "autodiff | central-difference")
        ->check(CLI::IsMember({"autodiff", "central-difference"}));
    app->add_option("--restarts", restarts, "Extra starts beyond the first");
    app->add_option("--sigma-init", sigma_init, "Initial landmark sigma, pixels");
    app->add_option("--neighbor-radius", neighbor_radius, "Penetration neighbor exclusion radius, meters");
    app->add_option("--anatomy", anatomy, "Refine limits from the current pose (true/false)");
    app->add_option("--bend-from-splay", bend_from_splay, "Shrink bend ranges with splay (true/false)");
    app->add_option("--branch-search", branch_search, "Per-digit depth-branch search (true/false)");
    app->add_option("--nll", nll, "Use the NLL data term in stage two (true/false)");
  }

  void apply(FitConfig& c) const {
    if (lambda1) c.lambda1 = *lambda1;
    if (lambda2) c.lambda2 = *lambda2;
    if (lambda3) c.lambda3 = *lambda3;
    if (d_tol) c.d_tol = *d_tol;
    if (stage1_iters) c.stage1_iters = *stage1_iters;
    if (stage2_iters) c.stage2_iters = *stage2_iters;
    if (step_size) c.step_size = *step_size;
    if (gradient_mode) {
      c.gradient_mode = *gradient_mode == "autodiff" ? GradientMode::Autodiff : GradientMode::CentralDifference;
    }
    if (restarts) c.restarts = *restarts;
    if (sigma_init) c.sigma_init = *sigma_init;
    if (neighbor_radius) c.neighbor_radius = *neighbor_radius;
    if (anatomy) c.anatomy = *anatomy;
    if (bend_from_splay) c.bend_from_splay = *bend_from_splay;
    if (branch_search) c.branch_search = *branch_search;
    if (nll) c.nll = *nll;
  }
};

// Mesh in camera coordinates (meters) followed by the joints as points.
void write_obj(const fs::path& path, const HandShapeModel& model, const FitReport& r) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::MissingFile, "cannot write " + path.string());
  const Eigen::Matrix3d R = camera_rotation(r.state.camera);
  const Eigen::Vector3d t(r.state.camera.translation[0], r.state.camera.translation[1], 0.0);
  out << "# " << r.source_id << "\n";
  out.precision(9);
  out << "o hand\n";
  for (int v = 0; v < r.mesh.vertices.cols(); ++v) {
    const Eigen::Vector3d p = R * r.mesh.vertices.col(v) + t;
    out << "v " << p.x() << ' ' << p.y() << ' ' << p.z() << '\n';
  }
  for (const auto& f : model.faces) out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
  out << "o joints\n";
  const int base = static_cast<int>(r.mesh.vertices.cols());
  for (int j = 0; j < kRegressedJoints; ++j) {
    const Eigen::Vector3d p = R * r.mesh.joints.col(j) + t;
    out << "v " << p.x() << ' ' << p.y() << ' ' << p.z() << '\n';
  }
  out << 'p';
  for (int j = 0; j < kRegressedJoints; ++j) out << ' ' << base + j + 1;
  out << '\n';
}

nlohmann::json interior_record(const std::string& id, const InteriorSet& m) {
  nlohmann::json j;
  j["source_id"] = id;
  j["max_depth"] = penetration_depth(m);
  j["candidates"] = m.candidates;
  j["vertices"] = m.vertices;
  j["depth"] = m.depth;
  j["partner"] = m.partner;
  j["winding"] = m.winding;
  return j;
}

int cmd_synth(const Globals& g, int n, const std::string& noise, const std::string& out_path) {
  const HandShapeModel model = load_model_or_default(g);
  const JointLimitTable limits = load_limits_or_default(g);
  const FitConfig cfg = base_config(g);
  SynthOptions opt;
  opt.n = n;
  opt.noise = NoiseProfile::parse(noise);
  opt.seed = cfg.seed;
  opt.d_tol = cfg.d_tol;
  opt.intrinsics = cfg.intrinsics();
  const auto records = synthesize(model, limits, opt);
  nlohmann::json meta{{"noise", opt.noise.to_string()}, {"seed", opt.seed},
                      {"focal", cfg.focal}, {"image_size", cfg.image_size}};
  write_dataset(out_path, records, meta);
  std::cerr << "wrote " << records.size() << " samples to " << out_path << "\n";
  return 0;
}

struct FitArgs {
  std::string dataset;
  std::string out;
  bool trace = false;
  bool timing = false;
  std::string obj_dir;
  std::string interior_dump;
  ConfigFlags flags;
};

int cmd_fit(const Globals& g, const FitArgs& a) {
  const HandShapeModel model = load_model_or_default(g);
  const JointLimitTable limits = load_limits_or_default(g);
  FitConfig cfg = base_config(g);
  a.flags.apply(cfg);
  cfg.validate();
  const auto records = read_dataset(a.dataset);
  std::vector<LandmarkObservation> obs;
  obs.reserve(records.size());
  for (const auto& r : records) obs.push_back(r.obs);

  const Fitter fitter(model, limits, cfg);
  const auto items = fit_batch(fitter, obs, g.jobs);
  write_reports(a.out, items, cfg, a.trace, a.timing);

  if (!a.obj_dir.empty()) {
    fs::create_directories(a.obj_dir);
    for (const auto& it : items)
      if (it.ok) write_obj(fs::path(a.obj_dir) / (it.source_id + ".obj"), model, it.report);
  }
  if (!a.interior_dump.empty()) {
    std::ofstream out(a.interior_dump);
    if (!out) throw Error(ErrorKind::MissingFile, "cannot write " + a.interior_dump);
    for (const auto& it : items) {
      if (!it.ok) continue;
      out << dump_compact(interior_record(it.source_id, interior_vertices(it.report.mesh, fitter.detector()))) << '\n';
    }
  }

  // Every sample is attempted; the exit code reflects the worst failure.
  int worst = 0, failed = 0;
  for (const auto& it : items) {
    if (it.ok) continue;
    ++failed;
    std::cerr << it.source_id << ": " << it.error << "\n";
    worst = std::max(worst, it.exit_code);
  }
  std::cerr << "fitted " << items.size() - failed << "/" << items.size() << " samples into " << a.out << "\n";
  return worst;
}

int cmd_eval(const Globals& g, const std::string& reports_path, const std::string& dataset_path, bool clean_only,
             const std::string& out_path) {
  const HandShapeModel model = load_model_or_default(g);
  const JointLimitTable limits = load_limits_or_default(g);
  const FitConfig cfg = base_config(g);
  const auto records = read_dataset(dataset_path);
  const auto reports = read_reports(reports_path);
  EvalOptions opt;
  opt.d_tol = cfg.d_tol;
  opt.clean_joints_only = clean_only;
  const EvalDetail d = evaluate_reports(model, limits, records, reports, opt);
  std::cout << summary_table({{fs::path(reports_path).filename().string(), d.summary}});
  if (d.skipped) std::cout << "skipped: " << d.skipped << "\n";
  if (!d.missing.empty()) std::cout << "missing reports: " << d.missing.size() << "\n";
  if (!out_path.empty()) {
    nlohmann::json j{{"format", kEvalFormat}, {"version", "1.0"}, {"summary", summary_to_json(d.summary)},
                     {"skipped", d.skipped}, {"missing", d.missing}, {"limit_violations", d.limit_violations},
                     {"clean_joints_only", clean_only}};
    write_json_file(j, out_path);
  }
  return 0;
}

PoseAngles theta_from_file(const std::string& path) {
  const nlohmann::json j = read_json_file(path);
  const nlohmann::json& arr = j.is_array() ? j : j.contains("state") ? j.at("state").at("theta") : j.at("theta");
  const auto v = arr.get<std::vector<double>>();
  if (v.size() != kPoseParams) throw Error(ErrorKind::SchemaViolation, path + ": theta must hold 45 angles");
  PoseAngles th;
  for (int i = 0; i < kPoseParams; ++i) th.data()[i] = v[i];
  return th;
}

int cmd_validate_pose(const Globals& g, const std::string& theta_path, bool degrees, double tol_deg,
                      bool fail_on_violation) {
  const JointLimitTable limits = load_limits_or_default(g);
  const FitConfig cfg = base_config(g);
  PoseAngles th;
  try {
    th = theta_from_file(theta_path);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::SchemaViolation, theta_path + ": " + e.what());
  }
  if (degrees) th *= std::numbers::pi / 180.0;
  const auto v = limit_violations(limits, th, cfg.refine(), tol_deg * std::numbers::pi / 180.0);
  static const char* slots[3] = {"bend", "splay", "twist"};
  nlohmann::json out;
  out["valid"] = v.empty();
  out["violations"] = nlohmann::json::array();
  for (const auto& x : v) {
    out["violations"].push_back({{"joint", x.joint},
                                 {"name", joint_name(x.joint + 1)},
                                 {"angle", slots[x.slot]},
                                 {"value", x.angle},
                                 {"lo", x.lo},
                                 {"hi", x.hi},
                                 {"excess", x.excess}});
  }
  std::cout << out.dump(2) << "\n";
  return fail_on_violation && !v.empty() ? 2 : 0;
}

int cmd_model(const std::string& model_out, const std::string& limits_out, std::uint64_t seed) {
  if (!model_out.empty()) save_model(synth_test_model(seed), model_out);
  if (!limits_out.empty()) write_json_file(limits_to_json(default_limits()), limits_out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hand pose and shape from 2D landmarks"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");
  Globals g;
  app.add_option("--model", g.model, "Hand model file (default: built-in test hand)")->envname("HANDFIT_MODEL");
  app.add_option("--limits", g.limits, "Joint limit table (default: built-in)")->envname("HANDFIT_LIMITS");
  app.add_option("--config", g.config, "Fit configuration file")->envname("HANDFIT_CONFIG");
  app.add_option("--seed", g.seed, "Random seed")->envname("HANDFIT_SEED");
  app.add_option("--jobs", g.jobs, "Worker threads")->envname("HANDFIT_JOBS")->check(CLI::PositiveNumber);
  app.add_option("--focal", g.focal, "Focal length, pixels")->envname("HANDFIT_FOCAL");
  app.add_option("--image-size", g.image_size, "Image side, pixels")->envname("HANDFIT_IMAGE_SIZE");

  int n = 10;
  std::string noise = "clean", synth_out;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic landmark dataset");
  synth->add_option("-n,--count", n, "Number of samples")->check(CLI::NonNegativeNumber);
  synth->add_option("--noise", noise, "clean | gaussian:<px> | corrupt:<k>:<px> | occlude:<k>");
  synth->add_option("-o,--output", synth_out, "Dataset file")->required();

  FitArgs fa;
  auto* fit = app.add_subcommand("fit", "Fit every sample of a dataset");
  fit->add_option("dataset", fa.dataset, "Dataset file")->required();
  fit->add_option("-o,--output", fa.out, "Reports file")->required();
  fit->add_flag("--trace", fa.trace, "Store the full per-iteration trace");
  fit->add_flag("--timing", fa.timing, "Store wall time (reports are then not reproducible)");
  fit->add_option("--obj-dir", fa.obj_dir, "Write each fitted mesh as OBJ");
  fit->add_option("--interior-dump", fa.interior_dump, "Write interior vertices and depths per sample");
  fa.flags.add(fit);

  std::string reports_path, eval_dataset, eval_out;
  bool clean_only = false;
  auto* eval = app.add_subcommand("eval", "Score reports against a dataset's ground truth");
  eval->add_option("reports", reports_path, "Reports file")->required();
  eval->add_option("dataset", eval_dataset, "Dataset file")->required();
  eval->add_flag("--clean-joints-only", clean_only, "Leave corrupted landmarks out of E_J");
  eval->add_option("-o,--output", eval_out, "Write the summary as JSON");

  std::string theta_path;
  bool degrees = false, strict = false;
  double tol_deg = 1.0;
  auto* validate = app.add_subcommand("validate-pose", "Check a pose against the joint limits");
  validate->add_option("theta", theta_path, "JSON with 45 angles: an array, {\"theta\": [...]} or a report")
      ->required();
  validate->add_flag("--degrees", degrees, "Angles are in degrees");
  validate->add_option("--tolerance-deg", tol_deg, "Slack before an angle counts as out of range")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  validate->add_flag("--strict", strict, "Exit with 2 when any angle is out of range");

  std::string model_out, limits_out;
  auto* model = app.add_subcommand("model", "Export the built-in hand model and limit table");
  model->add_option("--model-out", model_out, "Model file to write");
  model->add_option("--limits-out", limits_out, "Limit table to write");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*synth) return cmd_synth(g, n, noise, synth_out);
    if (*fit) return cmd_fit(g, fa);
    if (*eval) return cmd_eval(g, reports_path, eval_dataset, clean_only, eval_out);
    if (*validate) return cmd_validate_pose(g, theta_path, degrees, tol_deg, strict);
    if (*model) return cmd_model(model_out, limits_out, g.seed.value_or(0));
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
