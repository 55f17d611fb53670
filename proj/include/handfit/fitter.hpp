#pragma once

// Per-sample optimization of pose, shape, camera and landmark uncertainty
// against the prior and data terms. One Fitter holds the immutable model
// precomputation and may run many fits concurrently.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "handfit/camera.hpp"
#include "handfit/hand_model.hpp"
#include "handfit/kinematics.hpp"
#include "handfit/likelihood.hpp"
#include "handfit/penetration.hpp"
#include "handfit/pose_prior.hpp"

namespace handfit {

// Flat state layout.
inline constexpr int kThetaOffset = 0;
inline constexpr int kBetaOffset = kThetaOffset + kPoseParams;   // 45
inline constexpr int kCameraOffset = kBetaOffset + kShapeCoeffs; // 55: log s, rvec(3), t(2)
inline constexpr int kSigmaOffset = kCameraOffset + 6;           // 61
inline constexpr int kStateSize = kSigmaOffset + kRegressedJoints; // 82

struct PoseState {
  PoseAngles theta = PoseAngles::Zero();
  ShapeCoeffs beta = ShapeCoeffs::Zero();
  CameraParams camera;
  std::array<double, kRegressedJoints> log_sigma{};

  Eigen::VectorXd to_vector() const;
  static PoseState from_vector(const Eigen::VectorXd& x);
};

nlohmann::json state_to_json(const PoseState& s);
PoseState state_from_json(const nlohmann::json& j);

enum class Stage { Mse, Nll };
enum class GradientMode { Autodiff, CentralDifference };
enum class FitStatus { Converged, MaxIters, Diverged };

const char* to_string(Stage s) noexcept;
const char* to_string(GradientMode m) noexcept;
const char* to_string(FitStatus s) noexcept;

struct FitConfig {
  double lambda1 = 20000.0;  // pose
  double lambda2 = 20000.0;  // non-penetration
  double lambda3 = 10.0;     // shape
  double d_tol = 0.006;      // meters
  int stage1_iters = 300;
  int stage2_iters = 300;
  double step_size = 1e-2;
  GradientMode gradient_mode = GradientMode::Autodiff;
  std::uint64_t seed = 0;
  int restarts = 1;          // extra starts beyond the first
  double focal = 5000.0;
  double image_size = 224.0;
  bool anatomy = true;       // refine limits from the current pose
  bool bend_from_splay = true;
  double sigma_init = 8.0;   // pixels
  double neighbor_radius = 0.02;
  bool branch_search = true; // per-digit depth-branch search between stages
  bool nll = true;           // false keeps the MSE data term in the second stage

  Intrinsics intrinsics() const { return {focal, image_size}; }
  RefineOptions refine() const { return {anatomy, bend_from_splay}; }
  // Throws Error(Usage) on negative weights, iterations or non-positive step.
  void validate() const;
};

nlohmann::json config_to_json(const FitConfig& c);
// Missing keys keep their defaults; unknown keys are rejected.
FitConfig config_from_json(const nlohmann::json& j, FitConfig base = {});

// Weighted contributions; total is their sum.
struct LossBreakdown {
  double data = 0.0;
  double pose = 0.0;
  double penetration = 0.0;
  double shape = 0.0;
  double total = 0.0;
};

nlohmann::json breakdown_to_json(const LossBreakdown& b);

struct TraceEntry {
  Stage stage = Stage::Mse;
  int iteration = 0;
  LossBreakdown loss;  // at the current (accepted) state
  double step = 0.0;
  bool accepted = true;
};

struct FitReport {
  std::string source_id;
  PoseState state;
  HandMesh mesh;
  std::array<LossBreakdown, 2> stage_loss{};  // at the end of each stage
  std::vector<TraceEntry> trace;               // winning start only
  FitStatus status = FitStatus::MaxIters;
  int best_start = 0;
  std::vector<double> start_losses;
  int branch_flips = 0;                         // digits moved to another depth branch
  double wall_seconds = 0.0;
  FitConfig config;
};

// Non-penetration contacts held fixed for one gradient evaluation: each
// interior vertex with the vertex realizing its depth.
struct Contact {
  int vertex = 0;
  int partner = 0;
};

class Fitter {
 public:
  Fitter(const HandShapeModel& model, const JointLimitTable& limits, const FitConfig& config);

  const FitConfig& config() const { return config_; }
  const HandShapeModel& model() const { return model_; }
  const PenetrationDetector& detector() const { return detector_; }
  const KinematicsCache& cache() const { return cache_; }

  // Loss at a state; the interior set is recomputed from the state.
  LossBreakdown total_loss(const PoseState& s, const LandmarkObservation& obs, Stage stage) const;
  // Same with a fixed contact set.
  LossBreakdown total_loss(const PoseState& s, const LandmarkObservation& obs, Stage stage,
                           const std::vector<Contact>& contacts) const;

  std::vector<Contact> contacts(const PoseState& s) const;

  // Gradient over the full flat state; log sigma entries are zero in the
  // MSE stage. Throws Error(NonFiniteGradient) naming the offending term.
  Eigen::VectorXd gradient(const PoseState& s, const LandmarkObservation& obs, Stage stage,
                           const std::vector<Contact>& contacts, GradientMode mode,
                           LossBreakdown* loss = nullptr) const;

  // Max relative disagreement between the two gradient backends.
  double gradient_self_check(const PoseState& s, const LandmarkObservation& obs, Stage stage) const;

  // Camera-only initialization at the rest pose; `mirrored` selects the
  // depth-reflected solution of the same alignment.
  CameraParams initial_camera(const LandmarkObservation& obs, bool mirrored = false) const;

  // Throws Error(InsufficientJoints) or Error(Diverged).
  FitReport fit(const LandmarkObservation& obs) const;
  // Both stages from one given start, no restarts.
  FitReport fit_from(const PoseState& start, const LandmarkObservation& obs) const;

  HandMesh mesh_of(const PoseState& s) const;

 private:
  struct Run {
    PoseState state;
    std::array<LossBreakdown, 2> stage_loss{};
    std::vector<TraceEntry> trace;
    FitStatus status = FitStatus::MaxIters;
    int flips = 0;
  };
  Run run_from(PoseState start, const LandmarkObservation& obs) const;
  // Tries, per digit, the poses that mirror parts of the chain in depth
  // (identical under orthographic projection) and keeps the lowest-loss one.
  // `physics` includes non-penetration in the comparison.
  int branch_search(Eigen::VectorXd& x, const LandmarkObservation& obs, bool physics) const;

  const HandShapeModel& model_;
  JointLimitTable limits_;
  FitConfig config_;
  KinematicsCache cache_;
  PenetrationDetector detector_;
};

nlohmann::json report_to_json(const FitReport& r, bool include_trace = true, bool include_timing = false);

// Runs fits over observations with up to `jobs` worker threads. Results are
// ordered by source_id; failures carry the error instead of a report.
struct BatchItem {
  std::string source_id;
  bool ok = false;
  FitReport report;
  std::string error;
  int exit_code = 0;
};
std::vector<BatchItem> fit_batch(const Fitter& fitter, const std::vector<LandmarkObservation>& obs, int jobs);

}  // namespace handfit
