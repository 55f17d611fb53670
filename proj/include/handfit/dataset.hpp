#pragma once

// Line-delimited sample and report files, the synthetic benchmark
// generator, and batch evaluation of fits against ground truth.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "handfit/fitter.hpp"
#include "handfit/likelihood.hpp"
#include "handfit/metrics.hpp"

namespace handfit {

inline constexpr const char* kDatasetFormat = "handfit-dataset";
inline constexpr const char* kReportsFormat = "handfit-reports";
inline constexpr const char* kEvalFormat = "handfit-eval";
inline constexpr int kFileMajorVersion = 1;

struct GroundTruth {
  PoseState state;  // theta, beta, camera; log_sigma unused
  Eigen::Matrix<double, 3, kRegressedJoints> joints = Eigen::Matrix<double, 3, kRegressedJoints>::Zero();
};

struct SampleRecord {
  LandmarkObservation obs;
  std::optional<GroundTruth> truth;
  std::vector<int> corrupted;  // joints whose landmarks carry gross noise
};

enum class NoiseKind { Clean, Gaussian, Corrupt, Occlude };

// Text forms: "clean", "gaussian:<px>", "corrupt:<k>:<px>", "occlude:<k>".
struct NoiseProfile {
  NoiseKind kind = NoiseKind::Clean;
  double sigma_px = 0.0;  // gaussian, and the gross noise of corrupt
  int count = 0;          // joints affected by corrupt / occlude

  std::string to_string() const;
  static NoiseProfile parse(const std::string& text);  // throws Error(Usage)
};

struct SynthOptions {
  int n = 10;
  NoiseProfile noise;
  std::uint64_t seed = 0;
  double beta_sigma = 0.1;  // matches the strength of the shape prior
  double scale_min = 5.5;
  double scale_max = 7.5;
  double max_rotation_deg = 60.0;
  double jitter_m = 0.01;   // in-plane offset of the hand center, meters
  double d_tol = 0.006;     // ground-truth poses deeper than this are rejected
  Intrinsics intrinsics;
};

// Ground truth poses are uniform inside the refined limits and free of
// penetration deeper than d_tol.
std::vector<SampleRecord> synthesize(const HandShapeModel& model, const JointLimitTable& limits,
                                     const SynthOptions& opt);

// Max deviation between stored and recomputed joints / landmarks of a
// record with ground truth (clean landmarks only).
double truth_consistency(const HandShapeModel& model, const SampleRecord& r, const Intrinsics& K);

nlohmann::json record_to_json(const SampleRecord& r);
SampleRecord record_from_json(const nlohmann::json& j);

// First line is a header {"format", "version", ...}; then one record per line.
void write_dataset(const std::filesystem::path& path, const std::vector<SampleRecord>& records,
                   const nlohmann::json& meta = nlohmann::json::object());
std::vector<SampleRecord> read_dataset(const std::filesystem::path& path);

void write_reports(const std::filesystem::path& path, const std::vector<BatchItem>& items, const FitConfig& config,
                   bool include_trace, bool include_timing);
std::vector<nlohmann::json> read_reports(const std::filesystem::path& path);

struct EvalOptions {
  double d_tol = 0.006;
  bool clean_joints_only = false;  // skip landmarks marked corrupted
};

struct EvalDetail {
  EvalSummary summary;
  int skipped = 0;                  // reports without ground truth or failed fits
  double limit_violations = 0.0;    // mean count of violated angles per sample
  std::vector<std::string> missing; // source ids without a report
};

// Matches reports to records by source_id; the recovered mesh is rebuilt
// from each report's state.
EvalDetail evaluate_reports(const HandShapeModel& model, const JointLimitTable& limits,
                            const std::vector<SampleRecord>& records, const std::vector<nlohmann::json>& reports,
                            const EvalOptions& opt);

}  // namespace handfit
