#pragma once

// Evaluation metrics: similarity-aligned point errors, PCK area under the
// curve, and penetration rate.

#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

namespace handfit {

// Points are columns (3 x N). Returns pred mapped by the similarity
// transform (no reflection) that best matches gt in least squares. Throws
// DegenerateConfiguration when N < 3 or gt is collinear.
Eigen::Matrix3Xd procrustes_align(const Eigen::Matrix3Xd& pred, const Eigen::Matrix3Xd& gt);

// Mean per-point distance after alignment, millimeters (inputs in meters).
double aligned_error_mm(const Eigen::Matrix3Xd& pred, const Eigen::Matrix3Xd& gt);
inline double joint_error(const Eigen::Matrix3Xd& pred, const Eigen::Matrix3Xd& gt) {
  return aligned_error_mm(pred, gt);
}
inline double vertex_error(const Eigen::Matrix3Xd& pred, const Eigen::Matrix3Xd& gt) {
  return aligned_error_mm(pred, gt);
}
// Per-point distances after alignment, millimeters.
std::vector<double> aligned_distances_mm(const Eigen::Matrix3Xd& pred, const Eigen::Matrix3Xd& gt);

inline constexpr int kPckGridPoints = 100;
inline constexpr double kPckMaxMm = 50.0;

// Trapezoid area under the fraction of errors <= t over a uniform
// 100-point grid on [0, 50] mm, normalized to [0, 1].
double pck_auc(const std::vector<double>& errors_mm);

// 100 * count(depth > d_tol) / n; 0 for an empty set.
double penetration_rate(const std::vector<double>& depths, double d_tol);

struct EvalSummary {
  double e_j = 0.0;    // mm
  double e_v = 0.0;    // mm
  double auc_j = 0.0;
  double auc_v = 0.0;
  double pr = 0.0;     // percent
  int n_samples = 0;
};

nlohmann::json summary_to_json(const EvalSummary& s);
std::string summary_table(const std::vector<std::pair<std::string, EvalSummary>>& rows);

}  // namespace handfit
