#include "handfit/metrics.hpp"

#include <cmath>
#include <cstdio>

#include <Eigen/Geometry>
#include <Eigen/SVD>

#include "handfit/error.hpp"

namespace handfit {

Eigen::Matrix3Xd procrustes_align(const Eigen::Matrix3Xd& pred, const Eigen::Matrix3Xd& gt) {
  if (pred.cols() != gt.cols() || gt.cols() < 3) {
    throw Error(ErrorKind::DegenerateConfiguration, "alignment needs at least 3 matching points");
  }
  const Eigen::Matrix3Xd centered = gt.colwise() - gt.rowwise().mean();
  const Eigen::JacobiSVD<Eigen::Matrix3Xd> svd(centered);
  const Eigen::Vector3d sv = svd.singularValues();
  if (!(sv[1] > 1e-9 * std::max(sv[0], 1e-300))) {
    throw Error(ErrorKind::DegenerateConfiguration, "ground-truth points are collinear or coincident");
  }
  const Eigen::Matrix4d T = Eigen::umeyama(pred, gt, true);
  return (T.topLeftCorner<3, 3>() * pred).colwise() + T.topRightCorner<3, 1>();
}

std::vector<double> aligned_distances_mm(const Eigen::Matrix3Xd& pred, const Eigen::Matrix3Xd& gt) {
  const Eigen::Matrix3Xd a = procrustes_align(pred, gt);
  std::vector<double> d(static_cast<std::size_t>(gt.cols()));
  for (Eigen::Index i = 0; i < gt.cols(); ++i) d[i] = 1000.0 * (a.col(i) - gt.col(i)).norm();
  return d;
}

double aligned_error_mm(const Eigen::Matrix3Xd& pred, const Eigen::Matrix3Xd& gt) {
  const auto d = aligned_distances_mm(pred, gt);
  double s = 0.0;
  for (double x : d) s += x;
  return s / static_cast<double>(d.size());
}

double pck_auc(const std::vector<double>& errors_mm) {
  if (errors_mm.empty()) return 0.0;
  const double step = kPckMaxMm / (kPckGridPoints - 1);
  double area = 0.0;
  double prev = 0.0;
  for (int k = 0; k < kPckGridPoints; ++k) {
    const double t = k * step;
    std::size_t hits = 0;
    for (double e : errors_mm) hits += e <= t ? 1 : 0;
    const double frac = static_cast<double>(hits) / static_cast<double>(errors_mm.size());
    if (k > 0) area += 0.5 * (prev + frac) * step;
    prev = frac;
  }
  return area / kPckMaxMm;
}

double penetration_rate(const std::vector<double>& depths, double d_tol) {
  if (depths.empty()) return 0.0;
  std::size_t n = 0;
  for (double d : depths) n += d > d_tol ? 1 : 0;
  return 100.0 * static_cast<double>(n) / static_cast<double>(depths.size());
}

nlohmann::json summary_to_json(const EvalSummary& s) {
  return {{"e_j_mm", s.e_j}, {"e_v_mm", s.e_v}, {"auc_j", s.auc_j},
          {"auc_v", s.auc_v}, {"pr_percent", s.pr}, {"n_samples", s.n_samples}};
}

std::string summary_table(const std::vector<std::pair<std::string, EvalSummary>>& rows) {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof line, "%-28s %8s %8s %7s %7s %7s %5s\n", "config", "E_J(mm)", "E_V(mm)",
                "AUC_J", "AUC_V", "PR(%)", "n");
  out += line;
  for (const auto& [name, s] : rows) {
    std::snprintf(line, sizeof line, "%-28s %8.2f %8.2f %7.3f %7.3f %7.1f %5d\n", name.c_str(), s.e_j,
                  s.e_v, s.auc_j, s.auc_v, s.pr, s.n_samples);
    out += line;
  }
  return out;
}

}  // namespace handfit
