#include "handfit/camera.hpp"

#include <vector>

namespace handfit {

Eigen::Matrix2Xd project(const Eigen::Matrix3Xd& points, const CameraParams& cam, const Intrinsics& K) {
  const int n = static_cast<int>(points.cols());
  std::vector<Vec3T<double>> pts(n);
  for (int i = 0; i < n; ++i) pts[i] = Vec3T<double>(points(0, i), points(1, i), points(2, i));
  std::vector<Pixel<double>> px(n);
  project_points(pts, n, cam, K, px.data());
  Eigen::Matrix2Xd out(2, n);
  for (int i = 0; i < n; ++i) out.col(i) << px[i].u, px[i].v;
  return out;
}

Eigen::Matrix<double, kRegressedJoints, 2> project(const Eigen::Matrix<double, 3, kRegressedJoints>& joints,
                                                   const CameraParams& cam, const Intrinsics& K) {
  const Eigen::Matrix2Xd p = project(Eigen::Matrix3Xd(joints), cam, K);
  return p.transpose();
}

Eigen::Matrix3d camera_rotation(const CameraParams& cam) {
  const Mat3T<double> R = axis_angle_to_matrix<double>(cam.rotation);
  Eigen::Matrix3d out;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) out(i, j) = R(i, j);
  return out;
}

}  // namespace handfit
