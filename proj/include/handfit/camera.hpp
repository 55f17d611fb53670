#pragma once

// Perspective camera with constant focal length. The hand is rotated about
// the model origin, shifted in-plane by t and pushed to depth
// t_z = 2 f / (s * image_size), then projected into an image_size crop.

#include <array>
#include <cmath>
#include <string>

#include <Eigen/Core>

#include "handfit/dual.hpp"
#include "handfit/error.hpp"
#include "handfit/hand_model.hpp"
#include "handfit/small_math.hpp"

namespace handfit {

inline constexpr double kMinDepth = 1e-3;

struct Intrinsics {
  double focal = 5000.0;     // pixels
  double image_size = 224.0; // pixels
};

// s is stored as log s so that s > 0 without constraints.
template <typename T>
struct CameraT {
  T log_scale{};
  Vec3T<T> rotation{};        // axis-angle, radians
  std::array<T, 2> translation{};
};
using CameraParams = CameraT<double>;

inline double camera_scale(const CameraParams& c) { return std::exp(c.log_scale); }

template <typename T>
struct Pixel {
  T u{}, v{};
};

// Projects n points; throws BehindCamera if any lands at depth <= kMinDepth.
template <typename T, typename PointRange>
void project_points(const PointRange& points, int n, const CameraT<T>& cam, const Intrinsics& K,
                    Pixel<T>* out) {
  using std::exp;
  const Mat3T<T> R = axis_angle_to_matrix<T>(cam.rotation);
  const T tz = (2.0 * K.focal / K.image_size) / exp(cam.log_scale);
  const double c = 0.5 * K.image_size;
  for (int i = 0; i < n; ++i) {
    const Vec3T<T> p = R * points[i];
    const T z = p.z + tz;
    if (!(value_of(z) > kMinDepth)) {
      throw Error(ErrorKind::BehindCamera, "point " + std::to_string(i) + " at depth " +
                                               std::to_string(value_of(z)));
    }
    const T inv = 1.0 / z;
    out[i].u = K.focal * (p.x + cam.translation[0]) * inv + c;
    out[i].v = K.focal * (p.y + cam.translation[1]) * inv + c;
  }
}

// J x 2 pixels for the 21 regressed joints (columns of `joints`).
Eigen::Matrix<double, kRegressedJoints, 2> project(const Eigen::Matrix<double, 3, kRegressedJoints>& joints,
                                                   const CameraParams& cam, const Intrinsics& K);
Eigen::Matrix2Xd project(const Eigen::Matrix3Xd& points, const CameraParams& cam, const Intrinsics& K);

Eigen::Matrix3d camera_rotation(const CameraParams& cam);

}  // namespace handfit
