#pragma once

// Scalar-generic kinematic chain used by both forward kinematics and the
// differentiable fitting objective. Instantiated with double and Dual<N>.

#include <array>
#include <utility>
#include <vector>

#include "handfit/hand_model.hpp"
#include "handfit/small_math.hpp"

namespace handfit {

// Per-model constants precomputed once; immutable and shareable.
class KinematicsCache {
 public:
  explicit KinematicsCache(const HandShapeModel& model);

  struct RegressionTerm {
    int joint = 0;
    int bone = 0;
    double weight = 0.0;                 // sum_v H[j,v] W[v,b]
    std::array<double, 3> base{};        // sum_v H[j,v] W[v,b] T_v
    std::array<double, 3 * kShapeCoeffs> shape{};  // same, for each basis
  };

  std::array<int, kSkeletonNodes> parents{};
  std::array<Mat3T<double>, kArticulatedJoints> frames{};
  std::array<std::array<int, 3>, kArticulatedJoints> order{};
  std::array<std::array<double, 3>, kSkeletonNodes> rest_joint{};
  // Shape-induced joint displacement, row-major 3 x 10.
  std::array<std::array<double, 3 * kShapeCoeffs>, kSkeletonNodes> joint_shape{};
  std::vector<RegressionTerm> regression;

  // Per-vertex data for posing individual vertices.
  std::vector<std::array<double, 3>> rest_vertex;
  std::vector<std::array<double, 3 * kShapeCoeffs>> vertex_shape;
  std::vector<std::vector<std::pair<int, double>>> skin;
};

template <typename T>
struct PosedBones {
  std::array<Mat3T<T>, kSkeletonNodes> rotation{};
  std::array<Vec3T<T>, kSkeletonNodes> translation{};  // x' = R x + t
  std::array<Vec3T<T>, kSkeletonNodes> joint{};        // posed joint centers
};

template <typename T>
inline Mat3T<T> local_rotation_t(const KinematicsCache& cache, int joint, const T* angles) {
  const auto& ord = cache.order[joint];
  // Rightmost factor acts first.
  Mat3T<T> E = axis_rotation<T>(ord[0], angles[ord[0]]);
  E = axis_rotation<T>(ord[1], angles[ord[1]]) * E;
  E = axis_rotation<T>(ord[2], angles[ord[2]]) * E;
  const Mat3T<double>& F = cache.frames[joint];
  // F * E * F^T
  Mat3T<T> FE;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      FE(i, j) = F(i, 0) * E(0, j) + F(i, 1) * E(1, j) + F(i, 2) * E(2, j);
  Mat3T<T> out;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      out(i, j) = FE(i, 0) * F(j, 0) + FE(i, 1) * F(j, 1) + FE(i, 2) * F(j, 2);
  return out;
}

template <typename T>
inline Vec3T<T> shaped_point(const std::array<double, 3>& rest,
                             const std::array<double, 3 * kShapeCoeffs>& basis, const T* beta) {
  Vec3T<T> p{T(rest[0]), T(rest[1]), T(rest[2])};
  for (int a = 0; a < 3; ++a) {
    T acc = p[a];
    for (int k = 0; k < kShapeCoeffs; ++k) {
      const double b = basis[a * kShapeCoeffs + k];
      if (b != 0.0) acc += b * beta[k];
    }
    p[a] = acc;
  }
  return p;
}

// theta: 45 angles (joint-major), beta: 10 coefficients.
template <typename T>
PosedBones<T> pose_bones(const KinematicsCache& cache, const T* theta, const T* beta,
                         const Mat3T<T>& root_rotation) {
  std::array<Vec3T<T>, kSkeletonNodes> J;
  for (int b = 0; b < kSkeletonNodes; ++b) {
    J[b] = shaped_point<T>(cache.rest_joint[b], cache.joint_shape[b], beta);
  }
  PosedBones<T> out;
  out.rotation[0] = root_rotation;
  out.joint[0] = J[0];
  for (int b = 1; b < kSkeletonNodes; ++b) {
    const int p = cache.parents[b];
    const Mat3T<T> L = local_rotation_t<T>(cache, b - 1, theta + 3 * (b - 1));
    out.rotation[b] = out.rotation[p] * L;
    out.joint[b] = out.joint[p] + out.rotation[p] * (J[b] - J[p]);
  }
  for (int b = 0; b < kSkeletonNodes; ++b) {
    out.translation[b] = out.joint[b] - out.rotation[b] * J[b];
  }
  return out;
}

// Regressed joints, algebraically equal to H * LBS(vertices) but computed
// from per-bone moments of the regressor.
template <typename T>
std::array<Vec3T<T>, kRegressedJoints> regress_joints(const KinematicsCache& cache,
                                                      const PosedBones<T>& bones, const T* beta) {
  std::array<Vec3T<T>, kRegressedJoints> out;
  for (auto& p : out) p = Vec3T<T>(T(0.0), T(0.0), T(0.0));
  for (const auto& term : cache.regression) {
    const Vec3T<T> a = shaped_point<T>(term.base, term.shape, beta);
    const Vec3T<T> ra = bones.rotation[term.bone] * a;
    out[term.joint] += ra + term.weight * bones.translation[term.bone];
  }
  return out;
}

template <typename T>
Vec3T<T> pose_vertex(const KinematicsCache& cache, const PosedBones<T>& bones, int v, const T* beta) {
  const Vec3T<T> x = shaped_point<T>(cache.rest_vertex[v], cache.vertex_shape[v], beta);
  Vec3T<T> out(T(0.0), T(0.0), T(0.0));
  for (const auto& [bone, w] : cache.skin[v]) {
    out += w * (bones.rotation[bone] * x + bones.translation[bone]);
  }
  return out;
}

}  // namespace handfit
