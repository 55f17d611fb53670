#include "handfit/hand_model.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <utility>

#include <Eigen/Geometry>

#include "handfit/error.hpp"
#include "handfit/kinematics.hpp"

namespace handfit {

JointRole joint_role(int node) noexcept {
  if (node == 0) return JointRole::Wrist;
  if (node >= 13) {
    return node == 13 ? JointRole::ThumbCmc : (node == 14 ? JointRole::ThumbMcp : JointRole::ThumbIp);
  }
  switch ((node - 1) % 3) {
    case 0: return JointRole::FingerMcp;
    case 1: return JointRole::FingerPip;
    default: return JointRole::FingerDip;
  }
}

int digit_of(int node) noexcept {
  if (node <= 0 || node >= kSkeletonNodes) return -1;
  return (node - 1) / 3;
}

const char* joint_name(int node) noexcept {
  static constexpr const char* kNames[kSkeletonNodes] = {
      "wrist",     "index_mcp", "index_pip", "index_dip", "middle_mcp", "middle_pip",
      "middle_dip", "ring_mcp", "ring_pip",  "ring_dip",  "pinky_mcp",  "pinky_pip",
      "pinky_dip", "thumb_cmc", "thumb_mcp", "thumb_ip"};
  if (node < 0 || node >= kSkeletonNodes) return "unknown";
  return kNames[node];
}

namespace {

void require(bool ok, ErrorKind kind, const std::string& msg) {
  if (!ok) throw Error(kind, msg);
}

}  // namespace

void validate_model(const HandShapeModel& m) {
  const int V = m.num_vertices();
  require(V >= 4, ErrorKind::InvalidModel, "model needs at least 4 vertices");
  require(m.template_vertices.allFinite(), ErrorKind::InvalidModel, "non-finite template vertex");
  require(m.shape_bases.rows() == 3 * V && m.shape_bases.cols() == kShapeCoeffs,
          ErrorKind::InvalidModel, "shape_bases must be 3V x 10");
  require(m.shape_bases.allFinite(), ErrorKind::InvalidModel, "non-finite shape basis");
  require(m.joint_regressor.rows() == kRegressedJoints && m.joint_regressor.cols() == V,
          ErrorKind::InvalidModel, "joint_regressor must be 21 x V");
  require(m.skinning_weights.rows() == V && m.skinning_weights.cols() == kSkeletonNodes,
          ErrorKind::InvalidModel, "skinning_weights must be V x 16");
  require(m.rest_joints.allFinite(), ErrorKind::InvalidModel, "non-finite rest joint");

  for (int v = 0; v < V; ++v) {
    const auto row = m.skinning_weights.row(v);
    require(row.allFinite() && row.minCoeff() >= 0.0, ErrorKind::InvalidModel,
            "negative or non-finite skinning weight at vertex " + std::to_string(v));
    require(std::abs(row.sum() - 1.0) <= 1e-6, ErrorKind::InvalidModel,
            "skinning weights of vertex " + std::to_string(v) + " do not sum to 1");
  }
  for (int j = 0; j < kRegressedJoints; ++j) {
    const auto row = m.joint_regressor.row(j);
    require(row.allFinite() && row.minCoeff() >= 0.0, ErrorKind::InvalidModel,
            "negative joint regressor entry in row " + std::to_string(j));
    require(std::abs(row.sum() - 1.0) <= 1e-6, ErrorKind::InvalidModel,
            "joint regressor row " + std::to_string(j) + " does not sum to 1");
  }

  // Skeleton: single root at 0, parents precede children (implies acyclic).
  require(m.parents[0] == -1, ErrorKind::InvalidModel, "skeleton root must be node 0");
  for (int b = 1; b < kSkeletonNodes; ++b) {
    require(m.parents[b] >= 0 && m.parents[b] < b, ErrorKind::InvalidModel,
            "skeleton parent of node " + std::to_string(b) + " must precede it");
  }

  for (int j = 0; j < kArticulatedJoints; ++j) {
    const auto& e = m.euler[j];
    const Eigen::Matrix3d err = e.frame.transpose() * e.frame - Eigen::Matrix3d::Identity();
    require(err.cwiseAbs().maxCoeff() < 1e-9 && e.frame.determinant() > 0.0,
            ErrorKind::InvalidModel, "Euler frame of joint " + std::to_string(j) + " is not a rotation");
    auto ord = e.order;
    std::sort(ord.begin(), ord.end());
    require(ord == std::array<int, 3>{0, 1, 2}, ErrorKind::InvalidModel,
            "Euler order of joint " + std::to_string(j) + " is not a permutation");
  }

  // Closed oriented 2-manifold: each directed edge occurs once and its
  // reverse occurs once.
  require(!m.faces.empty(), ErrorKind::NonWatertight, "mesh has no faces");
  std::map<std::pair<int, int>, int> directed;
  for (const auto& f : m.faces) {
    for (int k = 0; k < 3; ++k) {
      require(f[k] >= 0 && f[k] < V, ErrorKind::InvalidModel, "face index out of range");
    }
    require(f[0] != f[1] && f[1] != f[2] && f[0] != f[2], ErrorKind::InvalidModel,
            "degenerate face");
    for (int k = 0; k < 3; ++k) ++directed[{f[k], f[(k + 1) % 3]}];
  }
  for (const auto& [edge, count] : directed) {
    const auto rev = directed.find({edge.second, edge.first});
    require(rev != directed.end(), ErrorKind::NonWatertight,
            "open edge (" + std::to_string(edge.first) + "," + std::to_string(edge.second) + ")");
    require(count == 1 && rev->second == 1, ErrorKind::InvalidModel,
            "edge (" + std::to_string(edge.first) + "," + std::to_string(edge.second) +
                ") is non-manifold or inconsistently oriented");
  }
}

Eigen::Matrix3Xd shaped_template(const HandShapeModel& model, const ShapeCoeffs& beta) {
  const int V = model.num_vertices();
  const Eigen::VectorXd offsets = model.shape_bases * beta;
  Eigen::Matrix3Xd out = model.template_vertices;
  out += Eigen::Map<const Eigen::Matrix3Xd>(offsets.data(), 3, V);
  return out;
}

Eigen::Matrix3d local_rotation(const EulerConvention& conv, const Eigen::Vector3d& angles) {
  Eigen::Matrix3d E = Eigen::Matrix3d::Identity();
  for (int slot : conv.order) {
    E = Eigen::AngleAxisd(angles[slot], Eigen::Vector3d::Unit(slot)).toRotationMatrix() * E;
  }
  return conv.frame * E * conv.frame.transpose();
}

HandMesh forward_kinematics(const HandShapeModel& model, const PoseAngles& theta,
                            const ShapeCoeffs& beta, const Eigen::Matrix3d& root_rotation) {
  const KinematicsCache cache(model);
  Mat3T<double> root;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) root(i, j) = root_rotation(i, j);
  const PosedBones<double> bones = pose_bones<double>(cache, theta.data(), beta.data(), root);

  const Eigen::Matrix3Xd shaped = shaped_template(model, beta);
  const int V = model.num_vertices();
  HandMesh mesh;
  mesh.vertices.setZero(3, V);
  for (int v = 0; v < V; ++v) {
    const Vec3T<double> x(shaped(0, v), shaped(1, v), shaped(2, v));
    Vec3T<double> acc(0.0, 0.0, 0.0);
    for (const auto& [b, w] : cache.skin[v]) {
      acc += w * (bones.rotation[b] * x + bones.translation[b]);
    }
    mesh.vertices.col(v) << acc.x, acc.y, acc.z;
  }
  mesh.joints = mesh.vertices * model.joint_regressor.transpose();
  for (int b = 0; b < kSkeletonNodes; ++b) {
    for (int i = 0; i < 3; ++i) {
      mesh.bones.translation[b][i] = bones.translation[b][i];
      for (int j = 0; j < 3; ++j) mesh.bones.rotation[b](i, j) = bones.rotation[b](i, j);
    }
  }
  mesh.has_bones = true;
  return mesh;
}

KinematicsCache::KinematicsCache(const HandShapeModel& m) {
  parents = m.parents;
  for (int j = 0; j < kArticulatedJoints; ++j) {
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) frames[j](r, c) = m.euler[j].frame(r, c);
    order[j] = m.euler[j].order;
  }
  const int V = m.num_vertices();
  rest_vertex.resize(V);
  vertex_shape.resize(V);
  skin.resize(V);
  for (int v = 0; v < V; ++v) {
    for (int a = 0; a < 3; ++a) {
      rest_vertex[v][a] = m.template_vertices(a, v);
      for (int k = 0; k < kShapeCoeffs; ++k) {
        vertex_shape[v][a * kShapeCoeffs + k] = m.shape_bases(3 * v + a, k);
      }
    }
    for (int b = 0; b < kSkeletonNodes; ++b) {
      const double w = m.skinning_weights(v, b);
      if (w != 0.0) skin[v].emplace_back(b, w);
    }
  }

  // Skeleton node b moves with shape like regressor row b.
  for (int b = 0; b < kSkeletonNodes; ++b) {
    for (int a = 0; a < 3; ++a) rest_joint[b][a] = m.rest_joints(a, b);
    joint_shape[b].fill(0.0);
    for (int v = 0; v < V; ++v) {
      const double h = m.joint_regressor(b, v);
      if (h == 0.0) continue;
      for (int i = 0; i < 3 * kShapeCoeffs; ++i) joint_shape[b][i] += h * vertex_shape[v][i];
    }
  }

  for (int j = 0; j < kRegressedJoints; ++j) {
    std::array<RegressionTerm, kSkeletonNodes> acc{};
    std::array<bool, kSkeletonNodes> used{};
    for (int v = 0; v < V; ++v) {
      const double h = m.joint_regressor(j, v);
      if (h == 0.0) continue;
      for (const auto& [b, w] : skin[v]) {
        const double hw = h * w;
        auto& t = acc[b];
        used[b] = true;
        t.weight += hw;
        for (int a = 0; a < 3; ++a) t.base[a] += hw * rest_vertex[v][a];
        for (int i = 0; i < 3 * kShapeCoeffs; ++i) t.shape[i] += hw * vertex_shape[v][i];
      }
    }
    for (int b = 0; b < kSkeletonNodes; ++b) {
      if (!used[b]) continue;
      acc[b].joint = j;
      acc[b].bone = b;
      regression.push_back(acc[b]);
    }
  }
}

}  // namespace handfit
