#pragma once

// Parametric hand: template mesh, 16-node skeleton, linear shape basis,
// joint regressor and skinning weights, plus forward kinematics.
//
// Skeleton node order:
//   0       wrist (root)
//   1..3    index  MCP, PIP, DIP
//   4..6    middle MCP, PIP, DIP
//   7..9    ring   MCP, PIP, DIP
//   10..12  pinky  MCP, PIP, DIP
//   13..15  thumb  CMC, MCP, IP
// Regressed joints 0..15 follow the skeleton; 16..20 are the fingertips of
// index, middle, ring, pinky and thumb.

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

namespace handfit {

inline constexpr int kSkeletonNodes = 16;
inline constexpr int kArticulatedJoints = 15;
inline constexpr int kRegressedJoints = 21;
inline constexpr int kShapeCoeffs = 10;
inline constexpr int kPoseParams = kArticulatedJoints * 3;

// Angle slots within each joint's triple.
inline constexpr int kBend = 0;
inline constexpr int kSplay = 1;
inline constexpr int kTwist = 2;

enum class JointRole { Wrist, FingerMcp, FingerPip, FingerDip, ThumbCmc, ThumbMcp, ThumbIp };

// Role of skeleton node `node` (0..15).
JointRole joint_role(int node) noexcept;
const char* joint_name(int node) noexcept;
// Digit 0..4 (index, middle, ring, pinky, thumb) of an articulated node, -1 for the wrist.
int digit_of(int node) noexcept;

using PoseAngles = Eigen::Matrix<double, kArticulatedJoints, 3, Eigen::RowMajor>;
using ShapeCoeffs = Eigen::Matrix<double, kShapeCoeffs, 1>;

struct EulerConvention {
  // Columns are the bend, splay and twist axes expressed in rest-pose model
  // coordinates (orthonormal, right handed).
  Eigen::Matrix3d frame = Eigen::Matrix3d::Identity();
  // Application order, first to last, as angle slots (kBend/kSplay/kTwist).
  std::array<int, 3> order{kTwist, kSplay, kBend};
};

struct HandShapeModel {
  Eigen::Matrix3Xd template_vertices;                 // 3 x V, meters
  std::vector<std::array<int, 3>> faces;              // outward oriented
  std::array<int, kSkeletonNodes> parents{};          // -1 for the root
  Eigen::Matrix<double, 3, kSkeletonNodes> rest_joints;
  Eigen::MatrixXd shape_bases;                        // 3V x 10, row 3v + axis
  Eigen::MatrixXd joint_regressor;                    // 21 x V
  Eigen::MatrixXd skinning_weights;                   // V x 16
  std::array<EulerConvention, kArticulatedJoints> euler{};

  int num_vertices() const { return static_cast<int>(template_vertices.cols()); }
  int num_faces() const { return static_cast<int>(faces.size()); }
};

// Rigid bone transforms of a posed hand: x_posed = rotation * x_rest + translation.
struct BoneFrames {
  std::array<Eigen::Matrix3d, kSkeletonNodes> rotation;
  std::array<Eigen::Vector3d, kSkeletonNodes> translation;
};

struct HandMesh {
  Eigen::Matrix3Xd vertices;                          // 3 x V, meters
  Eigen::Matrix<double, 3, kRegressedJoints> joints;  // meters
  BoneFrames bones;
  bool has_bones = false;
};

// Throws Error(InvalidModel | NonWatertight) when an invariant fails.
void validate_model(const HandShapeModel& model);

HandShapeModel load_model(const std::filesystem::path& path);
void save_model(const HandShapeModel& model, const std::filesystem::path& path);
nlohmann::json model_to_json(const HandShapeModel& model);
HandShapeModel model_from_json(const nlohmann::json& j);

// Deterministic procedural hand used in place of licensed assets.
HandShapeModel synth_test_model(std::uint64_t seed);

// Shaped template = template + bases * beta.
Eigen::Matrix3Xd shaped_template(const HandShapeModel& model, const ShapeCoeffs& beta);

// Poses the mesh by linear blend skinning. `root_rotation` rotates the whole
// hand about the wrist joint.
HandMesh forward_kinematics(const HandShapeModel& model, const PoseAngles& theta,
                            const ShapeCoeffs& beta,
                            const Eigen::Matrix3d& root_rotation = Eigen::Matrix3d::Identity());

// Local joint rotation for one articulated joint (0..14) from its three
// angles, using the model's Euler convention.
Eigen::Matrix3d local_rotation(const EulerConvention& conv, const Eigen::Vector3d& angles);

}  // namespace handfit
