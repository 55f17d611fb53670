#pragma once

// Self-penetration: generalized winding numbers with geodesic neighbor
// exclusion, interior vertex sets, and the depth-tolerant loss on them.

#include <array>
#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "handfit/hand_model.hpp"

namespace handfit {

namespace simd {
struct TriangleSoA;
}

using FaceList = std::vector<std::array<int, 3>>;

// Vertices within `radius` of each vertex, measured along rest-pose mesh
// edges. Member lists are sorted and always contain the vertex itself.
struct NeighborMask {
  double radius = 0.0;
  std::vector<std::vector<int>> members;

  bool contains(int v, int u) const;
  int num_vertices() const { return static_cast<int>(members.size()); }
};

NeighborMask build_neighbor_mask(const HandShapeModel& model, double radius = 0.02);
NeighborMask build_neighbor_mask(const Eigen::Matrix3Xd& rest_vertices, const FaceList& faces, double radius);

// Winding number of each query against the full closed mesh. A query that
// coincides with a mesh vertex is nudged by 1e-9 of the bounding-box
// diagonal and re-evaluated.
Eigen::VectorXd winding_numbers(const Eigen::Matrix3Xd& vertices, const FaceList& faces,
                                const Eigen::Matrix3Xd& queries);

struct PenetrationOptions {
  double neighbor_radius = 0.02;   // meters
  double winding_threshold = 0.5;
  // Compare against each vertex's own rest-pose winding value instead of
  // zero. Points on flat regions sit at 0.5 even after neighbor exclusion.
  bool rest_baseline = true;
  bool broad_phase = true;
  double broad_phase_margin = 0.002;  // meters
};

struct InteriorSet {
  std::vector<int> vertices;     // members of M, ascending
  std::vector<double> winding;   // neighbor-excluded winding of each member
  std::vector<double> depth;     // d(v), meters
  std::vector<int> partner;      // nearest non-neighbor vertex realizing d(v)
  int candidates = 0;            // vertices that reached the winding test

  bool empty() const { return vertices.empty(); }
};

// Per-model precomputation: neighbor mask, per-vertex triangle exclusion
// and eligibility bitsets, rest baselines, broad-phase segments. Immutable
// after construction and safe to share between threads.
class PenetrationDetector {
 public:
  explicit PenetrationDetector(const HandShapeModel& model, const PenetrationOptions& opt = {});

  // With bone frames the broad phase tests each vertex against the other
  // segments' boxes in their own bone frames; without them it falls back to
  // world axis-aligned boxes.
  InteriorSet interior(const Eigen::Matrix3Xd& posed, const BoneFrames* bones = nullptr) const;

  // Winding of vertex v against triangles containing no neighbor of v.
  double excluded_winding(const Eigen::Matrix3Xd& posed, int v) const;
  // Vertices that pass the broad phase for this pose.
  std::vector<int> broad_phase(const Eigen::Matrix3Xd& posed, const BoneFrames* bones = nullptr) const;

  const NeighborMask& mask() const { return mask_; }
  const FaceList& faces() const { return faces_; }
  const PenetrationOptions& options() const { return opt_; }
  const std::vector<double>& rest_winding() const { return rest_winding_; }
  int segment_of(int v) const { return segment_[v]; }

 private:
  PenetrationOptions opt_;
  FaceList faces_;
  NeighborMask mask_;
  int num_vertices_ = 0;
  std::size_t face_words_ = 0;
  std::size_t vertex_words_ = 0;
  std::vector<std::uint64_t> excluded_faces_;    // per vertex, face bitset
  std::vector<std::uint64_t> eligible_vertices_; // per vertex, vertex bitset
  std::vector<double> rest_winding_;
  std::vector<int> segment_;                     // dominant skinning bone
  std::array<int, kSkeletonNodes> parents_{};
  std::vector<std::vector<int>> segment_vertices_;  // vertices spanned by each segment's faces
  std::vector<std::vector<int>> segment_members_;   // vertices whose dominant bone is the segment
  std::vector<std::uint32_t> touching_;             // per vertex: segments whose faces contain it

  double winding_impl(const Eigen::Matrix3Xd& posed, int v, const simd::TriangleSoA& tris) const;
};

InteriorSet interior_vertices(const HandMesh& mesh, const PenetrationDetector& detector);

// Sum over M of max(d(v) - d_tol, 0), meters.
double non_penetration_loss(const InteriorSet& interior, double d_tol);
// Largest d(v) over M, 0 when M is empty.
double penetration_depth(const InteriorSet& interior);
double penetration_depth(const HandMesh& mesh, const PenetrationDetector& detector);

}  // namespace handfit
