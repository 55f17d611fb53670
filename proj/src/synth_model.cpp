// Procedural hand: a box palm with socket holes on its distal and radial
// faces, and one tube per digit attached to each socket. Joints sit at ring
// centroids so the regressor is a set of uniform ring averages.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <vector>

#include <Eigen/Geometry>

#include "handfit/error.hpp"
#include "handfit/hand_model.hpp"

namespace handfit {

namespace {

constexpr int kRing = 8;
constexpr double kSocketHalf = 0.0085;
constexpr double kPalmHalfThickness = 0.015;
constexpr double kBlendRadius = 0.006;

struct DigitSpec {
  Eigen::Vector3d root;     // joint center at the socket
  Eigen::Vector3d axis;     // unit direction of the digit
  Eigen::Vector3d ring_u;   // ring frame, ring_u x ring_w = -socket normal
  Eigen::Vector3d ring_w;
  std::array<double, 3> bone_length{};    // root->j1, j1->j2, j2->tip
  std::vector<double> ring_s;             // axial positions of tube rings
  std::vector<double> ring_radius;
  std::array<int, 3> rings_at_joints{};   // ring index (-1 = socket) at each joint
  std::array<int, 3> nodes{};             // skeleton nodes of the digit
};

struct VertexInfo {
  int digit = -1;   // -1 palm
  double s = 0.0;   // axial coordinate within the digit
};

Eigen::Vector3d ring_point(const Eigen::Vector3d& c, const Eigen::Vector3d& u, const Eigen::Vector3d& w,
                           double r, int i) {
  const double phi = i * (2.0 * std::numbers::pi / kRing);
  return c + r * (std::cos(phi) * u + std::sin(phi) * w);
}

// Square socket ring point i: corners at odd i, edge midpoints at even i.
Eigen::Vector2d socket_offset(int i) {
  static constexpr int kU[kRing] = {1, 1, 0, -1, -1, -1, 0, 1};
  static constexpr int kW[kRing] = {0, 1, 1, 1, 0, -1, -1, -1};
  return {kU[i] * kSocketHalf, kW[i] * kSocketHalf};
}

}  // namespace

HandShapeModel synth_test_model(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(-1.0, 1.0);
  const double width_scale = 1.0 + 0.03 * jitter(rng);
  const double length_scale = 1.0 + 0.03 * jitter(rng);
  std::array<double, 5> digit_scale{};
  for (double& s : digit_scale) s = 1.0 + 0.05 * jitter(rng);

  // Palm grid nodes. Finger order along x: pinky, ring, middle, index.
  const std::array<double, 4> finger_center = {-0.03375 * width_scale, -0.01125 * width_scale,
                                               0.01125 * width_scale, 0.03375 * width_scale};
  std::vector<double> xs;
  for (double c : finger_center) {
    xs.push_back(c - kSocketHalf);
    xs.push_back(c);
    xs.push_back(c + kSocketHalf);
  }
  const double half_width = xs.back();
  const double palm_length = 0.09 * length_scale;
  const double thumb_center_y = 0.0205 * length_scale;
  const std::vector<double> ys = {0.0,
                                  thumb_center_y - kSocketHalf,
                                  thumb_center_y,
                                  thumb_center_y + kSocketHalf,
                                  0.058 * length_scale,
                                  palm_length};
  const std::vector<double> zs = {-kPalmHalfThickness, -kSocketHalf, 0.0, kSocketHalf,
                                  kPalmHalfThickness};
  const int nx = static_cast<int>(xs.size());
  const int ny = static_cast<int>(ys.size());
  const int nz = static_cast<int>(zs.size());

  auto node_key = [&](int i, int j, int k) { return (i * ny + j) * nz + k; };

  // Socket holes: finger sockets on the distal face, thumb on the +x face.
  auto in_finger_socket = [&](int i, int k) -> int {
    if (k < 1 || k >= 3) return -1;
    for (int f = 0; f < 4; ++f) {
      if (i >= 3 * f && i < 3 * f + 2) return f;
    }
    return -1;
  };
  auto in_thumb_socket = [&](int j, int k) { return j >= 1 && j < 3 && k >= 1 && k < 3; };

  // Palm faces as quads of grid node keys, outward oriented.
  std::vector<std::array<int, 4>> quads;
  auto add_face = [&](int axis, int side) {
    // (e1, e2) chosen so that e1 x e2 points outward.
    int a1, a2;
    if (axis == 0) { a1 = side ? 1 : 2; a2 = side ? 2 : 1; }
    else if (axis == 1) { a1 = side ? 2 : 0; a2 = side ? 0 : 2; }
    else { a1 = side ? 0 : 1; a2 = side ? 1 : 0; }
    const std::array<int, 3> n = {nx, ny, nz};
    for (int p = 0; p + 1 < n[a1]; ++p) {
      for (int q = 0; q + 1 < n[a2]; ++q) {
        std::array<int, 3> idx{};
        idx[axis] = side ? n[axis] - 1 : 0;
        auto key_at = [&](int pp, int qq) {
          idx[a1] = pp;
          idx[a2] = qq;
          return node_key(idx[0], idx[1], idx[2]);
        };
        // Cell lower corner in (a1, a2).
        idx[a1] = p;
        idx[a2] = q;
        if (axis == 1 && side == 1 && in_finger_socket(idx[0], idx[2]) >= 0) continue;
        if (axis == 0 && side == 1 && in_thumb_socket(idx[1], idx[2])) continue;
        quads.push_back({key_at(p, q), key_at(p + 1, q), key_at(p + 1, q + 1), key_at(p, q + 1)});
      }
    }
  };
  for (int axis = 0; axis < 3; ++axis) {
    add_face(axis, 0);
    add_face(axis, 1);
  }

  std::set<int> used_keys;
  for (const auto& q : quads) used_keys.insert(q.begin(), q.end());
  std::map<int, int> key_to_vertex;
  std::vector<Eigen::Vector3d> positions;
  std::vector<VertexInfo> info;
  for (int i = 0; i < nx; ++i) {
    for (int j = 0; j < ny; ++j) {
      for (int k = 0; k < nz; ++k) {
        const int key = node_key(i, j, k);
        if (!used_keys.count(key)) continue;
        key_to_vertex[key] = static_cast<int>(positions.size());
        positions.emplace_back(xs[i], ys[j], zs[k]);
        info.push_back({});
      }
    }
  }

  std::vector<std::array<int, 3>> faces;
  for (const auto& q : quads) {
    const int a = key_to_vertex[q[0]], b = key_to_vertex[q[1]];
    const int c = key_to_vertex[q[2]], d = key_to_vertex[q[3]];
    faces.push_back({a, b, c});
    faces.push_back({a, c, d});
  }

  // Digits: index, middle, ring, pinky, thumb.
  std::array<DigitSpec, 5> digits;
  const std::array<std::array<double, 3>, 4> finger_bones = {{
      {0.040, 0.025, 0.021},   // index
      {0.045, 0.028, 0.022},   // middle
      {0.042, 0.027, 0.021},   // ring
      {0.034, 0.020, 0.019},   // pinky
  }};
  const std::array<int, 4> finger_slot = {3, 2, 1, 0};  // x order slot of each finger
  for (int f = 0; f < 4; ++f) {
    DigitSpec& d = digits[f];
    d.root = Eigen::Vector3d(finger_center[finger_slot[f]], palm_length, 0.0);
    d.axis = Eigen::Vector3d::UnitY();
    d.ring_u = Eigen::Vector3d::UnitX();
    d.ring_w = Eigen::Vector3d::UnitZ();
    for (int b = 0; b < 3; ++b) d.bone_length[b] = finger_bones[f][b] * digit_scale[f];
    const double lp = d.bone_length[0], lm = d.bone_length[1], ld = d.bone_length[2];
    d.ring_s = {lp / 3.0, 2.0 * lp / 3.0, lp, lp + lm / 2.0, lp + lm, lp + lm + 0.45 * ld,
                lp + lm + 0.85 * ld};
    d.ring_radius = {0.0085, 0.0083, 0.0080, 0.0078, 0.0075, 0.0072, 0.0055};
    d.rings_at_joints = {-1, 2, 4};
    d.nodes = {1 + 3 * f, 2 + 3 * f, 3 + 3 * f};
  }
  {
    DigitSpec& d = digits[4];
    const double angle = 40.0 * std::numbers::pi / 180.0;
    d.root = Eigen::Vector3d(half_width, thumb_center_y, 0.0);
    d.axis = Eigen::Vector3d(std::cos(angle), std::sin(angle), 0.0);
    // Socket frame on the +x face is (z, y); carry it along the thumb axis.
    const Eigen::Matrix3d carry =
        Eigen::AngleAxisd(angle, Eigen::Vector3d::UnitZ()).toRotationMatrix();
    d.ring_u = carry * Eigen::Vector3d::UnitZ();
    d.ring_w = carry * Eigen::Vector3d::UnitY();
    d.bone_length = {0.040 * digit_scale[4], 0.032 * digit_scale[4], 0.026 * digit_scale[4]};
    const double lm = d.bone_length[0], lp = d.bone_length[1], ld = d.bone_length[2];
    d.ring_s = {0.010, (0.010 + lm) / 2.0, lm, lm + lp / 2.0, lm + lp, lm + lp + 0.5 * ld};
    d.ring_radius = {0.0085, 0.0085, 0.0085, 0.0082, 0.0078, 0.0070};
    d.rings_at_joints = {-1, 2, 4};
    d.nodes = {13, 14, 15};
  }

  // Socket rings in palm vertex ids.
  auto socket_ring = [&](int digit) {
    std::array<int, kRing> ring{};
    const DigitSpec& d = digits[digit];
    for (int i = 0; i < kRing; ++i) {
      const Eigen::Vector2d o = socket_offset(i);
      Eigen::Vector3d p;
      if (digit < 4) {
        p = d.root + o.x() * Eigen::Vector3d::UnitX() + o.y() * Eigen::Vector3d::UnitZ();
      } else {
        p = d.root + o.x() * Eigen::Vector3d::UnitZ() + o.y() * Eigen::Vector3d::UnitY();
      }
      int best = -1;
      double best_d = 1e9;
      for (int v = 0; v < static_cast<int>(positions.size()); ++v) {
        const double dist = (positions[v] - p).norm();
        if (dist < best_d) { best_d = dist; best = v; }
      }
      if (best_d > 1e-12) throw Error(ErrorKind::InvalidModel, "socket ring does not match palm grid");
      ring[i] = best;
    }
    return ring;
  };

  std::set<std::pair<int, int>> palm_edges;
  for (const auto& f : faces) {
    for (int k = 0; k < 3; ++k) palm_edges.insert({f[k], f[(k + 1) % 3]});
  }

  std::array<std::array<int, kRing>, 5> sockets{};
  std::array<std::vector<std::array<int, kRing>>, 5> tube_rings;
  std::array<int, 5> apex{};
  for (int g = 0; g < 5; ++g) {
    const DigitSpec& d = digits[g];
    sockets[g] = socket_ring(g);
    for (int v : sockets[g]) info[v] = {g, 0.0};
    std::vector<std::array<int, kRing>> rings = {sockets[g]};
    for (std::size_t r = 0; r < d.ring_s.size(); ++r) {
      std::array<int, kRing> ring{};
      const Eigen::Vector3d c = d.root + d.ring_s[r] * d.axis;
      for (int i = 0; i < kRing; ++i) {
        ring[i] = static_cast<int>(positions.size());
        positions.push_back(ring_point(c, d.ring_u, d.ring_w, d.ring_radius[r], i));
        info.push_back({g, d.ring_s[r]});
      }
      rings.push_back(ring);
    }
    const double tip_s = d.bone_length[0] + d.bone_length[1] + d.bone_length[2];
    apex[g] = static_cast<int>(positions.size());
    positions.push_back(d.root + tip_s * d.axis);
    info.push_back({g, tip_s});

    std::vector<std::array<int, 3>> tube;
    for (std::size_t r = 0; r + 1 < rings.size(); ++r) {
      for (int i = 0; i < kRing; ++i) {
        const int i1 = (i + 1) % kRing;
        const int a = rings[r][i], b = rings[r][i1], c = rings[r + 1][i1], e = rings[r + 1][i];
        tube.push_back({a, b, c});
        tube.push_back({a, c, e});
      }
    }
    for (int i = 0; i < kRing; ++i) {
      tube.push_back({rings.back()[i], rings.back()[(i + 1) % kRing], apex[g]});
    }
    // The tube must traverse each socket edge opposite to the palm.
    const bool same_direction = palm_edges.count({tube[0][0], tube[0][1]}) > 0;
    for (auto& t : tube) {
      if (same_direction) std::swap(t[1], t[2]);
      faces.push_back(t);
    }
    rings.erase(rings.begin());
    tube_rings[g] = rings;
  }

  const int V = static_cast<int>(positions.size());
  HandShapeModel m;
  m.template_vertices.resize(3, V);
  for (int v = 0; v < V; ++v) m.template_vertices.col(v) = positions[v];
  m.faces = faces;

  // Skeleton.
  m.parents.fill(-1);
  for (int g = 0; g < 5; ++g) {
    m.parents[digits[g].nodes[0]] = 0;
    m.parents[digits[g].nodes[1]] = digits[g].nodes[0];
    m.parents[digits[g].nodes[2]] = digits[g].nodes[1];
  }

  // Regressor: uniform ring averages; tips are the apex vertices.
  m.joint_regressor = Eigen::MatrixXd::Zero(kRegressedJoints, V);
  {
    std::vector<int> wrist;
    for (int v = 0; v < V; ++v) {
      if (info[v].digit < 0 && positions[v].y() == 0.0) wrist.push_back(v);
    }
    for (int v : wrist) m.joint_regressor(0, v) = 1.0 / wrist.size();
    for (int g = 0; g < 5; ++g) {
      const DigitSpec& d = digits[g];
      for (int k = 1; k < 3; ++k) {
        for (int v : tube_rings[g][d.rings_at_joints[k]]) m.joint_regressor(d.nodes[k], v) = 1.0 / kRing;
      }
      // The base joint sits halfway between the socket ring and a ring of
      // palm vertices further in, so the digit pivots inside the palm.
      std::vector<int> inner;
      for (int v = 0; v < V; ++v) {
        if (info[v].digit >= 0 || std::abs(positions[v].z()) != kPalmHalfThickness) continue;
        const Eigen::Vector3d& p = positions[v];
        const bool hit = g < 4 ? (p.y() == ys[4] && std::abs(p.x() - d.root.x()) <= kSocketHalf + 1e-12)
                               : (p.x() == xs[nx - 2] && p.y() >= ys[1] && p.y() <= ys[3]);
        if (hit) inner.push_back(v);
      }
      if (inner.size() != 6) throw Error(ErrorKind::InvalidModel, "inner palm ring not found");
      for (int v : sockets[g]) m.joint_regressor(d.nodes[0], v) = 0.5 / kRing;
      for (int v : inner) m.joint_regressor(d.nodes[0], v) = 0.5 / 6.0;
      m.joint_regressor(16 + g, apex[g]) = 1.0;
    }
  }
  m.rest_joints = m.template_vertices * m.joint_regressor.topRows(kSkeletonNodes).transpose();

  // Skinning: linear falloff across each joint within kBlendRadius.
  m.skinning_weights = Eigen::MatrixXd::Zero(V, kSkeletonNodes);
  for (int v = 0; v < V; ++v) {
    const int g = info[v].digit;
    if (g < 0) {
      m.skinning_weights(v, 0) = 1.0;
      continue;
    }
    const DigitSpec& d = digits[g];
    const std::array<int, 4> chain = {0, d.nodes[0], d.nodes[1], d.nodes[2]};
    const std::array<double, 3> joint_s = {0.0, d.bone_length[0], d.bone_length[0] + d.bone_length[1]};
    const double s = info[v].s;
    int seg = 0;  // index into chain of the bone containing s
    for (int k = 0; k < 3; ++k) {
      if (s >= joint_s[k]) seg = k + 1;
    }
    // Nearest joint and blending across it.
    int nearest = 0;
    for (int k = 1; k < 3; ++k) {
      if (std::abs(s - joint_s[k]) < std::abs(s - joint_s[nearest])) nearest = k;
    }
    const double delta = s - joint_s[nearest];
    if (std::abs(delta) < kBlendRadius) {
      const double w_child = std::clamp(0.5 + delta / (2.0 * kBlendRadius), 0.0, 1.0);
      m.skinning_weights(v, chain[nearest + 1]) += w_child;
      m.skinning_weights(v, chain[nearest]) += 1.0 - w_child;
    } else {
      m.skinning_weights(v, chain[seg]) = 1.0;
    }
  }

  // Shape bases: linear displacement fields.
  m.shape_bases = Eigen::MatrixXd::Zero(3 * V, kShapeCoeffs);
  for (int v = 0; v < V; ++v) {
    const Eigen::Vector3d p = positions[v];
    const int g = info[v].digit;
    const bool on_tube = g >= 0 && info[v].s > 0.0;
    auto set = [&](int k, const Eigen::Vector3d& disp) { m.shape_bases.block<3, 1>(3 * v, k) = disp; };
    set(0, 0.05 * p);  // overall size about the wrist
    if (on_tube) {
      const DigitSpec& d = digits[g];
      const Eigen::Vector3d axis_point = d.root + info[v].s * d.axis;
      set(1, 0.06 * info[v].s * d.axis);
      set(2, Eigen::Vector3d(0.05 * d.root.x(), 0.0, 0.0));
      set(3, Eigen::Vector3d(0.0, 0.05 * d.root.y(), 0.0));
      set(4, 0.08 * (p - axis_point));
      set(5 + g, 0.08 * info[v].s * d.axis);
    } else {
      set(2, Eigen::Vector3d(0.05 * p.x(), 0.0, 0.0));
      set(3, Eigen::Vector3d(0.0, 0.05 * p.y(), 0.0));
      set(4, Eigen::Vector3d(0.0, 0.0, 0.08 * p.z()));
    }
  }

  // Euler conventions: bend flexes toward the palm (-z), twist is the
  // digit's long axis; widest range (bend) is applied last.
  for (int g = 0; g < 5; ++g) {
    const DigitSpec& d = digits[g];
    for (int k = 0; k < 3; ++k) {
      Eigen::Vector3d toward;
      if (g < 4) {
        toward = -Eigen::Vector3d::UnitZ();
      } else {
        const Eigen::Vector3d across = Eigen::Vector3d::UnitZ().cross(d.axis);
        toward = k == 0 ? (0.8 * across - 0.6 * Eigen::Vector3d::UnitZ())
                        : (0.5 * across - 0.866 * Eigen::Vector3d::UnitZ());
      }
      const Eigen::Vector3d bend = d.axis.cross(toward).normalized();
      const Eigen::Vector3d twist = d.axis;
      const Eigen::Vector3d splay = twist.cross(bend);
      EulerConvention& e = m.euler[d.nodes[k] - 1];
      e.frame.col(kBend) = bend;
      e.frame.col(kSplay) = splay;
      e.frame.col(kTwist) = twist;
      e.order = {kTwist, kSplay, kBend};
    }
  }

  validate_model(m);
  return m;
}

}  // namespace handfit
