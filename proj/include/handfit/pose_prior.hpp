#pragma once

// Joint range tables, range refinement from inter-joint dependencies, and
// the pose and shape penalties built on them.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <vector>

#include <json.hpp>

#include "handfit/dual.hpp"
#include "handfit/hand_model.hpp"

namespace handfit {

struct AngleRange {
  double min = 0.0;
  double max = 0.0;
};

// Static ranges in radians, indexed [articulated joint][kBend|kSplay|kTwist].
struct JointLimitTable {
  std::array<std::array<AngleRange, 3>, kArticulatedJoints> range{};

  const AngleRange& at(int joint, int slot) const { return range[joint][slot]; }
};

// Per-angle interval, flat index 3 * joint + slot. T carries derivatives
// when the refinement depends on differentiated angles.
template <typename T>
struct LimitsT {
  std::array<T, kPoseParams> lo{};
  std::array<T, kPoseParams> hi{};
};
using RefinedLimits = LimitsT<double>;

struct RefineOptions {
  bool enabled = true;              // false: static table only
  bool bend_from_splay = true;      // symmetric tightening of bend from splay
};

// Built-in defaults; identical to data/limits_default.json.
JointLimitTable default_limits();

// Degrees on disk, radians in memory. Throws SchemaViolation (min > max,
// missing joint) or UnsupportedVersion.
JointLimitTable limits_from_json(const nlohmann::json& j);
nlohmann::json limits_to_json(const JointLimitTable& t);
JointLimitTable load_limits(const std::filesystem::path& path);

// Finger MCP / PIP / DIP articulated indices of finger k (0..3).
inline int finger_mcp(int k) { return 3 * k; }
inline int finger_pip(int k) { return 3 * k + 1; }
inline int finger_dip(int k) { return 3 * k + 2; }

template <typename T>
LimitsT<T> static_limits(const JointLimitTable& table) {
  LimitsT<T> out;
  for (int j = 0; j < kArticulatedJoints; ++j) {
    for (int a = 0; a < 3; ++a) {
      out.lo[3 * j + a] = T(table.range[j][a].min);
      out.hi[3 * j + a] = T(table.range[j][a].max);
    }
  }
  return out;
}

// theta: 45 angles, joint-major.
template <typename T>
LimitsT<T> refine_limits(const JointLimitTable& table, const T* theta, const RefineOptions& opt = {}) {
  LimitsT<T> out = static_limits<T>(table);
  if (!opt.enabled) return out;
  for (int k = 0; k < 4; ++k) {
    const int j = finger_mcp(k);
    const AngleRange& ab = table.range[j][kBend];
    const AngleRange& gs = table.range[j][kSplay];
    const T& alpha = theta[3 * j + kBend];
    const T& gamma = theta[3 * j + kSplay];
    const double a = value_of(alpha);
    const double g = value_of(gamma);
    // Splay range shrinks linearly as bend approaches either extreme and
    // closes at the extreme itself.
    if (ab.min <= a && a < 0.0) out.lo[3 * j + kSplay] = gs.min * (1.0 - alpha / ab.min);
    if (0.0 < a && a <= ab.max) out.hi[3 * j + kSplay] = gs.max * (1.0 - alpha / ab.max);
    if (opt.bend_from_splay) {
      if (gs.min <= g && g < 0.0) out.lo[3 * j + kBend] = ab.min * (1.0 - gamma / gs.min);
      if (0.0 < g && g <= gs.max) out.hi[3 * j + kBend] = ab.max * (1.0 - gamma / gs.max);
    }
    // A flexed DIP drags the PIP into flexion.
    const int dip = finger_dip(k);
    const int pip = finger_pip(k);
    if (value_of(theta[3 * dip + kBend]) > 0.0) {
      const AngleRange& pr = table.range[pip][kBend];
      out.lo[3 * pip + kBend] = T(std::clamp(0.0, pr.min, pr.max));
    }
  }
  return out;
}

template <typename T>
T pose_loss(const T* theta, const LimitsT<T>& limits) {
  T acc(0.0);
  for (int i = 0; i < kPoseParams; ++i) {
    const T over = theta[i] - limits.hi[i];
    const T under = limits.lo[i] - theta[i];
    if (value_of(over) > 0.0) acc += over * over;
    else if (value_of(under) > 0.0) acc += under * under;
  }
  return acc;
}

template <typename T>
T shape_loss(const T* beta) {
  using std::sqrt;
  T sq(0.0);
  for (int k = 0; k < kShapeCoeffs; ++k) sq += beta[k] * beta[k];
  return sqrt(sq);
}

// Per-angle violation report for one pose.
struct LimitViolation {
  int joint = 0;
  int slot = 0;
  double angle = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  double excess = 0.0;  // radians outside [lo, hi]
};
std::vector<LimitViolation> limit_violations(const JointLimitTable& table, const PoseAngles& theta,
                                             const RefineOptions& opt = {}, double tol = 0.0);

}  // namespace handfit
