#include "handfit/pose_prior.hpp"

#include <numbers>
#include <string>

#include "handfit/error.hpp"
#include "handfit/file_format.hpp"

namespace handfit {

namespace {

constexpr const char* kLimitsFormat = "handfit-limits";
constexpr int kLimitsMajor = 1;
constexpr double kDeg = std::numbers::pi / 180.0;
constexpr const char* kSlotNames[3] = {"bend", "splay", "twist"};

struct DegRange {
  double min, max;
};

void set_deg(JointLimitTable& t, int joint, DegRange bend, DegRange splay, DegRange twist) {
  t.range[joint][kBend] = {bend.min * kDeg, bend.max * kDeg};
  t.range[joint][kSplay] = {splay.min * kDeg, splay.max * kDeg};
  t.range[joint][kTwist] = {twist.min * kDeg, twist.max * kDeg};
}

}  // namespace

JointLimitTable default_limits() {
  JointLimitTable t;
  const DegRange locked{0.0, 0.0};
  for (int k = 0; k < 4; ++k) {
    set_deg(t, finger_mcp(k), {-30.0, 90.0}, {-15.0, 15.0}, locked);
    set_deg(t, finger_pip(k), {0.0, 110.0}, locked, locked);
    set_deg(t, finger_dip(k), {-10.0, 90.0}, locked, locked);
  }
  set_deg(t, 12, {-15.0, 60.0}, {-40.0, 20.0}, {-10.0, 10.0});
  set_deg(t, 13, {0.0, 55.0}, locked, locked);
  set_deg(t, 14, {-15.0, 80.0}, locked, locked);
  return t;
}

nlohmann::json limits_to_json(const JointLimitTable& t) {
  nlohmann::json j;
  j["format"] = kLimitsFormat;
  j["version"] = "1.0";
  j["units"] = "degrees";
  nlohmann::json joints = nlohmann::json::array();
  for (int k = 0; k < kArticulatedJoints; ++k) {
    nlohmann::json rec;
    rec["name"] = joint_name(k + 1);
    for (int a = 0; a < 3; ++a) {
      rec[kSlotNames[a]] = {t.range[k][a].min / kDeg, t.range[k][a].max / kDeg};
    }
    joints.push_back(rec);
  }
  j["joints"] = joints;
  return j;
}

JointLimitTable limits_from_json(const nlohmann::json& j) {
  check_header(j, kLimitsFormat, kLimitsMajor);
  if (j.value("units", std::string("degrees")) != "degrees") {
    throw Error(ErrorKind::SchemaViolation, "limit table units must be degrees");
  }
  const auto it = j.find("joints");
  if (it == j.end() || !it->is_array()) throw Error(ErrorKind::SchemaViolation, "missing joints array");
  JointLimitTable t;
  std::array<bool, kArticulatedJoints> seen{};
  for (const auto& rec : *it) {
    const std::string name = rec.value("name", std::string());
    int joint = -1;
    for (int k = 0; k < kArticulatedJoints; ++k) {
      if (name == joint_name(k + 1)) joint = k;
    }
    if (joint < 0) throw Error(ErrorKind::SchemaViolation, "unknown joint '" + name + "'");
    if (seen[joint]) throw Error(ErrorKind::SchemaViolation, "duplicate joint '" + name + "'");
    seen[joint] = true;
    for (int a = 0; a < 3; ++a) {
      const auto r = rec.find(kSlotNames[a]);
      if (r == rec.end() || !r->is_array() || r->size() != 2 || !(*r)[0].is_number() ||
          !(*r)[1].is_number()) {
        throw Error(ErrorKind::SchemaViolation, name + "." + kSlotNames[a] + " must be [min, max]");
      }
      const double lo = (*r)[0].get<double>();
      const double hi = (*r)[1].get<double>();
      if (!(lo <= hi)) {
        throw Error(ErrorKind::SchemaViolation, name + "." + kSlotNames[a] + ": min > max");
      }
      t.range[joint][a] = {lo * kDeg, hi * kDeg};
    }
  }
  for (int k = 0; k < kArticulatedJoints; ++k) {
    if (!seen[k]) throw Error(ErrorKind::SchemaViolation, std::string("missing joint '") + joint_name(k + 1) + "'");
  }
  return t;
}

JointLimitTable load_limits(const std::filesystem::path& path) {
  return limits_from_json(read_json_file(path));
}

std::vector<LimitViolation> limit_violations(const JointLimitTable& table, const PoseAngles& theta,
                                             const RefineOptions& opt, double tol) {
  const RefinedLimits lim = refine_limits<double>(table, theta.data(), opt);
  std::vector<LimitViolation> out;
  for (int i = 0; i < kPoseParams; ++i) {
    const double a = theta.data()[i];
    const double excess = std::max({a - lim.hi[i], lim.lo[i] - a, 0.0});
    if (excess > tol) out.push_back({i / 3, i % 3, a, lim.lo[i], lim.hi[i], excess});
  }
  return out;
}

}  // namespace handfit
