#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include <Eigen/Geometry>

#include "handfit/dataset.hpp"
#include "handfit/error.hpp"
#include "handfit/penetration.hpp"

namespace handfit {

std::string NoiseProfile::to_string() const {
  std::ostringstream os;
  switch (kind) {
    case NoiseKind::Clean: os << "clean"; break;
    case NoiseKind::Gaussian: os << "gaussian:" << sigma_px; break;
    case NoiseKind::Corrupt: os << "corrupt:" << count << ":" << sigma_px; break;
    case NoiseKind::Occlude: os << "occlude:" << count; break;
  }
  return os.str();
}

NoiseProfile NoiseProfile::parse(const std::string& text) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
  auto bad = [&]() -> Error { return Error(ErrorKind::Usage, "bad noise profile '" + text + "'"); };
  auto num = [&](const std::string& s) {
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used != s.size() || !(v >= 0.0)) throw bad();
      return v;
    } catch (const std::logic_error&) {
      throw bad();
    }
  };
  auto count = [&](const std::string& s) {
    const double v = num(s);
    if (v != std::floor(v) || v > kRegressedJoints) throw bad();
    return static_cast<int>(v);
  };
  NoiseProfile p;
  if (parts.empty()) throw bad();
  if (parts[0] == "clean" && parts.size() == 1) {
    p.kind = NoiseKind::Clean;
  } else if (parts[0] == "gaussian" && parts.size() == 2) {
    p.kind = NoiseKind::Gaussian;
    p.sigma_px = num(parts[1]);
  } else if (parts[0] == "corrupt" && parts.size() == 3) {
    p.kind = NoiseKind::Corrupt;
    p.count = count(parts[1]);
    p.sigma_px = num(parts[2]);
  } else if (parts[0] == "occlude" && parts.size() == 2) {
    p.kind = NoiseKind::Occlude;
    p.count = count(parts[1]);
  } else {
    throw bad();
  }
  return p;
}

namespace {

std::vector<int> pick_joints(std::mt19937_64& rng, int k) {
  std::vector<int> idx(kRegressedJoints);
  for (int i = 0; i < kRegressedJoints; ++i) idx[i] = i;
  // Partial Fisher-Yates with the engine directly, so the sequence does not
  // depend on the standard library's shuffle.
  for (int i = 0; i < k; ++i) {
    const int j = i + static_cast<int>(rng() % static_cast<std::uint64_t>(kRegressedJoints - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

std::vector<SampleRecord> synthesize(const HandShapeModel& model, const JointLimitTable& limits,
                                     const SynthOptions& opt) {
  if (opt.n < 0) throw Error(ErrorKind::Usage, "sample count must be >= 0");
  const PenetrationDetector detector(model);
  std::mt19937_64 rng(opt.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<SampleRecord> out;
  out.reserve(opt.n);
  const int width = std::max<int>(4, static_cast<int>(std::to_string(opt.n).size()));
  for (int s = 0; s < opt.n; ++s) {
    GroundTruth gt;
    HandMesh mesh;
    // Uniform inside the static box, kept when inside the refined limits and
    // free of deep penetration.
    for (int attempt = 0;; ++attempt) {
      if (attempt > 100000) throw Error(ErrorKind::Diverged, "no feasible pose found");
      PoseAngles th;
      for (int j = 0; j < kArticulatedJoints; ++j) {
        for (int a = 0; a < 3; ++a) {
          const AngleRange& r = limits.range[j][a];
          th(j, a) = r.min + (r.max - r.min) * unit(rng);
        }
      }
      if (!limit_violations(limits, th).empty()) continue;
      ShapeCoeffs beta;
      for (int k = 0; k < kShapeCoeffs; ++k) beta[k] = opt.beta_sigma * gauss(rng);
      mesh = forward_kinematics(model, th, beta);
      if (penetration_depth(mesh, detector) > opt.d_tol) continue;
      gt.state.theta = th;
      gt.state.beta = beta;
      break;
    }
    gt.joints = mesh.joints;

    // Camera: uniform scale, rotation of bounded angle about a random axis,
    // and the hand's joint centroid near the image center.
    CameraParams cam;
    cam.log_scale = std::log(opt.scale_min + (opt.scale_max - opt.scale_min) * unit(rng));
    Eigen::Vector3d axis(gauss(rng), gauss(rng), gauss(rng));
    axis.normalize();
    const double angle = opt.max_rotation_deg * std::numbers::pi / 180.0 * unit(rng);
    const Eigen::Vector3d w = angle * axis;
    cam.rotation = Vec3T<double>(w.x(), w.y(), w.z());
    const Eigen::Vector3d center = camera_rotation(cam) * mesh.joints.rowwise().mean();
    cam.translation = {-center.x() + opt.jitter_m * (2.0 * unit(rng) - 1.0),
                       -center.y() + opt.jitter_m * (2.0 * unit(rng) - 1.0)};
    gt.state.camera = cam;

    SampleRecord rec;
    std::string id = std::to_string(s);
    rec.obs.source_id = "synth-" + std::string(width - std::min<int>(width, static_cast<int>(id.size())), '0') + id;
    rec.obs.positions = project(mesh.joints, cam, opt.intrinsics);
    rec.obs.visible.fill(true);
    switch (opt.noise.kind) {
      case NoiseKind::Clean: break;
      case NoiseKind::Gaussian:
        for (int i = 0; i < kRegressedJoints; ++i)
          for (int c = 0; c < 2; ++c) rec.obs.positions(i, c) += opt.noise.sigma_px * gauss(rng);
        break;
      case NoiseKind::Corrupt:
        rec.corrupted = pick_joints(rng, opt.noise.count);
        for (int i : rec.corrupted)
          for (int c = 0; c < 2; ++c) rec.obs.positions(i, c) += opt.noise.sigma_px * gauss(rng);
        break;
      case NoiseKind::Occlude:
        for (int i : pick_joints(rng, opt.noise.count)) {
          rec.obs.visible[i] = false;
          rec.obs.positions.row(i).setZero();
        }
        break;
    }
    rec.truth = gt;
    out.push_back(std::move(rec));
  }
  return out;
}

double truth_consistency(const HandShapeModel& model, const SampleRecord& r, const Intrinsics& K) {
  if (!r.truth) return 0.0;
  const HandMesh mesh = forward_kinematics(model, r.truth->state.theta, r.truth->state.beta);
  double worst = (mesh.joints - r.truth->joints).cwiseAbs().maxCoeff();
  const auto px = project(mesh.joints, r.truth->state.camera, K);
  for (int i = 0; i < kRegressedJoints; ++i) {
    if (!r.obs.visible[i]) continue;
    worst = std::max(worst, (px.row(i) - r.obs.positions.row(i)).cwiseAbs().maxCoeff());
  }
  return worst;
}

}  // namespace handfit
