#include "handfit/fitter.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <random>
#include <thread>
#include <type_traits>

#include <Eigen/Geometry>

#include "handfit/error.hpp"

namespace handfit {

namespace {

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;
constexpr double kAcceptTolerance = 0.05;   // relative loss increase still accepted
constexpr double kStepGrowth = 1.2;         // per accepted step
constexpr double kStepCap = 3.0;            // times step_size
constexpr double kTranslationStepScale = 0.1;
constexpr double kSigmaStepScale = 3.0;
constexpr double kInitialBend = 20.0 * std::numbers::pi / 180.0;
constexpr double kFiniteDiffStep = 1e-5;
constexpr int kViewDirections = 256;

double infinity() { return std::numeric_limits<double>::infinity(); }

template <typename T>
struct Terms {
  T data{}, pose{}, penetration{}, shape{};
};

struct Context {
  const KinematicsCache& cache;
  const JointLimitTable& limits;
  const FitConfig& config;
};

// The whole objective, scalar generic. x holds kStateSize entries.
template <typename T>
Terms<T> evaluate(const Context& c, const T* x, const LandmarkObservation& obs, Stage stage,
                  const std::vector<Contact>& contacts) {
  const T* theta = x + kThetaOffset;
  const T* beta = x + kBetaOffset;
  const PosedBones<T> bones = pose_bones<T>(c.cache, theta, beta, Mat3T<T>::identity());
  const auto joints = regress_joints<T>(c.cache, bones, beta);

  CameraT<T> cam;
  cam.log_scale = x[kCameraOffset];
  cam.rotation = Vec3T<T>(x[kCameraOffset + 1], x[kCameraOffset + 2], x[kCameraOffset + 3]);
  cam.translation = {x[kCameraOffset + 4], x[kCameraOffset + 5]};
  std::array<Pixel<T>, kRegressedJoints> px;
  project_points<T>(joints, kRegressedJoints, cam, c.config.intrinsics(), px.data());

  Terms<T> t;
  t.data = stage == Stage::Mse ? mse_loss<T>(px.data(), obs) : nll_loss<T>(px.data(), x + kSigmaOffset, obs);
  t.pose = T(0.0);
  if (c.config.lambda1 != 0.0) {
    const LimitsT<T> lim = refine_limits<T>(c.limits, theta, c.config.refine());
    t.pose = c.config.lambda1 * pose_loss<T>(theta, lim);
  }
  t.penetration = T(0.0);
  if (c.config.lambda2 != 0.0) {
    using std::sqrt;
    T acc(0.0);
    for (const Contact& k : contacts) {
      const Vec3T<T> d = pose_vertex<T>(c.cache, bones, k.vertex, beta) - pose_vertex<T>(c.cache, bones, k.partner, beta);
      const T dist = sqrt(dot(d, d));
      if (value_of(dist) > c.config.d_tol) acc += dist - c.config.d_tol;
    }
    t.penetration = c.config.lambda2 * acc;
  }
  t.shape = c.config.lambda3 != 0.0 ? c.config.lambda3 * shape_loss<T>(beta) : T(0.0);
  return t;
}

LossBreakdown to_breakdown(const Terms<double>& t) {
  LossBreakdown b{t.data, t.pose, t.penetration, t.shape, 0.0};
  b.total = b.data + b.pose + b.penetration + b.shape;
  return b;
}

template <int N>
Eigen::VectorXd dual_gradient(const Context& c, const Eigen::VectorXd& x, const LandmarkObservation& obs, Stage stage,
                              const std::vector<Contact>& contacts, LossBreakdown* loss) {
  std::array<Dual<N>, kStateSize> xd;
  for (int i = 0; i < kStateSize; ++i) xd[i] = i < N ? Dual<N>::variable(x[i], i) : Dual<N>(x[i]);
  const Terms<Dual<N>> t = evaluate<Dual<N>>(c, xd.data(), obs, stage, contacts);
  const std::pair<const char*, const Dual<N>*> named[] = {
      {"data", &t.data}, {"pose", &t.pose}, {"penetration", &t.penetration}, {"shape", &t.shape}};
  for (const auto& [name, term] : named) {
    if (!isfinite(*term)) throw Error(ErrorKind::NonFiniteGradient, std::string("term ") + name);
  }
  Eigen::VectorXd g = Eigen::VectorXd::Zero(kStateSize);
  for (int i = 0; i < N; ++i) g[i] = t.data.d[i] + t.pose.d[i] + t.penetration.d[i] + t.shape.d[i];
  if (loss) *loss = to_breakdown({t.data.v, t.pose.v, t.penetration.v, t.shape.v});
  return g;
}

int active_size(Stage stage) { return stage == Stage::Mse ? kSigmaOffset : kStateSize; }

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

void clamp_sigmas(Eigen::VectorXd& x) {
  for (int i = 0; i < kRegressedJoints; ++i) x[kSigmaOffset + i] = clamp_log_sigma(x[kSigmaOffset + i]);
}

// Rotation taking unit direction d onto +z.
Eigen::Matrix3d align_to_z(const Eigen::Vector3d& d) {
  const Eigen::Vector3d z = Eigen::Vector3d::UnitZ();
  if (d.dot(z) < -1.0 + 1e-12) return Eigen::AngleAxisd(std::numbers::pi, Eigen::Vector3d::UnitX()).toRotationMatrix();
  return Eigen::Quaterniond::FromTwoVectors(d, z).toRotationMatrix();
}


// ---- per-digit depth branches

constexpr int kDigitAngles = 9;
using DigitVec = Eigen::Matrix<double, kDigitAngles, 1>;

int digit_first_joint(int g) { return g < 4 ? 3 * g : 12; }

std::array<int, 4> digit_regressed(int g) {
  const int n = 1 + digit_first_joint(g);
  return {n, n + 1, n + 2, 16 + g};
}

// The digit's four regressed joints with its nine angles replaced by p.
template <typename T>
std::array<Vec3T<T>, 4> digit_points(const Context& c, const Eigen::VectorXd& x, int g, const T* p,
                                     std::array<T, kPoseParams>& theta) {
  for (int i = 0; i < kPoseParams; ++i) theta[i] = T(x[kThetaOffset + i]);
  const int j0 = digit_first_joint(g);
  for (int i = 0; i < kDigitAngles; ++i) theta[3 * j0 + i] = p[i];
  std::array<T, kShapeCoeffs> beta;
  for (int k = 0; k < kShapeCoeffs; ++k) beta[k] = T(x[kBetaOffset + k]);
  const PosedBones<T> bones = pose_bones<T>(c.cache, theta.data(), beta.data(), Mat3T<T>::identity());
  const auto joints = regress_joints<T>(c.cache, bones, beta.data());
  const auto idx = digit_regressed(g);
  return {joints[idx[0]], joints[idx[1]], joints[idx[2]], joints[idx[3]]};
}

// Squared-hinge residuals of the digit's angles; their squares sum to the
// digit's share of pose_loss.
template <typename T>
void push_hinges(const Context& c, const std::array<T, kPoseParams>& theta, int g, double weight, std::vector<T>& r) {
  const LimitsT<T> lim = refine_limits<T>(c.limits, theta.data(), c.config.refine());
  const int j0 = digit_first_joint(g);
  for (int i = 3 * j0; i < 3 * j0 + kDigitAngles; ++i) {
    const T over = theta[i] - lim.hi[i];
    const T under = lim.lo[i] - theta[i];
    if (value_of(over) > 0.0) r.push_back(weight * over);
    else if (value_of(under) > 0.0) r.push_back(weight * under);
    else r.push_back(T(0.0));
  }
}

// Damped Gauss-Newton over one digit; `residuals(p, r)` is generic in the
// scalar so the Jacobian comes from forward-mode duals.
template <typename F>
DigitVec levenberg_marquardt(F&& residuals, DigitVec p, int iters) {
  using D = Dual<kDigitAngles>;
  auto cost_of = [&](const DigitVec& q) {
    std::vector<double> r;
    try {
      residuals(q.data(), r);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::BehindCamera) throw;
      return infinity();
    }
    double s = 0.0;
    for (double v : r) s += v * v;
    return std::isfinite(s) ? s : infinity();
  };
  double cost = cost_of(p);
  if (!std::isfinite(cost)) return p;
  double mu = 1e-3;
  for (int it = 0; it < iters; ++it) {
    std::array<D, kDigitAngles> pd;
    for (int i = 0; i < kDigitAngles; ++i) pd[i] = D::variable(p[i], i);
    std::vector<D> r;
    residuals(pd.data(), r);
    Eigen::Matrix<double, kDigitAngles, kDigitAngles> A = Eigen::Matrix<double, kDigitAngles, kDigitAngles>::Zero();
    DigitVec grad = DigitVec::Zero();
    for (const D& ri : r) {
      const Eigen::Map<const DigitVec> j(ri.d.data());
      A += j * j.transpose();
      grad += ri.v * j;
    }
    bool improved = false;
    for (int tries = 0; tries < 10 && !improved; ++tries) {
      Eigen::Matrix<double, kDigitAngles, kDigitAngles> damped = A;
      damped.diagonal().array() += mu * (A.diagonal().array() + 1e-6);
      const DigitVec q = p + damped.ldlt().solve(-grad);
      const double c = cost_of(q);
      if (c < cost) {
        const double gain = cost - c;
        p = q;
        cost = c;
        mu = std::max(mu / 3.0, 1e-12);
        improved = true;
        if (gain <= 1e-12 * std::max(1.0, cost)) return p;
      } else {
        mu *= 4.0;
      }
    }
    if (!improved) break;
  }
  return p;
}

}  // namespace

// ---------------------------------------------------------------- state

Eigen::VectorXd PoseState::to_vector() const {
  Eigen::VectorXd x(kStateSize);
  for (int j = 0; j < kArticulatedJoints; ++j)
    for (int a = 0; a < 3; ++a) x[kThetaOffset + 3 * j + a] = theta(j, a);
  for (int k = 0; k < kShapeCoeffs; ++k) x[kBetaOffset + k] = beta[k];
  x[kCameraOffset] = camera.log_scale;
  for (int a = 0; a < 3; ++a) x[kCameraOffset + 1 + a] = camera.rotation[a];
  x[kCameraOffset + 4] = camera.translation[0];
  x[kCameraOffset + 5] = camera.translation[1];
  for (int i = 0; i < kRegressedJoints; ++i) x[kSigmaOffset + i] = log_sigma[i];
  return x;
}

PoseState PoseState::from_vector(const Eigen::VectorXd& x) {
  PoseState s;
  for (int j = 0; j < kArticulatedJoints; ++j)
    for (int a = 0; a < 3; ++a) s.theta(j, a) = x[kThetaOffset + 3 * j + a];
  for (int k = 0; k < kShapeCoeffs; ++k) s.beta[k] = x[kBetaOffset + k];
  s.camera.log_scale = x[kCameraOffset];
  for (int a = 0; a < 3; ++a) s.camera.rotation[a] = x[kCameraOffset + 1 + a];
  s.camera.translation = {x[kCameraOffset + 4], x[kCameraOffset + 5]};
  for (int i = 0; i < kRegressedJoints; ++i) s.log_sigma[i] = x[kSigmaOffset + i];
  return s;
}

nlohmann::json state_to_json(const PoseState& s) {
  nlohmann::json j;
  std::vector<double> theta(s.theta.data(), s.theta.data() + kPoseParams);
  j["theta"] = theta;
  j["beta"] = std::vector<double>(s.beta.data(), s.beta.data() + kShapeCoeffs);
  j["camera"] = {{"log_scale", s.camera.log_scale},
                 {"rotation", {s.camera.rotation.x, s.camera.rotation.y, s.camera.rotation.z}},
                 {"translation", {s.camera.translation[0], s.camera.translation[1]}}};
  j["log_sigma"] = s.log_sigma;
  return j;
}

PoseState state_from_json(const nlohmann::json& j) {
  try {
    PoseState s;
    const auto theta = j.at("theta").get<std::vector<double>>();
    const auto beta = j.at("beta").get<std::vector<double>>();
    if (theta.size() != kPoseParams || beta.size() != kShapeCoeffs) {
      throw Error(ErrorKind::SchemaViolation, "theta/beta length");
    }
    for (int i = 0; i < kPoseParams; ++i) s.theta.data()[i] = theta[i];
    for (int k = 0; k < kShapeCoeffs; ++k) s.beta[k] = beta[k];
    const auto& cam = j.at("camera");
    s.camera.log_scale = cam.at("log_scale").get<double>();
    const auto r = cam.at("rotation").get<std::vector<double>>();
    const auto t = cam.at("translation").get<std::vector<double>>();
    if (r.size() != 3 || t.size() != 2) throw Error(ErrorKind::SchemaViolation, "camera vector length");
    s.camera.rotation = Vec3T<double>(r[0], r[1], r[2]);
    s.camera.translation = {t[0], t[1]};
    if (j.contains("log_sigma")) {
      const auto ls = j.at("log_sigma").get<std::vector<double>>();
      if (ls.size() != kRegressedJoints) throw Error(ErrorKind::SchemaViolation, "log_sigma length");
      std::copy(ls.begin(), ls.end(), s.log_sigma.begin());
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::SchemaViolation, std::string("state: ") + e.what());
  }
}

const char* to_string(Stage s) noexcept { return s == Stage::Mse ? "mse" : "nll"; }
const char* to_string(GradientMode m) noexcept {
  return m == GradientMode::Autodiff ? "autodiff" : "central-difference";
}
const char* to_string(FitStatus s) noexcept {
  switch (s) {
    case FitStatus::Converged: return "converged";
    case FitStatus::MaxIters: return "max_iters";
    case FitStatus::Diverged: return "diverged";
  }
  return "unknown";
}

// ---------------------------------------------------------------- config

void FitConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorKind::Usage, m); };
  if (!(lambda1 >= 0.0 && lambda2 >= 0.0 && lambda3 >= 0.0)) fail("loss weights must be >= 0");
  if (!(d_tol >= 0.0)) fail("d_tol must be >= 0");
  if (stage1_iters < 0 || stage2_iters < 0) fail("iteration counts must be >= 0");
  if (!(step_size > 0.0)) fail("step_size must be > 0");
  if (restarts < 0) fail("restarts must be >= 0");
  if (!(focal > 0.0 && image_size > 0.0)) fail("focal and image_size must be > 0");
  if (!(sigma_init > 0.0)) fail("sigma_init must be > 0");
  if (!(neighbor_radius >= 0.0)) fail("neighbor_radius must be >= 0");
}

nlohmann::json config_to_json(const FitConfig& c) {
  return {{"lambda1", c.lambda1},
          {"lambda2", c.lambda2},
          {"lambda3", c.lambda3},
          {"d_tol", c.d_tol},
          {"stage1_iters", c.stage1_iters},
          {"stage2_iters", c.stage2_iters},
          {"step_size", c.step_size},
          {"gradient_mode", to_string(c.gradient_mode)},
          {"seed", c.seed},
          {"restarts", c.restarts},
          {"focal", c.focal},
          {"image_size", c.image_size},
          {"anatomy", c.anatomy},
          {"bend_from_splay", c.bend_from_splay},
          {"sigma_init", c.sigma_init},
          {"neighbor_radius", c.neighbor_radius},
          {"branch_search", c.branch_search},
          {"nll", c.nll}};
}

FitConfig config_from_json(const nlohmann::json& j, FitConfig c) {
  if (!j.is_object()) throw Error(ErrorKind::SchemaViolation, "config must be an object");
  try {
    for (const auto& [key, val] : j.items()) {
      if (key == "lambda1") c.lambda1 = val.get<double>();
      else if (key == "lambda2") c.lambda2 = val.get<double>();
      else if (key == "lambda3") c.lambda3 = val.get<double>();
      else if (key == "d_tol") c.d_tol = val.get<double>();
      else if (key == "stage1_iters") c.stage1_iters = val.get<int>();
      else if (key == "stage2_iters") c.stage2_iters = val.get<int>();
      else if (key == "step_size") c.step_size = val.get<double>();
      else if (key == "gradient_mode") {
        const auto m = val.get<std::string>();
        if (m == "autodiff") c.gradient_mode = GradientMode::Autodiff;
        else if (m == "central-difference") c.gradient_mode = GradientMode::CentralDifference;
        else throw Error(ErrorKind::SchemaViolation, "gradient_mode: " + m);
      } else if (key == "seed") c.seed = val.get<std::uint64_t>();
      else if (key == "restarts") c.restarts = val.get<int>();
      else if (key == "focal") c.focal = val.get<double>();
      else if (key == "image_size") c.image_size = val.get<double>();
      else if (key == "anatomy") c.anatomy = val.get<bool>();
      else if (key == "bend_from_splay") c.bend_from_splay = val.get<bool>();
      else if (key == "sigma_init") c.sigma_init = val.get<double>();
      else if (key == "neighbor_radius") c.neighbor_radius = val.get<double>();
      else if (key == "branch_search") c.branch_search = val.get<bool>();
      else if (key == "nll") c.nll = val.get<bool>();
      else if (key == "format" || key == "version") continue;
      else throw Error(ErrorKind::SchemaViolation, "unknown config key: " + key);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::SchemaViolation, std::string("config: ") + e.what());
  }
  return c;
}

nlohmann::json breakdown_to_json(const LossBreakdown& b) {
  return {{"data", b.data}, {"pose", b.pose}, {"penetration", b.penetration}, {"shape", b.shape}, {"total", b.total}};
}

// ---------------------------------------------------------------- fitter

namespace {

PenetrationOptions detector_options(const FitConfig& c) {
  PenetrationOptions o;
  o.neighbor_radius = c.neighbor_radius;
  return o;
}

}  // namespace

Fitter::Fitter(const HandShapeModel& model, const JointLimitTable& limits, const FitConfig& config)
    : model_(model), limits_(limits), config_(config), cache_(model), detector_(model, detector_options(config)) {
  config_.validate();
}

HandMesh Fitter::mesh_of(const PoseState& s) const { return forward_kinematics(model_, s.theta, s.beta); }

std::vector<Contact> Fitter::contacts(const PoseState& s) const {
  std::vector<Contact> out;
  if (config_.lambda2 == 0.0) return out;
  const InteriorSet m = interior_vertices(mesh_of(s), detector_);
  out.reserve(m.vertices.size());
  for (std::size_t k = 0; k < m.vertices.size(); ++k) out.push_back({m.vertices[k], m.partner[k]});
  return out;
}

LossBreakdown Fitter::total_loss(const PoseState& s, const LandmarkObservation& obs, Stage stage) const {
  return total_loss(s, obs, stage, contacts(s));
}

LossBreakdown Fitter::total_loss(const PoseState& s, const LandmarkObservation& obs, Stage stage,
                                 const std::vector<Contact>& contacts) const {
  const Eigen::VectorXd x = s.to_vector();
  const Context c{cache_, limits_, config_};
  try {
    return to_breakdown(evaluate<double>(c, x.data(), obs, stage, contacts));
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::BehindCamera) throw;
    LossBreakdown b;
    b.data = b.total = infinity();
    return b;
  }
}

Eigen::VectorXd Fitter::gradient(const PoseState& s, const LandmarkObservation& obs, Stage stage,
                                 const std::vector<Contact>& contacts, GradientMode mode,
                                 LossBreakdown* loss) const {
  const Context c{cache_, limits_, config_};
  const Eigen::VectorXd x = s.to_vector();
  if (mode == GradientMode::Autodiff) {
    return stage == Stage::Mse ? dual_gradient<kSigmaOffset>(c, x, obs, stage, contacts, loss)
                               : dual_gradient<kStateSize>(c, x, obs, stage, contacts, loss);
  }
  const int n = active_size(stage);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(kStateSize);
  Eigen::VectorXd xp = x;
  for (int i = 0; i < n; ++i) {
    xp[i] = x[i] + kFiniteDiffStep;
    const double fp = to_breakdown(evaluate<double>(c, xp.data(), obs, stage, contacts)).total;
    xp[i] = x[i] - kFiniteDiffStep;
    const double fm = to_breakdown(evaluate<double>(c, xp.data(), obs, stage, contacts)).total;
    xp[i] = x[i];
    g[i] = (fp - fm) / (2.0 * kFiniteDiffStep);
    if (!std::isfinite(g[i])) {
      throw Error(ErrorKind::NonFiniteGradient, "central difference at entry " + std::to_string(i));
    }
  }
  if (loss) *loss = to_breakdown(evaluate<double>(c, x.data(), obs, stage, contacts));
  return g;
}

double Fitter::gradient_self_check(const PoseState& s, const LandmarkObservation& obs, Stage stage) const {
  const auto k = contacts(s);
  const Eigen::VectorXd a = gradient(s, obs, stage, k, GradientMode::Autodiff);
  const Eigen::VectorXd f = gradient(s, obs, stage, k, GradientMode::CentralDifference);
  // Entries far below the gradient's scale are compared against that scale.
  const double floor = 1e-6 * std::max(1.0, f.cwiseAbs().maxCoeff());
  double worst = 0.0;
  for (int i = 0; i < kStateSize; ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(f[i]), floor});
    worst = std::max(worst, std::abs(a[i] - f[i]) / denom);
  }
  return worst;
}

CameraParams Fitter::initial_camera(const LandmarkObservation& obs, bool mirrored) const {
  const HandMesh rest = forward_kinematics(model_, PoseAngles::Zero(), ShapeCoeffs::Zero());
  // The wrist and the finger bases move rigidly with the palm, so they pin the
  // view without knowing the finger pose. All joints serve as a fallback.
  std::vector<int> vis;
  for (int i : {0, 1, 4, 7, 10, 13})
    if (obs.visible[i]) vis.push_back(i);
  if (vis.size() < 4) {
    vis.clear();
    for (int i = 0; i < kRegressedJoints; ++i)
      if (obs.visible[i]) vis.push_back(i);
  }
  const int n = static_cast<int>(vis.size());
  if (n < 2) throw Error(ErrorKind::InsufficientJoints, "camera initialization needs visible joints");

  Eigen::Matrix2Xd O(2, n);
  for (int k = 0; k < n; ++k) O.col(k) = obs.positions.row(vis[k]).transpose();
  const Eigen::Vector2d o_mean = O.rowwise().mean();
  O.colwise() -= o_mean;
  const double oo = O.squaredNorm();

  // Grid over viewing directions; the in-plane rotation, scale and offset of
  // each are solved in closed form under orthographic projection.
  double best = infinity();
  Eigen::Matrix3d best_r = Eigen::Matrix3d::Identity();
  double best_a = 1.0;
  Eigen::Vector2d best_p_mean = Eigen::Vector2d::Zero();
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < kViewDirections; ++i) {
    const double z = 1.0 - 2.0 * (i + 0.5) / kViewDirections;
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const Eigen::Vector3d d(r * std::cos(golden * i), r * std::sin(golden * i), z);
    const Eigen::Matrix3d R0 = align_to_z(d);
    Eigen::Matrix2Xd P(2, n);
    for (int k = 0; k < n; ++k) P.col(k) = (R0 * rest.joints.col(vis[k])).head<2>();
    const Eigen::Vector2d p_mean = P.rowwise().mean();
    P.colwise() -= p_mean;
    const double pp = P.squaredNorm();
    if (pp <= 0.0) continue;
    double ac = 0.0, as = 0.0;
    for (int k = 0; k < n; ++k) {
      ac += P(0, k) * O(0, k) + P(1, k) * O(1, k);
      as += P(0, k) * O(1, k) - P(1, k) * O(0, k);
    }
    const double resid = oo - (ac * ac + as * as) / pp;
    if (resid < best) {
      best = resid;
      const double phi = std::atan2(as, ac);
      best_r = Eigen::AngleAxisd(phi, Eigen::Vector3d::UnitZ()).toRotationMatrix() * R0;
      best_a = std::sqrt(ac * ac + as * as) / pp;
      best_p_mean = Eigen::Rotation2Dd(phi) * p_mean;
    }
  }
  if (mirrored) {
    const Eigen::Matrix3d M = Eigen::Vector3d(1.0, 1.0, -1.0).asDiagonal();
    best_r = M * best_r * M;
  }
  const double c = 0.5 * config_.image_size;
  const double scale = 2.0 * best_a / config_.image_size;
  CameraParams cam;
  cam.log_scale = std::log(scale);
  const Eigen::AngleAxisd aa(best_r);
  const Eigen::Vector3d w = aa.angle() * aa.axis();
  cam.rotation = Vec3T<double>(w.x(), w.y(), w.z());
  // o_mean = a (R0 J)_mean + a t + c  under the orthographic approximation.
  cam.translation = {(o_mean.x() - c) / best_a - best_p_mean.x(), (o_mean.y() - c) / best_a - best_p_mean.y()};
  return cam;
}


int Fitter::branch_search(Eigen::VectorXd& x, const LandmarkObservation& obs, bool physics) const {
  const Context c{cache_, limits_, config_};
  const Intrinsics K = config_.intrinsics();
  auto score = [&](const Eigen::VectorXd& v) {
    const PoseState ps = PoseState::from_vector(v);
    try {
      return total_loss(ps, obs, Stage::Mse, physics ? contacts(ps) : std::vector<Contact>{}).total;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::BehindCamera) throw;
      return infinity();
    }
  };
  double best_total = score(x);
  if (!std::isfinite(best_total)) return 0;
  int flips = 0;
  int coords = 0;
  for (bool v : obs.visible) coords += v ? 2 : 0;
  const double data_weight = 1.0 / std::sqrt(static_cast<double>(std::max(coords, 1)));
  const double prior_weight = std::sqrt(config_.lambda1);

  for (int g = 0; g < 5; ++g) {
    const PoseState s = PoseState::from_vector(x);
    const Eigen::Matrix3d R = camera_rotation(s.camera);
    CameraT<double> cam = s.camera;
    const int j0 = digit_first_joint(g);
    const auto idx = digit_regressed(g);
    const DigitVec current = x.segment<kDigitAngles>(kThetaOffset + 3 * j0);
    std::array<double, kPoseParams> theta;
    const auto pts = digit_points<double>(c, x, g, current.data(), theta);
    std::array<Eigen::Vector3d, 4> P;
    for (int k = 0; k < 4; ++k) P[k] = R * Eigen::Vector3d(pts[k].x, pts[k].y, pts[k].z);

    Eigen::VectorXd best_x = x;
    int best_pattern = 0;
    for (int pattern = 0; pattern < 8; ++pattern) {
      DigitVec p = current;
      if (pattern != 0) {
        // Mirror everything past each selected joint through the image-parallel
        // plane at that joint, then pull the angles onto the mirrored points.
        std::array<Eigen::Vector3d, 4> Q = P;
        for (int k = 0; k < 3; ++k) {
          if (!(pattern >> k & 1)) continue;
          for (int m = k + 1; m < 4; ++m) Q[m].z() = 2.0 * Q[k].z() - Q[m].z();
        }
        std::array<Eigen::Vector3d, 4> target;
        for (int k = 0; k < 4; ++k) target[k] = R.transpose() * Q[k];
        auto ik = [&](const auto* q, auto& r) {
          using T = std::remove_cv_t<std::remove_pointer_t<decltype(q)>>;
          std::array<T, kPoseParams> th;
          const auto at = digit_points<T>(c, x, g, q, th);
          r.clear();
          for (int k = 1; k < 4; ++k)
            for (int a = 0; a < 3; ++a) r.push_back(1000.0 * (at[k][a] - target[k][a]));
          push_hinges<T>(c, th, g, 100.0, r);
        };
        p = levenberg_marquardt(ik, p, 30);
      }
      auto fit2d = [&](const auto* q, auto& r) {
        using T = std::remove_cv_t<std::remove_pointer_t<decltype(q)>>;
        std::array<T, kPoseParams> th;
        const auto at = digit_points<T>(c, x, g, q, th);
        CameraT<T> ct;
        ct.log_scale = T(cam.log_scale);
        ct.rotation = Vec3T<T>(T(cam.rotation.x), T(cam.rotation.y), T(cam.rotation.z));
        ct.translation = {T(cam.translation[0]), T(cam.translation[1])};
        std::array<Pixel<T>, 4> px;
        project_points<T>(at, 4, ct, K, px.data());
        r.clear();
        for (int k = 0; k < 4; ++k) {
          if (!obs.visible[idx[k]]) continue;
          r.push_back(data_weight * (px[k].u - obs.positions(idx[k], 0)));
          r.push_back(data_weight * (px[k].v - obs.positions(idx[k], 1)));
        }
        if (config_.lambda1 != 0.0) push_hinges<T>(c, th, g, prior_weight, r);
      };
      p = levenberg_marquardt(fit2d, p, 20);
      Eigen::VectorXd cand = x;
      cand.segment<kDigitAngles>(kThetaOffset + 3 * j0) = p;
      const double total = score(cand);
      if (total < best_total) {
        best_total = total;
        best_x = cand;
        best_pattern = pattern;
      }
    }
    x = best_x;
    if (best_pattern != 0) ++flips;
  }
  return flips;
}

Fitter::Run Fitter::run_from(PoseState start, const LandmarkObservation& obs) const {
  Run run;
  Eigen::VectorXd x = start.to_vector();
  clamp_sigmas(x);
  if (config_.branch_search) run.flips += branch_search(x, obs, true);
  const Stage stages[2] = {Stage::Mse, config_.nll ? Stage::Nll : Stage::Mse};
  const int iters[2] = {config_.stage1_iters, config_.stage2_iters};
  bool collapsed = false;
  // Translation is in meters of a hand about 0.2 m across and log sigma spans a
  // few units, so each block gets its own step relative to the angles.
  Eigen::VectorXd scale = Eigen::VectorXd::Ones(kStateSize);
  scale[kCameraOffset + 4] = scale[kCameraOffset + 5] = kTranslationStepScale;
  for (int i = 0; i < kRegressedJoints; ++i) scale[kSigmaOffset + i] = kSigmaStepScale;
  for (int si = 0; si < 2; ++si) {
    const Stage stage = stages[si];
    // Non-penetration joins in the second stage only: while the fingers are
    // still finding their branch, contact forces would stop them passing
    // each other on the way.
    const bool physics = si == 1;
    const int n = active_size(stage);
    PoseState s = PoseState::from_vector(x);
    LossBreakdown cur;
    Eigen::VectorXd g;
    try {
      g = gradient(s, obs, stage, physics ? contacts(s) : std::vector<Contact>{}, config_.gradient_mode, &cur);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::BehindCamera) throw;
      cur.total = infinity();
    }
    if (!std::isfinite(cur.total)) {
      run.status = FitStatus::Diverged;
      run.state = s;
      return run;
    }
    Eigen::VectorXd m = Eigen::VectorXd::Zero(kStateSize), v = Eigen::VectorXd::Zero(kStateSize);
    double lr = config_.step_size;
    LossBreakdown best = cur;
    Eigen::VectorXd best_x = x;
    // Gradient fed to the moments: the one at a rejected proposal when it is
    // finite, so a barrier met past the step (such as a contact appearing)
    // steers the next attempt instead of being retried forever.
    Eigen::VectorXd gm = g;
    collapsed = false;
    for (int it = 0; it < iters[si]; ++it) {
      const int t = it + 1;
      Eigen::VectorXd proposal = x;
      const double c1 = 1.0 - std::pow(kAdamBeta1, t);
      const double c2 = 1.0 - std::pow(kAdamBeta2, t);
      for (int i = 0; i < n; ++i) {
        m[i] = kAdamBeta1 * m[i] + (1.0 - kAdamBeta1) * gm[i];
        v[i] = kAdamBeta2 * v[i] + (1.0 - kAdamBeta2) * gm[i] * gm[i];
        proposal[i] -= lr * scale[i] * (m[i] / c1) / (std::sqrt(v[i] / c2) + kAdamEps);
      }
      clamp_sigmas(proposal);
      const PoseState ps = PoseState::from_vector(proposal);
      LossBreakdown next;
      Eigen::VectorXd gn;
      try {
        gn = gradient(ps, obs, stage, physics ? contacts(ps) : std::vector<Contact>{}, config_.gradient_mode, &next);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::BehindCamera && e.kind() != ErrorKind::NonFiniteGradient) throw;

        next.total = infinity();
      }
      // A small relative tolerance lets the moments carry the iterate across
      // shallow ridges; the best state seen is what the stage returns.
      const bool accept =
          std::isfinite(next.total) && next.total <= cur.total + kAcceptTolerance * std::abs(cur.total);
      if (accept) {
        x = proposal;
        g = gn;
        cur = next;
        if (cur.total < best.total) {
          best = cur;
          best_x = x;
        }
        gm = g;
        lr = std::min(lr * kStepGrowth, kStepCap * config_.step_size);
      } else {
        gm = std::isfinite(next.total) ? gn : g;
        lr *= 0.5;
      }
      run.trace.push_back({stage, it, cur, lr, accept});
      if (lr < 1e-9 * config_.step_size) {
        collapsed = true;
        break;
      }
    }
    x = best_x;
    run.stage_loss[si] = best;
    if (si == 0 && config_.branch_search) run.flips += branch_search(x, obs, false);
  }
  run.state = PoseState::from_vector(x);
  run.status = collapsed ? FitStatus::Converged : FitStatus::MaxIters;
  if (!collapsed && run.trace.size() > 50) {
    const double before = run.trace[run.trace.size() - 51].loss.total;
    const double after = run.trace.back().loss.total;
    if (before - after <= 1e-9 * std::max(1.0, std::abs(after))) run.status = FitStatus::Converged;
  }
  return run;
}

FitReport Fitter::fit(const LandmarkObservation& obs) const {
  const auto t0 = std::chrono::steady_clock::now();
  if (obs.num_visible() < kMinVisibleJoints) {
    throw Error(ErrorKind::InsufficientJoints, obs.source_id + ": " + std::to_string(obs.num_visible()) +
                                                   " visible joints, need " + std::to_string(kMinVisibleJoints));
  }
  FitReport rep;
  rep.source_id = obs.source_id;
  rep.config = config_;

  std::mt19937_64 rng(config_.seed ^ fnv1a(obs.source_id));
  std::uniform_real_distribution<double> jitter(-10.0 * std::numbers::pi / 180.0, 10.0 * std::numbers::pi / 180.0);
  const CameraParams cam[2] = {initial_camera(obs, false), initial_camera(obs, true)};

  Run best;
  double best_loss = infinity();
  for (int k = 0; k <= config_.restarts; ++k) {
    PoseState start;
    start.camera = cam[k % 2];
    start.log_sigma.fill(std::log(config_.sigma_init));
    // A slightly flexed hand breaks the symmetry of the flat rest pose, where
    // every bend gradient points the same way.
    for (int j = 0; j < kArticulatedJoints; ++j) {
      const AngleRange& r = limits_.range[j][kBend];
      start.theta(j, kBend) = std::clamp(kInitialBend, r.min, r.max);
    }
    if (k > 0) {
      for (int j = 0; j < kArticulatedJoints; ++j) {
        for (int a = 0; a < 3; ++a) {
          const AngleRange& r = limits_.range[j][a];
          start.theta(j, a) = std::clamp(start.theta(j, a) + jitter(rng), r.min, r.max);
        }
      }
    }
    Run run = run_from(start, obs);
    const double loss = run.status == FitStatus::Diverged ? infinity() : run.stage_loss[1].total;
    rep.start_losses.push_back(loss);
    if (loss < best_loss) {
      best_loss = loss;
      best = std::move(run);
      rep.best_start = k;
    }
  }
  if (!std::isfinite(best_loss)) throw Error(ErrorKind::Diverged, obs.source_id + ": no start reached a finite loss");

  rep.state = best.state;
  rep.stage_loss = best.stage_loss;
  rep.trace = std::move(best.trace);
  rep.status = best.status;
  rep.branch_flips = best.flips;
  rep.mesh = mesh_of(rep.state);
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

FitReport Fitter::fit_from(const PoseState& start, const LandmarkObservation& obs) const {
  const auto t0 = std::chrono::steady_clock::now();
  Run run = run_from(start, obs);
  if (run.status == FitStatus::Diverged) throw Error(ErrorKind::Diverged, obs.source_id + ": non-finite loss");
  FitReport rep;
  rep.source_id = obs.source_id;
  rep.config = config_;
  rep.state = run.state;
  rep.stage_loss = run.stage_loss;
  rep.trace = std::move(run.trace);
  rep.status = run.status;
  rep.branch_flips = run.flips;
  rep.start_losses = {rep.stage_loss[1].total};
  rep.mesh = mesh_of(rep.state);
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

nlohmann::json report_to_json(const FitReport& r, bool include_trace, bool include_timing) {
  nlohmann::json j;
  j["source_id"] = r.source_id;
  j["status"] = to_string(r.status);
  j["state"] = state_to_json(r.state);
  j["loss"] = {{"stage1", breakdown_to_json(r.stage_loss[0])}, {"stage2", breakdown_to_json(r.stage_loss[1])}};
  j["best_start"] = r.best_start;
  j["branch_flips"] = r.branch_flips;
  j["start_losses"] = r.start_losses;
  std::vector<double> joints(r.mesh.joints.data(), r.mesh.joints.data() + 3 * kRegressedJoints);
  j["joints"] = joints;
  nlohmann::json trace;
  std::vector<double> total;
  total.reserve(r.trace.size());
  for (const auto& e : r.trace) total.push_back(e.loss.total);
  trace["total"] = total;
  if (include_trace) {
    std::vector<std::string> stage;
    std::vector<double> data, pose, pen, shape, step;
    std::vector<int> accepted;
    for (const auto& e : r.trace) {
      stage.push_back(to_string(e.stage));
      data.push_back(e.loss.data);
      pose.push_back(e.loss.pose);
      pen.push_back(e.loss.penetration);
      shape.push_back(e.loss.shape);
      step.push_back(e.step);
      accepted.push_back(e.accepted ? 1 : 0);
    }
    trace["stage"] = stage;
    trace["data"] = data;
    trace["pose"] = pose;
    trace["penetration"] = pen;
    trace["shape"] = shape;
    trace["step"] = step;
    trace["accepted"] = accepted;
  }
  j["trace"] = trace;
  j["config"] = config_to_json(r.config);
  if (include_timing) j["wall_seconds"] = r.wall_seconds;
  return j;
}

std::vector<BatchItem> fit_batch(const Fitter& fitter, const std::vector<LandmarkObservation>& obs, int jobs) {
  std::vector<BatchItem> out(obs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < obs.size(); i = next++) {
      BatchItem& item = out[i];
      item.source_id = obs[i].source_id;
      try {
        item.report = fitter.fit(obs[i]);
        item.ok = true;
      } catch (const Error& e) {
        item.error = e.what();
        item.exit_code = exit_code(e.kind());
      }
    }
  };
  const int n = std::max(1, std::min<int>(jobs, static_cast<int>(obs.size())));
  std::vector<std::thread> pool;
  for (int t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  std::stable_sort(out.begin(), out.end(),
                   [](const BatchItem& a, const BatchItem& b) { return a.source_id < b.source_id; });
  return out;
}

}  // namespace handfit
