#include <doctest.h>

#include <algorithm>
#include <random>

#include "handfit/dataset.hpp"
#include "handfit/error.hpp"
#include "handfit/fitter.hpp"
#include "handfit/pose_prior.hpp"

using namespace handfit;

namespace {

const HandShapeModel& model() {
  static const HandShapeModel m = synth_test_model(0);
  return m;
}

const JointLimitTable& limits() {
  static const JointLimitTable t = default_limits();
  return t;
}

std::vector<SampleRecord> samples(int n, const std::string& noise, std::uint64_t seed = 0) {
  SynthOptions opt;
  opt.n = n;
  opt.seed = seed;
  opt.noise = NoiseProfile::parse(noise);
  return synthesize(model(), limits(), opt);
}

double sum_of_terms(const LossBreakdown& b) { return b.data + b.pose + b.penetration + b.shape; }

// True when every angle is at least `margin` from any point where the prior
// switches form.
bool clear_of_kinks(const PoseState& s, double margin) {
  const RefinedLimits r = refine_limits<double>(limits(), s.theta.data());
  for (int i = 0; i < kPoseParams; ++i) {
    const double a = s.theta.data()[i];
    if (std::abs(a) < margin || std::abs(a - r.lo[i]) < margin || std::abs(a - r.hi[i]) < margin) return false;
  }
  for (int j = 0; j < kArticulatedJoints; ++j)
    for (int a = 0; a < 3; ++a) {
      const AngleRange& ab = limits().range[j][a];
      if (std::abs(s.theta(j, a) - ab.min) < margin || std::abs(s.theta(j, a) - ab.max) < margin) return false;
    }
  return true;
}

}  // namespace

TEST_CASE("state vector and JSON round trips") {
  std::mt19937_64 rng(71);
  std::normal_distribution<double> g(0.0, 0.3);
  Eigen::VectorXd x(kStateSize);
  for (int i = 0; i < kStateSize; ++i) x[i] = g(rng);
  const PoseState s = PoseState::from_vector(x);
  CHECK(s.to_vector() == x);
  const PoseState back = state_from_json(state_to_json(s));
  CHECK(back.to_vector() == x);
}

TEST_CASE("config JSON round trip and validation") {
  FitConfig c;
  c.lambda1 = 3.5;
  c.stage1_iters = 17;
  c.gradient_mode = GradientMode::CentralDifference;
  c.anatomy = false;
  c.nll = false;
  const FitConfig back = config_from_json(config_to_json(c));
  CHECK(config_to_json(back) == config_to_json(c));
  nlohmann::json partial = {{"lambda2", 0.0}};
  const FitConfig merged = config_from_json(partial, c);
  CHECK(merged.lambda2 == 0.0);
  CHECK(merged.lambda1 == 3.5);
  CHECK_THROWS_AS(config_from_json({{"lambda_one", 1.0}}), Error);
}

TEST_CASE("ground truth on clean data has zero data and limit loss") {
  const auto recs = samples(5, "clean", 3);
  const Fitter fitter(model(), limits(), FitConfig{});
  for (const auto& r : recs) {
    REQUIRE(r.truth.has_value());
    PoseState s = r.truth->state;
    const LossBreakdown b = fitter.total_loss(s, r.obs, Stage::Mse);
    CHECK(b.data < 1e-18);
    CHECK(b.pose == 0.0);
    CHECK(b.penetration == 0.0);
    CHECK(b.shape == doctest::Approx(fitter.config().lambda3 * s.beta.norm()));
    CHECK(b.total == doctest::Approx(sum_of_terms(b)).epsilon(1e-12));
  }
}

TEST_CASE("weights scale each prior term") {
  const auto recs = samples(2, "gaussian:2", 4);
  FitConfig zero;
  zero.lambda1 = zero.lambda2 = zero.lambda3 = 0.0;
  const Fitter plain(model(), limits(), zero);
  PoseState s = recs[0].truth->state;
  s.theta(3, kBend) += 2.0;  // well outside its range
  s.log_sigma.fill(std::log(4.0));
  for (Stage st : {Stage::Mse, Stage::Nll}) {
    const LossBreakdown b = plain.total_loss(s, recs[0].obs, st);
    CHECK(b.total == b.data);
  }
  FitConfig shape_only = zero;
  shape_only.lambda3 = 10.0;
  PoseState unit;
  unit.camera = s.camera;
  unit.beta[0] = 1.0;
  CHECK(Fitter(model(), limits(), shape_only).total_loss(unit, recs[0].obs, Stage::Mse).shape ==
        doctest::Approx(10.0));
  const Fitter full(model(), limits(), FitConfig{});
  const LossBreakdown b = full.total_loss(s, recs[0].obs, Stage::Nll);
  CHECK(b.pose > 0.0);
  CHECK(b.total == doctest::Approx(sum_of_terms(b)).epsilon(1e-12));
}

TEST_CASE("prior gradients vanish at a feasible zero-loss state") {
  FitConfig c;
  c.lambda3 = 0.0;
  const Fitter fitter(model(), limits(), c);
  for (const auto& r : samples(3, "clean", 5)) {
    const PoseState s = r.truth->state;
    const Eigen::VectorXd g = fitter.gradient(s, r.obs, Stage::Mse, fitter.contacts(s), GradientMode::Autodiff);
    CHECK(g.cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("autodiff agrees with central differences away from kinks") {
  const Fitter fitter(model(), limits(), FitConfig{});
  std::mt19937_64 rng(72);
  std::normal_distribution<double> g(0.0, 0.15);
  std::uniform_real_distribution<double> ls(std::log(1.0), std::log(20.0));
  const auto recs = samples(20, "gaussian:2", 6);
  int checked = 0;
  for (const auto& r : recs) {
    PoseState s = r.truth->state;
    for (int i = 0; i < kPoseParams; ++i) s.theta.data()[i] += g(rng);
    for (double& v : s.log_sigma) v = ls(rng);
    if (!clear_of_kinks(s, 1e-3)) continue;
    ++checked;
    for (Stage st : {Stage::Mse, Stage::Nll}) CHECK(fitter.gradient_self_check(s, r.obs, st) <= 1e-3);
  }
  CHECK(checked >= 5);
}

TEST_CASE("log sigma gradient vanishes at the mean squared residual") {
  const Fitter fitter(model(), limits(), FitConfig{});
  const auto recs = samples(1, "gaussian:3", 7);
  PoseState s = recs[0].truth->state;
  const Eigen::Matrix<double, kRegressedJoints, 2> mu = project(fitter.mesh_of(s).joints, s.camera, {});
  for (int i = 0; i < kRegressedJoints; ++i) {
    const double ms = 0.5 * (mu.row(i) - recs[0].obs.positions.row(i)).squaredNorm();
    s.log_sigma[i] = clamp_log_sigma(0.5 * std::log(ms));
  }
  const Eigen::VectorXd grad =
      fitter.gradient(s, recs[0].obs, Stage::Nll, fitter.contacts(s), GradientMode::Autodiff);
  for (int i = 0; i < kRegressedJoints; ++i) {
    const double sigma = std::exp(s.log_sigma[i]);
    if (sigma <= kSigmaMin || sigma >= kSigmaMax) continue;
    CHECK(std::abs(grad[kSigmaOffset + i]) < 1e-6);
  }
}

TEST_CASE("too few visible joints is an error") {
  const auto recs = samples(1, "occlude:18", 8);
  REQUIRE(recs[0].obs.num_visible() == 3);
  const Fitter fitter(model(), limits(), FitConfig{});
  try {
    fitter.fit(recs[0].obs);
    FAIL("fit accepted three joints");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InsufficientJoints);
  }
}

TEST_CASE("a projected rest pose is recovered without limit loss") {
  const Fitter fitter(model(), limits(), FitConfig{});
  PoseState truth;
  truth.camera.log_scale = std::log(6.5);
  truth.camera.rotation = Vec3T<double>(0.3, -0.2, 0.1);
  LandmarkObservation obs;
  obs.source_id = "rest";
  obs.positions = project(fitter.mesh_of(truth).joints, truth.camera, {});
  obs.visible.fill(true);
  const FitReport rep = fitter.fit(obs);
  // Locked twist axes sit exactly on their bound at rest; the optimizer
  // leaves them within a fraction of a milliradian.
  CHECK(rep.stage_loss[1].pose / fitter.config().lambda1 < 1e-6);
  const Eigen::Matrix<double, kRegressedJoints, 2> mu = project(rep.mesh.joints, rep.state.camera, {});
  CHECK((mu - obs.positions).rowwise().norm().maxCoeff() < 1.0);
}

TEST_CASE("fits are deterministic and return the best state seen") {
  const auto recs = samples(2, "gaussian:2", 9);
  const Fitter fitter(model(), limits(), FitConfig{});
  for (const auto& r : recs) {
    const FitReport a = fitter.fit(r.obs), b = fitter.fit(r.obs);
    CHECK(report_to_json(a).dump() == report_to_json(b).dump());
    double lowest = std::numeric_limits<double>::infinity();
    for (const auto& t : a.trace)
      if (t.stage == a.trace.back().stage) lowest = std::min(lowest, t.loss.total);
    CHECK(a.stage_loss[1].total <= lowest + 1e-12);
    CHECK(a.stage_loss[1].total == doctest::Approx(sum_of_terms(a.stage_loss[1])).epsilon(1e-9));
  }
}

TEST_CASE("grossly wrong landmarks get large sigma") {
  // Corruption is drawn per coordinate, so some corrupted joints land close
  // to the truth and are legitimately fitted; only gross ones are judged.
  const auto recs = samples(6, "corrupt:2:40", 0);
  const Fitter fitter(model(), limits(), FitConfig{});
  int gross = 0, flagged = 0;
  for (const auto& r : recs) {
    REQUIRE(r.corrupted.size() == 2);
    const FitReport rep = fitter.fit(r.obs);
    std::vector<double> sig(rep.state.log_sigma.begin(), rep.state.log_sigma.end());
    for (double& v : sig) v = std::exp(v);
    std::vector<double> sorted = sig;
    std::nth_element(sorted.begin(), sorted.begin() + kRegressedJoints / 2, sorted.end());
    const double median = sorted[kRegressedJoints / 2];
    const auto clean = project(r.truth->joints, r.truth->state.camera, {});
    for (int j : r.corrupted) {
      if ((clean.row(j) - r.obs.positions.row(j)).norm() < 30.0) continue;
      ++gross;
      flagged += sig[j] >= 3.0 * median;
    }
  }
  REQUIRE(gross >= 8);
  CHECK(flagged >= 0.8 * gross);
}

TEST_CASE("batch fitting orders results and reports failures") {
  auto recs = samples(3, "clean", 11);
  std::vector<LandmarkObservation> obs;
  for (const auto& r : recs) obs.push_back(r.obs);
  obs[1].visible.fill(false);
  FitConfig quick;
  quick.stage1_iters = quick.stage2_iters = 5;
  quick.restarts = 0;
  const Fitter fitter(model(), limits(), quick);
  const auto one = fit_batch(fitter, obs, 1);
  const auto many = fit_batch(fitter, obs, 3);
  REQUIRE(one.size() == 3);
  CHECK(std::is_sorted(one.begin(), one.end(), [](const auto& a, const auto& b) { return a.source_id < b.source_id; }));
  int failed = 0;
  for (std::size_t i = 0; i < one.size(); ++i) {
    CHECK(one[i].source_id == many[i].source_id);
    CHECK(one[i].ok == many[i].ok);
    if (one[i].ok) CHECK(report_to_json(one[i].report).dump() == report_to_json(many[i].report).dump());
    else {
      ++failed;
      CHECK(one[i].exit_code != 0);
    }
  }
  CHECK(failed == 1);
}
