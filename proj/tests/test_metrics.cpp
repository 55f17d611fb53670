#include <doctest.h>

#include <numbers>
#include <random>

#include <Eigen/Geometry>

#include "handfit/error.hpp"
#include "handfit/hand_model.hpp"
#include "handfit/metrics.hpp"
#include "handfit/penetration.hpp"
#include "oracles.hpp"

using namespace handfit;

namespace {

Eigen::Matrix3Xd cloud(std::mt19937_64& rng, int n, double extent = 0.08) {
  std::uniform_real_distribution<double> u(-extent, extent);
  Eigen::Matrix3Xd p(3, n);
  for (int i = 0; i < n; ++i) p.col(i) << u(rng), u(rng), u(rng);
  return p;
}

Eigen::Matrix3d random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  return Eigen::Quaterniond(g(rng), g(rng), g(rng), g(rng)).normalized().toRotationMatrix();
}

}  // namespace

TEST_CASE("alignment removes similarity transforms exactly") {
  std::mt19937_64 rng(61);
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::Matrix3Xd gt = cloud(rng, 21);
    CHECK(aligned_error_mm(gt, gt) < 1e-9);
    const Eigen::Matrix3Xd pred = (2.0 * random_rotation(rng) * gt).colwise() + Eigen::Vector3d(0.3, -0.1, 0.7);
    CHECK((procrustes_align(pred, gt) - gt).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(joint_error(pred, gt) < 1e-9);
    const Eigen::Matrix3Xd shifted = gt.colwise() + Eigen::Vector3d::Constant(0.005 / std::sqrt(3.0));
    CHECK(vertex_error(shifted, gt) < 1e-9);
  }
}

TEST_CASE("alignment matches a brute-force rotation search") {
  std::mt19937_64 rng(62);
  for (int trial = 0; trial < 10; ++trial) {
    const Eigen::Matrix3Xd gt = cloud(rng, 5);
    const Eigen::Matrix3Xd pred = cloud(rng, 5);
    const double ours = (procrustes_align(pred, gt) - gt).squaredNorm();
    const double brute = oracle::brute_procrustes_residual(pred, gt, rng);
    CHECK(ours == doctest::Approx(brute).epsilon(1e-6));
  }
}

TEST_CASE("alignment never reflects") {
  std::mt19937_64 rng(63);
  const Eigen::Matrix3Xd gt = cloud(rng, 21);
  Eigen::Matrix3Xd mirrored = gt;
  mirrored.row(0) *= -1.0;
  const Eigen::Matrix3Xd a = procrustes_align(mirrored, gt);
  CHECK((a - gt).norm() > 1e-3);
  // The result is still a proper similarity of the input.
  const Eigen::Matrix4d T = Eigen::umeyama(mirrored, a, true);
  CHECK(T.topLeftCorner<3, 3>().determinant() > 0.0);
}

TEST_CASE("degenerate ground truth is rejected") {
  Eigen::Matrix3Xd line(3, 4);
  line << 0, 1, 2, 3, 0, 1, 2, 3, 0, 1, 2, 3;
  try {
    procrustes_align(line, line);
    FAIL("aligned to collinear points");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::DegenerateConfiguration);
  }
  const Eigen::Matrix3Xd two = Eigen::Matrix3Xd::Random(3, 2);
  CHECK_THROWS_AS(procrustes_align(two, two), Error);
}

TEST_CASE("a single displaced joint is mostly kept by the alignment") {
  std::mt19937_64 rng(64);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Matrix3Xd gt = cloud(rng, 21);
    Eigen::Matrix3Xd pred = gt;
    std::normal_distribution<double> g(0.0, 1.0);
    pred.col(trial % 21) += 0.021 * Eigen::Vector3d(g(rng), g(rng), g(rng)).normalized();
    const auto d = aligned_distances_mm(pred, gt);
    double sq = 0.0;
    for (double x : d) sq += x * x;
    // The identity is a candidate, so squared error cannot exceed 21^2.
    CHECK(sq <= 441.0 + 1e-9);
    // The displaced joint contributes at most 1 mm to the mean, and most of it.
    CHECK(d[trial % 21] / 21.0 <= 1.0 + 1e-12);
    CHECK(d[trial % 21] / 21.0 >= 0.7);
  }
}

TEST_CASE("errors are invariant to a shared point permutation") {
  std::mt19937_64 rng(65);
  const Eigen::Matrix3Xd gt = cloud(rng, 21), pred = cloud(rng, 21);
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(21);
  perm.setIdentity();
  std::shuffle(perm.indices().data(), perm.indices().data() + 21, rng);
  CHECK(aligned_error_mm(pred * perm, gt * perm) == doctest::Approx(aligned_error_mm(pred, gt)).epsilon(1e-10));
}

TEST_CASE("PCK area fixtures") {
  CHECK(pck_auc(std::vector<double>(21, 0.0)) == doctest::Approx(1.0));
  CHECK(pck_auc(std::vector<double>(21, 50.5)) == 0.0);
  CHECK(std::abs(pck_auc(std::vector<double>(21, 25.0)) - 0.5) <= 0.01);
  CHECK(pck_auc({}) == 0.0);
}

TEST_CASE("PCK area never increases as errors grow") {
  std::mt19937_64 rng(66);
  std::uniform_real_distribution<double> u(0.0, 60.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> e(30);
    for (double& x : e) x = u(rng);
    const double a = pck_auc(e);
    CHECK(a >= 0.0);
    CHECK(a <= 1.0);
    std::vector<double> worse = e;
    worse[trial % 30] += 5.0;
    CHECK(pck_auc(worse) <= a);
    std::shuffle(e.begin(), e.end(), rng);
    CHECK(pck_auc(e) == doctest::Approx(a).epsilon(1e-15));
  }
}

TEST_CASE("penetration rate over a constructed set") {
  const HandShapeModel m = synth_test_model(0);
  const PenetrationDetector det(m);
  PoseAngles pierce = PoseAngles::Zero();
  pierce(0, kBend) = 150.0 * std::numbers::pi / 180.0;
  pierce(1, kBend) = 90.0 * std::numbers::pi / 180.0;
  pierce(2, kBend) = 80.0 * std::numbers::pi / 180.0;
  std::vector<double> depths;
  depths.push_back(penetration_depth(forward_kinematics(m, pierce, ShapeCoeffs::Zero()), det));
  for (int i = 0; i < 3; ++i)
    depths.push_back(penetration_depth(forward_kinematics(m, PoseAngles::Zero(), ShapeCoeffs::Zero()), det));
  CHECK(penetration_rate(depths, 0.006) == doctest::Approx(25.0));
  CHECK(penetration_rate({depths.begin() + 1, depths.end()}, 0.006) == 0.0);
  CHECK(penetration_rate(depths, std::numeric_limits<double>::infinity()) == 0.0);
  CHECK(penetration_rate({}, 0.006) == 0.0);
}
