#include <doctest.h>

#include <random>

#include "handfit/camera.hpp"
#include "handfit/error.hpp"
#include "oracles.hpp"

using namespace handfit;

namespace {

Intrinsics intrinsics() { return {}; }

double depth_offset(const CameraParams& c, const Intrinsics& K) {
  return 2.0 * K.focal / (K.image_size * camera_scale(c));
}

CameraParams random_camera(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  CameraParams c;
  c.log_scale = std::log(6.0) + 0.2 * u(rng);
  c.rotation = Vec3T<double>(0.8 * u(rng), 0.8 * u(rng), 0.8 * u(rng));
  c.translation = {0.01 * u(rng), 0.01 * u(rng)};
  return c;
}

Eigen::Matrix3Xd random_points(std::mt19937_64& rng, int n, double extent) {
  std::uniform_real_distribution<double> u(-extent, extent);
  Eigen::Matrix3Xd p(3, n);
  for (int i = 0; i < n; ++i) p.col(i) << u(rng), u(rng), u(rng);
  return p;
}

}  // namespace

TEST_CASE("a point on the optical axis lands in the image center") {
  const Eigen::Matrix3Xd origin = Eigen::Vector3d::Zero();
  CameraParams c;
  c.log_scale = std::log(6.0);
  const Eigen::Matrix2Xd px = project(origin, c, intrinsics());
  CHECK(px(0, 0) == doctest::Approx(112.0));
  CHECK(px(1, 0) == doctest::Approx(112.0));
}

TEST_CASE("doubling the focal length at fixed depth doubles offsets from center") {
  std::mt19937_64 rng(41);
  const Eigen::Matrix3Xd p = random_points(rng, 21, 0.08);
  const Intrinsics K1{5000.0, 224.0};
  const Intrinsics K2{10000.0, 224.0};
  CameraParams c1 = random_camera(rng);
  CameraParams c2 = c1;
  // Depth scales with focal / s, so doubling s keeps it fixed.
  c2.log_scale = c1.log_scale + std::log(2.0);
  REQUIRE(depth_offset(c1, K1) == doctest::Approx(depth_offset(c2, K2)));
  const Eigen::Matrix2Xd a = project(p, c1, K1), b = project(p, c2, K2);
  const Eigen::Matrix2Xd off_a = a.array() - 112.0, off_b = b.array() - 112.0;
  CHECK((off_b - 2.0 * off_a).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("flat hands project like a weak-perspective camera") {
  std::mt19937_64 rng(42);
  const Intrinsics K = intrinsics();
  for (int trial = 0; trial < 20; ++trial) {
    CameraParams c = random_camera(rng);
    const Eigen::Matrix3d R = camera_rotation(c);
    const double tz = depth_offset(c, K);
    for (double extent : {1e-2, 1e-4, 0.0}) {
      // Points whose camera-frame depth spread is `extent`.
      Eigen::Matrix3Xd cam_frame = random_points(rng, 21, 0.08);
      cam_frame.row(2) *= extent / 0.08;
      const Eigen::Matrix3Xd p = R.transpose() * cam_frame;
      const Eigen::Matrix2Xd got = project(p, c, K);
      double worst = 0.0;
      for (int i = 0; i < 21; ++i) {
        const Eigen::Vector2d weak(K.focal * (cam_frame(0, i) + c.translation[0]) / tz + 112.0,
                                   K.focal * (cam_frame(1, i) + c.translation[1]) / tz + 112.0);
        worst = std::max(worst, (got.col(i) - weak).norm() / weak.norm());
      }
      if (extent == 0.0) CHECK(worst < 1e-12);
      if (extent == 1e-4) CHECK(worst < 1e-5);
    }
  }
}

TEST_CASE("in-plane translation shifts flat points uniformly") {
  std::mt19937_64 rng(43);
  const Intrinsics K = intrinsics();
  CameraParams c = random_camera(rng);
  c.rotation = Vec3T<double>(0.0, 0.0, 0.0);
  Eigen::Matrix3Xd p = random_points(rng, 10, 0.08);
  p.row(2).setZero();
  CameraParams shifted = c;
  shifted.translation = {c.translation[0] + 0.003, c.translation[1] - 0.002};
  const Eigen::Matrix2Xd d = project(p, shifted, K) - project(p, c, K);
  const double tz = depth_offset(c, K);
  for (int i = 0; i < 10; ++i) {
    CHECK(d(0, i) == doctest::Approx(K.focal * 0.003 / tz));
    CHECK(d(1, i) == doctest::Approx(-K.focal * 0.002 / tz));
  }
}

TEST_CASE("projection gradient matches central differences") {
  std::mt19937_64 rng(44);
  using D = Dual<9>;
  const Intrinsics K = intrinsics();
  for (int trial = 0; trial < 50; ++trial) {
    const CameraParams c = random_camera(rng);
    const Eigen::Vector3d p = random_points(rng, 1, 0.1).col(0);
    Eigen::VectorXd x(9);
    x << c.log_scale, c.rotation.x, c.rotation.y, c.rotation.z, c.translation[0], c.translation[1], p.x(), p.y(),
        p.z();
    auto pixel = [&](const Eigen::VectorXd& y, int coord) {
      CameraParams cc;
      cc.log_scale = y[0];
      cc.rotation = Vec3T<double>(y[1], y[2], y[3]);
      cc.translation = {y[4], y[5]};
      const Eigen::Matrix3Xd q = Eigen::Vector3d(y[6], y[7], y[8]);
      return project(q, cc, K)(coord, 0);
    };
    CameraT<D> cd;
    cd.log_scale = D::variable(x[0], 0);
    cd.rotation = Vec3T<D>(D::variable(x[1], 1), D::variable(x[2], 2), D::variable(x[3], 3));
    cd.translation = {D::variable(x[4], 4), D::variable(x[5], 5)};
    const std::array<Vec3T<D>, 1> pd{Vec3T<D>(D::variable(x[6], 6), D::variable(x[7], 7), D::variable(x[8], 8))};
    Pixel<D> out[1];
    project_points(pd, 1, cd, K, out);
    for (int coord = 0; coord < 2; ++coord) {
      const D& v = coord == 0 ? out[0].u : out[0].v;
      CHECK(v.v == doctest::Approx(pixel(x, coord)).epsilon(1e-12));
      Eigen::VectorXd ad(9);
      for (int i = 0; i < 9; ++i) ad[i] = v.d[i];
      const Eigen::VectorXd fd = oracle::central_difference([&](const Eigen::VectorXd& y) { return pixel(y, coord); }, x);
      CHECK(oracle::max_relative_error(ad, fd) <= 1e-6);
    }
  }
}

TEST_CASE("points behind the camera are rejected") {
  CameraParams c;
  c.log_scale = std::log(6.0);
  const double tz = depth_offset(c, intrinsics());
  Eigen::Matrix3Xd p(3, 2);
  p.col(0) << 0.0, 0.0, 0.0;
  p.col(1) << 0.0, 0.0, -tz;
  try {
    project(p, c, intrinsics());
    FAIL("projected a point at zero depth");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::BehindCamera);
  }
  p.col(1) << 0.0, 0.0, -tz + 2e-3;
  CHECK_NOTHROW(project(p, c, intrinsics()));
}
