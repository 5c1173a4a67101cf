#include <doctest.h>

#include <cmath>
#include <random>

#include "optin/geometry.hpp"
#include "support.hpp"

using namespace optin;

namespace {

// Hand-composed Rz * Ry * Rx, spelled out entry by entry.
Mat3 euler_oracle(double yaw, double pitch, double roll) {
  Mat3 rz, ry, rx;
  rz << std::cos(yaw), -std::sin(yaw), 0, std::sin(yaw), std::cos(yaw), 0, 0, 0, 1;
  ry << std::cos(pitch), 0, std::sin(pitch), 0, 1, 0, -std::sin(pitch), 0, std::cos(pitch);
  rx << 1, 0, 0, 0, std::cos(roll), -std::sin(roll), 0, std::sin(roll), std::cos(roll);
  return rz * ry * rx;
}

}  // namespace

TEST_CASE("boresight and degenerate points") {
  const AnchorPose id;
  const PolarMeasurement z = world_to_anchor_polar({1, 0, 0}, id);
  CHECK(z.radial == doctest::Approx(1.0));
  CHECK(z.azimuth == doctest::Approx(0.0));
  CHECK(z.elevation == doctest::Approx(0.0));
  CHECK_THROWS_KIND(world_to_anchor_polar({0, 0, 0}, id), ErrorKind::DegeneratePoint);

  const Vec3 p = anchor_polar_to_world({1.0, 0.0, 0.0}, id);
  CHECK((p - Vec3(1, 0, 0)).norm() < 1e-12);
  const Vec3 q = anchor_polar_to_world({2.0, kPi / 2, 0.0}, id);
  CHECK((q - Vec3(0, 2, 0)).norm() < 1e-12);
}

TEST_CASE("polar transform against a step-by-step oracle") {
  AnchorPose pose;
  pose.position = {0.29, -3.29, 2.57};
  pose.orientation = {3.14, 0.28, 1.56};
  const Vec3 local = euler_oracle(3.14, 0.28, 1.56).transpose() * (Vec3(0, 0, 0) - pose.position);
  const double r = std::sqrt(local.x() * local.x() + local.y() * local.y() + local.z() * local.z());
  const double az = std::atan2(local.y(), local.x());
  const double el = std::asin(local.z() / r);
  const PolarMeasurement z = world_to_anchor_polar({0, 0, 0}, pose);
  CHECK(z.radial == doctest::Approx(r).epsilon(1e-12));
  CHECK(z.azimuth == doctest::Approx(az).epsilon(1e-12));
  CHECK(z.elevation == doctest::Approx(el).epsilon(1e-12));
  // Frozen from an independent numpy evaluation of the same composition.
  CHECK(z.radial == doctest::Approx(4.184865589239396).epsilon(1e-12));
  CHECK(z.azimuth == doctest::Approx(-1.1816072672816749).epsilon(1e-12));
  CHECK(z.elevation == doctest::Approx(0.8944224177257434).epsilon(1e-12));
}

TEST_CASE("identity pose matches textbook spherical coordinates") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-5, 5);
  for (int i = 0; i < 200; ++i) {
    const Vec3 p(u(rng), u(rng), u(rng));
    const PolarMeasurement z = world_to_anchor_polar(p, AnchorPose{});
    CHECK(z.radial == doctest::Approx(p.norm()).epsilon(1e-12));
    CHECK(z.azimuth == doctest::Approx(std::atan2(p.y(), p.x())).epsilon(1e-12));
    CHECK(z.elevation == doctest::Approx(std::atan2(p.z(), std::hypot(p.x(), p.y()))).epsilon(1e-12));
  }
}

TEST_CASE("polar round trip over random poses") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-1, 1);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    AnchorPose pose;
    pose.position = 5.0 * Vec3(u(rng), u(rng), u(rng));
    pose.orientation = {kPi * u(rng), 0.5 * kPi * u(rng), kPi * u(rng)};
    const PolarMeasurement z{0.2 + 10.0 * std::abs(u(rng)), kPi * u(rng), 1.5 * u(rng)};
    const Vec3 p = anchor_polar_to_world(z, pose);
    const PolarMeasurement back = world_to_anchor_polar(p, pose);
    worst = std::max({worst, std::abs(back.radial - z.radial), std::abs(wrap_angle(back.azimuth - z.azimuth)),
                      std::abs(back.elevation - z.elevation)});
    const Vec3 p2 = anchor_polar_to_world(back, pose);
    worst = std::max(worst, (p2 - p).norm());
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("rotations are orthonormal and match the oracle") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-kPi, kPi);
  for (int i = 0; i < 200; ++i) {
    const EulerZYX e{u(rng), 0.5 * u(rng), u(rng)};
    const Mat3 r = rotation_from_euler(e);
    CHECK((r * r.transpose() - Mat3::Identity()).norm() < 1e-9);
    CHECK(r.determinant() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK((r - euler_oracle(e.yaw, e.pitch, e.roll)).norm() < 1e-12);
  }
}

TEST_CASE("wrap_angle range") {
  CHECK(wrap_angle(kPi) == doctest::Approx(kPi));
  CHECK(wrap_angle(-kPi) == doctest::Approx(kPi));
  CHECK(wrap_angle(3 * kPi + 0.1) == doctest::Approx(-kPi + 0.1));
  CHECK(wrap_angle(0.3) == doctest::Approx(0.3));
}

TEST_CASE("head box depth and back-projection") {
  CameraIntrinsics intr{600, 600, 320, 240};
  HeadDetection det{0.0, 1, 320, 240, 60, 72};
  const Vec3 p = head_box_to_world(det, intr, CameraExtrinsics{}, 0.30);
  CHECK(p.z() == doctest::Approx(3.0));
  CHECK(std::abs(p.x()) < 1e-12);

  det.width = 0.0;
  CHECK_THROWS_KIND(head_box_to_world(det, intr, CameraExtrinsics{}, 0.30), ErrorKind::BadBox);
  det.width = -3.0;
  CHECK_THROWS_KIND(head_box_to_world(det, intr, CameraExtrinsics{}, 0.30), ErrorKind::BadBox);
}

TEST_CASE("back-projection against a hand-composed projection") {
  // Camera at height 1.5 looking along world +x: right is -y, down is -z.
  const double h = 1.5;
  const CameraExtrinsics extr = CameraExtrinsics::look_at({0, 0, h}, {1, 0, 0});
  Mat3 expect_r;
  expect_r << 0, -1, 0, 0, 0, -1, 1, 0, 0;
  CHECK((extr.rotation - expect_r).norm() < 1e-12);
  const CameraIntrinsics intr{600, 600, 320, 240};
  HeadDetection det{0.0, 1, 320, 240, 600 * 0.30 / 2.0, 100};
  const Vec3 p = head_box_to_world(det, intr, extr, 0.30);
  CHECK((p - Vec3(2, 0, h)).norm() < 1e-12);

  // Off-centre pixel: u - cx = 60 px at depth 2 is 0.2 m to the right (world -y).
  det.u = 380;
  det.v = 210;
  const Vec3 q = head_box_to_world(det, intr, extr, 0.30);
  CHECK((q - Vec3(2, -0.2, h + 0.1)).norm() < 1e-12);
  double depth = 0.0;
  const Eigen::Vector2d px = project_to_pixels(q, intr, extr, &depth);
  CHECK(px.x() == doctest::Approx(380));
  CHECK(px.y() == doctest::Approx(210));
  CHECK(depth == doctest::Approx(2.0));
}

TEST_CASE("doubling the box width halves the camera distance") {
  const CameraIntrinsics intr{1400, 1400, 960, 540};
  const CameraExtrinsics extr = CameraExtrinsics::look_at({0, -1.5, 2.8}, Vec3(0, 5.5, -1.6).normalized());
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < 100; ++i) {
    HeadDetection det{0.0, 1, 1920 * u(rng), 1080 * u(rng), 20 + 80 * u(rng), 50};
    const Vec3 a = extr.rotation * head_box_to_world(det, intr, extr, 0.3) + extr.translation;
    det.width *= 2.0;
    const Vec3 b = extr.rotation * head_box_to_world(det, intr, extr, 0.3) + extr.translation;
    CHECK(b.norm() == doctest::Approx(a.norm() / 2.0).epsilon(1e-12));
  }
}

TEST_CASE("extrinsics validation") {
  CameraExtrinsics e;
  CHECK_NOTHROW(e.validate());
  e.rotation(0, 0) = -1.0;  // reflection
  CHECK_THROWS_KIND(e.validate(), ErrorKind::InvalidArgument);
  e.rotation = 1.01 * Mat3::Identity();
  CHECK_THROWS_KIND(e.validate(), ErrorKind::InvalidArgument);
}
