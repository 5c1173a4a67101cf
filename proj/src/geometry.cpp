#include "optin/geometry.hpp"

#include <algorithm>
#include <cmath>

#include "optin/error.hpp"

namespace optin {

double wrap_angle(double a) {
  double w = std::remainder(a, 2.0 * kPi);  // [-pi, pi]
  if (w <= -kPi) w += 2.0 * kPi;
  return w;
}

Mat3 rotation_from_euler(const EulerZYX& e) {
  const Mat3 rz = Eigen::AngleAxisd(e.yaw, Vec3::UnitZ()).toRotationMatrix();
  const Mat3 ry = Eigen::AngleAxisd(e.pitch, Vec3::UnitY()).toRotationMatrix();
  const Mat3 rx = Eigen::AngleAxisd(e.roll, Vec3::UnitX()).toRotationMatrix();
  return rz * ry * rx;
}

CameraExtrinsics CameraExtrinsics::look_at(const Vec3& center, const Vec3& forward) {
  const Vec3 f = forward.normalized();
  Vec3 right = f.cross(Vec3::UnitZ());
  if (right.norm() < 1e-9) {
    throw Error(ErrorKind::InvalidArgument, "look_at: forward is parallel to world z");
  }
  right.normalize();
  const Vec3 down = f.cross(right);
  CameraExtrinsics e;
  e.rotation.row(0) = right.transpose();
  e.rotation.row(1) = down.transpose();
  e.rotation.row(2) = f.transpose();
  e.translation = -e.rotation * center;
  return e;
}

void CameraExtrinsics::validate() const {
  if (!rotation.allFinite() || !translation.allFinite()) {
    throw Error(ErrorKind::InvalidArgument, "camera extrinsics not finite");
  }
  if (!(rotation.transpose() * rotation).isApprox(Mat3::Identity(), 1e-9) ||
      std::abs(rotation.determinant() - 1.0) > 1e-9) {
    throw Error(ErrorKind::InvalidArgument, "camera rotation is not a proper rotation");
  }
}

PolarMeasurement world_to_anchor_polar(const Vec3& p, const AnchorPose& pose) {
  const Vec3 local = pose.rotation().transpose() * (p - pose.position);
  const double r = local.norm();
  if (!(r >= 1e-9)) {
    throw Error(ErrorKind::DegeneratePoint, "point coincides with the anchor");
  }
  return {r, std::atan2(local.y(), local.x()), std::asin(std::clamp(local.z() / r, -1.0, 1.0))};
}

Vec3 anchor_polar_to_world(const PolarMeasurement& z, const AnchorPose& pose) {
  const double ce = std::cos(z.elevation);
  const Vec3 local(z.radial * ce * std::cos(z.azimuth), z.radial * ce * std::sin(z.azimuth),
                   z.radial * std::sin(z.elevation));
  return pose.rotation() * local + pose.position;
}

Vec3 head_box_to_world(const HeadDetection& det, const CameraIntrinsics& intr,
                       const CameraExtrinsics& extr, double head_width_m) {
  if (!(det.width > 0.0)) throw Error(ErrorKind::BadBox, "head box width must be positive");
  if (!(head_width_m > 0.0)) throw Error(ErrorKind::InvalidArgument, "w_r must be positive");
  const double depth = intr.fx * head_width_m / det.width;
  const Vec3 cam((det.u - intr.cx) * depth / intr.fx, (det.v - intr.cy) * depth / intr.fy, depth);
  return extr.rotation.transpose() * (cam - extr.translation);
}

Eigen::Vector2d project_to_pixels(const Vec3& p, const CameraIntrinsics& intr,
                                  const CameraExtrinsics& extr, double* depth) {
  const Vec3 cam = extr.rotation * p + extr.translation;
  if (depth != nullptr) *depth = cam.z();
  return {intr.fx * cam.x() / cam.z() + intr.cx, intr.fy * cam.y() / cam.z() + intr.cy};
}

}  // namespace optin
