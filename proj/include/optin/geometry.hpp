#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstdint>

namespace optin {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kPi = 3.14159265358979323846;

/// Wraps an angle to (-pi, pi].
double wrap_angle(double a);

/// Anchor-frame UWB observation. Boresight is local +x; azimuth is measured
/// in the local x-y plane, elevation up from that plane.
struct PolarMeasurement {
  double radial = 0.0;     // m
  double azimuth = 0.0;    // rad, (-pi, pi]
  double elevation = 0.0;  // rad, [-pi/2, pi/2]

  Eigen::Vector3d as_vector() const { return {radial, azimuth, elevation}; }
  static PolarMeasurement from_vector(const Eigen::Vector3d& v) { return {v[0], v[1], v[2]}; }
};

/// Euler angles in intrinsic Z-Y-X order: R = Rz(yaw) * Ry(pitch) * Rx(roll).
struct EulerZYX {
  double yaw = 0.0;
  double pitch = 0.0;
  double roll = 0.0;
};

Mat3 rotation_from_euler(const EulerZYX& e);

struct AnchorPose {
  Vec3 position = Vec3::Zero();
  EulerZYX orientation;

  Mat3 rotation() const { return rotation_from_euler(orientation); }
};

struct CameraIntrinsics {
  double fx = 600.0;
  double fy = 600.0;
  double cx = 320.0;
  double cy = 240.0;

  /// Image size implied by a centred principal point.
  int width() const { return static_cast<int>(2.0 * cx); }
  int height() const { return static_cast<int>(2.0 * cy); }
};

/// World-to-camera rigid transform: p_cam = rotation * p_world + translation.
/// Camera frame: x right, y down, z along the optical axis.
struct CameraExtrinsics {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 camera_center() const { return -rotation.transpose() * translation; }

  /// Builds extrinsics for a camera at `center` whose optical axis points along
  /// `forward`; image "up" follows world +z as closely as possible.
  static CameraExtrinsics look_at(const Vec3& center, const Vec3& forward);

  /// Throws InvalidArgument unless rotation is orthonormal with det +1 (1e-9).
  void validate() const;
};

using TrackletId = std::int64_t;
using TagId = std::int64_t;

struct HeadDetection {
  double timestamp = 0.0;
  TrackletId tracklet_id = 0;
  double u = 0.0;  // box centre, px
  double v = 0.0;
  double width = 0.0;   // w_p, px
  double height = 0.0;  // px
};

// Observation model h: world point -> anchor-frame polar coordinates.
PolarMeasurement world_to_anchor_polar(const Vec3& p, const AnchorPose& pose);

Vec3 anchor_polar_to_world(const PolarMeasurement& z, const AnchorPose& pose);

/// Monocular head localisation. Depth along the optical axis is fx * w_r / w_p.
Vec3 head_box_to_world(const HeadDetection& det, const CameraIntrinsics& intr,
                       const CameraExtrinsics& extr, double head_width_m);

/// Projects a world point to pixels; returns camera-frame depth in `depth`.
Eigen::Vector2d project_to_pixels(const Vec3& p, const CameraIntrinsics& intr,
                                  const CameraExtrinsics& extr, double* depth = nullptr);

}  // namespace optin
