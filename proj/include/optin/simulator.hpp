#pragma once

#include <cstdint>
#include <vector>

#include "optin/geometry.hpp"
#include "optin/tracking.hpp"

namespace optin {

/// Fixed installation: camera, UWB anchor and the walkable area (a convex
/// polygon on z = 0). The default is a trapezoid in front of a tripod-mounted
/// camera/anchor pair at 2.8 m.
struct Rig {
  CameraIntrinsics intrinsics;
  CameraExtrinsics extrinsics;
  AnchorPose anchor;
  std::vector<Vec3> area;

  static Rig standard();
};

struct SceneConfig {
  std::vector<Vec3> area = Rig::standard().area;
  int person_count = 8;
  int tag_count = 1;
  double duration = 60.0;
  double camera_rate = 10.0;
  double uwb_rate = 5.0;
  double speed_min = 0.0;
  double speed_max = 2.0;
  double body_radius = 0.25;
  double head_height_min = 1.55;
  double head_height_max = 1.80;
  double head_width_mean = 0.30;
  double head_width_sd = 0.02;
  double tag_height = 1.10;
  double tag_lateral_offset = 0.15;  // to the carrier's right
  /// Walking heading changes at most this fast (rad/s); <= 0 gives straight
  /// legs with instantaneous turns at the waypoints.
  double turn_rate = kPi / 2.0;
  double max_accel = 1.0;  // m/s^2, <= 0 jumps straight to each leg speed
  double path_step = 0.1;  // s between waypoints while turning
  /// Fixed targets visited in order (cycled) instead of random ones.
  std::vector<Vec3> tour;
  std::uint64_t seed = 1;

  void validate() const;
};

struct Waypoint {
  double t = 0.0;
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;  // of the leg that starts here
};

struct PersonTruth {
  int person_id = 0;
  std::vector<Waypoint> path;  // piecewise linear, first waypoint at t = 0
  double head_width = 0.30;
  double head_height = 1.70;
  double initial_heading = 0.0;
  bool carries_tag = false;
  TagId tag_id = -1;

  Eigen::Vector2d ground_at(double t) const;
  double heading_at(double t) const;
  double speed_at(double t) const;
  Vec3 head_at(double t) const;
};

struct GroundTruth {
  SceneConfig config;
  std::vector<PersonTruth> people;

  Vec3 tag_position(const PersonTruth& p, double t) const;
  const PersonTruth* carrier_of(TagId tag) const;
};

bool point_in_polygon(const Eigen::Vector2d& p, const std::vector<Vec3>& polygon);

/// Random-waypoint walks inside the area, seeded. Walkers steer toward each
/// target with a bounded turn rate.
GroundTruth generate_scene(const SceneConfig& cfg);

struct BodyCylinder {
  Vec3 center;  // ground point of the body axis (z ignored)
  double radius = 0.25;
  double height = 1.8;
};

/// True iff the segment anchor -> tag passes within a body's radius of its
/// vertical axis segment [0, height], ignoring a 5 cm ball around the tag.
bool occlusion_test(const Vec3& anchor_pos, const Vec3& tag_pos, const std::vector<BodyCylinder>& bodies);

/// Class-conditional Gaussian feature generator (F = 6, default layout).
struct FeatureModel {
  std::vector<double> los_mean{1.0, 1.0, 1.0, 20.0, -80.0, 0.90};
  std::vector<double> los_sd{0.5, 0.2, 0.2, 3.0, 3.0, 0.15};
  std::vector<double> nlos_mean{3.0, 0.6, 0.8, 8.0, -88.0, 0.45};
  std::vector<double> nlos_sd{1.0, 0.2, 0.2, 3.0, 3.0, 0.15};
};

struct UwbNoiseConfig {
  double los_radial_sd = 0.10;
  double los_angle_sd = 2.0 * kPi / 180.0;
  double nlos_bias_min = 0.5;
  double nlos_bias_max = 5.0;
  double nlos_radial_sd = 1.0;
  double nlos_angle_sd = 45.0 * kPi / 180.0;
  bool body_occlusion = true;
  /// Torso radius used when the carrier's own body is tested.
  double self_body_radius = 0.10;
  /// Body axis top relative to the head centre; with the body radius as a
  /// rounded cap this puts the occluder top near shoulder height.
  double body_top_margin = -0.5;
  /// Extra NLoS epochs independent of geometry (reflections, clutter).
  double forced_nlos_rate = 0.0;
  double epoch_phase = 0.0;
  FeatureModel features;

  static UwbNoiseConfig zero();
};

/// Samples of every tag, time-sorted (ties by tag id), truth_nlos annotated.
std::vector<UwbSample> simulate_uwb(const GroundTruth& gt, const AnchorPose& anchor,
                                    const UwbNoiseConfig& noise, std::uint64_t seed);

/// Per-epoch occlusion bodies for a tag carrier at time t.
std::vector<BodyCylinder> bodies_at(const GroundTruth& gt, const PersonTruth& carrier, double t,
                                    const UwbNoiseConfig& noise);

struct CameraNoiseConfig {
  double pixel_sd = 2.0;
  double width_sd = 1.0;
  double box_aspect = 1.2;  // height / width
  bool occlusion = true;
  /// A head box is dropped when its IoU with a nearer head box exceeds this.
  double occlusion_iou = 0.5;
  double fragment_gap = 0.5;  // s
  double id_switch_rate = 0.02;  // per person per second

  static CameraNoiseConfig zero();
};

struct TruthLabel {
  double t = 0.0;
  TrackletId tracklet_id = 0;
  int person_id = 0;
  bool carries_tag = false;
  TagId tag_id = -1;
};

struct DetectionSimulation {
  std::vector<HeadDetection> detections;  // frame-major, time-sorted
  std::vector<TruthLabel> truth;          // 1:1 with detections
};

/// Intersection over union of two centred (u, v, w, h) boxes.
double box_iou(const Eigen::Vector4d& a, const Eigen::Vector4d& b);

DetectionSimulation simulate_detections(const GroundTruth& gt, const CameraIntrinsics& intr,
                                        const CameraExtrinsics& extr, const CameraNoiseConfig& noise,
                                        std::uint64_t seed);

}  // namespace optin
