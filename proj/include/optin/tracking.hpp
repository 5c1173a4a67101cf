#pragma once

#include <Eigen/Core>

#include <array>
#include <functional>
#include <optional>
#include <vector>

#include "optin/geometry.hpp"
#include "optin/nlos.hpp"

namespace optin {

using StateVec = Eigen::Matrix<double, 5, 1>;
using StateCov = Eigen::Matrix<double, 5, 5>;

// State layout: (x, v_x, y, v_y, z).
inline constexpr int kIx = 0, kIvx = 1, kIy = 2, kIvy = 3, kIz = 4;

struct UkfState {
  StateVec mean = StateVec::Zero();
  StateCov cov = StateCov::Identity();
  double timestamp = 0.0;

  Vec3 position() const { return {mean[kIx], mean[kIy], mean[kIz]}; }
  Mat3 position_cov() const;
};

/// Observation noise for the LoS/NLoS branches (diagonal; radial m^2,
/// azimuth rad^2, elevation rad^2) and the process-noise variances.
struct NoiseModel {
  Mat3 r_los = Mat3::Identity();
  Mat3 r_nlos = Mat3::Identity();
  double q_velocity_var = 4.0;
  double q_height_var = 0.25;

  /// Assumed sensor errors: 0.5 m / 10 deg for LoS and 5.0 m / 45 deg for NLoS.
  static NoiseModel hand_designed();
  static Mat3 diagonal(double radial_var, double azimuth_var, double elevation_var);
};

struct UwbSample {
  TagId tag_id = 0;
  double timestamp = 0.0;
  PolarMeasurement z;
  SignalFeatures features;
  /// Simulator annotation only; never serialised and never read by the filter.
  std::optional<bool> truth_nlos;
};

/// Decides which observation-noise branch a sample uses.
using NlosGate = std::function<bool(const UwbSample&)>;

NlosGate gate_from(const NlosDetectorModel& model);
NlosGate always_los_gate();
NlosGate always_nlos_gate();

/// Merwe scaled sigma-point parameters.
struct SigmaParams {
  double alpha = 1e-3;
  double beta = 2.0;
  double kappa = 0.0;
};

struct InitPolicy {
  StateVec initial_variance = (StateVec() << 1.0, 4.0, 1.0, 4.0, 0.25).finished();
};

/// Discrete white-noise acceleration blocks for (x, v_x) and (y, v_y), and
/// q_z * dt^2 for the height.
StateCov process_noise(double dt, double q_velocity_var, double q_height_var);

UkfState predict(const UkfState& state, double dt, const NoiseModel& noise);

/// Generic unscented measurement update with a 3-D measurement. `angle_rows`
/// flags measurement components that are angles (their residuals are wrapped).
using MeasurementFn = std::function<Eigen::Vector3d(const StateVec&)>;
UkfState unscented_update(const UkfState& state, const Eigen::Vector3d& z, const MeasurementFn& h,
                          const Mat3& r, const std::array<bool, 3>& angle_rows,
                          const SigmaParams& sp = {});

/// Polar-observation update through world_to_anchor_polar.
UkfState update(const UkfState& state, const PolarMeasurement& z, const AnchorPose& pose,
                const Mat3& r, const SigmaParams& sp = {});

struct StepResult {
  UkfState state;
  bool used_nlos = false;
};

StepResult step(const UkfState& state, const UwbSample& sample, const AnchorPose& pose,
                const NoiseModel& noise, const NlosGate& gate);
StepResult step(const UkfState& state, const UwbSample& sample, const AnchorPose& pose,
                const NoiseModel& noise, const NlosDetectorModel& detector);

/// Largest eigenvalue of the position marginal.
double position_lambda_max(const UkfState& state);
bool uncertainty_flag(const UkfState& state, double u_th);

UkfState initial_state(const UwbSample& first, const AnchorPose& pose, const InitPolicy& init);

struct TrajectoryPoint {
  double timestamp = 0.0;
  Vec3 position = Vec3::Zero();
  Mat3 position_cov = Mat3::Identity();
  bool uncertain = false;
  bool used_nlos = false;
  UkfState state;
};

struct PositionQuery {
  Vec3 position;
  Mat3 position_cov;
  bool uncertain = false;
};

class TagTrajectory {
 public:
  TagTrajectory() = default;
  TagTrajectory(TagId id, double q_velocity_var, double q_height_var, double u_th)
      : tag_id_(id), q_v_(q_velocity_var), q_z_(q_height_var), u_th_(u_th) {}

  TagId tag_id() const { return tag_id_; }
  double u_th() const { return u_th_; }
  const std::vector<TrajectoryPoint>& points() const { return points_; }
  bool empty() const { return points_.empty(); }

  void append(const UkfState& posterior, bool used_nlos);

  /// Position belief at time t: the posterior at an exact sample time, otherwise
  /// a pure prediction from the latest sample at or before t. Returns nullopt if
  /// no sample lies within `align_tolerance` of t or t precedes the first sample.
  std::optional<PositionQuery> query(double t, double align_tolerance) const;

 private:
  TagId tag_id_ = 0;
  double q_v_ = 4.0;
  double q_z_ = 0.25;
  double u_th_ = 1.5;
  std::vector<TrajectoryPoint> points_;
};

/// Incremental single-tag filter used by both batch and streaming paths.
class TagTracker {
 public:
  TagTracker(TagId id, AnchorPose pose, NoiseModel noise, NlosGate gate, InitPolicy init,
             double u_th);

  void push(const UwbSample& sample);
  const TagTrajectory& trajectory() const { return trajectory_; }
  const std::optional<UkfState>& state() const { return state_; }

 private:
  AnchorPose pose_;
  NoiseModel noise_;
  NlosGate gate_;
  InitPolicy init_;
  std::optional<UkfState> state_;
  TagTrajectory trajectory_;
};

TagTrajectory track_tag(const std::vector<UwbSample>& samples, const AnchorPose& pose,
                        const NoiseModel& noise, const NlosGate& gate, const InitPolicy& init,
                        double u_th);

}  // namespace optin
