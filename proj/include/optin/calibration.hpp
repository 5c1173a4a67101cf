#pragma once

#include <Eigen/Core>

#include <vector>

#include "optin/geometry.hpp"
#include "optin/nlos.hpp"
#include "optin/optimize.hpp"
#include "optin/tracking.hpp"

namespace optin {

/// Installation parameters recovered from a single walking demonstration.
struct CalibParams {
  AnchorPose anchor;
  double w_r = 0.30;   // mean head width, m
  double h_tag = 1.0;  // tag height, m

  /// Packs as (x, y, z, yaw, pitch, roll, w_r, h_tag).
  Eigen::Matrix<double, 8, 1> to_vector() const;
  static CalibParams from_vector(const Eigen::Matrix<double, 8, 1>& v);
  /// Throws InvalidArgument unless 0.1 < w_r < 0.6 and 0 < h_tag < 2.5.
  void validate() const;
};

struct CalibrationPair {
  double t = 0.0;  // camera timestamp
  UwbSample uwb;
  HeadDetection det;
};

using CalibrationDataset = std::vector<CalibrationPair>;

/// Pairs camera frames with UWB samples on the camera clock: a frame and a
/// sample are paired when each is the other's nearest neighbour and they are
/// at most `max_dt` apart. Detections must all belong to the demonstrator.
CalibrationDataset pair_calibration_data(const std::vector<UwbSample>& uwb,
                                         const std::vector<HeadDetection>& detections,
                                         double max_dt = 0.25);

/// Camera-derived tag position: head back-projection with w_r, height forced to h_tag.
Vec3 camera_tag_position(const HeadDetection& det, const CameraIntrinsics& intr,
                         const CameraExtrinsics& extr, const CalibParams& params);

/// Euclidean distance between camera- and UWB-derived positions of one pair.
double calibration_residual(const CalibrationPair& pair, const CalibParams& params,
                            const CameraIntrinsics& intr, const CameraExtrinsics& extr);

/// Mean residual over the given pairs (all pairs when `indices` is empty).
double calibration_objective(const CalibrationDataset& data, const std::vector<std::size_t>& indices,
                             const CalibParams& params, const CameraIntrinsics& intr,
                             const CameraExtrinsics& extr);

struct ExtrinsicOptions {
  /// Anchor height and tag height only enter the residual through their
  /// difference; this weak pull of the anchor height towards its initial
  /// (measured) value pins that direction.
  double anchor_height_prior = 1.0;
  int refit_restarts = 4;
  /// Refit/re-threshold rounds after the RANSAC consensus.
  int consensus_rounds = 3;
  NelderMeadOptions hypothesis_solver = default_solver(3000);
  NelderMeadOptions refit_solver = default_solver(8000);

  static NelderMeadOptions default_solver(int max_evals);
};

struct ExtrinsicResult {
  CalibParams params;
  std::vector<bool> outliers;  // 1:1 with the dataset
  double inlier_ratio = 0.0;
  double objective_init = 0.0;   // mean residual on the final inliers at init
  double objective_final = 0.0;  // same, at the returned params
};

ExtrinsicResult calibrate_extrinsics(const CalibrationDataset& data, const CameraIntrinsics& intr,
                                     const CameraExtrinsics& extr, const CalibParams& init,
                                     const RansacConfig& cfg, const ExtrinsicOptions& opts = {});

/// RANSAC outliers become NLoS labels, inliers LoS.
std::vector<LinkClass> label_nlos(const std::vector<bool>& outlier_mask);

struct TuneConfig {
  double d_th = 1.0;
  /// The penalty acts on margin * d_th so that the optimum does not sit on
  /// the reported boundary.
  double margin = 0.98;
  std::vector<double> penalty_schedule{1e3, 1e5};
  double lower_variance = 1e-4;
  double upper_variance = 1e2;        // radial, m^2
  double upper_angle_variance = 2.0;  // azimuth/elevation, rad^2
  double upper_los_angle_variance = 0.3;  // LoS azimuth/elevation when the classes are tuned apart
  /// One shared R for both branches (ablation without NLoS switching).
  bool single_matrix = false;
  /// Starting point; hand-designed LoS/NLoS values by default.
  NoiseModel initial = NoiseModel::hand_designed();
  CmaesConfig cmaes = default_cmaes();
  InitPolicy init;
  double align_tolerance = 0.25;

  static CmaesConfig default_cmaes();
};

struct TunedNoise {
  Mat3 r_los = Mat3::Identity();
  Mat3 r_nlos = Mat3::Identity();
  double d_th = 1.0;
  double penalized_objective = 0.0;
  double initial_penalized_objective = 0.0;
  double violation_fraction = 0.0;  // share of timestamps with D_t >= d_th
  double max_distance = 0.0;
  int timestamps = 0;
  int evaluations = 0;

  NoiseModel apply(NoiseModel base) const {
    base.r_los = r_los;
    base.r_nlos = r_nlos;
    return base;
  }
};

/// Mahalanobis distances between the camera positions and the filtered UWB
/// track, one per pair (pairs without filter coverage are skipped).
std::vector<double> constraint_distances(const CalibrationDataset& data, const CalibParams& params,
                                         const NoiseModel& noise, const NlosGate& gate,
                                         const CameraIntrinsics& intr, const CameraExtrinsics& extr,
                                         const InitPolicy& init = {}, double align_tolerance = 0.25);

/// Minimises tr(R_LoS) + tr(R_NLoS) + P * sum_t max(0, D_t - d_th)^2 over the
/// log-diagonals, running CMA-ES once per penalty weight in the schedule.
TunedNoise tune_noise(const CalibrationDataset& data, const CalibParams& params, const NlosGate& gate,
                      const CameraIntrinsics& intr, const CameraExtrinsics& extr, const TuneConfig& cfg);

}  // namespace optin
