#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "optin/calibration.hpp"
#include "optin/geometry.hpp"
#include "optin/matching.hpp"
#include "optin/simulator.hpp"
#include "optin/tracking.hpp"

namespace optin {

struct PipelineConfig {
  AnchorPose anchor;
  CameraIntrinsics intrinsics;
  CameraExtrinsics extrinsics;
  NoiseModel noise = NoiseModel::hand_designed();
  double w_r = 0.30;
  double h_tag = 1.0;
  double c_th = 1.5;
  double u_th = 1.5;
  double d_th = 1.0;
  double window = 10.0;  // s, tumbling
  double align_tolerance = 0.25;
  double ransac_threshold = 0.5;
  std::uint64_t seed = 1;

  CalibParams calib() const { return {anchor, w_r, h_tag}; }
  void set_calib(const CalibParams& p) {
    anchor = p.anchor;
    w_r = p.w_r;
    h_tag = p.h_tag;
  }
  /// Throws InvalidArgument on non-positive window/thresholds or bad extrinsics.
  void validate() const;
};

struct BoxDecision {
  TrackletId tracklet_id = 0;
  TagId tag_id = -1;  // -1 when the tracklet is not assigned
  HeadDetection box;
  bool keep = false;
};

struct FrameDecision {
  double timestamp = 0.0;
  std::vector<BoxDecision> boxes;
  std::vector<TrackletId> masked;  // boxes with keep = false
};

struct RunMetrics {
  double recall = 0.0;  // NaN when the carrier never appears
  int carrier_frames = 0;
  int correct_frames = 0;
  int misid_frames = 0;
  int tag_frames = 0;
  double misid_rate = 0.0;
  double mean_latency_ms = 0.0;
  double max_latency_ms = 0.0;
};

/// Groups detections by tracklet id and back-projects them onto the
/// tag-height plane with the calibrated head width.
std::vector<Tracklet> build_tracklets(const std::vector<HeadDetection>& detections, const CameraIntrinsics& intr,
                                      const CameraExtrinsics& extr, double w_r, double h_tag);

struct ReplayResult {
  std::vector<FrameDecision> frames;
  std::vector<TagTrajectory> trajectories;
  RunMetrics metrics;  // latency only; see evaluate_recall
};

/// Tumbling-window replay. Within each window the UKFs advance over the UWB
/// samples, the tracklets are clipped to the window, and one assignment is
/// solved and applied to every frame of the window. Streams are stably sorted
/// when they step back by at most 1 s.
ReplayResult run_replay(const std::vector<UwbSample>& uwb, const std::vector<HeadDetection>& detections,
                        const PipelineConfig& cfg, const NlosGate& gate);

/// Recall over (tag, frame) pairs in which the tag's carrier is visible;
/// misidentification counts (tag, frame) pairs whose kept tracklet is not the
/// carrier. Labels with tag_id < 0 count as carriers of any tag.
RunMetrics evaluate_recall(const std::vector<FrameDecision>& decisions, const std::vector<TruthLabel>& truth);

struct SweepPoint {
  double c_th = 0.0;
  double u_th = 0.0;
  RunMetrics metrics;
};

struct SweepTable {
  std::vector<SweepPoint> points;
  double auc = 0.0;  // trapezoid of recall over misid_rate, points sorted by misid_rate
};

struct SweepInput {
  std::vector<UwbSample> uwb;
  std::vector<HeadDetection> detections;
  std::vector<TruthLabel> truth;
};

/// Replays every dataset at every c_th and pools the counts. When
/// `tie_uncertainty` is set u_th follows c_th.
SweepTable sweep_threshold(const std::vector<SweepInput>& datasets, const PipelineConfig& cfg, const NlosGate& gate,
                           const std::vector<double>& c_values, bool tie_uncertainty = false);

double trapezoid_auc(std::vector<std::pair<double, double>> xy);

/// Pools counts of several runs into one metric (latency averaged by frames).
RunMetrics pool_metrics(const std::vector<RunMetrics>& runs);

struct MetricsRow {
  std::string scene_id;
  int n_people = 0;
  int n_tags = 0;
  double c_th = 0.0;
  double u_th = 0.0;
  RunMetrics metrics;
};

std::string metrics_csv(const std::vector<MetricsRow>& rows);
std::string sweep_csv(const SweepTable& table);

}  // namespace optin
