#pragma once

#include <cstdint>
#include <vector>

#include "optin/calibration.hpp"
#include "optin/nlos.hpp"
#include "optin/pipeline.hpp"
#include "optin/simulator.hpp"

// Seeded end-to-end harness: calibration walk, crowd scenes, replay, scoring.
namespace optin::experiment {

/// splitmix64 step; used to derive independent sub-seeds.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

struct SceneRun {
  GroundTruth truth;
  std::vector<UwbSample> uwb;
  DetectionSimulation camera;
};

SceneRun simulate_run(const Rig& rig, const SceneConfig& scene, const UwbNoiseConfig& uwb_noise,
                      const CameraNoiseConfig& cam_noise, std::uint64_t seed);

/// Installation guess a technician would type in: true pose plus a seeded
/// error, nominal head width and tag height.
struct InitPerturbation {
  double horizontal = 0.25;  // m, per axis
  double vertical = 0.03;    // m
  double angle = 0.12;       // rad, per Euler angle
  double w_r = 0.30;
  double h_tag = 1.0;
};

CalibParams perturbed_init(const AnchorPose& truth, const InitPerturbation& p, std::uint64_t seed);

/// Demonstrator route: the area's vertices pulled `inset` of the way toward
/// the centroid. Quadrilaterals are walked out and back along both diagonals:
/// every leg crosses the depth range and every stretch is covered in both
/// directions, so the tag's side offset averages out.
std::vector<Vec3> calibration_tour(const std::vector<Vec3>& area, double inset = 0.1);

struct CalibrationSetup {
  double duration = 60.0;
  double speed_min = 0.5;
  double speed_max = 1.5;
  bool tour = true;
  double tour_inset = 0.1;
  UwbNoiseConfig uwb_noise = planted_outlier_uwb();
  CameraNoiseConfig camera_noise = no_occlusion_camera();
  InitPerturbation init;
  RansacConfig ransac;
  ExtrinsicOptions extrinsic;
  TrainConfig train;
  TuneConfig tune;
  bool train_detector = true;
  bool tune_noise = true;
  /// Also tune a single shared R under an always-LoS gate (ablation).
  bool tune_single = false;

  static CameraNoiseConfig no_occlusion_camera();
  /// Default UWB noise with geometric occlusion replaced by independent
  /// gross NLoS epochs at `rate`.
  static UwbNoiseConfig planted_outlier_uwb(double rate = 0.2);
};

struct CalibrationOutcome {
  CalibParams init;
  CalibrationDataset data;
  std::vector<bool> planted_nlos;  // 1:1 with data
  ExtrinsicResult extrinsics;
  NlosDetectorModel detector;
  TunedNoise noise;
  TunedNoise single_noise;
  double truth_w_r = 0.0;
  double truth_h_tag = 0.0;
};

/// Simulates one demonstrator walk and runs both calibration stages.
CalibrationOutcome run_calibration(const Rig& rig, const CalibrationSetup& setup, std::uint64_t seed);

enum class Variant { Full, NoNlosDetector, HandDesignedNoise, Uncalibrated };

const char* variant_name(Variant v);

/// Pipeline configuration and NLoS gate for a variant of the method.
struct MethodSetup {
  PipelineConfig config;
  NlosGate gate;
};

MethodSetup method_for(Variant v, const Rig& rig, const CalibrationOutcome& cal, const PipelineConfig& base = {});

/// Ground-truth installation with zero-noise settings.
MethodSetup oracle_method(const Rig& rig, const SceneConfig& scene, const PipelineConfig& base = {});

/// Replays a scene and scores it; latency is carried over from the replay.
RunMetrics score(const SceneRun& run, const MethodSetup& method);

std::vector<TruthLabel> truth_labels(const SceneRun& run);

}  // namespace optin::experiment
