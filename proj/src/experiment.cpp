#include "optin/experiment.hpp"

#include <random>

#include "optin/error.hpp"

namespace optin::experiment {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

SceneRun simulate_run(const Rig& rig, const SceneConfig& scene, const UwbNoiseConfig& uwb_noise,
                      const CameraNoiseConfig& cam_noise, std::uint64_t seed) {
  SceneConfig cfg = scene;
  cfg.seed = derive_seed(seed, 0);
  SceneRun run;
  run.truth = generate_scene(cfg);
  run.uwb = simulate_uwb(run.truth, rig.anchor, uwb_noise, derive_seed(seed, 1));
  run.camera = simulate_detections(run.truth, rig.intrinsics, rig.extrinsics, cam_noise, derive_seed(seed, 2));
  return run;
}

CalibParams perturbed_init(const AnchorPose& truth, const InitPerturbation& p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(0.5);
  const auto sign = [&] { return coin(rng) ? 1.0 : -1.0; };
  CalibParams init;
  init.anchor = truth;
  init.anchor.position.x() += sign() * p.horizontal;
  init.anchor.position.y() += sign() * p.horizontal;
  init.anchor.position.z() += sign() * p.vertical;
  init.anchor.orientation.yaw += sign() * p.angle;
  init.anchor.orientation.pitch += sign() * p.angle;
  init.anchor.orientation.roll += sign() * p.angle;
  init.w_r = p.w_r;
  init.h_tag = p.h_tag;
  return init;
}

CameraNoiseConfig CalibrationSetup::no_occlusion_camera() {
  CameraNoiseConfig c;
  c.occlusion = false;
  c.id_switch_rate = 0.0;
  return c;
}

std::vector<Vec3> calibration_tour(const std::vector<Vec3>& area, double inset) {
  if (area.empty()) return {};
  Vec3 centroid = Vec3::Zero();
  for (const Vec3& v : area) centroid += v;
  centroid /= static_cast<double>(area.size());
  std::vector<Vec3> pulled;
  for (const Vec3& v : area) pulled.push_back(v + inset * (centroid - v));
  if (pulled.size() != 4) return pulled;
  return {pulled[0], pulled[2], pulled[0], pulled[1], pulled[3], pulled[1]};
}

UwbNoiseConfig CalibrationSetup::planted_outlier_uwb(double rate) {
  UwbNoiseConfig u;
  u.body_occlusion = false;
  u.forced_nlos_rate = rate;
  return u;
}

CalibrationOutcome run_calibration(const Rig& rig, const CalibrationSetup& setup, std::uint64_t seed) {
  SceneConfig scene;
  scene.area = rig.area;
  scene.person_count = 1;
  scene.tag_count = 1;
  scene.duration = setup.duration;
  scene.speed_min = setup.speed_min;
  scene.speed_max = setup.speed_max;
  if (setup.tour) scene.tour = calibration_tour(rig.area, setup.tour_inset);
  const SceneRun run = simulate_run(rig, scene, setup.uwb_noise, setup.camera_noise, seed);

  CalibrationOutcome out;
  out.truth_w_r = run.truth.people.front().head_width;
  out.truth_h_tag = run.truth.config.tag_height;
  out.init = perturbed_init(rig.anchor, setup.init, derive_seed(seed, 3));
  out.data = pair_calibration_data(run.uwb, run.camera.detections);
  for (const CalibrationPair& p : out.data) out.planted_nlos.push_back(p.uwb.truth_nlos.value_or(false));

  RansacConfig rc = setup.ransac;
  rc.seed = derive_seed(seed, 4);
  out.extrinsics = calibrate_extrinsics(out.data, rig.intrinsics, rig.extrinsics, out.init, rc, setup.extrinsic);

  out.detector = NlosDetectorModel::constant(LinkClass::LoS);
  if (setup.train_detector) {
    std::vector<SignalFeatures> xs;
    for (const CalibrationPair& p : out.data) xs.push_back(p.uwb.features);
    try {
      out.detector = train_detector(xs, label_nlos(out.extrinsics.outliers), setup.train, derive_seed(seed, 5));
    } catch (const Error& e) {
      // A walk without a single outlier (or inlier) cannot train a classifier.
      if (e.kind() != ErrorKind::DegenerateLabels) throw;
    }
  }
  if (setup.tune_noise) {
    TuneConfig tc = setup.tune;
    tc.cmaes.seed = derive_seed(seed, 6);
    out.noise = tune_noise(out.data, out.extrinsics.params, gate_from(out.detector), rig.intrinsics, rig.extrinsics, tc);
  }
  if (setup.tune_single) {
    TuneConfig tc = setup.tune;
    tc.single_matrix = true;
    tc.cmaes.seed = derive_seed(seed, 7);
    out.single_noise =
        tune_noise(out.data, out.extrinsics.params, always_los_gate(), rig.intrinsics, rig.extrinsics, tc);
  }
  return out;
}

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::Full:
      return "full";
    case Variant::NoNlosDetector:
      return "no_nlos_detector";
    case Variant::HandDesignedNoise:
      return "hand_designed_noise";
    case Variant::Uncalibrated:
      return "uncalibrated";
  }
  return "unknown";
}

MethodSetup method_for(Variant v, const Rig& rig, const CalibrationOutcome& cal, const PipelineConfig& base) {
  MethodSetup m;
  m.config = base;
  m.config.intrinsics = rig.intrinsics;
  m.config.extrinsics = rig.extrinsics;
  m.config.set_calib(cal.extrinsics.params);
  m.config.noise = cal.noise.apply(m.config.noise);
  m.gate = gate_from(cal.detector);
  switch (v) {
    case Variant::Full:
      break;
    case Variant::NoNlosDetector:
      m.config.noise = cal.single_noise.apply(m.config.noise);
      m.gate = always_los_gate();
      break;
    case Variant::HandDesignedNoise: {
      const NoiseModel hand = NoiseModel::hand_designed();
      m.config.noise.r_los = hand.r_los;
      m.config.noise.r_nlos = hand.r_nlos;
      break;
    }
    case Variant::Uncalibrated:
      m.config.set_calib(cal.init);
      break;
  }
  return m;
}

MethodSetup oracle_method(const Rig& rig, const SceneConfig& scene, const PipelineConfig& base) {
  MethodSetup m;
  m.config = base;
  m.config.intrinsics = rig.intrinsics;
  m.config.extrinsics = rig.extrinsics;
  m.config.anchor = rig.anchor;
  m.config.w_r = scene.head_width_mean;
  m.config.h_tag = scene.tag_height;
  m.config.noise = NoiseModel::hand_designed();
  m.gate = always_los_gate();
  return m;
}

std::vector<TruthLabel> truth_labels(const SceneRun& run) { return run.camera.truth; }

RunMetrics score(const SceneRun& run, const MethodSetup& method) {
  const ReplayResult r = run_replay(run.uwb, run.camera.detections, method.config, method.gate);
  RunMetrics m = evaluate_recall(r.frames, run.camera.truth);
  m.mean_latency_ms = r.metrics.mean_latency_ms;
  m.max_latency_ms = r.metrics.max_latency_ms;
  return m;
}

}  // namespace optin::experiment
