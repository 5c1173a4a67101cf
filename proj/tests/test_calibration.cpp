#include <doctest.h>

#include <cmath>

#include "optin/calibration.hpp"
#include "optin/experiment.hpp"
#include "support.hpp"

using namespace optin;
namespace ex = optin::experiment;

namespace {

struct Walk {
  Rig rig = Rig::standard();
  CalibrationDataset data;
  double head_width = 0.0;
  double tag_height = 0.0;
};

// Demonstrator walk whose tag sits exactly under the head centre, so that a
// zero-noise dataset has zero residual at the planted parameters.
Walk zero_noise_walk(double duration, std::uint64_t seed) {
  Walk w;
  SceneConfig scene;
  scene.area = w.rig.area;
  scene.person_count = 1;
  scene.duration = duration;
  scene.speed_min = 0.5;
  scene.speed_max = 1.5;
  scene.head_width_sd = 0.0;
  scene.tag_lateral_offset = 0.0;
  scene.tour = ex::calibration_tour(w.rig.area);
  const ex::SceneRun run = ex::simulate_run(w.rig, scene, UwbNoiseConfig::zero(), CameraNoiseConfig::zero(), seed);
  w.data = pair_calibration_data(run.uwb, run.camera.detections);
  w.head_width = run.truth.people.front().head_width;
  w.tag_height = run.truth.config.tag_height;
  return w;
}

CalibParams planted(const Walk& w) { return {w.rig.anchor, w.head_width, w.tag_height}; }

}  // namespace

TEST_CASE("calibration parameter vector") {
  CalibParams p;
  p.anchor.position = Vec3(1, 2, 3);
  p.anchor.orientation = {0.1, 0.2, 0.3};
  p.w_r = 0.28;
  p.h_tag = 1.2;
  const CalibParams q = CalibParams::from_vector(p.to_vector());
  CHECK(q.to_vector() == p.to_vector());
  CHECK_NOTHROW(p.validate());
  p.w_r = 0.05;
  CHECK_THROWS_KIND(p.validate(), ErrorKind::InvalidArgument);
  p.w_r = 0.3;
  p.h_tag = 3.0;
  CHECK_THROWS_KIND(p.validate(), ErrorKind::InvalidArgument);
}

TEST_CASE("pairing keeps mutual nearest neighbours") {
  std::vector<UwbSample> uwb(3);
  for (int k = 0; k < 3; ++k) uwb[k].timestamp = 0.2 * k;
  std::vector<HeadDetection> dets(5);
  for (int k = 0; k < 5; ++k) dets[k].timestamp = 0.1 * k;
  const CalibrationDataset d = pair_calibration_data(uwb, dets);
  REQUIRE(d.size() == 3);
  for (int k = 0; k < 3; ++k) {
    CHECK(d[k].t == doctest::Approx(0.2 * k));
    CHECK(d[k].uwb.timestamp == doctest::Approx(d[k].det.timestamp));
  }
  std::vector<HeadDetection> far(1);
  far[0].timestamp = 5.0;
  CHECK(pair_calibration_data(uwb, far).empty());
  CHECK_THROWS_KIND(pair_calibration_data({}, dets), ErrorKind::EmptyInput);
}

TEST_CASE("labels follow the outlier mask") {
  const auto labels = label_nlos({true, false, false, true});
  CHECK(labels == std::vector<LinkClass>{LinkClass::NLoS, LinkClass::LoS, LinkClass::LoS, LinkClass::NLoS});
}

TEST_CASE("zero-noise walk has zero residual at the planted parameters") {
  const Walk w = zero_noise_walk(30.0, 2);
  REQUIRE(w.data.size() > 100);
  const double obj = calibration_objective(w.data, {}, planted(w), w.rig.intrinsics, w.rig.extrinsics);
  CHECK(obj < 1e-9);
}

TEST_CASE("zero-noise recovery") {
  const Walk w = zero_noise_walk(60.0, 3);
  ex::InitPerturbation pert;
  pert.vertical = 0.0;  // the anchor height is pinned by its prior
  const CalibParams init = ex::perturbed_init(w.rig.anchor, pert, 17);
  RansacConfig rc;
  rc.seed = 5;
  const ExtrinsicResult r = calibrate_extrinsics(w.data, w.rig.intrinsics, w.rig.extrinsics, init, rc);
  CHECK((r.params.anchor.position - w.rig.anchor.position).norm() < 1e-3);
  CHECK(std::abs(r.params.w_r - w.head_width) < 1e-3);
  CHECK(std::abs(r.params.h_tag - w.tag_height) < 1e-3);
  CHECK(r.inlier_ratio == doctest::Approx(1.0));
  CHECK(r.objective_final <= r.objective_init);
  CHECK(r.objective_final < 1e-3);

  const ExtrinsicResult again = calibrate_extrinsics(w.data, w.rig.intrinsics, w.rig.extrinsics, init, rc);
  CHECK(again.params.to_vector() == r.params.to_vector());
  CHECK(again.outliers == r.outliers);
}

TEST_CASE("recovery under planted outliers") {
  ex::CalibrationSetup setup;
  setup.train_detector = true;
  setup.tune_noise = false;
  const Rig rig = Rig::standard();
  const ex::CalibrationOutcome out = ex::run_calibration(rig, setup, 1);
  const CalibParams& p = out.extrinsics.params;
  CHECK((p.anchor.position - rig.anchor.position).norm() < 0.15);
  CHECK(std::abs(p.w_r - out.truth_w_r) < 0.02);
  CHECK(std::abs(p.h_tag - out.truth_h_tag) < 0.10);
  CHECK(out.extrinsics.objective_final <= out.extrinsics.objective_init);

  // RANSAC outliers should largely be the planted NLoS epochs.
  int hit = 0, planted_count = 0, flagged = 0;
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    planted_count += out.planted_nlos[i] ? 1 : 0;
    flagged += out.extrinsics.outliers[i] ? 1 : 0;
    hit += out.planted_nlos[i] && out.extrinsics.outliers[i] ? 1 : 0;
  }
  REQUIRE(planted_count > 0);
  CHECK(static_cast<double>(hit) / planted_count >= 0.8);
  CHECK(static_cast<double>(hit) / flagged > 0.6);
}

TEST_CASE("extrinsic calibration input checks") {
  const Rig rig = Rig::standard();
  CalibParams init{rig.anchor, 0.3, 1.0};
  RansacConfig rc;
  CHECK_THROWS(calibrate_extrinsics({}, rig.intrinsics, rig.extrinsics, init, rc));
}

TEST_CASE("noise tuning") {
  const Walk w = zero_noise_walk(20.0, 4);
  TuneConfig cfg;
  cfg.cmaes.seed = 9;
  cfg.cmaes.max_evaluations = 1500;

  SUBCASE("a slack constraint drives the traces to the lower bound") {
    cfg.d_th = 1e6;
    const TunedNoise t = tune_noise(w.data, planted(w), always_los_gate(), w.rig.intrinsics, w.rig.extrinsics, cfg);
    CHECK(t.r_los.trace() < 3e-2);
    CHECK(t.r_nlos.trace() < 3e-2);
    CHECK(t.violation_fraction == 0.0);
    CHECK(t.penalized_objective <= t.initial_penalized_objective);
    CHECK(t.r_los.isDiagonal());
    CHECK((t.r_los.diagonal().array() >= cfg.lower_variance * (1 - 1e-9)).all());
  }

  SUBCASE("the constraint holds on replay and tuning is deterministic") {
    const NlosGate gate = always_los_gate();
    const TunedNoise t = tune_noise(w.data, planted(w), gate, w.rig.intrinsics, w.rig.extrinsics, cfg);
    CHECK(t.timestamps == 100);
    CHECK(t.violation_fraction <= 0.01);
    const std::vector<double> d =
        constraint_distances(w.data, planted(w), t.apply(NoiseModel::hand_designed()), gate, w.rig.intrinsics,
                             w.rig.extrinsics, cfg.init, cfg.align_tolerance);
    int bad = 0;
    for (double v : d) bad += v >= cfg.d_th ? 1 : 0;
    CHECK(static_cast<double>(bad) / d.size() == doctest::Approx(t.violation_fraction));

    const TunedNoise again = tune_noise(w.data, planted(w), gate, w.rig.intrinsics, w.rig.extrinsics, cfg);
    CHECK(again.r_los == t.r_los);
    CHECK(again.penalized_objective == t.penalized_objective);
  }

  SUBCASE("bad configuration") {
    cfg.lower_variance = -1.0;
    CHECK_THROWS_KIND(tune_noise(w.data, planted(w), always_los_gate(), w.rig.intrinsics, w.rig.extrinsics, cfg),
                      ErrorKind::InvalidArgument);
  }
}
