#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "optin/experiment.hpp"
#include "optin/image.hpp"
#include "optin/io.hpp"
#include "optin/pipeline.hpp"
#include "support.hpp"

using namespace optin;
namespace ex = optin::experiment;

namespace {

FrameDecision frame(double t, std::vector<std::pair<TrackletId, TagId>> kept, std::vector<TrackletId> masked = {}) {
  FrameDecision f;
  f.timestamp = t;
  for (auto [id, tag] : kept) {
    BoxDecision b;
    b.tracklet_id = id;
    b.tag_id = tag;
    b.keep = true;
    f.boxes.push_back(b);
  }
  for (TrackletId id : masked) {
    BoxDecision b;
    b.tracklet_id = id;
    f.boxes.push_back(b);
    f.masked.push_back(id);
  }
  return f;
}

SceneConfig noiseless_scene(int people, std::uint64_t seed) {
  SceneConfig s;
  s.person_count = people;
  s.duration = 30.0;
  s.head_width_sd = 0.0;
  s.tag_lateral_offset = 0.0;
  s.seed = seed;
  return s;
}

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "optin_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("recall counting") {
  // 100 frames; the carrier (tracklet 1) is kept in 86 of them.
  std::vector<TruthLabel> truth;
  std::vector<FrameDecision> decisions;
  for (int k = 0; k < 100; ++k) {
    const double t = 0.1 * k;
    truth.push_back({t, 1, 0, true, 1});
    truth.push_back({t, 2, 1, false, -1});
    if (k < 86) {
      decisions.push_back(frame(t, {{1, 1}}, {2}));
    } else if (k < 90) {
      decisions.push_back(frame(t, {{2, 1}}, {1}));
    } else {
      decisions.push_back(frame(t, {}, {1, 2}));
    }
  }
  const RunMetrics m = evaluate_recall(decisions, truth);
  CHECK(m.recall == doctest::Approx(0.86));
  CHECK(m.carrier_frames == 100);
  CHECK(m.correct_frames == 86);
  CHECK(m.misid_frames == 4);
  CHECK(m.misid_rate == doctest::Approx(0.04));

  // No carrier on screen: recall is undefined.
  std::vector<TruthLabel> others;
  for (const TruthLabel& l : truth) {
    if (!l.carries_tag) others.push_back(l);
  }
  std::vector<FrameDecision> masked_only;
  for (int k = 0; k < 100; ++k) masked_only.push_back(frame(0.1 * k, {}, {2}));
  CHECK(std::isnan(evaluate_recall(masked_only, others).recall));
  CHECK_THROWS_KIND(evaluate_recall(decisions, {}), ErrorKind::MissingGroundTruth);
}

TEST_CASE("recall matches a counting oracle on simulated decisions") {
  const Rig rig = Rig::standard();
  SceneConfig scene;
  scene.person_count = 10;
  scene.tag_count = 2;
  scene.duration = 20.0;
  const ex::SceneRun run = ex::simulate_run(rig, scene, UwbNoiseConfig{}, CameraNoiseConfig{}, 12);
  const ex::MethodSetup m = ex::oracle_method(rig, scene);
  const ReplayResult r = run_replay(run.uwb, run.camera.detections, m.config, m.gate);
  const RunMetrics got = evaluate_recall(r.frames, run.camera.truth);

  int carrier = 0, correct = 0;
  for (const FrameDecision& f : r.frames) {
    for (TagId tag : {1, 2}) {
      bool visible = false, hit = false;
      for (const TruthLabel& l : run.camera.truth) {
        if (l.t != f.timestamp || !l.carries_tag || l.tag_id != tag) continue;
        visible = true;
        for (const BoxDecision& b : f.boxes) hit = hit || (b.keep && b.tag_id == tag && b.tracklet_id == l.tracklet_id);
      }
      carrier += visible ? 1 : 0;
      correct += hit ? 1 : 0;
    }
  }
  CHECK(got.carrier_frames == carrier);
  CHECK(got.correct_frames == correct);
}

TEST_CASE("noiseless closed loop keeps every carrier") {
  const Rig rig = Rig::standard();
  for (std::uint64_t seed : {1, 2, 3}) {
    const SceneConfig scene = noiseless_scene(8, seed);
    const ex::SceneRun run = ex::simulate_run(rig, scene, UwbNoiseConfig::zero(), CameraNoiseConfig::zero(), seed);
    const RunMetrics m = ex::score(run, ex::oracle_method(rig, scene));
    CHECK(m.carrier_frames > 0);
    CHECK(m.recall == 1.0);
  }
}

TEST_CASE("replay determinism and ordering") {
  const Rig rig = Rig::standard();
  SceneConfig scene;
  scene.person_count = 8;
  scene.duration = 25.0;
  const ex::SceneRun run = ex::simulate_run(rig, scene, UwbNoiseConfig{}, CameraNoiseConfig{}, 4);
  const ex::MethodSetup m = ex::oracle_method(rig, scene);
  const ReplayResult a = run_replay(run.uwb, run.camera.detections, m.config, m.gate);
  const ReplayResult b = run_replay(run.uwb, run.camera.detections, m.config, m.gate);
  REQUIRE(a.frames.size() == b.frames.size());
  for (std::size_t k = 0; k < a.frames.size(); ++k) {
    CHECK(io::decision_record(a.frames[k]) == io::decision_record(b.frames[k]));
  }

  // Slightly shuffled streams are re-sorted to the same result.
  std::vector<HeadDetection> dets = run.camera.detections;
  std::swap(dets[10], dets[40]);
  std::vector<UwbSample> uwb = run.uwb;
  std::swap(uwb[3], uwb[4]);
  const ReplayResult c = run_replay(uwb, dets, m.config, m.gate);
  REQUIRE(c.frames.size() == a.frames.size());
  CHECK(evaluate_recall(c.frames, run.camera.truth).correct_frames ==
        evaluate_recall(a.frames, run.camera.truth).correct_frames);

  // A step back of more than one second is rejected.
  std::swap(uwb.front(), uwb.back());
  CHECK_THROWS_KIND(run_replay(uwb, dets, m.config, m.gate), ErrorKind::ClockSkew);

  // Every detection shows up exactly once; kept boxes carry a tag.
  std::size_t boxes = 0;
  for (const FrameDecision& f : a.frames) {
    boxes += f.boxes.size();
    std::size_t masked = 0;
    for (const BoxDecision& box : f.boxes) {
      CHECK(box.keep == (box.tag_id >= 0));
      masked += box.keep ? 0 : 1;
    }
    CHECK(masked == f.masked.size());
  }
  CHECK(boxes == run.camera.detections.size());
}

TEST_CASE("threshold sweep") {
  const Rig rig = Rig::standard();
  SceneConfig scene;
  scene.person_count = 10;
  scene.duration = 20.0;
  const ex::SceneRun run = ex::simulate_run(rig, scene, UwbNoiseConfig{}, CameraNoiseConfig{}, 8);
  const ex::MethodSetup m = ex::oracle_method(rig, scene);
  const std::vector<SweepInput> data{{run.uwb, run.camera.detections, run.camera.truth}};
  const SweepTable t = sweep_threshold(data, m.config, m.gate, {0.0, 0.5, 1.0, 2.0, 4.0});
  REQUIRE(t.points.size() == 5);
  CHECK(t.points[0].metrics.correct_frames == 0);
  CHECK(t.points[0].metrics.misid_frames == 0);
  for (std::size_t k = 1; k < t.points.size(); ++k) {
    CHECK(t.points[k].metrics.recall >= t.points[k - 1].metrics.recall);
    CHECK(t.points[k].metrics.misid_rate >= t.points[k - 1].metrics.misid_rate);
    CHECK(t.points[k].u_th == m.config.u_th);
  }
  const SweepTable tied = sweep_threshold(data, m.config, m.gate, {1.5, 2.0}, true);
  CHECK(tied.points[1].u_th == 2.0);
  CHECK_THROWS_KIND(sweep_threshold(data, m.config, m.gate, {1.0}), ErrorKind::InvalidArgument);

  const std::string csv = sweep_csv(t);
  CHECK(csv.rfind("c_th,u_th,recall,misid_rate", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 6);
}

TEST_CASE("trapezoid auc and pooling") {
  CHECK(trapezoid_auc({{0.0, 0.0}, {1.0, 1.0}}) == doctest::Approx(0.5));
  CHECK(trapezoid_auc({{1.0, 1.0}, {0.0, 1.0}, {0.5, 1.0}}) == doctest::Approx(1.0));
  CHECK(trapezoid_auc({{0.3, 0.7}}) == 0.0);

  RunMetrics a, b;
  a.carrier_frames = 10;
  a.correct_frames = 9;
  a.tag_frames = 10;
  b.carrier_frames = 30;
  b.correct_frames = 15;
  b.tag_frames = 30;
  b.misid_frames = 3;
  const RunMetrics p = pool_metrics({a, b});
  CHECK(p.recall == doctest::Approx(24.0 / 40.0));
  CHECK(p.misid_rate == doctest::Approx(3.0 / 40.0));
}

TEST_CASE("metrics csv") {
  MetricsRow row;
  row.scene_id = "s1";
  row.n_people = 8;
  row.n_tags = 1;
  row.c_th = 1.5;
  row.u_th = 1.5;
  row.metrics.recall = 0.5;
  const std::string csv = metrics_csv({row});
  CHECK(csv == "scene_id,n_people,n_tags,c_th,u_th,recall,misid_rate,mean_latency_ms\ns1,8,1,1.5,1.5,0.5,0,0\n");
}

TEST_CASE("pipeline config validation") {
  PipelineConfig cfg;
  cfg.extrinsics = Rig::standard().extrinsics;
  CHECK_NOTHROW(cfg.validate());
  cfg.window = 0.0;
  CHECK_THROWS_KIND(cfg.validate(), ErrorKind::InvalidArgument);
  cfg.window = 10.0;
  cfg.align_tolerance = -1.0;
  CHECK_THROWS_KIND(cfg.validate(), ErrorKind::InvalidArgument);
}

TEST_CASE("mask composition") {
  Image live(20, 10, 200), bg(20, 10, 10);
  FrameDecision f;
  BoxDecision keep;
  keep.keep = true;
  keep.tag_id = 1;
  keep.box.u = 5.0;
  keep.box.v = 5.0;
  keep.box.width = 4.0;
  keep.box.height = 4.0;
  BoxDecision drop = keep;
  drop.keep = false;
  drop.tag_id = -1;
  drop.box.u = 15.0;
  f.boxes = {keep, drop};

  const Image out = compose_mask(live, bg, f);
  long copied = 0;
  for (int y = 0; y < 10; ++y) {
    for (int x = 0; x < 20; ++x) {
      const bool inside = x >= 3 && x < 7 && y >= 3 && y < 7;
      CHECK(out.pixel(x, y)[0] == (inside ? 200 : 10));
      copied += inside ? 1 : 0;
    }
  }
  CHECK(copied == box_rect(keep.box, 20, 10).area());

  // Boxes hanging off the image are clamped.
  HeadDetection edge;
  edge.u = -1.0;
  edge.v = 9.0;
  edge.width = 6.0;
  edge.height = 6.0;
  const PixelRect r = box_rect(edge, 20, 10);
  CHECK(r.x0 == 0);
  CHECK(r.x1 == 2);
  CHECK(r.y0 == 6);
  CHECK(r.y1 == 10);

  CHECK(compose_mask(live, bg, FrameDecision{}) == bg);
  CHECK_THROWS_KIND(compose_mask(live, Image(5, 5), f), ErrorKind::DimensionMismatch);
}

TEST_CASE("ppm round trip") {
  Image img(3, 2);
  for (std::size_t i = 0; i < img.rgb.size(); ++i) img.rgb[i] = static_cast<std::uint8_t>(i * 13);
  CHECK(decode_ppm(encode_ppm(img)) == img);
  const auto path = scratch("img.ppm");
  write_ppm(path.string(), img);
  CHECK(read_ppm(path.string()) == img);
  CHECK(decode_ppm("P6\n# comment\n3 2\n255\n" + std::string(18, 'x')).width == 3);
  CHECK_THROWS_KIND(decode_ppm("P3\n1 1\n255\n"), ErrorKind::SchemaError);
  CHECK_THROWS_KIND(decode_ppm("P6\n3 2\n255\nabc"), ErrorKind::SchemaError);
}

TEST_CASE("jsonl round trips") {
  UwbSample s;
  s.tag_id = 3;
  s.timestamp = 1.25;
  s.z = {4.0, 0.5, -0.1};
  s.features = {1, 2, 3, 4, 5, 6};
  const UwbSample s2 = io::parse_uwb_record(io::uwb_record(s));
  CHECK(s2.tag_id == 3);
  CHECK(s2.timestamp == 1.25);
  CHECK(s2.z.radial == 4.0);
  CHECK(s2.features == s.features);
  CHECK_FALSE(s2.truth_nlos.has_value());

  HeadDetection d{2.5, 7, 100.0, 200.0, 30.0, 36.0};
  const HeadDetection d2 = io::parse_detection_record(io::detection_record(d));
  CHECK(d2.tracklet_id == 7);
  CHECK(d2.width == 30.0);

  const TruthLabel l{2.5, 7, 4, true, 1};
  const TruthLabel l2 = io::parse_truth_record(io::truth_record(l));
  CHECK(l2.person_id == 4);
  CHECK(l2.carries_tag);
  CHECK(io::parse_truth_record(R"({"t":1,"tracklet_id":2,"person_id":3,"carries_tag":false})").tag_id == -1);

  const FrameDecision f = frame(3.0, {{5, 1}}, {6});
  const FrameDecision f2 = io::parse_decision_record(io::decision_record(f));
  CHECK(io::decision_record(f2) == io::decision_record(f));

  CHECK_THROWS_KIND(io::parse_uwb_record("{not json"), ErrorKind::SchemaError);
  CHECK_THROWS_KIND(io::parse_uwb_record(R"({"tag_id":1,"t":0})"), ErrorKind::SchemaError);
  CHECK_THROWS_KIND(io::parse_detection_record(R"({"tracklet_id":"x","t":0,"u_px":1,"v_px":1,"w_px":1,"h_px":1})"),
                    ErrorKind::SchemaError);

  const auto path = scratch("bad.jsonl");
  {
    std::ofstream os(path);
    os << io::detection_record(d) << "\n" << "{}\n";
  }
  try {
    io::read_detections(path.string());
    FAIL("expected a schema error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::SchemaError);
    CHECK(std::string(e.what()).find('2') != std::string::npos);
  }
  CHECK_THROWS_KIND(io::read_uwb((scratch("none") / "missing.jsonl").string()), ErrorKind::IoError);
}

TEST_CASE("config document round trip") {
  PipelineConfig cfg;
  cfg.extrinsics = Rig::standard().extrinsics;
  cfg.intrinsics = Rig::standard().intrinsics;
  cfg.c_th = 2.25;
  cfg.w_r = 0.31;
  cfg.noise.r_los = NoiseModel::diagonal(0.1, 0.2, 0.3);
  const PipelineConfig back = io::parse_config(io::config_document(cfg));
  CHECK(back.c_th == 2.25);
  CHECK(back.w_r == 0.31);
  CHECK(back.noise.r_los == cfg.noise.r_los);
  CHECK(io::config_document(back) == io::config_document(cfg));

  const PipelineConfig defaults = io::parse_config("{}");
  CHECK(defaults.c_th == PipelineConfig{}.c_th);
  CHECK_THROWS_KIND(io::parse_config(R"({"c_th":"high"})"), ErrorKind::SchemaError);
  CHECK_THROWS_KIND(io::parse_config("[1,2]"), ErrorKind::SchemaError);
}
