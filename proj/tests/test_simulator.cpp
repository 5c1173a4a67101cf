#include <doctest.h>

#include <cmath>
#include <map>
#include <random>
#include <set>

#include "optin/simulator.hpp"
#include "support.hpp"

using namespace optin;

namespace {

// Closest approach of a segment to a vertical axis segment, by dense sampling.
double sampled_distance(const Vec3& a, const Vec3& b, const BodyCylinder& body) {
  double best = std::numeric_limits<double>::infinity();
  constexpr int kSteps = 4000;
  for (int i = 0; i <= kSteps; ++i) {
    const Vec3 p = a + (b - a) * (static_cast<double>(i) / kSteps);
    const double z = std::clamp(p.z(), 0.0, body.height);
    best = std::min(best, (p - Vec3(body.center.x(), body.center.y(), z)).norm());
  }
  return best;
}

PersonTruth standing(int id, double x, double y, double heading, double head_height) {
  PersonTruth p;
  p.person_id = id;
  p.head_height = head_height;
  p.initial_heading = heading;
  p.path.push_back({0.0, x, y, heading});
  return p;
}

}  // namespace

TEST_CASE("box iou") {
  const Eigen::Vector4d a(0, 0, 2, 2);
  CHECK(box_iou(a, a) == doctest::Approx(1.0));
  CHECK(box_iou(a, Eigen::Vector4d(10, 10, 2, 2)) == 0.0);
  CHECK(box_iou(a, Eigen::Vector4d(1, 0, 2, 2)) == doctest::Approx(1.0 / 3.0));
  CHECK(box_iou(a, Eigen::Vector4d(0, 0, 1, 1)) == doctest::Approx(0.25));
}

TEST_CASE("scene validation") {
  SceneConfig cfg;
  cfg.area = {Vec3(0, 0, 0), Vec3(4, 0, 0), Vec3(1, 1, 0), Vec3(0, 4, 0)};
  CHECK_THROWS_KIND(cfg.validate(), ErrorKind::InvalidPolygon);
  cfg.area = {Vec3(0, 0, 0), Vec3(1, 0, 0)};
  CHECK_THROWS_KIND(cfg.validate(), ErrorKind::InvalidPolygon);
  cfg = SceneConfig{};
  cfg.tag_count = cfg.person_count + 1;
  CHECK_THROWS_KIND(cfg.validate(), ErrorKind::InvalidArgument);
  cfg = SceneConfig{};
  cfg.speed_min = 2.0;
  cfg.speed_max = 1.0;
  CHECK_THROWS_KIND(cfg.validate(), ErrorKind::InvalidArgument);
  cfg = SceneConfig{};
  cfg.tour = {Vec3(100, 100, 0)};
  CHECK_THROWS_KIND(cfg.validate(), ErrorKind::InvalidArgument);
  CHECK_NOTHROW(SceneConfig{}.validate());
}

TEST_CASE("walkers stay inside the area at bounded speed") {
  SceneConfig cfg;
  cfg.person_count = 23;
  cfg.tag_count = 3;
  cfg.duration = 60.0;
  cfg.seed = 11;
  const GroundTruth gt = generate_scene(cfg);
  REQUIRE(gt.people.size() == 23);
  int carriers = 0;
  std::set<TagId> tags;
  for (const PersonTruth& p : gt.people) {
    if (p.carries_tag) {
      ++carriers;
      tags.insert(p.tag_id);
    }
    CHECK(p.path.front().t == 0.0);
    CHECK(p.path.back().t >= cfg.duration);
    for (double t = 0.0; t < cfg.duration; t += 0.05) {
      CHECK(point_in_polygon(p.ground_at(t), cfg.area));
    }
    for (std::size_t k = 1; k < p.path.size(); ++k) {
      const double dt = p.path[k].t - p.path[k - 1].t;
      CHECK(dt >= 0.0);
      if (dt > 1e-9) {
        const double v = std::hypot(p.path[k].x - p.path[k - 1].x, p.path[k].y - p.path[k - 1].y) / dt;
        CHECK(v <= cfg.speed_max + 1e-9);
      }
    }
  }
  CHECK(carriers == 3);
  CHECK(tags == std::set<TagId>{1, 2, 3});
}

TEST_CASE("straight legs without a turn rate") {
  SceneConfig cfg;
  cfg.turn_rate = 0.0;
  cfg.speed_min = 0.5;
  cfg.speed_max = 1.5;
  cfg.seed = 4;
  const GroundTruth gt = generate_scene(cfg);
  for (const PersonTruth& p : gt.people) {
    for (std::size_t k = 1; k < p.path.size(); ++k) {
      const double dt = p.path[k].t - p.path[k - 1].t;
      if (dt < 1e-9) continue;
      const double v = std::hypot(p.path[k].x - p.path[k - 1].x, p.path[k].y - p.path[k - 1].y) / dt;
      CHECK(v >= 0.5 - 1e-9);
      CHECK(v <= 1.5 + 1e-9);
    }
  }
}

TEST_CASE("tour is visited in order") {
  SceneConfig cfg;
  cfg.person_count = 1;
  cfg.speed_min = 1.0;
  cfg.speed_max = 1.0;
  cfg.tour = {Vec3(-1.0, 3.0, 0.0), Vec3(1.0, 3.0, 0.0), Vec3(0.0, 5.0, 0.0)};
  const GroundTruth gt = generate_scene(cfg);
  std::vector<int> visits;
  for (const Waypoint& w : gt.people.front().path) {
    for (std::size_t k = 0; k < cfg.tour.size(); ++k) {
      if (std::hypot(w.x - cfg.tour[k].x(), w.y - cfg.tour[k].y()) < 1e-12) visits.push_back(static_cast<int>(k));
    }
  }
  REQUIRE(visits.size() >= 6);
  for (std::size_t i = 0; i < visits.size(); ++i) CHECK(visits[i] == static_cast<int>(i % 3));
}

TEST_CASE("zero speed stands still") {
  SceneConfig cfg;
  cfg.speed_min = 0.0;
  cfg.speed_max = 0.0;
  const GroundTruth gt = generate_scene(cfg);
  for (const PersonTruth& p : gt.people) {
    CHECK((p.ground_at(0.0) - p.ground_at(cfg.duration - 1.0)).norm() == 0.0);
    CHECK(p.speed_at(10.0) == 0.0);
  }
}

TEST_CASE("scenes are deterministic") {
  SceneConfig cfg;
  cfg.seed = 99;
  const GroundTruth a = generate_scene(cfg), b = generate_scene(cfg);
  REQUIRE(a.people.size() == b.people.size());
  for (std::size_t i = 0; i < a.people.size(); ++i) {
    REQUIRE(a.people[i].path.size() == b.people[i].path.size());
    for (std::size_t k = 0; k < a.people[i].path.size(); ++k) {
      CHECK(a.people[i].path[k].x == b.people[i].path[k].x);
      CHECK(a.people[i].path[k].t == b.people[i].path[k].t);
    }
  }
}

TEST_CASE("occlusion test") {
  const Vec3 anchor(0, 0, 3), tag(4, 0, 1);
  // The ray passes x = 2 at z = 2, 0.2 m above a 1.8 m axis.
  CHECK(occlusion_test(anchor, tag, {{Vec3(2, 0, 0), 0.25, 1.8}}));
  CHECK_FALSE(occlusion_test(anchor, tag, {{Vec3(2, 0, 0), 0.15, 1.8}}));
  CHECK_FALSE(occlusion_test(anchor, tag, {{Vec3(2, 1, 0), 0.25, 1.8}}));
  CHECK_FALSE(occlusion_test(anchor, tag, {}));
  // A body right at the tag is ignored inside the exclusion ball only.
  CHECK_FALSE(occlusion_test(anchor, tag, {{Vec3(4.0, 0.5, 0), 0.02, 1.8}}));

  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-3.0, 3.0), h(0.5, 2.0);
  int checked = 0;
  for (int trial = 0; trial < 400; ++trial) {
    const Vec3 a(u(rng), u(rng), 2.8), b(u(rng), u(rng), 1.1);
    const BodyCylinder body{Vec3(u(rng), u(rng), 0.0), 0.25, h(rng)};
    const double len = (b - a).norm();
    const Vec3 end = a + (b - a) * ((len - 0.05) / len);
    const double d = sampled_distance(a, end, body);
    if (std::abs(d - body.radius) < 5e-3) continue;
    CHECK(occlusion_test(a, b, {body}) == (d < body.radius));
    ++checked;
  }
  CHECK(checked > 350);
}

TEST_CASE("zero-noise uwb is the exact polar measurement") {
  const Rig rig = Rig::standard();
  SceneConfig cfg;
  cfg.tag_count = 2;
  cfg.duration = 20.0;
  const GroundTruth gt = generate_scene(cfg);
  const std::vector<UwbSample> s = simulate_uwb(gt, rig.anchor, UwbNoiseConfig::zero(), 3);
  REQUIRE(s.size() == 2 * 100);
  for (std::size_t i = 0; i < s.size(); ++i) {
    const PersonTruth* c = gt.carrier_of(s[i].tag_id);
    REQUIRE(c != nullptr);
    const PolarMeasurement z = world_to_anchor_polar(gt.tag_position(*c, s[i].timestamp), rig.anchor);
    CHECK(s[i].z.radial == doctest::Approx(z.radial).epsilon(1e-12));
    CHECK(s[i].z.azimuth == doctest::Approx(z.azimuth).epsilon(1e-12));
    CHECK(s[i].z.elevation == doctest::Approx(z.elevation).epsilon(1e-12));
    CHECK(s[i].truth_nlos == false);
    CHECK(s[i].features.size() == 6);
    if (i > 0) {
      CHECK(s[i].timestamp >= s[i - 1].timestamp);
      if (s[i].timestamp == s[i - 1].timestamp) CHECK(s[i].tag_id > s[i - 1].tag_id);
    }
  }
}

TEST_CASE("a body between anchor and tag forces nlos") {
  const Rig rig = Rig::standard();
  GroundTruth gt;
  gt.config.duration = 10.0;
  PersonTruth carrier = standing(0, 0.0, 5.0, -kPi / 2.0, 1.7);
  carrier.carries_tag = true;
  carrier.tag_id = 1;
  gt.people = {carrier};

  UwbNoiseConfig noise;
  const auto clear = simulate_uwb(gt, rig.anchor, noise, 1);
  for (const UwbSample& s : clear) CHECK(s.truth_nlos == false);

  // Blocker 90% of the way along the ray, its axis top above the ray there.
  const Vec3 tag = gt.tag_position(gt.people[0], 0.0);
  const Vec3 at = rig.anchor.position + 0.9 * (tag - rig.anchor.position);
  gt.people.push_back(standing(1, at.x(), at.y(), 0.0, at.z() + 0.2 - noise.body_top_margin));
  const auto blocked = simulate_uwb(gt, rig.anchor, noise, 1);
  REQUIRE(blocked.size() == 50);
  for (const UwbSample& s : blocked) CHECK(s.truth_nlos == true);
  double bias = 0.0;
  const double exact = world_to_anchor_polar(tag, rig.anchor).radial;
  for (const UwbSample& s : blocked) bias += s.z.radial - exact;
  CHECK(bias / blocked.size() > noise.nlos_bias_min);
}

TEST_CASE("nlos flags match the occlusion geometry") {
  const Rig rig = Rig::standard();
  SceneConfig cfg;
  cfg.person_count = 15;
  cfg.tag_count = 2;
  cfg.seed = 21;
  const GroundTruth gt = generate_scene(cfg);
  const UwbNoiseConfig noise;
  const auto samples = simulate_uwb(gt, rig.anchor, noise, 5);
  int nlos = 0;
  for (const UwbSample& s : samples) {
    const PersonTruth& c = *gt.carrier_of(s.tag_id);
    const Vec3 tag = gt.tag_position(c, s.timestamp);
    const bool expect = occlusion_test(rig.anchor.position, tag, bodies_at(gt, c, s.timestamp, noise));
    CHECK(s.truth_nlos == expect);
    nlos += expect ? 1 : 0;
  }
  CHECK(nlos > 0);
  CHECK(nlos < static_cast<int>(samples.size()));

  UwbNoiseConfig forced = noise;
  forced.body_occlusion = false;
  forced.forced_nlos_rate = 0.3;
  const auto f = simulate_uwb(gt, rig.anchor, forced, 5);
  int count = 0;
  for (const UwbSample& s : f) count += *s.truth_nlos ? 1 : 0;
  CHECK(static_cast<double>(count) / f.size() == doctest::Approx(0.3).epsilon(0.15));
}

TEST_CASE("detections") {
  const Rig rig = Rig::standard();
  SceneConfig cfg;
  cfg.person_count = 12;
  cfg.duration = 30.0;
  cfg.seed = 6;
  const GroundTruth gt = generate_scene(cfg);

  SUBCASE("zero noise projects the heads exactly") {
    const auto sim = simulate_detections(gt, rig.intrinsics, rig.extrinsics, CameraNoiseConfig::zero(), 1);
    REQUIRE(sim.detections.size() == sim.truth.size());
    REQUIRE(!sim.detections.empty());
    std::map<TrackletId, int> owner;
    for (std::size_t i = 0; i < sim.detections.size(); ++i) {
      const HeadDetection& d = sim.detections[i];
      const double frame = d.timestamp * cfg.camera_rate;
      CHECK(std::abs(frame - std::round(frame)) < 1e-9);
      const PersonTruth& p = gt.people[sim.truth[i].person_id];
      double depth = 0.0;
      const Eigen::Vector2d px = project_to_pixels(p.head_at(d.timestamp), rig.intrinsics, rig.extrinsics, &depth);
      CHECK(d.u == doctest::Approx(px.x()));
      CHECK(d.v == doctest::Approx(px.y()));
      CHECK(d.width == doctest::Approx(rig.intrinsics.fx * p.head_width / depth));
      const auto [it, fresh] = owner.emplace(d.tracklet_id, sim.truth[i].person_id);
      CHECK(it->second == sim.truth[i].person_id);
      CHECK(sim.truth[i].carries_tag == p.carries_tag);
    }
  }

  SUBCASE("occlusion and switches fragment tracks but never mix people") {
    const auto clean = simulate_detections(gt, rig.intrinsics, rig.extrinsics, CameraNoiseConfig::zero(), 1);
    const auto sim = simulate_detections(gt, rig.intrinsics, rig.extrinsics, CameraNoiseConfig{}, 1);
    CHECK(sim.detections.size() < clean.detections.size());
    std::map<TrackletId, int> owner;
    std::set<TrackletId> clean_ids;
    for (const TruthLabel& l : clean.truth) clean_ids.insert(l.tracklet_id);
    for (const TruthLabel& l : sim.truth) {
      const auto [it, fresh] = owner.emplace(l.tracklet_id, l.person_id);
      CHECK(it->second == l.person_id);
    }
    CHECK(owner.size() > clean_ids.size());

    const auto again = simulate_detections(gt, rig.intrinsics, rig.extrinsics, CameraNoiseConfig{}, 1);
    REQUIRE(again.detections.size() == sim.detections.size());
    for (std::size_t i = 0; i < sim.detections.size(); ++i) {
      CHECK(again.detections[i].u == sim.detections[i].u);
      CHECK(again.detections[i].tracklet_id == sim.detections[i].tracklet_id);
    }
  }

  SUBCASE("no kept box overlaps a nearer one beyond the threshold") {
    const CameraNoiseConfig noise = [] {
      CameraNoiseConfig n = CameraNoiseConfig::zero();
      n.occlusion = true;
      return n;
    }();
    const auto sim = simulate_detections(gt, rig.intrinsics, rig.extrinsics, noise, 1);
    std::map<double, std::vector<std::size_t>> frames;
    for (std::size_t i = 0; i < sim.detections.size(); ++i) frames[sim.detections[i].timestamp].push_back(i);
    for (const auto& [t, idx] : frames) {
      for (std::size_t a : idx) {
        for (std::size_t b : idx) {
          if (a == b) continue;
          const HeadDetection& da = sim.detections[a];
          const HeadDetection& db = sim.detections[b];
          double depth_a = 0.0, depth_b = 0.0;
          project_to_pixels(gt.people[sim.truth[a].person_id].head_at(t), rig.intrinsics, rig.extrinsics, &depth_a);
          project_to_pixels(gt.people[sim.truth[b].person_id].head_at(t), rig.intrinsics, rig.extrinsics, &depth_b);
          // Only the farther box can be hidden.
          if (depth_a <= depth_b) continue;
          CHECK(box_iou({da.u, da.v, da.width, da.height}, {db.u, db.v, db.width, db.height}) <=
                noise.occlusion_iou + 1e-12);
        }
      }
    }
  }
}

TEST_CASE("one noiseless walker gives one tracklet on the true ground points") {
  const Rig rig = Rig::standard();
  SceneConfig cfg;
  cfg.person_count = 1;
  cfg.duration = 30.0;
  cfg.head_width_sd = 0.0;
  cfg.seed = 13;
  const GroundTruth gt = generate_scene(cfg);
  const auto sim = simulate_detections(gt, rig.intrinsics, rig.extrinsics, CameraNoiseConfig::zero(), 1);
  REQUIRE(!sim.detections.empty());
  const PersonTruth& p = gt.people.front();
  for (const HeadDetection& d : sim.detections) {
    CHECK(d.tracklet_id == sim.detections.front().tracklet_id);
    const Vec3 w = head_box_to_world(d, rig.intrinsics, rig.extrinsics, p.head_width);
    CHECK((w - p.head_at(d.timestamp)).norm() < 1e-6);
  }
}

TEST_CASE("crossing in front of a standing person fragments the hidden track") {
  const Rig rig = Rig::standard();
  GroundTruth gt;
  gt.config.duration = 32.0;
  // A slow walk (0.1 m/s) just in front of the standing person.
  PersonTruth walker = standing(0, -1.5, 2.8, 0.0, 1.70);
  walker.path.push_back({30.0, 1.5, 2.8, 0.0});
  gt.people = {walker, standing(1, 0.0, 3.0, 0.0, 1.70)};
  gt.people[0].carries_tag = true;
  gt.people[0].tag_id = 1;
  const auto sim = simulate_detections(gt, rig.intrinsics, rig.extrinsics, [] {
    CameraNoiseConfig n = CameraNoiseConfig::zero();
    n.occlusion = true;
    return n;
  }(), 1);
  std::set<TrackletId> ids;
  for (const TruthLabel& l : sim.truth) {
    if (l.person_id == 1) ids.insert(l.tracklet_id);
  }
  CHECK(ids.size() >= 2);
}
