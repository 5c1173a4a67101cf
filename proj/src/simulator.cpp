#include "optin/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "optin/error.hpp"

namespace optin {

namespace {

constexpr double kTagExclusion = 0.05;

double cross2(const Eigen::Vector2d& a, const Eigen::Vector2d& b) { return a.x() * b.y() - a.y() * b.x(); }

// Closest distance between segments p1-q1 and p2-q2.
double segment_distance(const Vec3& p1, const Vec3& q1, const Vec3& p2, const Vec3& q2) {
  const Vec3 d1 = q1 - p1;
  const Vec3 d2 = q2 - p2;
  const Vec3 r = p1 - p2;
  const double a = d1.squaredNorm();
  const double e = d2.squaredNorm();
  const double f = d2.dot(r);
  constexpr double kEps = 1e-15;
  double s = 0.0, t = 0.0;
  if (a <= kEps && e <= kEps) return r.norm();
  if (a <= kEps) {
    t = std::clamp(f / e, 0.0, 1.0);
  } else {
    const double c = d1.dot(r);
    if (e <= kEps) {
      s = std::clamp(-c / a, 0.0, 1.0);
    } else {
      const double b = d1.dot(d2);
      const double denom = a * e - b * b;
      s = denom > kEps ? std::clamp((b * f - c * e) / denom, 0.0, 1.0) : 0.0;
      t = (b * s + f) / e;
      if (t < 0.0) {
        t = 0.0;
        s = std::clamp(-c / a, 0.0, 1.0);
      } else if (t > 1.0) {
        t = 1.0;
        s = std::clamp((b - c) / a, 0.0, 1.0);
      }
    }
  }
  return ((p1 + s * d1) - (p2 + t * d2)).norm();
}

Eigen::Vector2d sample_in_polygon(const std::vector<Vec3>& poly, std::mt19937_64& rng) {
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
  for (const Vec3& v : poly) {
    xmin = std::min(xmin, v.x());
    xmax = std::max(xmax, v.x());
    ymin = std::min(ymin, v.y());
    ymax = std::max(ymax, v.y());
  }
  std::uniform_real_distribution<double> ux(xmin, xmax), uy(ymin, ymax);
  while (true) {
    const Eigen::Vector2d p(ux(rng), uy(rng));
    if (point_in_polygon(p, poly)) return p;
  }
}

}  // namespace

double box_iou(const Eigen::Vector4d& a, const Eigen::Vector4d& b) {
  // boxes as (u, v, w, h) centred
  const double ix = std::min(a[0] + a[2] / 2, b[0] + b[2] / 2) - std::max(a[0] - a[2] / 2, b[0] - b[2] / 2);
  const double iy = std::min(a[1] + a[3] / 2, b[1] + b[3] / 2) - std::max(a[1] - a[3] / 2, b[1] - b[3] / 2);
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  const double inter = ix * iy;
  return inter / (a[2] * a[3] + b[2] * b[3] - inter);
}

Rig Rig::standard() {
  Rig rig;
  rig.intrinsics = CameraIntrinsics{1400.0, 1400.0, 960.0, 540.0};
  const Vec3 cam(0.0, -1.5, 2.8);
  rig.extrinsics = CameraExtrinsics::look_at(cam, Vec3(0.0, 4.0, 1.2) - cam);
  rig.anchor.position = Vec3(0.3, -1.3, 2.8);
  rig.anchor.orientation = EulerZYX{kPi / 2.0, 0.3, 0.0};
  rig.area = {Vec3(-2.0, 1.5, 0.0), Vec3(2.0, 1.5, 0.0), Vec3(4.0, 6.5, 0.0), Vec3(-4.0, 6.5, 0.0)};
  return rig;
}

void SceneConfig::validate() const {
  if (area.size() < 3) throw Error(ErrorKind::InvalidPolygon, "area needs at least 3 vertices");
  // Convex and simple: all edge turns share one sign.
  double sign = 0.0;
  const std::size_t n = area.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Vector2d a = area[i].head<2>();
    const Eigen::Vector2d b = area[(i + 1) % n].head<2>();
    const Eigen::Vector2d c = area[(i + 2) % n].head<2>();
    const double z = cross2(b - a, c - b);
    if (std::abs(z) < 1e-12) throw Error(ErrorKind::InvalidPolygon, "degenerate polygon edge");
    if (sign == 0.0) sign = z;
    if (z * sign < 0.0) throw Error(ErrorKind::InvalidPolygon, "area polygon is not convex");
  }
  if (person_count < 1 || tag_count < 1 || tag_count > person_count) {
    throw Error(ErrorKind::InvalidArgument, "need 1 <= tags <= people");
  }
  if (!(duration > 0.0) || !(camera_rate > 0.0) || !(uwb_rate > 0.0)) {
    throw Error(ErrorKind::InvalidArgument, "duration and rates must be positive");
  }
  if (speed_min < 0.0 || speed_max < speed_min) throw Error(ErrorKind::InvalidArgument, "bad speed range");
  if (!(path_step > 0.0)) throw Error(ErrorKind::InvalidArgument, "path step must be positive");
  for (const Vec3& v : tour) {
    if (!point_in_polygon(v.head<2>(), area)) throw Error(ErrorKind::InvalidArgument, "tour point outside the area");
  }
}

bool point_in_polygon(const Eigen::Vector2d& p, const std::vector<Vec3>& polygon) {
  bool inside = false;
  const std::size_t n = polygon.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const double xi = polygon[i].x(), yi = polygon[i].y();
    const double xj = polygon[j].x(), yj = polygon[j].y();
    if ((yi > p.y()) != (yj > p.y()) && p.x() < (xj - xi) * (p.y() - yi) / (yj - yi) + xi) {
      inside = !inside;
    }
  }
  return inside;
}

Eigen::Vector2d PersonTruth::ground_at(double t) const {
  const auto it = std::upper_bound(path.begin(), path.end(), t,
                                   [](double v, const Waypoint& w) { return v < w.t; });
  if (it == path.begin()) return {path.front().x, path.front().y};
  if (it == path.end()) return {path.back().x, path.back().y};
  const Waypoint& a = *std::prev(it);
  const Waypoint& b = *it;
  const double span = b.t - a.t;
  const double s = span > 0.0 ? (t - a.t) / span : 0.0;
  return {a.x + s * (b.x - a.x), a.y + s * (b.y - a.y)};
}

double PersonTruth::heading_at(double t) const {
  const auto it = std::upper_bound(path.begin(), path.end(), t,
                                   [](double v, const Waypoint& w) { return v < w.t; });
  if (it == path.begin()) return path.front().heading;
  return std::prev(it)->heading;
}

double PersonTruth::speed_at(double t) const {
  const auto it = std::upper_bound(path.begin(), path.end(), t,
                                   [](double v, const Waypoint& w) { return v < w.t; });
  if (it == path.begin() || it == path.end()) return 0.0;
  const Waypoint& a = *std::prev(it);
  const Waypoint& b = *it;
  return std::hypot(b.x - a.x, b.y - a.y) / (b.t - a.t);
}

Vec3 PersonTruth::head_at(double t) const {
  const Eigen::Vector2d g = ground_at(t);
  return {g.x(), g.y(), head_height};
}

Vec3 GroundTruth::tag_position(const PersonTruth& p, double t) const {
  const Eigen::Vector2d g = p.ground_at(t);
  const double h = p.heading_at(t);
  const Eigen::Vector2d right(std::sin(h), -std::cos(h));
  const Eigen::Vector2d xy = g + config.tag_lateral_offset * right;
  return {xy.x(), xy.y(), config.tag_height};
}

const PersonTruth* GroundTruth::carrier_of(TagId tag) const {
  for (const PersonTruth& p : people) {
    if (p.carries_tag && p.tag_id == tag) return &p;
  }
  return nullptr;
}

GroundTruth generate_scene(const SceneConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> speed(cfg.speed_min, cfg.speed_max);
  std::uniform_real_distribution<double> head_h(cfg.head_height_min, cfg.head_height_max);
  std::uniform_real_distribution<double> angle(-kPi, kPi);
  std::normal_distribution<double> head_w(cfg.head_width_mean, cfg.head_width_sd);

  GroundTruth gt;
  gt.config = cfg;
  for (int id = 0; id < cfg.person_count; ++id) {
    PersonTruth p;
    p.person_id = id;
    p.head_width = cfg.head_width_sd > 0.0 ? std::clamp(head_w(rng), 0.24, 0.36) : cfg.head_width_mean;
    p.head_height = head_h(rng);
    p.initial_heading = angle(rng);
    const Eigen::Vector2d start = sample_in_polygon(cfg.area, rng);
    p.path.push_back({0.0, start.x(), start.y(), p.initial_heading});
    double t = 0.0;
    double heading = p.initial_heading;
    std::size_t leg = 0;
    double cur_v = 0.0;
    while (t < cfg.duration) {
      const Eigen::Vector2d target =
          cfg.tour.empty() ? sample_in_polygon(cfg.area, rng) : Eigen::Vector2d(cfg.tour[leg++ % cfg.tour.size()].head<2>());
      const double v = speed(rng);
      if (v < 1e-6) {
        // Standing still for the rest of the scene.
        const Waypoint last = p.path.back();
        p.path.push_back({cfg.duration, last.x, last.y, last.heading});
        break;
      }
      if (cfg.turn_rate <= 0.0) {
        Waypoint& last = p.path.back();
        const double dist = std::hypot(target.x() - last.x, target.y() - last.y);
        if (dist > 1e-9) last.heading = std::atan2(target.y() - last.y, target.x() - last.x);
        t += dist / v;
        p.path.push_back({t, target.x(), target.y(), last.heading});
        continue;
      }
      // Walk toward the target in fixed steps. Speed ramps at a bounded acceleration and
      // drops for sharp turns so the lateral acceleration stays bounded as well.
      const double max_turn = cfg.turn_rate * cfg.path_step;
      if (cur_v <= 0.0 || cfg.max_accel <= 0.0) cur_v = v;
      while (t < cfg.duration) {
        Waypoint& last = p.path.back();
        const Eigen::Vector2d here(last.x, last.y);
        const Eigen::Vector2d to_target = target - here;
        const double dist = to_target.norm();
        if (dist <= cur_v * cfg.path_step) {
          if (dist > 1e-9) last.heading = std::atan2(to_target.y(), to_target.x());
          t += dist / cur_v;
          p.path.push_back({t, target.x(), target.y(), last.heading});
          break;
        }
        const double bearing = std::atan2(to_target.y(), to_target.x());
        const double err = wrap_angle(bearing - heading);
        if (cfg.max_accel > 0.0) {
          double want = v;
          if (std::abs(err) > max_turn) want = std::max(cfg.speed_min, std::min(v, cfg.max_accel / cfg.turn_rate));
          const double dv = cfg.max_accel * cfg.path_step;
          cur_v = std::max(cur_v + std::clamp(want - cur_v, -dv, dv), 1e-3);
        }
        // A target inside the turning circle would be orbited forever.
        const double radius = cur_v / cfg.turn_rate;
        if (dist < 2.0 * radius * std::abs(std::sin(err)) + 1e-9) {
          heading = bearing;
        } else {
          heading = wrap_angle(heading + std::clamp(err, -max_turn, max_turn));
        }
        Eigen::Vector2d next = here + cur_v * cfg.path_step * Eigen::Vector2d(std::cos(heading), std::sin(heading));
        if (!point_in_polygon(next, cfg.area)) {
          // Straight at the target never leaves a convex area.
          heading = bearing;
          next = here + cur_v * cfg.path_step * to_target / dist;
        }
        last.heading = heading;
        t += cfg.path_step;
        p.path.push_back({t, next.x(), next.y(), heading});
      }
    }
    gt.people.push_back(std::move(p));
  }

  std::vector<int> order(static_cast<std::size_t>(cfg.person_count));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  for (int k = 0; k < cfg.tag_count; ++k) {
    PersonTruth& p = gt.people[order[k]];
    p.carries_tag = true;
    p.tag_id = k + 1;
  }
  return gt;
}

bool occlusion_test(const Vec3& anchor_pos, const Vec3& tag_pos, const std::vector<BodyCylinder>& bodies) {
  const Vec3 d = tag_pos - anchor_pos;
  const double len = d.norm();
  if (len <= kTagExclusion) return false;
  const Vec3 end = anchor_pos + d * ((len - kTagExclusion) / len);
  for (const BodyCylinder& b : bodies) {
    const Vec3 base(b.center.x(), b.center.y(), 0.0);
    const Vec3 top(b.center.x(), b.center.y(), b.height);
    if (segment_distance(anchor_pos, end, base, top) < b.radius) return true;
  }
  return false;
}

UwbNoiseConfig UwbNoiseConfig::zero() {
  UwbNoiseConfig n;
  n.los_radial_sd = 0.0;
  n.los_angle_sd = 0.0;
  n.nlos_bias_min = 0.0;
  n.nlos_bias_max = 0.0;
  n.nlos_radial_sd = 0.0;
  n.nlos_angle_sd = 0.0;
  n.body_occlusion = false;
  n.forced_nlos_rate = 0.0;
  return n;
}

std::vector<BodyCylinder> bodies_at(const GroundTruth& gt, const PersonTruth& carrier, double t,
                                    const UwbNoiseConfig& noise) {
  std::vector<BodyCylinder> bodies;
  bodies.reserve(gt.people.size());
  for (const PersonTruth& p : gt.people) {
    const Eigen::Vector2d g = p.ground_at(t);
    const double radius = p.person_id == carrier.person_id ? noise.self_body_radius : gt.config.body_radius;
    bodies.push_back({Vec3(g.x(), g.y(), 0.0), radius, p.head_height + noise.body_top_margin});
  }
  return bodies;
}

std::vector<UwbSample> simulate_uwb(const GroundTruth& gt, const AnchorPose& anchor,
                                    const UwbNoiseConfig& noise, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const FeatureModel& fm = noise.features;

  std::vector<const PersonTruth*> carriers;
  for (const PersonTruth& p : gt.people) {
    if (p.carries_tag) carriers.push_back(&p);
  }
  if (carriers.empty()) throw Error(ErrorKind::InvalidArgument, "scene has no tag carrier");
  std::sort(carriers.begin(), carriers.end(),
            [](const PersonTruth* a, const PersonTruth* b) { return a->tag_id < b->tag_id; });

  std::vector<UwbSample> out;
  for (long k = 0;; ++k) {
    const double t = static_cast<double>(k) / gt.config.uwb_rate + noise.epoch_phase;
    if (t >= gt.config.duration) break;
    for (const PersonTruth* c : carriers) {
      const Vec3 tag = gt.tag_position(*c, t);
      PolarMeasurement z = world_to_anchor_polar(tag, anchor);
      bool nlos = noise.body_occlusion && occlusion_test(anchor.position, tag, bodies_at(gt, *c, t, noise));
      if (!nlos && noise.forced_nlos_rate > 0.0 && uni(rng) < noise.forced_nlos_rate) nlos = true;

      if (nlos) {
        const double bias = noise.nlos_bias_min + (noise.nlos_bias_max - noise.nlos_bias_min) * uni(rng);
        z.radial += bias + noise.nlos_radial_sd * unit(rng);
        z.azimuth += noise.nlos_angle_sd * unit(rng);
        z.elevation += noise.nlos_angle_sd * unit(rng);
      } else {
        z.radial += noise.los_radial_sd * unit(rng);
        z.azimuth += noise.los_angle_sd * unit(rng);
        z.elevation += noise.los_angle_sd * unit(rng);
      }
      z.radial = std::max(z.radial, 0.0);
      z.azimuth = wrap_angle(z.azimuth);
      z.elevation = std::clamp(z.elevation, -kPi / 2.0, kPi / 2.0);

      UwbSample s;
      s.tag_id = c->tag_id;
      s.timestamp = t;
      s.z = z;
      s.truth_nlos = nlos;
      const auto& mean = nlos ? fm.nlos_mean : fm.los_mean;
      const auto& sd = nlos ? fm.nlos_sd : fm.los_sd;
      s.features.resize(mean.size());
      for (std::size_t f = 0; f < mean.size(); ++f) s.features[f] = mean[f] + sd[f] * unit(rng);
      out.push_back(std::move(s));
    }
  }
  return out;
}

CameraNoiseConfig CameraNoiseConfig::zero() {
  CameraNoiseConfig n;
  n.pixel_sd = 0.0;
  n.width_sd = 0.0;
  n.occlusion = false;
  n.id_switch_rate = 0.0;
  return n;
}

DetectionSimulation simulate_detections(const GroundTruth& gt, const CameraIntrinsics& intr,
                                        const CameraExtrinsics& extr, const CameraNoiseConfig& noise,
                                        std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const std::size_t n = gt.people.size();
  const double frame_dt = 1.0 / gt.config.camera_rate;
  const double switch_prob = noise.id_switch_rate / gt.config.camera_rate;

  std::vector<TrackletId> current(n, 0);
  std::vector<double> last_seen(n, -std::numeric_limits<double>::infinity());
  TrackletId next_id = 1;

  DetectionSimulation sim;
  struct View {
    bool visible = false;
    double depth = 0.0;
    Eigen::Vector4d box;  // true (u, v, w, h)
  };
  std::vector<View> views(n);

  for (long k = 0;; ++k) {
    const double t = static_cast<double>(k) / gt.config.camera_rate;
    if (t >= gt.config.duration) break;

    for (std::size_t i = 0; i < n; ++i) {
      const PersonTruth& p = gt.people[i];
      double depth = 0.0;
      const Eigen::Vector2d px = project_to_pixels(p.head_at(t), intr, extr, &depth);
      View& v = views[i];
      v.depth = depth;
      v.visible = depth > 0.3 && px.x() >= 0.0 && px.x() < intr.width() && px.y() >= 0.0 &&
                  px.y() < intr.height();
      const double w = intr.fx * p.head_width / depth;
      v.box = Eigen::Vector4d(px.x(), px.y(), w, w * noise.box_aspect);
    }
    std::vector<bool> shown(n, false);
    for (std::size_t i = 0; i < n; ++i) {
      if (!views[i].visible) continue;
      bool hidden = false;
      if (noise.occlusion) {
        for (std::size_t j = 0; j < n && !hidden; ++j) {
          if (j == i || !views[j].visible || views[j].depth >= views[i].depth) continue;
          hidden = box_iou(views[i].box, views[j].box) > noise.occlusion_iou;
        }
      }
      shown[i] = !hidden;
    }

    for (std::size_t i = 0; i < n; ++i) {
      if (!shown[i]) continue;
      const double missing = t - last_seen[i] - frame_dt;
      if (current[i] == 0 || missing >= noise.fragment_gap - 1e-9) current[i] = next_id++;
      last_seen[i] = t;
    }

    // An identity switch hands the person a fresh tracklet id mid-track.
    if (switch_prob > 0.0) {
      for (std::size_t i = 0; i < n; ++i) {
        if (shown[i] && uni(rng) < switch_prob) current[i] = next_id++;
      }
    }

    for (std::size_t i = 0; i < n; ++i) {
      if (!shown[i]) continue;
      const PersonTruth& p = gt.people[i];
      HeadDetection det;
      det.timestamp = t;
      det.tracklet_id = current[i];
      det.u = views[i].box[0] + noise.pixel_sd * unit(rng);
      det.v = views[i].box[1] + noise.pixel_sd * unit(rng);
      det.width = std::max(1.0, views[i].box[2] + noise.width_sd * unit(rng));
      det.height = det.width * noise.box_aspect;
      sim.detections.push_back(det);
      sim.truth.push_back({t, det.tracklet_id, p.person_id, p.carries_tag, p.tag_id});
    }
  }
  return sim;
}

}  // namespace optin
