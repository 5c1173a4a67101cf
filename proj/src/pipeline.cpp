#include "optin/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "optin/error.hpp"

namespace optin {

namespace {

constexpr double kMaxSkew = 1.0;

template <class T, class Key>
void order_stream(std::vector<T>& v, Key key, const char* name) {
  double latest = -std::numeric_limits<double>::infinity();
  bool sorted = true;
  for (const T& e : v) {
    const double t = key(e);
    if (!std::isfinite(t)) throw Error(ErrorKind::SchemaError, std::string(name) + " timestamp is not finite");
    if (t < latest - kMaxSkew) {
      throw Error(ErrorKind::ClockSkew, std::string(name) + " stream steps back by more than 1 s");
    }
    if (t < latest) sorted = false;
    latest = std::max(latest, t);
  }
  if (!sorted) std::stable_sort(v.begin(), v.end(), [&](const T& a, const T& b) { return key(a) < key(b); });
}

bool label_is_carrier(const TruthLabel& l, TagId tag) {
  return l.carries_tag && (tag < 0 || l.tag_id < 0 || l.tag_id == tag);
}

}  // namespace

void PipelineConfig::validate() const {
  if (!(window > 0.0) || !(align_tolerance > 0.0) || !(c_th >= 0.0) || !(u_th > 0.0) || !(d_th > 0.0) ||
      !(w_r > 0.0) || !(ransac_threshold > 0.0)) {
    throw Error(ErrorKind::InvalidArgument, "pipeline thresholds must be positive");
  }
  if (!(intrinsics.fx > 0.0) || !(intrinsics.fy > 0.0)) {
    throw Error(ErrorKind::InvalidArgument, "focal lengths must be positive");
  }
  extrinsics.validate();
}

std::vector<Tracklet> build_tracklets(const std::vector<HeadDetection>& detections, const CameraIntrinsics& intr,
                                      const CameraExtrinsics& extr, double w_r, double h_tag) {
  std::map<TrackletId, Tracklet> by_id;
  for (const HeadDetection& d : detections) {
    Tracklet& tr = by_id[d.tracklet_id];
    tr.id = d.tracklet_id;
    if (!tr.points.empty() && d.timestamp <= tr.points.back().timestamp + kFrameTimeEpsilon) continue;
    Vec3 p = head_box_to_world(d, intr, extr, w_r);
    p.z() = h_tag;
    tr.points.push_back({d.timestamp, p});
  }
  std::vector<Tracklet> out;
  out.reserve(by_id.size());
  for (auto& [id, tr] : by_id) out.push_back(std::move(tr));
  return out;
}

ReplayResult run_replay(const std::vector<UwbSample>& uwb, const std::vector<HeadDetection>& detections,
                        const PipelineConfig& cfg, const NlosGate& gate) {
  cfg.validate();
  std::vector<UwbSample> samples = uwb;
  std::vector<HeadDetection> dets = detections;
  order_stream(samples, [](const UwbSample& s) { return s.timestamp; }, "uwb");
  order_stream(dets, [](const HeadDetection& d) { return d.timestamp; }, "tracklet");

  ReplayResult res;
  std::map<TagId, TagTracker> trackers;
  for (const UwbSample& s : samples) {
    if (!trackers.count(s.tag_id)) {
      trackers.emplace(s.tag_id, TagTracker(s.tag_id, cfg.anchor, cfg.noise, gate, InitPolicy{}, cfg.u_th));
    }
  }
  if (dets.empty()) {
    for (auto& [id, tr] : trackers) res.trajectories.push_back(tr.trajectory());
    return res;
  }

  const std::vector<Tracklet> all_tracklets = build_tracklets(dets, cfg.intrinsics, cfg.extrinsics, cfg.w_r, cfg.h_tag);
  const double t_start = dets.front().timestamp;
  const auto window_of = [&](double t) { return static_cast<long>(std::floor((t - t_start) / cfg.window)); };

  std::size_t next_sample = 0;
  std::size_t d = 0;
  double latency_sum = 0.0;
  int frame_count = 0;
  while (d < dets.size()) {
    const auto clock_start = std::chrono::steady_clock::now();
    const long w = window_of(dets[d].timestamp);
    const double t0 = t_start + static_cast<double>(w) * cfg.window;
    const double t1 = t0 + cfg.window;
    std::size_t d_end = d;
    while (d_end < dets.size() && window_of(dets[d_end].timestamp) == w) ++d_end;

    while (next_sample < samples.size() && samples[next_sample].timestamp < t1) {
      trackers.at(samples[next_sample].tag_id).push(samples[next_sample]);
      ++next_sample;
    }
    std::vector<TagTrajectory> trajs;
    std::vector<TagId> tag_ids;
    for (const auto& [id, tr] : trackers) {
      trajs.push_back(tr.trajectory());
      tag_ids.push_back(id);
    }
    const std::vector<Tracklet> clipped = clip_tracklets(all_tracklets, t0, t1);
    std::map<TrackletId, TagId> assigned;
    if (!trajs.empty() && !clipped.empty()) {
      const CostMatrix costs = compute_cost_matrix(trajs, clipped, cfg.align_tolerance);
      const AssignmentResult a = solve_assignment(costs, overlap_matrix(clipped), cfg.c_th);
      for (Eigen::Index i = 0; i < a.x.rows(); ++i) {
        for (Eigen::Index j = 0; j < a.x.cols(); ++j) {
          if (a.x(i, j)) assigned[clipped[static_cast<std::size_t>(j)].id] = tag_ids[static_cast<std::size_t>(i)];
        }
      }
    }

    int frames_in_window = 0;
    for (std::size_t k = d; k < d_end;) {
      FrameDecision f;
      f.timestamp = dets[k].timestamp;
      std::set<TrackletId> seen;
      while (k < d_end && dets[k].timestamp <= f.timestamp + kFrameTimeEpsilon) {
        const HeadDetection& det = dets[k++];
        if (!seen.insert(det.tracklet_id).second) continue;
        BoxDecision b;
        b.tracklet_id = det.tracklet_id;
        b.box = det;
        const auto it = assigned.find(det.tracklet_id);
        if (it != assigned.end()) {
          b.tag_id = it->second;
          b.keep = true;
        } else {
          f.masked.push_back(det.tracklet_id);
        }
        f.boxes.push_back(b);
      }
      res.frames.push_back(std::move(f));
      ++frames_in_window;
    }
    const double elapsed_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - clock_start).count();
    const double per_frame = elapsed_ms / frames_in_window;
    latency_sum += elapsed_ms;
    frame_count += frames_in_window;
    res.metrics.max_latency_ms = std::max(res.metrics.max_latency_ms, per_frame);
    d = d_end;
  }
  for (; next_sample < samples.size(); ++next_sample) trackers.at(samples[next_sample].tag_id).push(samples[next_sample]);
  for (auto& [id, tr] : trackers) res.trajectories.push_back(tr.trajectory());
  res.metrics.mean_latency_ms = frame_count > 0 ? latency_sum / frame_count : 0.0;
  res.metrics.recall = std::numeric_limits<double>::quiet_NaN();
  return res;
}

RunMetrics evaluate_recall(const std::vector<FrameDecision>& decisions, const std::vector<TruthLabel>& truth) {
  if (truth.empty()) throw Error(ErrorKind::MissingGroundTruth, "no ground-truth labels");
  std::map<std::pair<double, TrackletId>, const TruthLabel*> by_key;
  std::map<double, std::vector<const TruthLabel*>> by_time;
  std::set<TagId> tags;
  bool anonymous_carrier = false;
  for (const TruthLabel& l : truth) {
    by_key.emplace(std::make_pair(l.t, l.tracklet_id), &l);
    by_time[l.t].push_back(&l);
    if (l.carries_tag) {
      if (l.tag_id >= 0) {
        tags.insert(l.tag_id);
      } else {
        anonymous_carrier = true;
      }
    }
  }
  if (tags.empty() && anonymous_carrier) tags.insert(-1);

  RunMetrics m;
  for (const FrameDecision& f : decisions) {
    const auto labels_it = by_time.find(f.timestamp);
    if (labels_it == by_time.end()) {
      throw Error(ErrorKind::MissingGroundTruth, "no labels for a decision frame");
    }
    std::vector<const TruthLabel*> box_labels;
    for (const BoxDecision& b : f.boxes) {
      const auto it = by_key.find({f.timestamp, b.tracklet_id});
      if (it == by_key.end()) throw Error(ErrorKind::MissingGroundTruth, "unlabelled tracklet in a decision frame");
      box_labels.push_back(it->second);
    }
    for (TagId tag : tags) {
      ++m.tag_frames;
      bool visible = false;
      for (const TruthLabel* l : labels_it->second) visible = visible || label_is_carrier(*l, tag);
      bool correct = false;
      bool wrong = false;
      for (std::size_t k = 0; k < f.boxes.size(); ++k) {
        const BoxDecision& b = f.boxes[k];
        if (!b.keep || !(tag < 0 || b.tag_id == tag)) continue;
        if (label_is_carrier(*box_labels[k], tag)) {
          correct = true;
        } else {
          wrong = true;
        }
      }
      if (visible) {
        ++m.carrier_frames;
        if (correct) ++m.correct_frames;
      }
      if (wrong) ++m.misid_frames;
    }
  }
  m.recall = m.carrier_frames > 0 ? static_cast<double>(m.correct_frames) / m.carrier_frames
                                  : std::numeric_limits<double>::quiet_NaN();
  m.misid_rate = m.tag_frames > 0 ? static_cast<double>(m.misid_frames) / m.tag_frames : 0.0;
  return m;
}

RunMetrics pool_metrics(const std::vector<RunMetrics>& runs) {
  RunMetrics m;
  double latency_weighted = 0.0;
  for (const RunMetrics& r : runs) {
    m.carrier_frames += r.carrier_frames;
    m.correct_frames += r.correct_frames;
    m.misid_frames += r.misid_frames;
    m.tag_frames += r.tag_frames;
    latency_weighted += r.mean_latency_ms * r.tag_frames;
    m.max_latency_ms = std::max(m.max_latency_ms, r.max_latency_ms);
  }
  m.recall = m.carrier_frames > 0 ? static_cast<double>(m.correct_frames) / m.carrier_frames
                                  : std::numeric_limits<double>::quiet_NaN();
  m.misid_rate = m.tag_frames > 0 ? static_cast<double>(m.misid_frames) / m.tag_frames : 0.0;
  m.mean_latency_ms = m.tag_frames > 0 ? latency_weighted / m.tag_frames : 0.0;
  return m;
}

double trapezoid_auc(std::vector<std::pair<double, double>> xy) {
  std::stable_sort(xy.begin(), xy.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  double area = 0.0;
  for (std::size_t k = 1; k < xy.size(); ++k) {
    area += (xy[k].first - xy[k - 1].first) * 0.5 * (xy[k].second + xy[k - 1].second);
  }
  return area;
}

SweepTable sweep_threshold(const std::vector<SweepInput>& datasets, const PipelineConfig& cfg, const NlosGate& gate,
                           const std::vector<double>& c_values, bool tie_uncertainty) {
  if (c_values.size() < 2) throw Error(ErrorKind::InvalidArgument, "a sweep needs at least two thresholds");
  SweepTable table;
  for (double c : c_values) {
    PipelineConfig run = cfg;
    run.c_th = c;
    if (tie_uncertainty) run.u_th = c;
    std::vector<RunMetrics> per_dataset;
    for (const SweepInput& in : datasets) {
      const ReplayResult r = run_replay(in.uwb, in.detections, run, gate);
      RunMetrics m = evaluate_recall(r.frames, in.truth);
      m.mean_latency_ms = r.metrics.mean_latency_ms;
      m.max_latency_ms = r.metrics.max_latency_ms;
      per_dataset.push_back(m);
    }
    table.points.push_back({c, run.u_th, pool_metrics(per_dataset)});
  }
  std::vector<std::pair<double, double>> xy;
  for (const SweepPoint& p : table.points) {
    xy.emplace_back(p.metrics.misid_rate, std::isnan(p.metrics.recall) ? 0.0 : p.metrics.recall);
  }
  table.auc = trapezoid_auc(std::move(xy));
  return table;
}

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::ostringstream os;
  os.precision(12);
  os << "scene_id,n_people,n_tags,c_th,u_th,recall,misid_rate,mean_latency_ms\n";
  for (const MetricsRow& r : rows) {
    os << r.scene_id << ',' << r.n_people << ',' << r.n_tags << ',' << r.c_th << ',' << r.u_th << ','
       << r.metrics.recall << ',' << r.metrics.misid_rate << ',' << r.metrics.mean_latency_ms << '\n';
  }
  return os.str();
}

std::string sweep_csv(const SweepTable& table) {
  std::ostringstream os;
  os.precision(12);
  os << "c_th,u_th,recall,misid_rate,carrier_frames,correct_frames,misid_frames\n";
  for (const SweepPoint& p : table.points) {
    os << p.c_th << ',' << p.u_th << ',' << p.metrics.recall << ',' << p.metrics.misid_rate << ','
       << p.metrics.carrier_frames << ',' << p.metrics.correct_frames << ',' << p.metrics.misid_frames << '\n';
  }
  return os.str();
}

}  // namespace optin
