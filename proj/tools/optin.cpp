// Command-line front end: simulate, calibrate, train-nlos, track, match,
// replay, evaluate, sweep, mask. Exit 0 on success, 2 on schema errors, 1 on
// any other failure.
#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "optin/calibration.hpp"
#include "optin/error.hpp"
#include "optin/experiment.hpp"
#include "optin/image.hpp"
#include "optin/io.hpp"
#include "optin/matching.hpp"
#include "optin/nlos.hpp"
#include "optin/pipeline.hpp"
#include "optin/simulator.hpp"

using namespace optin;
using json = nlohmann::ordered_json;

namespace {

// Config file plus command-line overrides. `--set a.b=value` takes a JSON value
// (bare words are read as strings); the named flags win over --set.
struct ConfigArgs {
  std::string path;
  std::vector<std::string> sets;
  std::map<std::string, double> flags;

  void add(CLI::App* cmd) {
    cmd->add_option("-c,--config", path, "pipeline config (JSON)");
    cmd->add_option("--set", sets, "override a config key, e.g. --set noise.q_velocity_var=2");
    for (const char* k : {"c_th", "u_th", "d_th", "window", "w_r", "h_tag", "align_tolerance", "ransac_threshold"}) {
      std::string flag = std::string("--") + k;
      for (char& ch : flag) ch = ch == '_' ? '-' : ch;
      cmd->add_option_function<double>(flag, [this, k](double v) { flags[k] = v; }, std::string("override ") + k);
    }
    cmd->add_option_function<std::uint64_t>("--seed", [this](std::uint64_t v) { flags["seed"] = static_cast<double>(v); },
                                            "override seed");
  }

  PipelineConfig load() const {
    json doc = json::parse(io::config_document(path.empty() ? PipelineConfig{} : io::read_config(path)));
    for (const std::string& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos || eq == 0) throw Error(ErrorKind::SchemaError, "--set expects key=value: " + s);
      json value = json::parse(s.substr(eq + 1), nullptr, false);
      if (value.is_discarded()) value = s.substr(eq + 1);
      json* node = &doc;
      std::stringstream keys(s.substr(0, eq));
      std::string key;
      while (std::getline(keys, key, '.')) node = &(*node)[key];
      *node = value;
    }
    for (const auto& [k, v] : flags) {
      if (k == "seed") {
        doc[k] = static_cast<std::uint64_t>(v);
      } else {
        doc[k] = v;
      }
    }
    PipelineConfig cfg = io::parse_config(doc.dump());
    cfg.validate();
    return cfg;
  }
};

NlosGate load_gate(const std::string& detector_path) {
  if (detector_path.empty()) return always_los_gate();
  return gate_from(NlosDetectorModel::load(detector_path));
}

std::string join(const std::string& dir, const std::string& name) {
  if (dir.empty() || dir.back() == '/') return dir + name;
  return dir + "/" + name;
}

json metrics_json(const RunMetrics& m) {
  json j;
  j["recall"] = std::isnan(m.recall) ? json(nullptr) : json(m.recall);
  j["carrier_frames"] = m.carrier_frames;
  j["correct_frames"] = m.correct_frames;
  j["misid_frames"] = m.misid_frames;
  j["tag_frames"] = m.tag_frames;
  j["misid_rate"] = m.misid_rate;
  j["mean_latency_ms"] = m.mean_latency_ms;
  j["max_latency_ms"] = m.max_latency_ms;
  return j;
}

int count_tags(const std::vector<UwbSample>& uwb) {
  std::vector<TagId> ids;
  for (const UwbSample& s : uwb) {
    if (std::find(ids.begin(), ids.end(), s.tag_id) == ids.end()) ids.push_back(s.tag_id);
  }
  return static_cast<int>(ids.size());
}

int count_people(const std::vector<TruthLabel>& truth) {
  std::vector<int> ids;
  for (const TruthLabel& l : truth) {
    if (std::find(ids.begin(), ids.end(), l.person_id) == ids.end()) ids.push_back(l.person_id);
  }
  return static_cast<int>(ids.size());
}

std::vector<TagTrajectory> track_all(const std::vector<UwbSample>& uwb, const PipelineConfig& cfg,
                                     const NlosGate& gate) {
  std::map<TagId, std::vector<UwbSample>> by_tag;
  for (const UwbSample& s : uwb) by_tag[s.tag_id].push_back(s);
  std::vector<TagTrajectory> out;
  for (const auto& [id, samples] : by_tag) {
    out.push_back(track_tag(samples, cfg.anchor, cfg.noise, gate, InitPolicy{}, cfg.u_th));
  }
  return out;
}

// ---------------------------------------------------------------- simulate

struct SimulateArgs {
  std::string out_dir = ".";
  int people = 8;
  int tags = 1;
  double duration = 60.0;
  std::uint64_t seed = 1;
  bool calibration_walk = false;
  bool noiseless = false;
};

void run_simulate(const SimulateArgs& a) {
  const Rig rig = Rig::standard();
  experiment::SceneRun run;
  PipelineConfig truth_cfg;
  truth_cfg.intrinsics = rig.intrinsics;
  truth_cfg.extrinsics = rig.extrinsics;
  truth_cfg.anchor = rig.anchor;
  truth_cfg.seed = a.seed;
  if (a.calibration_walk) {
    const experiment::CalibrationSetup setup;
    SceneConfig scene;
    scene.area = rig.area;
    scene.person_count = 1;
    scene.tag_count = 1;
    scene.duration = a.duration;
    scene.speed_min = setup.speed_min;
    scene.speed_max = setup.speed_max;
    scene.tour = experiment::calibration_tour(rig.area, setup.tour_inset);
    run = experiment::simulate_run(rig, scene, setup.uwb_noise, setup.camera_noise, a.seed);
    truth_cfg.w_r = run.truth.people.front().head_width;
    truth_cfg.h_tag = scene.tag_height;
    // What an installer would type in: the pose off by a seeded error.
    PipelineConfig init_cfg = truth_cfg;
    init_cfg.set_calib(experiment::perturbed_init(rig.anchor, setup.init, experiment::derive_seed(a.seed, 3)));
    io::write_config(join(a.out_dir, "init_config.json"), init_cfg);
  } else {
    SceneConfig scene;
    scene.area = rig.area;
    scene.person_count = a.people;
    scene.tag_count = a.tags;
    scene.duration = a.duration;
    if (a.noiseless) {
      scene.head_width_sd = 0.0;
      scene.tag_lateral_offset = 0.0;
    }
    run = experiment::simulate_run(rig, scene, a.noiseless ? UwbNoiseConfig::zero() : UwbNoiseConfig{},
                                   a.noiseless ? CameraNoiseConfig::zero() : CameraNoiseConfig{}, a.seed);
    truth_cfg.w_r = scene.head_width_mean;
    truth_cfg.h_tag = scene.tag_height;
  }
  io::write_uwb(join(a.out_dir, "uwb.jsonl"), run.uwb);
  io::write_detections(join(a.out_dir, "tracklets.jsonl"), run.camera.detections);
  io::write_truth(join(a.out_dir, "truth.jsonl"), run.camera.truth);
  io::write_config(join(a.out_dir, "truth_config.json"), truth_cfg);
  std::cout << "wrote " << run.uwb.size() << " UWB samples, " << run.camera.detections.size() << " detections to "
            << a.out_dir << "\n";
}

// ---------------------------------------------------------------- calibrate

struct CalibrateArgs {
  ConfigArgs cfg;
  std::string uwb, tracklets, out_config, report, labels_out, detector_out;
  int iterations = 100;
  bool tune = true;
};

void run_calibrate(const CalibrateArgs& a) {
  PipelineConfig cfg = a.cfg.load();
  const auto uwb = io::read_uwb(a.uwb);
  const auto dets = io::read_detections(a.tracklets);
  const CalibrationDataset data = pair_calibration_data(uwb, dets, cfg.align_tolerance);
  RansacConfig rc;
  rc.iterations = a.iterations;
  rc.inlier_threshold = cfg.ransac_threshold;
  rc.seed = cfg.seed;
  const ExtrinsicResult ex = calibrate_extrinsics(data, cfg.intrinsics, cfg.extrinsics, cfg.calib(), rc);
  cfg.set_calib(ex.params);

  const std::vector<LinkClass> labels = label_nlos(ex.outliers);
  if (!a.labels_out.empty()) {
    std::string text;
    for (std::size_t i = 0; i < data.size(); ++i) {
      json j;
      j["tag_id"] = data[i].uwb.tag_id;
      j["t"] = data[i].uwb.timestamp;
      j["nlos"] = labels[i] == LinkClass::NLoS;
      text += j.dump() + "\n";
    }
    io::write_text(a.labels_out, text);
  }

  NlosDetectorModel detector = NlosDetectorModel::constant(LinkClass::LoS);
  std::vector<SignalFeatures> xs;
  for (const CalibrationPair& p : data) xs.push_back(p.uwb.features);
  try {
    detector = train_detector(xs, labels, TrainConfig{}, cfg.seed);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::DegenerateLabels) throw;
    std::cerr << "warning: " << e.what() << "; using an always-LoS detector\n";
  }
  if (!a.detector_out.empty()) detector.save(a.detector_out);

  TunedNoise tuned;
  if (a.tune) {
    TuneConfig tc;
    tc.d_th = cfg.d_th;
    tc.initial = cfg.noise;
    tc.align_tolerance = cfg.align_tolerance;
    tc.cmaes.seed = cfg.seed;
    tuned = tune_noise(data, ex.params, gate_from(detector), cfg.intrinsics, cfg.extrinsics, tc);
    cfg.noise = tuned.apply(cfg.noise);
  }
  io::write_config(a.out_config, cfg);
  const std::string report = io::calibration_report(ex, a.tune ? &tuned : nullptr);
  if (!a.report.empty()) io::write_text(a.report, report + "\n");
  std::cout << report << "\n";
}

// ---------------------------------------------------------------- train-nlos

struct TrainArgs {
  std::string uwb, labels, out;
  int rounds = 100;
  double learning_rate = 0.1;
  int max_depth = 3;
  std::uint64_t seed = 1;
};

void run_train(const TrainArgs& a) {
  const auto uwb = io::read_uwb(a.uwb);
  std::map<std::pair<TagId, double>, bool> label_of;
  std::istringstream lines(io::read_text(a.labels));
  std::string line;
  int lineno = 0;
  while (std::getline(lines, line)) {
    ++lineno;
    if (line.empty()) continue;
    const json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("t") || !j.contains("nlos") || !j["nlos"].is_boolean() ||
        !j["t"].is_number()) {
      throw Error(ErrorKind::SchemaError, "label line " + std::to_string(lineno) + ": expected {tag_id, t, nlos}");
    }
    const TagId tag = j.contains("tag_id") ? j["tag_id"].get<TagId>() : 0;
    label_of[{tag, j["t"].get<double>()}] = j["nlos"].get<bool>();
  }
  std::vector<SignalFeatures> xs;
  std::vector<LinkClass> ys;
  for (const UwbSample& s : uwb) {
    const auto it = label_of.find({s.tag_id, s.timestamp});
    if (it == label_of.end()) continue;
    xs.push_back(s.features);
    ys.push_back(it->second ? LinkClass::NLoS : LinkClass::LoS);
  }
  if (xs.empty()) throw Error(ErrorKind::EmptyInput, "no UWB sample has a label");
  TrainConfig tc;
  tc.rounds = a.rounds;
  tc.learning_rate = a.learning_rate;
  tc.max_depth = a.max_depth;
  const NlosDetectorModel model = train_detector(xs, ys, tc, a.seed);
  model.save(a.out);
  std::vector<double> probs = model.probability_batch(xs);
  std::printf("trained on %zu samples, training AUC %.4f\n", xs.size(), roc_auc(probs, ys));
}

// ---------------------------------------------------------------- track

struct TrackArgs {
  ConfigArgs cfg;
  std::string uwb, detector, out;
};

void run_track(const TrackArgs& a) {
  const PipelineConfig cfg = a.cfg.load();
  const auto trajectories = track_all(io::read_uwb(a.uwb), cfg, load_gate(a.detector));
  std::string text;
  for (const TagTrajectory& traj : trajectories) {
    for (const TrajectoryPoint& p : traj.points()) {
      json j;
      j["tag_id"] = traj.tag_id();
      j["t"] = p.timestamp;
      j["position"] = {p.position.x(), p.position.y(), p.position.z()};
      json cov = json::array();
      for (int r = 0; r < 3; ++r) cov.push_back({p.position_cov(r, 0), p.position_cov(r, 1), p.position_cov(r, 2)});
      j["cov"] = std::move(cov);
      j["uncertain"] = p.uncertain;
      j["nlos"] = p.used_nlos;
      text += j.dump() + "\n";
    }
  }
  io::write_text(a.out, text);
}

// ---------------------------------------------------------------- match

struct MatchArgs {
  ConfigArgs cfg;
  std::string uwb, tracklets, detector, out;
};

// One assignment over the whole input, no windowing.
void run_match(const MatchArgs& a) {
  const PipelineConfig cfg = a.cfg.load();
  const auto tags = track_all(io::read_uwb(a.uwb), cfg, load_gate(a.detector));
  const auto tracklets =
      build_tracklets(io::read_detections(a.tracklets), cfg.intrinsics, cfg.extrinsics, cfg.w_r, cfg.h_tag);
  const CostMatrix costs = compute_cost_matrix(tags, tracklets, cfg.align_tolerance);
  const AssignmentResult sol = solve_assignment(costs, overlap_matrix(tracklets), cfg.c_th);
  json j;
  j["objective"] = sol.objective;
  json assigned = json::array();
  for (Eigen::Index i = 0; i < sol.x.rows(); ++i) {
    for (Eigen::Index k = 0; k < sol.x.cols(); ++k) {
      if (!sol.x(i, k)) continue;
      assigned.push_back({{"tag_id", tags[static_cast<std::size_t>(i)].tag_id()},
                          {"tracklet_id", tracklets[static_cast<std::size_t>(k)].id},
                          {"cost", costs.costs(i, k)},
                          {"support", costs.support(i, k)}});
    }
  }
  j["assignments"] = std::move(assigned);
  const std::string text = j.dump(2) + "\n";
  if (a.out.empty()) {
    std::cout << text;
  } else {
    io::write_text(a.out, text);
  }
}

// ---------------------------------------------------------------- replay / evaluate

struct ReplayArgs {
  ConfigArgs cfg;
  std::string uwb, tracklets, detector, truth, out, metrics_out, scene_id = "scene";
};

void run_replay_cmd(const ReplayArgs& a) {
  const PipelineConfig cfg = a.cfg.load();
  const auto uwb = io::read_uwb(a.uwb);
  const ReplayResult r = run_replay(uwb, io::read_detections(a.tracklets), cfg, load_gate(a.detector));
  if (!a.out.empty()) io::write_decisions(a.out, r.frames);
  RunMetrics m = r.metrics;
  int people = 0;
  if (!a.truth.empty()) {
    const auto truth = io::read_truth(a.truth);
    m = evaluate_recall(r.frames, truth);
    m.mean_latency_ms = r.metrics.mean_latency_ms;
    m.max_latency_ms = r.metrics.max_latency_ms;
    people = count_people(truth);
  }
  std::cout << metrics_json(m).dump(2) << "\n";
  if (!a.metrics_out.empty()) {
    io::write_text(a.metrics_out, metrics_csv({{a.scene_id, people, count_tags(uwb), cfg.c_th, cfg.u_th, m}}));
  }
}

struct EvaluateArgs {
  std::string decisions, truth, metrics_out, scene_id = "scene";
  double c_th = 0.0, u_th = 0.0;
  int tags = 1;
};

void run_evaluate(const EvaluateArgs& a) {
  const auto truth = io::read_truth(a.truth);
  const RunMetrics m = evaluate_recall(io::read_decisions(a.decisions), truth);
  std::cout << metrics_json(m).dump(2) << "\n";
  if (!a.metrics_out.empty()) {
    io::write_text(a.metrics_out, metrics_csv({{a.scene_id, count_people(truth), a.tags, a.c_th, a.u_th, m}}));
  }
}

// ---------------------------------------------------------------- sweep

struct SweepArgs {
  ConfigArgs cfg;
  std::vector<std::string> runs;
  std::string detector, out;
  std::vector<double> c_values{0.5, 1.0, 1.5, 2.0, 2.5, 3.0};
  bool tie = false;
};

void run_sweep(const SweepArgs& a) {
  const PipelineConfig cfg = a.cfg.load();
  std::vector<SweepInput> data;
  for (const std::string& dir : a.runs) {
    data.push_back({io::read_uwb(join(dir, "uwb.jsonl")), io::read_detections(join(dir, "tracklets.jsonl")),
                    io::read_truth(join(dir, "truth.jsonl"))});
  }
  const SweepTable table = sweep_threshold(data, cfg, load_gate(a.detector), a.c_values, a.tie);
  const std::string csv = sweep_csv(table);
  if (a.out.empty()) {
    std::cout << csv;
  } else {
    io::write_text(a.out, csv);
  }
  std::printf("AUC %.6f\n", table.auc);
}

// ---------------------------------------------------------------- mask

struct MaskArgs {
  std::string frame, background, decisions, out;
  double t = 0.0;
};

void run_mask(const MaskArgs& a) {
  const auto frames = io::read_decisions(a.decisions);
  if (frames.empty()) throw Error(ErrorKind::EmptyInput, "no decisions");
  const FrameDecision* best = &frames.front();
  for (const FrameDecision& f : frames) {
    if (std::abs(f.timestamp - a.t) < std::abs(best->timestamp - a.t)) best = &f;
  }
  write_ppm(a.out, compose_mask(read_ppm(a.frame), read_ppm(a.background), *best));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Opt-in camera: UWB-tagged identification and masking"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* c_sim = app.add_subcommand("simulate", "simulate a crowd scene or a calibration walk");
  c_sim->add_option("-o,--out-dir", sim.out_dir, "output directory")->check(CLI::ExistingDirectory);
  c_sim->add_option("-n,--people", sim.people, "people in the scene");
  c_sim->add_option("--tags", sim.tags, "tag carriers");
  c_sim->add_option("--duration", sim.duration, "seconds");
  c_sim->add_option("--seed", sim.seed, "seed");
  c_sim->add_flag("--calibration-walk", sim.calibration_walk, "one demonstrator with planted NLoS outliers");
  c_sim->add_flag("--noiseless", sim.noiseless, "zero sensor noise and no occlusion");

  CalibrateArgs cal;
  auto* c_cal = app.add_subcommand("calibrate", "recover anchor pose, head width, tag height and noise matrices");
  cal.cfg.add(c_cal);
  c_cal->add_option("--uwb", cal.uwb, "UWB JSONL")->required();
  c_cal->add_option("--tracklets", cal.tracklets, "demonstrator detections JSONL")->required();
  c_cal->add_option("-o,--out", cal.out_config, "calibrated config")->required();
  c_cal->add_option("--report", cal.report, "calibration report JSON");
  c_cal->add_option("--labels-out", cal.labels_out, "RANSAC NLoS labels JSONL");
  c_cal->add_option("--detector-out", cal.detector_out, "NLoS detector trained on the RANSAC labels");
  c_cal->add_option("--iterations", cal.iterations, "RANSAC iterations");
  c_cal->add_flag("!--no-tune", cal.tune, "skip noise tuning");

  TrainArgs tr;
  auto* c_tr = app.add_subcommand("train-nlos", "train the NLoS detector");
  c_tr->add_option("--uwb", tr.uwb, "UWB JSONL")->required();
  c_tr->add_option("--labels", tr.labels, "labels JSONL {tag_id, t, nlos}")->required();
  c_tr->add_option("-o,--out", tr.out, "model JSON")->required();
  c_tr->add_option("--rounds", tr.rounds, "boosting rounds");
  c_tr->add_option("--learning-rate", tr.learning_rate, "shrinkage");
  c_tr->add_option("--max-depth", tr.max_depth, "tree depth");
  c_tr->add_option("--seed", tr.seed, "seed");

  TrackArgs tk;
  auto* c_tk = app.add_subcommand("track", "filter UWB samples into tag trajectories");
  tk.cfg.add(c_tk);
  c_tk->add_option("--uwb", tk.uwb, "UWB JSONL")->required();
  c_tk->add_option("--detector", tk.detector, "NLoS detector model (default: always LoS)");
  c_tk->add_option("-o,--out", tk.out, "trajectory JSONL")->required();

  MatchArgs mt;
  auto* c_mt = app.add_subcommand("match", "one assignment over the whole input");
  mt.cfg.add(c_mt);
  c_mt->add_option("--uwb", mt.uwb, "UWB JSONL")->required();
  c_mt->add_option("--tracklets", mt.tracklets, "detections JSONL")->required();
  c_mt->add_option("--detector", mt.detector, "NLoS detector model");
  c_mt->add_option("-o,--out", mt.out, "assignment JSON (default stdout)");

  ReplayArgs rp;
  auto* c_rp = app.add_subcommand("replay", "streaming replay with per-frame keep/mask decisions");
  rp.cfg.add(c_rp);
  c_rp->add_option("--uwb", rp.uwb, "UWB JSONL")->required();
  c_rp->add_option("--tracklets", rp.tracklets, "detections JSONL")->required();
  c_rp->add_option("--detector", rp.detector, "NLoS detector model");
  c_rp->add_option("--truth", rp.truth, "ground-truth sidecar JSONL");
  c_rp->add_option("-o,--out", rp.out, "decisions JSONL");
  c_rp->add_option("--metrics-out", rp.metrics_out, "metrics CSV");
  c_rp->add_option("--scene-id", rp.scene_id, "scene id for the metrics CSV");

  EvaluateArgs ev;
  auto* c_ev = app.add_subcommand("evaluate", "recall and misidentification of a decision stream");
  c_ev->add_option("--decisions", ev.decisions, "decisions JSONL")->required();
  c_ev->add_option("--truth", ev.truth, "ground-truth sidecar JSONL")->required();
  c_ev->add_option("--metrics-out", ev.metrics_out, "metrics CSV");
  c_ev->add_option("--scene-id", ev.scene_id, "scene id for the metrics CSV");
  c_ev->add_option("--c-th", ev.c_th, "c_th recorded in the CSV");
  c_ev->add_option("--u-th", ev.u_th, "u_th recorded in the CSV");
  c_ev->add_option("--tags", ev.tags, "tag count recorded in the CSV");

  SweepArgs sw;
  auto* c_sw = app.add_subcommand("sweep", "recall/misidentification over c_th");
  sw.cfg.add(c_sw);
  c_sw->add_option("--run", sw.runs, "directory with uwb/tracklets/truth JSONL (repeatable)")->required();
  c_sw->add_option("--detector", sw.detector, "NLoS detector model");
  c_sw->add_option("--c-values", sw.c_values, "thresholds")->delimiter(',');
  c_sw->add_flag("--tie-u", sw.tie, "set u_th = c_th at every point");
  c_sw->add_option("-o,--out", sw.out, "CSV (default stdout)");

  MaskArgs mk;
  auto* c_mk = app.add_subcommand("mask", "composite kept boxes of one frame onto the background");
  c_mk->add_option("--frame", mk.frame, "live frame PPM")->required();
  c_mk->add_option("--background", mk.background, "background PPM")->required();
  c_mk->add_option("--decisions", mk.decisions, "decisions JSONL")->required();
  c_mk->add_option("--t", mk.t, "frame timestamp (nearest decision is used)");
  c_mk->add_option("-o,--out", mk.out, "output PPM")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*c_sim) run_simulate(sim);
    if (*c_cal) run_calibrate(cal);
    if (*c_tr) run_train(tr);
    if (*c_tk) run_track(tk);
    if (*c_mt) run_match(mt);
    if (*c_rp) run_replay_cmd(rp);
    if (*c_ev) run_evaluate(ev);
    if (*c_sw) run_sweep(sw);
    if (*c_mk) run_mask(mk);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.kind() == ErrorKind::SchemaError ? 2 : 1;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
