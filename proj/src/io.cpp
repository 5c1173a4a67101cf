#include "optin/io.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "optin/error.hpp"

namespace optin::io {

namespace {

using ojson = nlohmann::ordered_json;

[[noreturn]] void schema(const std::string& what) { throw Error(ErrorKind::SchemaError, what); }

ojson parse_object(const std::string& line) {
  ojson j;
  try {
    j = ojson::parse(line);
  } catch (const ojson::parse_error& e) {
    schema(std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) schema("record is not a JSON object");
  return j;
}

const ojson& field(const ojson& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end()) schema(std::string("missing field '") + key + "'");
  return *it;
}

double number(const ojson& j, const char* key) {
  const ojson& v = field(j, key);
  if (!v.is_number()) schema(std::string("field '") + key + "' is not a number");
  return v.get<double>();
}

std::int64_t integer(const ojson& j, const char* key) {
  const ojson& v = field(j, key);
  if (!v.is_number_integer()) schema(std::string("field '") + key + "' is not an integer");
  return v.get<std::int64_t>();
}

bool boolean(const ojson& j, const char* key) {
  const ojson& v = field(j, key);
  if (!v.is_boolean()) schema(std::string("field '") + key + "' is not a boolean");
  return v.get<bool>();
}

std::vector<double> numbers(const ojson& j, const char* key, std::size_t expected = 0) {
  const ojson& v = field(j, key);
  if (!v.is_array()) schema(std::string("field '") + key + "' is not an array");
  std::vector<double> out;
  for (const ojson& e : v) {
    if (!e.is_number()) schema(std::string("field '") + key + "' holds a non-number");
    out.push_back(e.get<double>());
  }
  if (expected > 0 && out.size() != expected) schema(std::string("field '") + key + "' has the wrong length");
  return out;
}

template <class T, class Parse>
std::vector<T> read_lines(const std::string& path, Parse parse) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path);
  std::vector<T> out;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(parse(line));
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::SchemaError) throw;
      schema(path + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

template <class T, class Format>
void write_lines(const std::string& path, const std::vector<T>& items, Format format) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path);
  for (const T& item : items) out << format(item) << '\n';
  if (!out) throw Error(ErrorKind::IoError, "write failed for " + path);
}

ojson vec3(const Vec3& v) { return ojson::array({v.x(), v.y(), v.z()}); }

Vec3 to_vec3(const std::vector<double>& v) { return Vec3(v[0], v[1], v[2]); }

ojson diag(const Mat3& m) { return ojson::array({m(0, 0), m(1, 1), m(2, 2)}); }

Mat3 from_diag(const std::vector<double>& v) { return Eigen::Vector3d(v[0], v[1], v[2]).asDiagonal(); }

const ojson* optional_object(const ojson& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end()) return nullptr;
  if (!it->is_object()) schema(std::string("field '") + key + "' is not an object");
  return &*it;
}

void maybe(const ojson& j, const char* key, double& dst) {
  if (j.contains(key)) dst = number(j, key);
}

}  // namespace

std::string uwb_record(const UwbSample& s) {
  ojson j;
  j["tag_id"] = s.tag_id;
  j["t"] = s.timestamp;
  j["radial_m"] = s.z.radial;
  j["azimuth_rad"] = s.z.azimuth;
  j["elevation_rad"] = s.z.elevation;
  j["feat"] = s.features;
  return j.dump();
}

UwbSample parse_uwb_record(const std::string& line) {
  const ojson j = parse_object(line);
  UwbSample s;
  s.tag_id = integer(j, "tag_id");
  s.timestamp = number(j, "t");
  s.z.radial = number(j, "radial_m");
  s.z.azimuth = number(j, "azimuth_rad");
  s.z.elevation = number(j, "elevation_rad");
  s.features = numbers(j, "feat");
  if (!(s.z.radial >= 0.0)) schema("radial_m must be non-negative");
  return s;
}

std::string detection_record(const HeadDetection& d) {
  ojson j;
  j["tracklet_id"] = d.tracklet_id;
  j["t"] = d.timestamp;
  j["u_px"] = d.u;
  j["v_px"] = d.v;
  j["w_px"] = d.width;
  j["h_px"] = d.height;
  return j.dump();
}

HeadDetection parse_detection_record(const std::string& line) {
  const ojson j = parse_object(line);
  HeadDetection d;
  d.tracklet_id = integer(j, "tracklet_id");
  d.timestamp = number(j, "t");
  d.u = number(j, "u_px");
  d.v = number(j, "v_px");
  d.width = number(j, "w_px");
  d.height = number(j, "h_px");
  return d;
}

std::string truth_record(const TruthLabel& l) {
  ojson j;
  j["t"] = l.t;
  j["tracklet_id"] = l.tracklet_id;
  j["person_id"] = l.person_id;
  j["carries_tag"] = l.carries_tag;
  return j.dump();
}

TruthLabel parse_truth_record(const std::string& line) {
  const ojson j = parse_object(line);
  TruthLabel l;
  l.t = number(j, "t");
  l.tracklet_id = integer(j, "tracklet_id");
  l.person_id = static_cast<int>(integer(j, "person_id"));
  l.carries_tag = boolean(j, "carries_tag");
  l.tag_id = j.contains("tag_id") ? integer(j, "tag_id") : -1;
  return l;
}

std::vector<UwbSample> read_uwb(const std::string& path) { return read_lines<UwbSample>(path, parse_uwb_record); }
void write_uwb(const std::string& path, const std::vector<UwbSample>& samples) {
  write_lines(path, samples, uwb_record);
}
std::vector<HeadDetection> read_detections(const std::string& path) {
  return read_lines<HeadDetection>(path, parse_detection_record);
}
void write_detections(const std::string& path, const std::vector<HeadDetection>& dets) {
  write_lines(path, dets, detection_record);
}
std::vector<TruthLabel> read_truth(const std::string& path) {
  return read_lines<TruthLabel>(path, parse_truth_record);
}
void write_truth(const std::string& path, const std::vector<TruthLabel>& labels) {
  write_lines(path, labels, truth_record);
}

std::string config_document(const PipelineConfig& cfg) {
  ojson j;
  j["anchor"] = {{"position", vec3(cfg.anchor.position)},
                 {"orientation", ojson::array({cfg.anchor.orientation.yaw, cfg.anchor.orientation.pitch,
                                               cfg.anchor.orientation.roll})}};
  j["intrinsics"] = {{"fx", cfg.intrinsics.fx}, {"fy", cfg.intrinsics.fy}, {"cx", cfg.intrinsics.cx},
                     {"cy", cfg.intrinsics.cy}};
  ojson rot = ojson::array();
  for (int r = 0; r < 3; ++r) {
    rot.push_back(ojson::array({cfg.extrinsics.rotation(r, 0), cfg.extrinsics.rotation(r, 1),
                                cfg.extrinsics.rotation(r, 2)}));
  }
  j["extrinsics"] = {{"rotation", rot}, {"translation", vec3(cfg.extrinsics.translation)}};
  j["noise"] = {{"r_los", diag(cfg.noise.r_los)},
                {"r_nlos", diag(cfg.noise.r_nlos)},
                {"q_velocity_var", cfg.noise.q_velocity_var},
                {"q_height_var", cfg.noise.q_height_var}};
  j["w_r"] = cfg.w_r;
  j["h_tag"] = cfg.h_tag;
  j["c_th"] = cfg.c_th;
  j["u_th"] = cfg.u_th;
  j["d_th"] = cfg.d_th;
  j["window"] = cfg.window;
  j["align_tolerance"] = cfg.align_tolerance;
  j["ransac_threshold"] = cfg.ransac_threshold;
  j["seed"] = cfg.seed;
  return j.dump(2);
}

PipelineConfig parse_config(const std::string& text) {
  const ojson j = parse_object(text);
  PipelineConfig cfg;
  if (const ojson* a = optional_object(j, "anchor")) {
    if (a->contains("position")) cfg.anchor.position = to_vec3(numbers(*a, "position", 3));
    if (a->contains("orientation")) {
      const auto o = numbers(*a, "orientation", 3);
      cfg.anchor.orientation = {o[0], o[1], o[2]};
    }
  }
  if (const ojson* in = optional_object(j, "intrinsics")) {
    maybe(*in, "fx", cfg.intrinsics.fx);
    maybe(*in, "fy", cfg.intrinsics.fy);
    maybe(*in, "cx", cfg.intrinsics.cx);
    maybe(*in, "cy", cfg.intrinsics.cy);
  }
  if (const ojson* ex = optional_object(j, "extrinsics")) {
    if (ex->contains("rotation")) {
      const ojson& rows = field(*ex, "rotation");
      if (!rows.is_array() || rows.size() != 3) schema("extrinsics.rotation must be 3x3");
      for (int r = 0; r < 3; ++r) {
        const ojson& row = rows[static_cast<std::size_t>(r)];
        if (!row.is_array() || row.size() != 3) schema("extrinsics.rotation must be 3x3");
        for (int c = 0; c < 3; ++c) {
          const ojson& v = row[static_cast<std::size_t>(c)];
          if (!v.is_number()) schema("extrinsics.rotation holds a non-number");
          cfg.extrinsics.rotation(r, c) = v.get<double>();
        }
      }
    }
    if (ex->contains("translation")) cfg.extrinsics.translation = to_vec3(numbers(*ex, "translation", 3));
  }
  if (const ojson* n = optional_object(j, "noise")) {
    if (n->contains("r_los")) cfg.noise.r_los = from_diag(numbers(*n, "r_los", 3));
    if (n->contains("r_nlos")) cfg.noise.r_nlos = from_diag(numbers(*n, "r_nlos", 3));
    maybe(*n, "q_velocity_var", cfg.noise.q_velocity_var);
    maybe(*n, "q_height_var", cfg.noise.q_height_var);
  }
  maybe(j, "w_r", cfg.w_r);
  maybe(j, "h_tag", cfg.h_tag);
  maybe(j, "c_th", cfg.c_th);
  maybe(j, "u_th", cfg.u_th);
  maybe(j, "d_th", cfg.d_th);
  maybe(j, "window", cfg.window);
  maybe(j, "align_tolerance", cfg.align_tolerance);
  maybe(j, "ransac_threshold", cfg.ransac_threshold);
  if (j.contains("seed")) {
    const ojson& s = field(j, "seed");
    if (!s.is_number_unsigned() && !(s.is_number_integer() && s.get<std::int64_t>() >= 0)) {
      schema("seed must be a non-negative integer");
    }
    cfg.seed = s.get<std::uint64_t>();
  }
  return cfg;
}

PipelineConfig read_config(const std::string& path) { return parse_config(read_text(path)); }
void write_config(const std::string& path, const PipelineConfig& cfg) { write_text(path, config_document(cfg) + "\n"); }

std::string calibration_report(const ExtrinsicResult& ex, const TunedNoise* noise) {
  ojson j;
  const CalibParams& p = ex.params;
  j["anchor"] = {{"position", vec3(p.anchor.position)},
                 {"orientation", ojson::array({p.anchor.orientation.yaw, p.anchor.orientation.pitch,
                                               p.anchor.orientation.roll})}};
  j["w_r"] = p.w_r;
  j["h_tag"] = p.h_tag;
  j["inlier_ratio"] = ex.inlier_ratio;
  j["pairs"] = ex.outliers.size();
  j["objective_init"] = ex.objective_init;
  j["objective_final"] = ex.objective_final;
  if (noise) {
    j["noise"] = {{"r_los", diag(noise->r_los)},
                  {"r_nlos", diag(noise->r_nlos)},
                  {"d_th", noise->d_th},
                  {"penalized_objective", noise->penalized_objective},
                  {"initial_penalized_objective", noise->initial_penalized_objective},
                  {"violation_fraction", noise->violation_fraction},
                  {"max_distance", noise->max_distance},
                  {"timestamps", noise->timestamps},
                  {"evaluations", noise->evaluations}};
  }
  return j.dump(2);
}

std::string decision_record(const FrameDecision& f) {
  ojson j;
  j["t"] = f.timestamp;
  ojson boxes = ojson::array();
  for (const BoxDecision& b : f.boxes) {
    ojson e;
    e["tracklet_id"] = b.tracklet_id;
    e["tag_id"] = b.tag_id;
    e["u_px"] = b.box.u;
    e["v_px"] = b.box.v;
    e["w_px"] = b.box.width;
    e["h_px"] = b.box.height;
    e["keep"] = b.keep;
    boxes.push_back(std::move(e));
  }
  j["boxes"] = std::move(boxes);
  j["masked"] = f.masked;
  return j.dump();
}

FrameDecision parse_decision_record(const std::string& line) {
  const ojson j = parse_object(line);
  FrameDecision f;
  f.timestamp = number(j, "t");
  const ojson& boxes = field(j, "boxes");
  if (!boxes.is_array()) schema("field 'boxes' is not an array");
  for (const ojson& e : boxes) {
    if (!e.is_object()) schema("box entry is not an object");
    BoxDecision b;
    b.tracklet_id = integer(e, "tracklet_id");
    b.tag_id = integer(e, "tag_id");
    b.box.timestamp = f.timestamp;
    b.box.tracklet_id = b.tracklet_id;
    b.box.u = number(e, "u_px");
    b.box.v = number(e, "v_px");
    b.box.width = number(e, "w_px");
    b.box.height = number(e, "h_px");
    b.keep = boolean(e, "keep");
    f.boxes.push_back(b);
  }
  const ojson& masked = field(j, "masked");
  if (!masked.is_array()) schema("field 'masked' is not an array");
  for (const ojson& m : masked) {
    if (!m.is_number_integer()) schema("masked ids must be integers");
    f.masked.push_back(m.get<TrackletId>());
  }
  return f;
}

std::vector<FrameDecision> read_decisions(const std::string& path) {
  return read_lines<FrameDecision>(path, parse_decision_record);
}
void write_decisions(const std::string& path, const std::vector<FrameDecision>& frames) {
  write_lines(path, frames, decision_record);
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path);
  out << text;
  if (!out) throw Error(ErrorKind::IoError, "write failed for " + path);
}

}  // namespace optin::io
