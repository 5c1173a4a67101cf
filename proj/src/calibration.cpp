#include "optin/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

#include "optin/error.hpp"
#include "optin/matching.hpp"

namespace optin {

namespace {

using Vec8 = Eigen::Matrix<double, 8, 1>;

// Per-pair quantities that do not depend on the parameters: the camera ray
// (tag point = origin + w_r * dir before the height is replaced) and the
// anchor-frame Cartesian UWB point.
struct PairGeometry {
  Vec3 origin;
  Vec3 dir;
  Vec3 uwb_local;
};

Vec3 polar_to_local(const PolarMeasurement& z) {
  const double ce = std::cos(z.elevation);
  return z.radial * Vec3(ce * std::cos(z.azimuth), ce * std::sin(z.azimuth), std::sin(z.elevation));
}

PairGeometry precompute(const CalibrationPair& p, const CameraIntrinsics& intr, const CameraExtrinsics& extr) {
  if (!(p.det.width > 0.0)) throw Error(ErrorKind::BadBox, "calibration detection has non-positive width");
  PairGeometry g;
  // Camera point is linear in w_r: cam = w_r * c1.
  const Vec3 c1((p.det.u - intr.cx) / p.det.width, (p.det.v - intr.cy) * intr.fx / (intr.fy * p.det.width),
                intr.fx / p.det.width);
  g.origin = extr.camera_center();
  g.dir = extr.rotation.transpose() * c1;
  g.uwb_local = polar_to_local(p.uwb.z);
  return g;
}

std::vector<PairGeometry> precompute_all(const CalibrationDataset& data, const CameraIntrinsics& intr,
                                         const CameraExtrinsics& extr) {
  std::vector<PairGeometry> out;
  out.reserve(data.size());
  for (const CalibrationPair& p : data) out.push_back(precompute(p, intr, extr));
  return out;
}

struct ResidualEval {
  Mat3 rot;
  Vec3 pos;
  double w_r;
  double h_tag;

  explicit ResidualEval(const Vec8& v)
      : rot(rotation_from_euler({v[3], v[4], v[5]})), pos(v[0], v[1], v[2]), w_r(v[6]), h_tag(v[7]) {}

  double operator()(const PairGeometry& g) const {
    Vec3 cam = g.origin + w_r * g.dir;
    cam.z() = h_tag;
    return (cam - (pos + rot * g.uwb_local)).norm();
  }
};

bool plausible(const Vec8& v) {
  return v.allFinite() && v[6] > 0.1 && v[6] < 0.6 && v[7] > 0.0 && v[7] < 2.5;
}

Eigen::VectorXd solver_steps() {
  Eigen::VectorXd s(8);
  s << 0.1, 0.1, 0.1, 0.05, 0.05, 0.05, 0.01, 0.05;
  return s;
}

}  // namespace

Vec8 CalibParams::to_vector() const {
  Vec8 v;
  v << anchor.position.x(), anchor.position.y(), anchor.position.z(), anchor.orientation.yaw,
      anchor.orientation.pitch, anchor.orientation.roll, w_r, h_tag;
  return v;
}

CalibParams CalibParams::from_vector(const Vec8& v) {
  CalibParams p;
  p.anchor.position = Vec3(v[0], v[1], v[2]);
  p.anchor.orientation = {v[3], v[4], v[5]};
  p.w_r = v[6];
  p.h_tag = v[7];
  return p;
}

void CalibParams::validate() const {
  if (!plausible(to_vector())) {
    throw Error(ErrorKind::InvalidArgument, "calibration parameters out of range");
  }
}

CalibrationDataset pair_calibration_data(const std::vector<UwbSample>& uwb,
                                         const std::vector<HeadDetection>& detections, double max_dt) {
  if (uwb.empty() || detections.empty()) throw Error(ErrorKind::EmptyInput, "nothing to pair");
  std::vector<UwbSample> u = uwb;
  std::vector<HeadDetection> d = detections;
  std::stable_sort(u.begin(), u.end(), [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; });
  std::stable_sort(d.begin(), d.end(), [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; });

  const auto nearest = [](const auto& seq, double t, auto key) {
    const auto it = std::lower_bound(seq.begin(), seq.end(), t,
                                     [&](const auto& e, double v) { return key(e) < v; });
    std::size_t best = it == seq.end() ? seq.size() - 1 : static_cast<std::size_t>(it - seq.begin());
    if (it != seq.begin()) {
      const std::size_t prev = static_cast<std::size_t>(it - seq.begin()) - 1;
      if (it == seq.end() || std::abs(key(seq[prev]) - t) <= std::abs(key(seq[best]) - t)) best = prev;
    }
    return best;
  };
  const auto ut = [](const UwbSample& s) { return s.timestamp; };
  const auto dt = [](const HeadDetection& h) { return h.timestamp; };

  CalibrationDataset out;
  for (std::size_t j = 0; j < d.size(); ++j) {
    if (j > 0 && d[j].timestamp == d[j - 1].timestamp) continue;
    const std::size_t i = nearest(u, d[j].timestamp, ut);
    if (std::abs(u[i].timestamp - d[j].timestamp) > max_dt) continue;
    if (nearest(d, u[i].timestamp, dt) != j) continue;
    out.push_back({d[j].timestamp, u[i], d[j]});
  }
  return out;
}

Vec3 camera_tag_position(const HeadDetection& det, const CameraIntrinsics& intr, const CameraExtrinsics& extr,
                         const CalibParams& params) {
  Vec3 p = head_box_to_world(det, intr, extr, params.w_r);
  p.z() = params.h_tag;
  return p;
}

double calibration_residual(const CalibrationPair& pair, const CalibParams& params, const CameraIntrinsics& intr,
                            const CameraExtrinsics& extr) {
  return (camera_tag_position(pair.det, intr, extr, params) - anchor_polar_to_world(pair.uwb.z, params.anchor))
      .norm();
}

double calibration_objective(const CalibrationDataset& data, const std::vector<std::size_t>& indices,
                             const CalibParams& params, const CameraIntrinsics& intr,
                             const CameraExtrinsics& extr) {
  if (data.empty()) throw Error(ErrorKind::EmptyInput, "empty calibration dataset");
  double sum = 0.0;
  if (indices.empty()) {
    for (const CalibrationPair& p : data) sum += calibration_residual(p, params, intr, extr);
    return sum / static_cast<double>(data.size());
  }
  for (std::size_t i : indices) sum += calibration_residual(data.at(i), params, intr, extr);
  return sum / static_cast<double>(indices.size());
}

NelderMeadOptions ExtrinsicOptions::default_solver(int max_evals) {
  NelderMeadOptions o;
  o.initial_step = solver_steps();
  o.x_tolerance = 1e-7;
  o.max_evaluations = max_evals;
  return o;
}

ExtrinsicResult calibrate_extrinsics(const CalibrationDataset& data, const CameraIntrinsics& intr,
                                     const CameraExtrinsics& extr, const CalibParams& init,
                                     const RansacConfig& cfg, const ExtrinsicOptions& opts) {
  // Two disjoint minimal samples; a 5 s walk at 5 Hz still qualifies.
  const std::size_t min_pairs = 2 * static_cast<std::size_t>(std::max(cfg.sample_size, 1));
  if (data.size() < min_pairs) {
    throw Error(ErrorKind::InsufficientData,
                "extrinsic calibration needs at least " + std::to_string(min_pairs) + " paired samples");
  }
  init.validate();
  const std::vector<PairGeometry> geo = precompute_all(data, intr, extr);
  const Vec8 x_init = init.to_vector();
  const double z0 = x_init[2];

  const auto objective_on = [&](const std::vector<std::size_t>& idx) {
    return [&, idx](const Eigen::VectorXd& x) {
      const Vec8 v = x;
      if (!plausible(v)) return std::numeric_limits<double>::infinity();
      const ResidualEval eval(v);
      double sum = 0.0;
      for (std::size_t i : idx) sum += eval(geo[i]);
      const double dz = v[2] - z0;
      return sum / static_cast<double>(idx.size()) + opts.anchor_height_prior * dz * dz;
    };
  };

  const auto solve = [&](const std::vector<std::size_t>& idx, const Vec8& start, bool refit) -> std::optional<Vec8> {
    if (idx.empty()) return std::nullopt;
    const auto f = objective_on(idx);
    OptimResult r = nelder_mead(f, start, refit ? opts.refit_solver : opts.hypothesis_solver);
    if (refit) {
      for (int k = 0; k < opts.refit_restarts; ++k) {
        OptimResult again = nelder_mead(f, r.x, opts.refit_solver);
        const bool improved = again.f < r.f - 1e-12;
        if (again.f <= r.f) r = again;
        if (!improved) break;
      }
    }
    const Vec8 v = r.x;
    if (!std::isfinite(r.f) || !plausible(v)) return std::nullopt;
    return v;
  };

  const auto fit = [&](const std::vector<std::size_t>& idx) -> std::optional<Vec8> {
    return solve(idx, x_init, idx.size() > static_cast<std::size_t>(cfg.sample_size));
  };
  const auto residual = [&](const Vec8& v, std::size_t i) { return ResidualEval(v)(geo[i]); };

  RansacResult<Vec8> rr = ransac<Vec8>(data.size(), fit, residual, cfg);

  // Refit on the consensus set and re-threshold until the set settles.
  for (int round = 0; round < opts.consensus_rounds; ++round) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (rr.inliers[i]) idx.push_back(i);
    }
    const std::optional<Vec8> v = solve(idx, rr.model, true);
    if (!v) break;
    std::vector<bool> mask(data.size(), false);
    int count = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (residual(*v, i) < cfg.inlier_threshold) {
        mask[i] = true;
        ++count;
      }
    }
    if (count < cfg.sample_size) break;
    const bool same = mask == rr.inliers;
    rr.model = *v;
    rr.inliers = std::move(mask);
    rr.inlier_count = count;
    if (same) break;
  }

  ExtrinsicResult out;
  out.params = CalibParams::from_vector(rr.model);
  out.outliers.resize(data.size());
  std::vector<std::size_t> inlier_idx;
  for (std::size_t i = 0; i < data.size(); ++i) {
    out.outliers[i] = !rr.inliers[i];
    if (rr.inliers[i]) inlier_idx.push_back(i);
  }
  out.inlier_ratio = static_cast<double>(rr.inlier_count) / static_cast<double>(data.size());
  if (!inlier_idx.empty()) {
    const ResidualEval at_init(x_init), at_final(rr.model);
    double a = 0.0, b = 0.0;
    for (std::size_t i : inlier_idx) {
      a += at_init(geo[i]);
      b += at_final(geo[i]);
    }
    out.objective_init = a / static_cast<double>(inlier_idx.size());
    out.objective_final = b / static_cast<double>(inlier_idx.size());
  }
  return out;
}

std::vector<LinkClass> label_nlos(const std::vector<bool>& outlier_mask) {
  std::vector<LinkClass> out;
  out.reserve(outlier_mask.size());
  for (bool o : outlier_mask) out.push_back(o ? LinkClass::NLoS : LinkClass::LoS);
  return out;
}

CmaesConfig TuneConfig::default_cmaes() {
  CmaesConfig c;
  c.sigma0 = 1.0;
  c.max_evaluations = 1500;
  c.f_tolerance = 1e-9;
  return c;
}

std::vector<double> constraint_distances(const CalibrationDataset& data, const CalibParams& params,
                                         const NoiseModel& noise, const NlosGate& gate,
                                         const CameraIntrinsics& intr, const CameraExtrinsics& extr,
                                         const InitPolicy& init, double align_tolerance) {
  if (data.empty()) throw Error(ErrorKind::EmptyInput, "empty calibration dataset");
  std::vector<UwbSample> samples;
  samples.reserve(data.size());
  for (const CalibrationPair& p : data) samples.push_back(p.uwb);
  std::stable_sort(samples.begin(), samples.end(),
                   [](const UwbSample& a, const UwbSample& b) { return a.timestamp < b.timestamp; });
  samples.erase(std::unique(samples.begin(), samples.end(),
                            [](const UwbSample& a, const UwbSample& b) { return a.timestamp == b.timestamp; }),
                samples.end());
  const TagTrajectory traj = track_tag(samples, params.anchor, noise, gate, init,
                                       std::numeric_limits<double>::infinity());
  std::vector<double> out;
  out.reserve(data.size());
  for (const CalibrationPair& p : data) {
    const auto q = traj.query(p.t, align_tolerance);
    if (!q) continue;
    out.push_back(mahalanobis(camera_tag_position(p.det, intr, extr, params) - q->position, q->position_cov));
  }
  return out;
}

TunedNoise tune_noise(const CalibrationDataset& data, const CalibParams& params, const NlosGate& gate,
                      const CameraIntrinsics& intr, const CameraExtrinsics& extr, const TuneConfig& cfg) {
  if (data.empty()) throw Error(ErrorKind::EmptyInput, "empty calibration dataset");
  if (cfg.penalty_schedule.empty() || !(cfg.d_th > 0.0) || !(cfg.margin > 0.0 && cfg.margin <= 1.0) ||
      !(cfg.lower_variance > 0.0) || !(cfg.upper_variance > cfg.lower_variance) ||
      !(cfg.upper_angle_variance > cfg.lower_variance) || !(cfg.upper_los_angle_variance > cfg.lower_variance)) {
    throw Error(ErrorKind::InvalidArgument, "invalid noise tuning configuration");
  }
  const int dim = cfg.single_matrix ? 3 : 6;
  const double target = cfg.margin * cfg.d_th;

  const auto to_noise = [&](const Eigen::VectorXd& x) {
    NoiseModel n = cfg.initial;
    n.r_los = Eigen::Vector3d(std::exp(x[0]), std::exp(x[1]), std::exp(x[2])).asDiagonal();
    n.r_nlos = cfg.single_matrix ? n.r_los
                                 : Mat3(Eigen::Vector3d(std::exp(x[3]), std::exp(x[4]), std::exp(x[5])).asDiagonal());
    return n;
  };
  const auto penalized = [&](const Eigen::VectorXd& x, double weight) {
    const NoiseModel n = to_noise(x);
    std::vector<double> d;
    try {
      d = constraint_distances(data, params, n, gate, intr, extr, cfg.init, cfg.align_tolerance);
    } catch (const Error&) {
      return std::numeric_limits<double>::infinity();
    }
    double violation = 0.0;
    for (double v : d) {
      const double e = std::max(0.0, v - target);
      violation += e * e;
    }
    return n.r_los.trace() + n.r_nlos.trace() + weight * violation;
  };

  Eigen::VectorXd x0(dim);
  for (int k = 0; k < 3; ++k) {
    x0[k] = std::log(cfg.initial.r_los(k, k));
    if (!cfg.single_matrix) x0[3 + k] = std::log(cfg.initial.r_nlos(k, k));
  }
  CmaesConfig cc = cfg.cmaes;
  cc.lower = Eigen::VectorXd::Constant(dim, std::log(cfg.lower_variance));
  cc.upper = Eigen::VectorXd::Constant(dim, std::log(cfg.upper_angle_variance));
  for (int k = 0; k < dim; k += 3) (*cc.upper)[k] = std::log(cfg.upper_variance);
  if (!cfg.single_matrix) (*cc.upper).segment(1, 2).setConstant(std::log(cfg.upper_los_angle_variance));
  x0 = mirror_into_box(x0, *cc.lower, *cc.upper);

  TunedNoise out;
  std::vector<Eigen::VectorXd> candidates{x0};
  Eigen::VectorXd start = x0;
  for (std::size_t stage = 0; stage < cfg.penalty_schedule.size(); ++stage) {
    const double weight = cfg.penalty_schedule[stage];
    CmaesConfig sc = cc;
    sc.seed = cc.seed + stage;
    sc.sigma0 = cc.sigma0 / static_cast<double>(1u << stage);
    const CmaesResult r = cma_es([&](const Eigen::VectorXd& x) { return penalized(x, weight); }, start, sc);
    out.evaluations += r.evaluations;
    candidates.push_back(r.x);
    start = r.x;
  }

  // Every candidate is rescored under the final (largest) penalty weight.
  const double final_weight = cfg.penalty_schedule.back();
  Eigen::VectorXd best = x0;
  double best_f = std::numeric_limits<double>::infinity();
  for (const Eigen::VectorXd& c : candidates) {
    const double f = penalized(c, final_weight);
    if (f < best_f) {
      best_f = f;
      best = c;
    }
  }
  out.initial_penalized_objective = penalized(x0, final_weight);

  const NoiseModel n = to_noise(best);
  out.r_los = n.r_los;
  out.r_nlos = n.r_nlos;
  out.d_th = cfg.d_th;
  out.penalized_objective = best_f;
  const std::vector<double> d = constraint_distances(data, params, n, gate, intr, extr, cfg.init, cfg.align_tolerance);
  out.timestamps = static_cast<int>(d.size());
  int violated = 0;
  for (double v : d) {
    if (v >= cfg.d_th) ++violated;
    out.max_distance = std::max(out.max_distance, v);
  }
  out.violation_fraction = d.empty() ? 0.0 : static_cast<double>(violated) / static_cast<double>(d.size());
  return out;
}

}  // namespace optin
