#include "optin/tracking.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>

#include "optin/error.hpp"

namespace optin {

namespace {

constexpr int kN = 5;
constexpr double kJitter = 1e-9;
constexpr int kJitterRetries = 3;

StateCov symmetrized(const StateCov& p) { return 0.5 * (p + p.transpose()); }

// Lower Cholesky factor of m, adding kJitter * I on failure (up to three times).
StateCov cholesky_with_jitter(StateCov m) {
  for (int attempt = 0; attempt <= kJitterRetries; ++attempt) {
    Eigen::LLT<StateCov> llt(m);
    if (llt.info() == Eigen::Success) return llt.matrixL();
    m += kJitter * StateCov::Identity();
  }
  throw Error(ErrorKind::CovarianceNotPD, "sigma-point factorisation failed after jitter");
}

Eigen::Vector3d wrap_rows(Eigen::Vector3d v, const std::array<bool, 3>& angle_rows) {
  for (int k = 0; k < 3; ++k) {
    if (angle_rows[k]) v[k] = wrap_angle(v[k]);
  }
  return v;
}

}  // namespace

Mat3 UkfState::position_cov() const {
  Mat3 m;
  constexpr int idx[3] = {kIx, kIy, kIz};
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) m(r, c) = cov(idx[r], idx[c]);
  }
  return m;
}

Mat3 NoiseModel::diagonal(double radial_var, double azimuth_var, double elevation_var) {
  return Eigen::Vector3d(radial_var, azimuth_var, elevation_var).asDiagonal();
}

NoiseModel NoiseModel::hand_designed() {
  const double deg = kPi / 180.0;
  NoiseModel n;
  n.r_los = diagonal(0.5 * 0.5, std::pow(10.0 * deg, 2), std::pow(10.0 * deg, 2));
  n.r_nlos = diagonal(5.0 * 5.0, std::pow(45.0 * deg, 2), std::pow(45.0 * deg, 2));
  return n;
}

NlosGate gate_from(const NlosDetectorModel& model) {
  return [model](const UwbSample& s) { return classify(model, s.features) == LinkClass::NLoS; };
}
NlosGate always_los_gate() {
  return [](const UwbSample&) { return false; };
}
NlosGate always_nlos_gate() {
  return [](const UwbSample&) { return true; };
}

StateCov process_noise(double dt, double q_velocity_var, double q_height_var) {
  if (!(dt > 0.0)) throw Error(ErrorKind::NonPositiveDt, "process noise needs dt > 0");
  const double dt2 = dt * dt;
  Eigen::Matrix2d block;
  block << dt2 * dt2 / 4.0, dt2 * dt / 2.0, dt2 * dt / 2.0, dt2;
  block *= q_velocity_var;
  StateCov q = StateCov::Zero();
  q.block<2, 2>(kIx, kIx) = block;
  q.block<2, 2>(kIy, kIy) = block;
  q(kIz, kIz) = q_height_var * dt2;
  return q;
}

UkfState predict(const UkfState& state, double dt, const NoiseModel& noise) {
  if (!(dt > 0.0)) throw Error(ErrorKind::NonPositiveDt, "predict needs dt > 0");
  StateCov f = StateCov::Identity();
  f(kIx, kIvx) = dt;
  f(kIy, kIvy) = dt;
  UkfState out;
  out.mean = f * state.mean;
  out.cov = symmetrized(f * state.cov * f.transpose() +
                        process_noise(dt, noise.q_velocity_var, noise.q_height_var));
  out.timestamp = state.timestamp + dt;
  return out;
}

UkfState unscented_update(const UkfState& state, const Eigen::Vector3d& z, const MeasurementFn& h,
                          const Mat3& r, const std::array<bool, 3>& angle_rows,
                          const SigmaParams& sp) {
  const double lambda = sp.alpha * sp.alpha * (kN + sp.kappa) - kN;
  const double spread = kN + lambda;
  const StateCov l = cholesky_with_jitter(spread * state.cov);

  constexpr int kSigma = 2 * kN + 1;
  std::array<StateVec, kSigma> xs;
  xs[0] = state.mean;
  for (int i = 0; i < kN; ++i) {
    xs[1 + i] = state.mean + l.col(i);
    xs[1 + kN + i] = state.mean - l.col(i);
  }
  const double wm0 = lambda / spread;
  const double wc0 = wm0 + (1.0 - sp.alpha * sp.alpha + sp.beta);
  const double wi = 0.5 / spread;

  std::array<Eigen::Vector3d, kSigma> zs;
  for (int i = 0; i < kSigma; ++i) zs[i] = h(xs[i]);

  // Angle-aware weighted mean, taken relative to the central sigma point.
  Eigen::Vector3d offset = Eigen::Vector3d::Zero();
  for (int i = 1; i < kSigma; ++i) offset += wi * wrap_rows(zs[i] - zs[0], angle_rows);
  const Eigen::Vector3d z_hat = wrap_rows(zs[0] + offset, angle_rows);

  Mat3 pzz = r;
  Eigen::Matrix<double, kN, 3> pxz = Eigen::Matrix<double, kN, 3>::Zero();
  for (int i = 0; i < kSigma; ++i) {
    const double wc = i == 0 ? wc0 : wi;
    const Eigen::Vector3d dz = wrap_rows(zs[i] - z_hat, angle_rows);
    pzz.noalias() += wc * dz * dz.transpose();
    pxz.noalias() += wc * (xs[i] - state.mean) * dz.transpose();
  }
  pzz = 0.5 * (pzz + pzz.transpose());

  const Eigen::Matrix<double, 3, kN> kt = pzz.ldlt().solve(pxz.transpose());
  const Eigen::Matrix<double, kN, 3> gain = kt.transpose();
  const Eigen::Vector3d innovation = wrap_rows(z - z_hat, angle_rows);

  UkfState out;
  out.timestamp = state.timestamp;
  out.mean = state.mean + gain * innovation;
  out.cov = symmetrized(state.cov - gain * pzz * gain.transpose());
  return out;
}

UkfState update(const UkfState& state, const PolarMeasurement& z, const AnchorPose& pose,
                const Mat3& r, const SigmaParams& sp) {
  const Mat3 to_local = pose.rotation().transpose();
  const auto h = [&](const StateVec& s) {
    const Vec3 local = to_local * (Vec3(s[kIx], s[kIy], s[kIz]) - pose.position);
    const double r = local.norm();
    if (!(r >= 1e-9)) throw Error(ErrorKind::DegeneratePoint, "sigma point coincides with the anchor");
    return Eigen::Vector3d(r, std::atan2(local.y(), local.x()),
                           std::asin(std::clamp(local.z() / r, -1.0, 1.0)));
  };
  return unscented_update(state, z.as_vector(), h, r, {false, true, true}, sp);
}

StepResult step(const UkfState& state, const UwbSample& sample, const AnchorPose& pose,
                const NoiseModel& noise, const NlosGate& gate) {
  const double dt = sample.timestamp - state.timestamp;
  if (!(dt > 0.0)) {
    throw Error(ErrorKind::NonMonotonicTimestamps, "sample does not advance the filter clock");
  }
  const UkfState prior = predict(state, dt, noise);
  const bool nlos = gate(sample);
  StepResult res{update(prior, sample.z, pose, nlos ? noise.r_nlos : noise.r_los), nlos};
  res.state.timestamp = sample.timestamp;
  return res;
}

StepResult step(const UkfState& state, const UwbSample& sample, const AnchorPose& pose,
                const NoiseModel& noise, const NlosDetectorModel& detector) {
  return step(state, sample, pose, noise, gate_from(detector));
}

double position_lambda_max(const UkfState& state) {
  Eigen::SelfAdjointEigenSolver<Mat3> es(state.position_cov(), Eigen::EigenvaluesOnly);
  return es.eigenvalues().maxCoeff();
}

bool uncertainty_flag(const UkfState& state, double u_th) {
  return position_lambda_max(state) > u_th;
}

UkfState initial_state(const UwbSample& first, const AnchorPose& pose, const InitPolicy& init) {
  const Vec3 p = anchor_polar_to_world(first.z, pose);
  UkfState s;
  s.mean << p.x(), 0.0, p.y(), 0.0, p.z();
  s.cov = init.initial_variance.asDiagonal();
  s.timestamp = first.timestamp;
  return s;
}

void TagTrajectory::append(const UkfState& posterior, bool used_nlos) {
  if (!points_.empty() && !(posterior.timestamp > points_.back().timestamp)) {
    throw Error(ErrorKind::NonMonotonicTimestamps, "trajectory timestamps must increase");
  }
  TrajectoryPoint pt;
  pt.timestamp = posterior.timestamp;
  pt.position = posterior.position();
  pt.position_cov = posterior.position_cov();
  pt.uncertain = uncertainty_flag(posterior, u_th_);
  pt.used_nlos = used_nlos;
  pt.state = posterior;
  points_.push_back(std::move(pt));
}

std::optional<PositionQuery> TagTrajectory::query(double t, double align_tolerance) const {
  constexpr double kSameTime = 1e-9;
  const auto it = std::upper_bound(points_.begin(), points_.end(), t + kSameTime,
                                   [](double v, const TrajectoryPoint& p) { return v < p.timestamp; });
  if (it == points_.begin()) return std::nullopt;
  const TrajectoryPoint& prev = *std::prev(it);
  double nearest = std::abs(t - prev.timestamp);
  if (it != points_.end()) nearest = std::min(nearest, std::abs(it->timestamp - t));
  if (nearest > align_tolerance) return std::nullopt;

  if (std::abs(t - prev.timestamp) <= kSameTime) {
    return PositionQuery{prev.position, prev.position_cov, prev.uncertain};
  }
  NoiseModel n;
  n.q_velocity_var = q_v_;
  n.q_height_var = q_z_;
  const UkfState s = predict(prev.state, t - prev.timestamp, n);
  return PositionQuery{s.position(), s.position_cov(), uncertainty_flag(s, u_th_)};
}

TagTracker::TagTracker(TagId id, AnchorPose pose, NoiseModel noise, NlosGate gate, InitPolicy init,
                       double u_th)
    : pose_(std::move(pose)),
      noise_(std::move(noise)),
      gate_(std::move(gate)),
      init_(std::move(init)),
      trajectory_(id, noise_.q_velocity_var, noise_.q_height_var, u_th) {}

void TagTracker::push(const UwbSample& sample) {
  if (!state_) {
    state_ = initial_state(sample, pose_, init_);
    trajectory_.append(*state_, false);
    return;
  }
  StepResult r;
  try {
    r = step(*state_, sample, pose_, noise_, gate_);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::CovarianceNotPD) throw;
    // Start over from this sample rather than lose the tag.
    r.state = initial_state(sample, pose_, init_);
    r.used_nlos = false;
  }
  state_ = r.state;
  trajectory_.append(r.state, r.used_nlos);
}

TagTrajectory track_tag(const std::vector<UwbSample>& samples, const AnchorPose& pose,
                        const NoiseModel& noise, const NlosGate& gate, const InitPolicy& init,
                        double u_th) {
  if (samples.empty()) throw Error(ErrorKind::EmptyInput, "track_tag needs at least one sample");
  TagTracker tracker(samples.front().tag_id, pose, noise, gate, init, u_th);
  for (const UwbSample& s : samples) tracker.push(s);
  return tracker.trajectory();
}

}  // namespace optin
