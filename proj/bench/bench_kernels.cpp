// Serial reference against the OpenMP kernels, plus end-to-end replay.
#include <benchmark/benchmark.h>

#include <random>

#include "optin/calibration.hpp"
#include "optin/experiment.hpp"
#include "optin/matching.hpp"
#include "optin/optimize.hpp"
#include "optin/pipeline.hpp"

using namespace optin;
namespace ex = optin::experiment;

namespace {

struct Window {
  std::vector<TagTrajectory> tags;
  std::vector<Tracklet> tracklets;
};

// One 10 s window of a 23-person scene with five tags.
const Window& window() {
  static const Window w = [] {
    const Rig rig = Rig::standard();
    SceneConfig sc;
    sc.person_count = 23;
    sc.tag_count = 5;
    sc.duration = 10.0;
    const ex::SceneRun run = ex::simulate_run(rig, sc, UwbNoiseConfig{}, CameraNoiseConfig{}, 5);
    const ex::MethodSetup m = ex::oracle_method(rig, sc);
    const ReplayResult r = run_replay(run.uwb, run.camera.detections, m.config, m.gate);
    return Window{r.trajectories, build_tracklets(run.camera.detections, rig.intrinsics, rig.extrinsics,
                                                  m.config.w_r, m.config.h_tag)};
  }();
  return w;
}

void BM_CostMatrixSerial(benchmark::State& state) {
  const Window& w = window();
  for (auto _ : state) benchmark::DoNotOptimize(compute_cost_matrix_serial(w.tags, w.tracklets, 0.25));
}
BENCHMARK(BM_CostMatrixSerial)->Unit(benchmark::kMicrosecond);

void BM_CostMatrixParallel(benchmark::State& state) {
  const Window& w = window();
  for (auto _ : state) benchmark::DoNotOptimize(compute_cost_matrix(w.tags, w.tracklets, 0.25));
}
BENCHMARK(BM_CostMatrixParallel)->Unit(benchmark::kMicrosecond);

struct PlaneData {
  std::vector<Eigen::Vector3d> pts;
};

const PlaneData& plane_data() {
  static const PlaneData d = [] {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-5.0, 5.0);
    std::normal_distribution<double> n(0.0, 0.02);
    PlaneData p;
    for (int i = 0; i < 4000; ++i) {
      const double x = u(rng), y = u(rng);
      p.pts.emplace_back(x, y, i % 5 == 0 ? u(rng) : 0.3 * x - 0.2 * y + 1.0 + n(rng));
    }
    return p;
  }();
  return d;
}

template <bool Parallel>
void BM_RansacPlane(benchmark::State& state) {
  const PlaneData& d = plane_data();
  const auto fit = [&](const std::vector<std::size_t>& idx) -> std::optional<Eigen::Vector3d> {
    Eigen::MatrixXd a(idx.size(), 3);
    Eigen::VectorXd b(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) {
      a.row(k) << d.pts[idx[k]].x(), d.pts[idx[k]].y(), 1.0;
      b[k] = d.pts[idx[k]].z();
    }
    return a.colPivHouseholderQr().solve(b).eval();
  };
  const auto residual = [&](const Eigen::Vector3d& m, std::size_t i) {
    return std::abs(d.pts[i].z() - (m[0] * d.pts[i].x() + m[1] * d.pts[i].y() + m[2]));
  };
  RansacConfig cfg;
  cfg.sample_size = 8;
  cfg.iterations = 200;
  cfg.inlier_threshold = 0.1;
  for (auto _ : state) {
    if constexpr (Parallel) {
      benchmark::DoNotOptimize(ransac<Eigen::Vector3d>(d.pts.size(), fit, residual, cfg));
    } else {
      benchmark::DoNotOptimize(ransac_serial<Eigen::Vector3d>(d.pts.size(), fit, residual, cfg));
    }
  }
}
BENCHMARK(BM_RansacPlane<false>)->Name("BM_RansacSerial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_RansacPlane<true>)->Name("BM_RansacParallel")->Unit(benchmark::kMillisecond);

// CMA-ES on the noise-tuning constraint: every evaluation filters a 30 s walk.
template <bool Parallel>
void BM_CmaesTuning(benchmark::State& state) {
  static const ex::CalibrationOutcome cal = [] {
    ex::CalibrationSetup cs;
    cs.duration = 30.0;
    cs.tune_noise = false;
    cs.train_detector = false;
    return ex::run_calibration(Rig::standard(), cs, 2);
  }();
  const Rig rig = Rig::standard();
  TuneConfig tc;
  tc.cmaes.max_evaluations = 300;
  tc.cmaes.parallel = Parallel;
  tc.penalty_schedule = {1e3};
  for (auto _ : state) {
    benchmark::DoNotOptimize(tune_noise(cal.data, cal.extrinsics.params, always_los_gate(), rig.intrinsics,
                                        rig.extrinsics, tc));
  }
}
BENCHMARK(BM_CmaesTuning<false>)->Name("BM_CmaesSerial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_CmaesTuning<true>)->Name("BM_CmaesParallel")->Unit(benchmark::kMillisecond);

void BM_Replay23People(benchmark::State& state) {
  const Rig rig = Rig::standard();
  SceneConfig sc;
  sc.person_count = 23;
  sc.duration = 60.0;
  const ex::SceneRun run = ex::simulate_run(rig, sc, UwbNoiseConfig{}, CameraNoiseConfig{}, 9);
  const ex::MethodSetup m = ex::oracle_method(rig, sc);
  for (auto _ : state) benchmark::DoNotOptimize(run_replay(run.uwb, run.camera.detections, m.config, m.gate));
  state.counters["frames"] = 600;
}
BENCHMARK(BM_Replay23People)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
