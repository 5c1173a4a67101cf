#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <vector>

#include "optin/error.hpp"

namespace optin {

using Objective = std::function<double(const Eigen::VectorXd&)>;

struct OptimResult {
  Eigen::VectorXd x;
  double f = std::numeric_limits<double>::infinity();
  int evaluations = 0;
};

struct NelderMeadOptions {
  /// Initial simplex edge per coordinate; a single entry is broadcast.
  Eigen::VectorXd initial_step = Eigen::VectorXd::Constant(1, 0.1);
  double x_tolerance = 1e-9;  // simplex diameter
  int max_evaluations = 20000;
};

OptimResult nelder_mead(const Objective& f, const Eigen::VectorXd& x0,
                        const NelderMeadOptions& opts = {});

struct CmaesConfig {
  double sigma0 = 1.0;
  int population = 0;  // 0 selects 4 + floor(3 ln n)
  int max_evaluations = 10000;
  double f_tolerance = 1e-12;  // stop when the generation's f-range falls below
  double f_target = -std::numeric_limits<double>::infinity();
  std::uint64_t seed = 1;
  /// Optional box bounds; out-of-box samples are mirrored back inside.
  std::optional<Eigen::VectorXd> lower;
  std::optional<Eigen::VectorXd> upper;
  /// Evaluate each generation with OpenMP. Results are reduced in population
  /// order, so the trajectory is identical either way.
  bool parallel = true;
};

struct CmaesResult : OptimResult {
  std::vector<double> best_history;  // best-so-far f after each generation
  int generations = 0;
};

CmaesResult cma_es(const Objective& f, const Eigen::VectorXd& x0, const CmaesConfig& cfg);

/// Mirrors each coordinate into [lo, hi].
Eigen::VectorXd mirror_into_box(Eigen::VectorXd x, const Eigen::VectorXd& lo,
                                const Eigen::VectorXd& hi);

struct RansacConfig {
  int sample_size = 8;
  int iterations = 100;
  double inlier_threshold = 0.5;
  std::uint64_t seed = 1;
};

template <class Model>
struct RansacResult {
  Model model;
  std::vector<bool> inliers;
  int inlier_count = 0;
  int best_hypothesis_inliers = 0;
};

namespace detail {

template <class Model>
struct Hypothesis {
  std::optional<Model> model;
  int inliers = 0;
  double mean_residual = std::numeric_limits<double>::infinity();
};

template <class Model, class ResidualFn>
Hypothesis<Model> score_hypothesis(std::optional<Model> model, std::size_t n, ResidualFn& residual,
                                   double threshold) {
  Hypothesis<Model> h;
  if (!model) return h;
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = residual(*model, i);
    if (r < threshold) {
      ++h.inliers;
      sum += r;
    }
  }
  h.mean_residual = h.inliers > 0 ? sum / h.inliers : std::numeric_limits<double>::infinity();
  h.model = std::move(model);
  return h;
}

template <class Model>
bool better(const Hypothesis<Model>& a, const Hypothesis<Model>& b) {
  if (!a.model) return false;
  if (!b.model) return true;
  if (a.inliers != b.inliers) return a.inliers > b.inliers;
  return a.mean_residual < b.mean_residual;
}

inline std::vector<std::vector<std::size_t>> draw_subsets(std::size_t n, const RansacConfig& cfg) {
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> idx(n);
  std::vector<std::vector<std::size_t>> subsets(static_cast<std::size_t>(cfg.iterations));
  for (auto& s : subsets) {
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    // Partial Fisher-Yates for the first sample_size positions.
    for (int k = 0; k < cfg.sample_size; ++k) {
      std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(k), n - 1);
      std::swap(idx[k], idx[pick(rng)]);
    }
    s.assign(idx.begin(), idx.begin() + cfg.sample_size);
  }
  return subsets;
}

template <class Model, class FitFn, class ResidualFn>
RansacResult<Model> finish(Hypothesis<Model> best, std::size_t n, FitFn& fit, ResidualFn& residual,
                           double threshold) {
  if (!best.model) throw Error(ErrorKind::NoValidHypothesis, "every RANSAC hypothesis failed");
  std::vector<std::size_t> inlier_idx;
  for (std::size_t i = 0; i < n; ++i) {
    if (residual(*best.model, i) < threshold) inlier_idx.push_back(i);
  }
  Hypothesis<Model> refit = score_hypothesis<Model>(fit(inlier_idx), n, residual, threshold);
  // The refit is kept only if it does not lose inliers.
  const Hypothesis<Model>& chosen =
      refit.model && refit.inliers >= best.inliers ? refit : best;
  RansacResult<Model> res;
  res.model = *chosen.model;
  res.inliers.assign(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    if (residual(res.model, i) < threshold) {
      res.inliers[i] = true;
      ++res.inlier_count;
    }
  }
  res.best_hypothesis_inliers = best.inliers;
  return res;
}

}  // namespace detail

/// Generic RANSAC over indexed samples.
///   fit(indices) -> std::optional<Model>   (nullopt when the subset is degenerate)
///   residual(model, index) -> double
/// Subsets are drawn serially from the seed, so the serial and parallel
/// variants visit identical hypotheses and return identical results.
template <class Model, class FitFn, class ResidualFn>
RansacResult<Model> ransac_serial(std::size_t n, FitFn fit, ResidualFn residual,
                                  const RansacConfig& cfg) {
  if (n < static_cast<std::size_t>(cfg.sample_size) || cfg.sample_size < 1 || cfg.iterations < 1 ||
      !(cfg.inlier_threshold > 0.0)) {
    throw Error(ErrorKind::InvalidArgument, "invalid RANSAC configuration for data size");
  }
  const auto subsets = detail::draw_subsets(n, cfg);
  detail::Hypothesis<Model> best;
  for (const auto& s : subsets) {
    auto h = detail::score_hypothesis<Model>(fit(s), n, residual, cfg.inlier_threshold);
    if (detail::better(h, best)) best = std::move(h);
  }
  return detail::finish<Model>(std::move(best), n, fit, residual, cfg.inlier_threshold);
}

template <class Model, class FitFn, class ResidualFn>
RansacResult<Model> ransac(std::size_t n, FitFn fit, ResidualFn residual, const RansacConfig& cfg) {
  if (n < static_cast<std::size_t>(cfg.sample_size) || cfg.sample_size < 1 || cfg.iterations < 1 ||
      !(cfg.inlier_threshold > 0.0)) {
    throw Error(ErrorKind::InvalidArgument, "invalid RANSAC configuration for data size");
  }
  const auto subsets = detail::draw_subsets(n, cfg);
  std::vector<detail::Hypothesis<Model>> hyps(subsets.size());
  std::exception_ptr failure;
  const long count = static_cast<long>(subsets.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (long k = 0; k < count; ++k) {
    try {
      hyps[k] = detail::score_hypothesis<Model>(fit(subsets[k]), n, residual, cfg.inlier_threshold);
    } catch (...) {
#pragma omp critical(optin_ransac_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  detail::Hypothesis<Model> best;
  for (auto& h : hyps) {
    if (detail::better(h, best)) best = std::move(h);
  }
  return detail::finish<Model>(std::move(best), n, fit, residual, cfg.inlier_threshold);
}

}  // namespace optin
