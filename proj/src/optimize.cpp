#include "optin/optimize.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>

namespace optin {

namespace {

double finite_or_inf(double v) { return std::isfinite(v) ? v : std::numeric_limits<double>::infinity(); }

}  // namespace

OptimResult nelder_mead(const Objective& f, const Eigen::VectorXd& x0, const NelderMeadOptions& opts) {
  const Eigen::Index n = x0.size();
  OptimResult res;
  const double f0 = f(x0);
  if (!std::isfinite(f0)) throw Error(ErrorKind::NonFiniteObjective, "objective not finite at x0");

  Eigen::VectorXd step(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    step[i] = opts.initial_step.size() == n ? opts.initial_step[i] : opts.initial_step[0];
  }

  std::vector<Eigen::VectorXd> pts(static_cast<std::size_t>(n + 1), x0);
  std::vector<double> vals(static_cast<std::size_t>(n + 1), f0);
  int evals = 1;
  auto eval = [&](const Eigen::VectorXd& x) {
    ++evals;
    return finite_or_inf(f(x));
  };
  for (Eigen::Index i = 0; i < n; ++i) {
    pts[i + 1][i] += step[i];
    vals[i + 1] = eval(pts[i + 1]);
  }

  std::vector<std::size_t> order(pts.size());
  const auto sort_simplex = [&] {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return vals[a] < vals[b]; });
    std::vector<Eigen::VectorXd> p2;
    std::vector<double> v2;
    for (std::size_t k : order) {
      p2.push_back(pts[k]);
      v2.push_back(vals[k]);
    }
    pts.swap(p2);
    vals.swap(v2);
  };

  constexpr double kReflect = 1.0, kExpand = 2.0, kContract = 0.5, kShrink = 0.5;
  while (true) {
    sort_simplex();
    double diameter = 0.0;
    for (std::size_t k = 1; k < pts.size(); ++k) {
      diameter = std::max(diameter, (pts[k] - pts[0]).lpNorm<Eigen::Infinity>());
    }
    if (diameter < opts.x_tolerance || evals >= opts.max_evaluations) break;

    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
    for (Eigen::Index k = 0; k < n; ++k) centroid += pts[k];
    centroid /= static_cast<double>(n);
    const Eigen::VectorXd& worst = pts[n];

    const Eigen::VectorXd xr = centroid + kReflect * (centroid - worst);
    const double fr = eval(xr);
    if (fr < vals[0]) {
      const Eigen::VectorXd xe = centroid + kExpand * (xr - centroid);
      const double fe = eval(xe);
      if (fe < fr) {
        pts[n] = xe;
        vals[n] = fe;
      } else {
        pts[n] = xr;
        vals[n] = fr;
      }
      continue;
    }
    if (fr < vals[n - 1]) {
      pts[n] = xr;
      vals[n] = fr;
      continue;
    }
    const bool outside = fr < vals[n];
    const Eigen::VectorXd xc = outside ? Eigen::VectorXd(centroid + kContract * (xr - centroid))
                                       : Eigen::VectorXd(centroid + kContract * (worst - centroid));
    const double fc = eval(xc);
    if (fc < (outside ? fr : vals[n])) {
      pts[n] = xc;
      vals[n] = fc;
      continue;
    }
    for (std::size_t k = 1; k < pts.size(); ++k) {
      pts[k] = pts[0] + kShrink * (pts[k] - pts[0]);
      vals[k] = eval(pts[k]);
    }
  }
  res.x = pts[0];
  res.f = vals[0];
  res.evaluations = evals;
  return res;
}

Eigen::VectorXd mirror_into_box(Eigen::VectorXd x, const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double width = hi[i] - lo[i];
    if (!(width > 0.0)) {
      x[i] = lo[i];
      continue;
    }
    // Reflect on a period of 2 * width.
    double t = std::fmod(x[i] - lo[i], 2.0 * width);
    if (t < 0.0) t += 2.0 * width;
    x[i] = t <= width ? lo[i] + t : hi[i] - (t - width);
  }
  return x;
}

CmaesResult cma_es(const Objective& f, const Eigen::VectorXd& x0, const CmaesConfig& cfg) {
  const Eigen::Index n = x0.size();
  const double nd = static_cast<double>(n);
  if (!(cfg.sigma0 > 0.0)) throw Error(ErrorKind::InvalidArgument, "sigma0 must be positive");
  const int lambda = cfg.population > 0 ? cfg.population : 4 + static_cast<int>(std::floor(3.0 * std::log(nd)));
  if (lambda < 2) throw Error(ErrorKind::InvalidArgument, "population must be at least 2");
  const bool boxed = cfg.lower.has_value() && cfg.upper.has_value();

  CmaesResult res;
  Eigen::VectorXd mean = boxed ? mirror_into_box(x0, *cfg.lower, *cfg.upper) : x0;
  res.x = mean;
  res.f = f(mean);
  res.evaluations = 1;
  if (!std::isfinite(res.f)) throw Error(ErrorKind::NonFiniteObjective, "objective not finite at x0");

  const int mu = lambda / 2;
  Eigen::VectorXd w(mu);
  for (int i = 0; i < mu; ++i) w[i] = std::log(mu + 0.5) - std::log(i + 1.0);
  w /= w.sum();
  const double mueff = 1.0 / w.squaredNorm();

  const double cc = (4.0 + mueff / nd) / (nd + 4.0 + 2.0 * mueff / nd);
  const double cs = (mueff + 2.0) / (nd + mueff + 5.0);
  const double c1 = 2.0 / ((nd + 1.3) * (nd + 1.3) + mueff);
  const double cmu = std::min(1.0 - c1, 2.0 * (mueff - 2.0 + 1.0 / mueff) / ((nd + 2.0) * (nd + 2.0) + mueff));
  const double damps = 1.0 + 2.0 * std::max(0.0, std::sqrt((mueff - 1.0) / (nd + 1.0)) - 1.0) + cs;
  const double chi_n = std::sqrt(nd) * (1.0 - 1.0 / (4.0 * nd) + 1.0 / (21.0 * nd * nd));

  double sigma = cfg.sigma0;
  Eigen::MatrixXd c = Eigen::MatrixXd::Identity(n, n);
  Eigen::MatrixXd b = Eigen::MatrixXd::Identity(n, n);
  Eigen::VectorXd d = Eigen::VectorXd::Ones(n);
  Eigen::VectorXd pc = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd ps = Eigen::VectorXd::Zero(n);

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Eigen::VectorXd> xs(static_cast<std::size_t>(lambda));
  std::vector<double> fs(static_cast<std::size_t>(lambda));
  std::vector<int> idx(static_cast<std::size_t>(lambda));

  for (int gen = 0; res.evaluations < cfg.max_evaluations; ++gen) {
    for (int k = 0; k < lambda; ++k) {
      Eigen::VectorXd z(n);
      for (Eigen::Index i = 0; i < n; ++i) z[i] = normal(rng);
      Eigen::VectorXd x = mean + sigma * (b * d.asDiagonal() * z);
      if (boxed) x = mirror_into_box(std::move(x), *cfg.lower, *cfg.upper);
      xs[k] = std::move(x);
    }

    if (cfg.parallel) {
      std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic, 1)
      for (int k = 0; k < lambda; ++k) {
        try {
          fs[k] = finite_or_inf(f(xs[k]));
        } catch (...) {
#pragma omp critical(optin_cmaes_failure)
          if (!failure) failure = std::current_exception();
        }
      }
      if (failure) std::rethrow_exception(failure);
    } else {
      for (int k = 0; k < lambda; ++k) fs[k] = finite_or_inf(f(xs[k]));
    }
    res.evaluations += lambda;

    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b2) { return fs[a] < fs[b2]; });
    if (fs[idx[0]] < res.f) {
      res.f = fs[idx[0]];
      res.x = xs[idx[0]];
    }
    res.best_history.push_back(res.f);
    res.generations = gen + 1;

    const Eigen::VectorXd old_mean = mean;
    mean.setZero();
    for (int i = 0; i < mu; ++i) mean += w[i] * xs[idx[i]];
    const Eigen::VectorXd yw = (mean - old_mean) / sigma;

    // C^{-1/2} * yw = B D^-1 B^T yw
    const Eigen::VectorXd c_inv_sqrt_yw = b * (b.transpose() * yw).cwiseQuotient(d);
    ps = (1.0 - cs) * ps + std::sqrt(cs * (2.0 - cs) * mueff) * c_inv_sqrt_yw;
    const double ps_norm = ps.norm();
    const double hsig_lhs = ps_norm / std::sqrt(1.0 - std::pow(1.0 - cs, 2.0 * (gen + 1))) / chi_n;
    const double hsig = hsig_lhs < 1.4 + 2.0 / (nd + 1.0) ? 1.0 : 0.0;
    pc = (1.0 - cc) * pc + hsig * std::sqrt(cc * (2.0 - cc) * mueff) * yw;

    Eigen::MatrixXd rank_mu = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < mu; ++i) {
      const Eigen::VectorXd yi = (xs[idx[i]] - old_mean) / sigma;
      rank_mu.noalias() += w[i] * yi * yi.transpose();
    }
    c = (1.0 - c1 - cmu) * c + c1 * (pc * pc.transpose() + (1.0 - hsig) * cc * (2.0 - cc) * c) + cmu * rank_mu;
    c = 0.5 * (c + c.transpose());
    sigma *= std::exp((cs / damps) * (ps_norm / chi_n - 1.0));

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c);
    b = es.eigenvectors();
    d = es.eigenvalues().cwiseMax(1e-300).cwiseSqrt();

    if (res.f <= cfg.f_target) break;
    const double range = fs[idx[lambda - 1]] - fs[idx[0]];
    if (gen > 10 && std::isfinite(range) && range < cfg.f_tolerance) break;
    if (sigma * d.maxCoeff() < 1e-14 * std::max(1.0, mean.cwiseAbs().maxCoeff())) break;
  }
  return res;
}

}  // namespace optin
