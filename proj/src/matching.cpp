#include "optin/matching.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>

#include "optin/error.hpp"

namespace optin {

double mahalanobis(const Vec3& d, const Mat3& cov) {
  Mat3 m = cov;
  for (int attempt = 0; attempt <= 3; ++attempt) {
    Eigen::LLT<Mat3> llt(m);
    if (llt.info() == Eigen::Success) {
      return llt.matrixL().solve(d).norm();
    }
    m += 1e-9 * Mat3::Identity();
  }
  throw Error(ErrorKind::SingularCovariance, "position covariance is not invertible");
}

PairCost pairwise_cost(const TagTrajectory& tag, const Tracklet& tracklet, double align_tolerance) {
  double sum = 0.0;
  int n = 0;
  for (const TrackletPoint& pt : tracklet.points) {
    const auto q = tag.query(pt.timestamp, align_tolerance);
    if (!q || q->uncertain) continue;
    sum += mahalanobis(pt.position - q->position, q->position_cov);
    ++n;
  }
  if (n == 0) return {};
  return {sum / n, n};
}

CostMatrix compute_cost_matrix_serial(const std::vector<TagTrajectory>& tags,
                                      const std::vector<Tracklet>& tracklets,
                                      double align_tolerance) {
  CostMatrix m;
  m.costs.resize(static_cast<Eigen::Index>(tags.size()), static_cast<Eigen::Index>(tracklets.size()));
  m.support.resize(m.costs.rows(), m.costs.cols());
  for (std::size_t i = 0; i < tags.size(); ++i) {
    for (std::size_t j = 0; j < tracklets.size(); ++j) {
      const PairCost pc = pairwise_cost(tags[i], tracklets[j], align_tolerance);
      m.costs(i, j) = pc.cost;
      m.support(i, j) = pc.support;
    }
  }
  return m;
}

CostMatrix compute_cost_matrix(const std::vector<TagTrajectory>& tags,
                               const std::vector<Tracklet>& tracklets, double align_tolerance) {
  CostMatrix m;
  const auto rows = static_cast<long>(tags.size());
  const auto cols = static_cast<long>(tracklets.size());
  m.costs.resize(rows, cols);
  m.support.resize(rows, cols);
  const long total = rows * cols;
  // Each pair writes its own cell; a worker exception is rethrown after the loop.
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic, 4)
  for (long k = 0; k < total; ++k) {
    const long i = k / cols;
    const long j = k % cols;
    try {
      const PairCost pc = pairwise_cost(tags[i], tracklets[j], align_tolerance);
      m.costs(i, j) = pc.cost;
      m.support(i, j) = pc.support;
    } catch (...) {
#pragma omp critical(optin_cost_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return m;
}

bool temporal_overlap(const Tracklet& a, const Tracklet& b) {
  if (a.points.empty() || b.points.empty()) return false;
  if (a.end() + kFrameTimeEpsilon < b.start() || b.end() + kFrameTimeEpsilon < a.start()) {
    return false;
  }
  std::size_t i = 0, j = 0;
  while (i < a.points.size() && j < b.points.size()) {
    const double ta = a.points[i].timestamp;
    const double tb = b.points[j].timestamp;
    if (std::abs(ta - tb) <= kFrameTimeEpsilon) return true;
    if (ta < tb) {
      ++i;
    } else {
      ++j;
    }
  }
  return false;
}

BoolMatrix overlap_matrix(const std::vector<Tracklet>& tracklets) {
  const auto n = static_cast<Eigen::Index>(tracklets.size());
  BoolMatrix o = BoolMatrix::Constant(n, n, false);
  for (Eigen::Index a = 0; a < n; ++a) {
    for (Eigen::Index b = a + 1; b < n; ++b) {
      const bool v = temporal_overlap(tracklets[a], tracklets[b]);
      o(a, b) = v;
      o(b, a) = v;
    }
  }
  return o;
}

namespace {

struct Candidate {
  int tag;
  int tracklet;
  double weight;
};

class BranchAndBound {
 public:
  BranchAndBound(std::vector<Candidate> cands, const BoolMatrix& overlaps, int tags, int tracklets)
      : cands_(std::move(cands)),
        overlaps_(overlaps),
        used_(static_cast<std::size_t>(tracklets), false),
        rows_(static_cast<std::size_t>(tags)),
        seen_(static_cast<std::size_t>(tracklets), -1) {}

  std::vector<Candidate> solve() {
    chosen_.clear();
    best_value_ = 0.0;
    best_.clear();
    dfs(0, 0.0);
    return best_;
  }

 private:
  bool feasible(const Candidate& c) const {
    if (used_[c.tracklet]) return false;
    for (int j : rows_[c.tag]) {
      if (overlaps_(j, c.tracklet)) return false;
    }
    return true;
  }

  // Optimistic completion: every still-free tracklet contributes its best
  // remaining feasible weight.
  double bound(std::size_t from) {
    ++stamp_;
    double sum = 0.0;
    for (std::size_t k = from; k < cands_.size(); ++k) {
      const Candidate& c = cands_[k];
      if (seen_[c.tracklet] == stamp_ || !feasible(c)) continue;
      seen_[c.tracklet] = stamp_;
      sum += c.weight;
    }
    return sum;
  }

  void dfs(std::size_t k, double value) {
    if (value > best_value_) {
      best_value_ = value;
      best_ = chosen_;
    }
    if (k == cands_.size()) return;
    if (value + bound(k) <= best_value_) return;

    const Candidate& c = cands_[k];
    if (feasible(c)) {
      used_[c.tracklet] = true;
      rows_[c.tag].push_back(c.tracklet);
      chosen_.push_back(c);
      dfs(k + 1, value + c.weight);
      chosen_.pop_back();
      rows_[c.tag].pop_back();
      used_[c.tracklet] = false;
    }
    dfs(k + 1, value);
  }

  std::vector<Candidate> cands_;
  const BoolMatrix& overlaps_;
  std::vector<bool> used_;
  std::vector<std::vector<int>> rows_;
  std::vector<long> seen_;
  long stamp_ = 0;
  std::vector<Candidate> chosen_;
  std::vector<Candidate> best_;
  double best_value_ = 0.0;
};

int find_root(std::vector<int>& parent, int a) {
  while (parent[a] != a) {
    parent[a] = parent[parent[a]];
    a = parent[a];
  }
  return a;
}

}  // namespace

AssignmentResult solve_assignment(const CostMatrix& costs, const BoolMatrix& overlaps, double c_th) {
  const int tags = static_cast<int>(costs.tags());
  const int tracklets = static_cast<int>(costs.tracklets());
  if (overlaps.rows() != tracklets || overlaps.cols() != tracklets) {
    throw Error(ErrorKind::DimensionMismatch, "overlap matrix does not match the cost matrix");
  }

  std::vector<Candidate> cands;
  for (int i = 0; i < tags; ++i) {
    for (int j = 0; j < tracklets; ++j) {
      const double c = costs.costs(i, j);
      if (std::isfinite(c) && c <= c_th) cands.push_back({i, j, 1.0 / std::max(c, kMinCost)});
    }
  }
  std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
    if (a.weight != b.weight) return a.weight > b.weight;
    if (a.tag != b.tag) return a.tag < b.tag;
    return a.tracklet < b.tracklet;
  });

  // Tracklets interact only through shared frames (within a tag) or by being
  // the same tracklet, so the problem splits over connected components of the
  // overlap graph restricted to candidate tracklets.
  std::vector<int> parent(static_cast<std::size_t>(tracklets));
  std::iota(parent.begin(), parent.end(), 0);
  std::vector<bool> active(static_cast<std::size_t>(tracklets), false);
  for (const Candidate& c : cands) active[c.tracklet] = true;
  for (int a = 0; a < tracklets; ++a) {
    if (!active[a]) continue;
    for (int b = a + 1; b < tracklets; ++b) {
      if (active[b] && overlaps(a, b)) parent[find_root(parent, a)] = find_root(parent, b);
    }
  }
  std::vector<std::vector<Candidate>> groups;
  std::vector<int> group_of(static_cast<std::size_t>(tracklets), -1);
  for (const Candidate& c : cands) {
    const int root = find_root(parent, c.tracklet);
    if (group_of[root] < 0) {
      group_of[root] = static_cast<int>(groups.size());
      groups.emplace_back();
    }
    groups[group_of[root]].push_back(c);
  }

  AssignmentResult res;
  res.x = Eigen::MatrixXi::Zero(tags, tracklets);
  for (auto& g : groups) {
    BranchAndBound bb(std::move(g), overlaps, tags, tracklets);
    for (const Candidate& c : bb.solve()) res.x(c.tag, c.tracklet) = 1;
  }
  res.objective = assignment_objective(res.x, costs);
  return res;
}

double assignment_objective(const Eigen::MatrixXi& x, const CostMatrix& costs) {
  double sum = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      if (x(i, j) != 0) sum += 1.0 / std::max(costs.costs(i, j), kMinCost);
    }
  }
  return sum;
}

bool assignment_feasible(const Eigen::MatrixXi& x, const CostMatrix& costs,
                         const BoolMatrix& overlaps, double c_th) {
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    if (x.col(j).sum() > 1) return false;
  }
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      if (x(i, j) == 0) continue;
      if (x(i, j) != 1) return false;
      const double c = costs.costs(i, j);
      if (!std::isfinite(c) || c > c_th) return false;
      for (Eigen::Index k = j + 1; k < x.cols(); ++k) {
        if (x(i, k) != 0 && overlaps(j, k)) return false;
      }
    }
  }
  return true;
}

std::vector<Tracklet> clip_tracklets(const std::vector<Tracklet>& tracklets, double t0, double t1) {
  std::vector<Tracklet> out;
  for (const Tracklet& tr : tracklets) {
    Tracklet c;
    c.id = tr.id;
    for (const TrackletPoint& p : tr.points) {
      if (p.timestamp >= t0 - kFrameTimeEpsilon && p.timestamp < t1 - kFrameTimeEpsilon) {
        c.points.push_back(p);
      }
    }
    if (!c.points.empty()) out.push_back(std::move(c));
  }
  return out;
}

}  // namespace optin
