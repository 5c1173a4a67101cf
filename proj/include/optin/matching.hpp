#pragma once

#include <Eigen/Core>

#include <limits>
#include <vector>

#include "optin/geometry.hpp"
#include "optin/tracking.hpp"

namespace optin {

struct TrackletPoint {
  double timestamp = 0.0;
  Vec3 position = Vec3::Zero();
};

/// One camera-tracked identity fragment on the world ground frame.
struct Tracklet {
  TrackletId id = 0;
  std::vector<TrackletPoint> points;

  double start() const { return points.front().timestamp; }
  double end() const { return points.back().timestamp; }
};

inline constexpr double kInfiniteCost = std::numeric_limits<double>::infinity();

/// Frame timestamps closer than this are treated as the same camera frame.
inline constexpr double kFrameTimeEpsilon = 1e-6;

/// Smallest cost used when inverting c_ij.
inline constexpr double kMinCost = 1e-6;

struct PairCost {
  double cost = kInfiniteCost;
  int support = 0;
};

struct CostMatrix {
  Eigen::MatrixXd costs;    // tags x tracklets
  Eigen::MatrixXi support;  // surviving timestamp counts

  Eigen::Index tags() const { return costs.rows(); }
  Eigen::Index tracklets() const { return costs.cols(); }
};

using BoolMatrix = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

struct AssignmentResult {
  Eigen::MatrixXi x;  // binary, tags x tracklets
  double objective = 0.0;
};

/// Mahalanobis distance sqrt(d^T S^-1 d). Throws SingularCovariance when S is
/// not positive definite even after jitter.
double mahalanobis(const Vec3& d, const Mat3& cov);

/// Time-averaged Mahalanobis distance between a tag belief and a tracklet over
/// the tracklet's frames that have tag data within `align_tolerance` and are
/// not flagged uncertain. Infinite when no frame survives.
PairCost pairwise_cost(const TagTrajectory& tag, const Tracklet& tracklet, double align_tolerance);

/// OpenMP-parallel over (tag, tracklet) pairs; bitwise identical to the serial path.
CostMatrix compute_cost_matrix(const std::vector<TagTrajectory>& tags,
                               const std::vector<Tracklet>& tracklets, double align_tolerance);
CostMatrix compute_cost_matrix_serial(const std::vector<TagTrajectory>& tags,
                                      const std::vector<Tracklet>& tracklets,
                                      double align_tolerance);

/// True iff the tracklets share at least one camera frame.
bool temporal_overlap(const Tracklet& a, const Tracklet& b);
BoolMatrix overlap_matrix(const std::vector<Tracklet>& tracklets);

/// Exact solution of
///   max sum_ij x_ij / c_ij
///   s.t. each tracklet assigned to at most one tag,
///        tracklets sharing a frame never share a tag,
///        x_ij = 0 where c_ij > c_th or c_ij is infinite,
/// by depth-first branch and bound. Equal-objective optima resolve to the
/// selection that prefers lower (tag, tracklet) indices among equal weights.
AssignmentResult solve_assignment(const CostMatrix& costs, const BoolMatrix& overlaps, double c_th);

/// Objective of an arbitrary x, summed in row-major order.
double assignment_objective(const Eigen::MatrixXi& x, const CostMatrix& costs);

/// Checks the three constraint families on x.
bool assignment_feasible(const Eigen::MatrixXi& x, const CostMatrix& costs,
                         const BoolMatrix& overlaps, double c_th);

/// Restricts tracklets to points with t0 <= t < t1, dropping empty ones.
std::vector<Tracklet> clip_tracklets(const std::vector<Tracklet>& tracklets, double t0, double t1);

}  // namespace optin
