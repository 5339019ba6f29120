#pragma once

#include <stdexcept>
#include <vector>

#include "bvio/geometry.hpp"

namespace bvio {

class MetricError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StampedPose {
  double t = 0.0;
  Pose pose;
};

using Trajectory = std::vector<StampedPose>;

struct MatchedPair {
  std::size_t est = 0;
  std::size_t gt = 0;
};

/// Nearest ground-truth stamp for each estimate, kept when within max_dt.
std::vector<MatchedPair> match_by_time(const Trajectory& est, const Trajectory& gt, double max_dt = 0.05);

/// Rigid (rotation + translation, no scale) alignment of est onto gt
/// minimizing squared position error, then position RMSE. Throws MetricError
/// with fewer than 3 matches.
double ate(const Trajectory& est, const Trajectory& gt, double max_dt = 0.05);

/// ATE restricted to estimates with t0 <= t <= t1.
double segment_ate(const Trajectory& est, const Trajectory& gt, double t0, double t1, double max_dt = 0.05);

/// Re-base est so its pose at the first frame with ground-truth path length
/// >= skip_distance equals gt's, then average the position error over the
/// following frames. Throws MetricError when the trajectory is too short.
double start_aligned_error(const Trajectory& est, const Trajectory& gt, double skip_distance = 100.0,
                           double max_dt = 0.05);

}  // namespace bvio
