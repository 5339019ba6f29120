#include "bvio/metrics.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>

namespace bvio {

std::vector<MatchedPair> match_by_time(const Trajectory& est, const Trajectory& gt, double max_dt) {
  std::vector<MatchedPair> out;
  if (gt.empty()) return out;
  for (std::size_t i = 0; i < est.size(); ++i) {
    const double t = est[i].t;
    auto it = std::lower_bound(gt.begin(), gt.end(), t, [](const StampedPose& s, double v) { return s.t < v; });
    std::size_t best = gt.size();
    double best_dt = max_dt;
    for (auto c : {it, it == gt.begin() ? gt.end() : std::prev(it)}) {
      if (c == gt.end()) continue;
      const double dt = std::abs(c->t - t);
      if (dt <= best_dt) {
        best_dt = dt;
        best = static_cast<std::size_t>(c - gt.begin());
      }
    }
    if (best < gt.size()) out.push_back({i, best});
  }
  return out;
}

double ate(const Trajectory& est, const Trajectory& gt, double max_dt) {
  const auto pairs = match_by_time(est, gt, max_dt);
  if (pairs.size() < 3) throw MetricError("ATE needs at least 3 time-matched poses");
  const int n = static_cast<int>(pairs.size());
  Eigen::Matrix3Xd src(3, n), dst(3, n);
  for (int k = 0; k < n; ++k) {
    src.col(k) = est[pairs[k].est].pose.translation;
    dst.col(k) = gt[pairs[k].gt].pose.translation;
  }
  const Eigen::Matrix4d T = Eigen::umeyama(src, dst, false);
  const Eigen::Matrix3Xd aligned = (T.topLeftCorner<3, 3>() * src).colwise() + T.topRightCorner<3, 1>();
  return std::sqrt((aligned - dst).colwise().squaredNorm().mean());
}

double segment_ate(const Trajectory& est, const Trajectory& gt, double t0, double t1, double max_dt) {
  Trajectory seg;
  for (const auto& s : est) {
    if (s.t >= t0 && s.t <= t1) seg.push_back(s);
  }
  return ate(seg, gt, max_dt);
}

double start_aligned_error(const Trajectory& est, const Trajectory& gt, double skip_distance, double max_dt) {
  const auto pairs = match_by_time(est, gt, max_dt);
  if (pairs.size() < 2) throw MetricError("start-aligned error needs matched poses");
  double length = 0.0;
  std::size_t start = pairs.size();
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    if (k > 0) length += (gt[pairs[k].gt].pose.translation - gt[pairs[k - 1].gt].pose.translation).norm();
    if (length >= skip_distance) {
      start = k;
      break;
    }
  }
  if (start + 1 >= pairs.size()) throw MetricError("trajectory shorter than the skip distance");
  const Pose rebase = gt[pairs[start].gt].pose * est[pairs[start].est].pose.inverse();
  double sum = 0.0;
  for (std::size_t k = start + 1; k < pairs.size(); ++k) {
    sum += (rebase * est[pairs[k].est].pose.translation - gt[pairs[k].gt].pose.translation).norm();
  }
  return sum / static_cast<double>(pairs.size() - start - 1);
}

}  // namespace bvio
