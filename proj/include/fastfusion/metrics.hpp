#pragma once

// Trajectory and tracking-quality metrics.

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "fastfusion/errors.hpp"
#include "fastfusion/frame_io.hpp"

namespace fastfusion {

struct AtePair {
  double timestamp = 0.0;
  Vec3 estimated = Vec3::Zero();
  Vec3 truth = Vec3::Zero();
};

/// Nearest-timestamp association; each ground-truth pose is used at most once.
inline std::vector<AtePair> associate(std::span<const StampedPose> est, std::span<const StampedPose> gt,
                                      double window = 0.02) {
  std::vector<StampedPose> sorted(gt.begin(), gt.end());
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; });
  std::vector<bool> used(sorted.size(), false);
  std::vector<AtePair> out;
  for (const auto& e : est) {
    const auto it = std::lower_bound(sorted.begin(), sorted.end(), e.timestamp,
                                     [](const StampedPose& p, double t) { return p.timestamp < t; });
    std::ptrdiff_t best = -1;
    double best_dt = window;
    for (auto c : {it - 1, it}) {
      if (c < sorted.begin() || c >= sorted.end()) continue;
      const auto i = c - sorted.begin();
      const double dt = std::abs(c->timestamp - e.timestamp);
      if (!used[i] && dt <= best_dt + 1e-12) {
        best = i;
        best_dt = dt;
      }
    }
    if (best < 0) continue;
    used[best] = true;
    out.push_back({e.timestamp, e.pose.translation(), sorted[best].pose.translation()});
  }
  return out;
}

struct AteResult {
  double rmse = 0.0;
  std::size_t pairs = 0;
  Pose alignment;  // maps estimated positions onto ground truth
};

/// Rigid (no scale) least-squares alignment of the estimated positions to the
/// ground truth, then RMSE of the translational differences.
inline AteResult compute_ate(std::span<const StampedPose> est, std::span<const StampedPose> gt, double window = 0.02) {
  const auto pairs = associate(est, gt, window);
  if (pairs.empty()) throw NoOverlap("compute_ate: no timestamps associate within the window");
  Eigen::Matrix3Xd src(3, pairs.size()), dst(3, pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    src.col(static_cast<Eigen::Index>(i)) = pairs[i].estimated;
    dst.col(static_cast<Eigen::Index>(i)) = pairs[i].truth;
  }
  AteResult r;
  r.pairs = pairs.size();
  if (pairs.size() >= 3) {
    const Eigen::Matrix4d T = Eigen::umeyama(src, dst, false);
    r.alignment = Pose(T.topLeftCorner<3, 3>(), T.topRightCorner<3, 1>());
  } else {
    r.alignment = Pose(Mat3::Identity(), dst.rowwise().mean() - src.rowwise().mean());
  }
  double ss = 0.0;
  for (std::size_t i = 0; i < pairs.size(); ++i) ss += (r.alignment * pairs[i].estimated - pairs[i].truth).squaredNorm();
  r.rmse = std::sqrt(ss / static_cast<double>(pairs.size()));
  return r;
}

/// One tracked (patch, frame) pair: mean absolute photometric residual at the
/// converged pose, in gray levels.
struct PatchErrorRecord {
  int frame = 0;
  std::uint64_t patch_id = 0;
  double mean_abs_error = 0.0;
};

/// Average intensity error: mean over all logged (patch, frame) pairs.
inline double compute_aie(std::span<const PatchErrorRecord> log) {
  if (log.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& r : log) sum += r.mean_abs_error;
  return sum / static_cast<double>(log.size());
}

}  // namespace fastfusion
