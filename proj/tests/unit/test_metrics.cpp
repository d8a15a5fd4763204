#include <gtest/gtest.h>

#include <random>

#include "fastfusion/metrics.hpp"
#include "test_support.hpp"

using namespace fastfusion;

namespace {

std::vector<StampedPose> wavy_trajectory(int n, double t0 = 10.0) {
  std::vector<StampedPose> out;
  for (int i = 0; i < n; ++i) {
    const double t = t0 + i / 30.0;
    out.push_back({t, Pose(so3_exp(Vec3(0.1 * std::sin(t), 0.3 * t, 0.05 * std::cos(2 * t))),
                           Vec3(std::sin(0.7 * t), 0.5 * std::cos(0.3 * t), 0.2 * t))});
  }
  return out;
}

}  // namespace

TEST(ComputeAte, TrajectoryAgainstItselfIsZero) {
  const auto traj = wavy_trajectory(100);
  const AteResult r = compute_ate(traj, traj);
  EXPECT_EQ(r.pairs, 100u);
  EXPECT_LT(r.rmse, 1e-12);
}

TEST(ComputeAte, RigidTransformIsRemovedByAlignment) {
  const auto gt = wavy_trajectory(120);
  const Pose g(so3_exp(Vec3(0.4, -1.2, 2.0)), Vec3(3.0, -1.0, 0.5));
  std::vector<StampedPose> est;
  for (const auto& p : gt) est.push_back({p.timestamp, g * p.pose});
  const AteResult r = compute_ate(est, gt);
  EXPECT_LT(r.rmse, 1e-9);
  // the recovered alignment undoes g
  EXPECT_LT((r.alignment * g).translation().norm(), 1e-9);
  EXPECT_LT(so3_log((r.alignment * g).rotation()).norm(), 1e-9);
}

TEST(ComputeAte, CentimetreNoiseGivesCentimetreRmse) {
  // isotropic offsets of 1 cm RMS: per-axis sigma = 0.01 / sqrt(3)
  const auto gt = wavy_trajectory(3000);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 0.01 / std::sqrt(3.0));
  std::vector<StampedPose> est;
  double injected = 0.0;
  for (const auto& p : gt) {
    const Vec3 off(n(rng), n(rng), n(rng));
    injected += off.squaredNorm();
    est.push_back({p.timestamp, Pose(p.pose.rotation(), p.pose.translation() + off)});
  }
  injected = std::sqrt(injected / gt.size());
  const AteResult r = compute_ate(est, gt);
  EXPECT_NEAR(r.rmse, 0.01, 0.001);
  // alignment can only reduce the error, and barely does for zero-mean noise
  EXPECT_LE(r.rmse, injected + 1e-12);
  EXPECT_GT(r.rmse, 0.98 * injected);
}

TEST(ComputeAte, AssociatesWithinWindowOnly) {
  const auto gt = wavy_trajectory(50);
  std::vector<StampedPose> est = gt;
  for (auto& p : est) p.timestamp += 0.015;
  EXPECT_EQ(associate(est, gt).size(), 50u);
  for (auto& p : est) p.timestamp += 0.010;  // 25 ms off: nearest is still 8.3 ms from the next pose
  EXPECT_EQ(associate(est, gt).size(), 49u);
}

TEST(ComputeAte, EachGroundTruthPoseUsedOnce) {
  const auto gt = wavy_trajectory(10);
  std::vector<StampedPose> est{{gt[3].timestamp, gt[3].pose}, {gt[3].timestamp + 0.001, gt[3].pose}};
  // the only pose within 20 ms is taken by the first estimate
  EXPECT_EQ(associate(est, gt).size(), 1u);
  const auto pairs = associate(est, gt, 0.05);
  ASSERT_EQ(pairs.size(), 2u);
  EXPECT_NE(pairs[0].truth, pairs[1].truth);
}

TEST(ComputeAte, DisjointTimestampsThrow) {
  const auto gt = wavy_trajectory(10, 0.0);
  const auto est = wavy_trajectory(10, 100.0);
  EXPECT_THROW(compute_ate(est, gt), NoOverlap);
  EXPECT_THROW(compute_ate({}, gt), NoOverlap);
}

TEST(ComputeAte, FewPairsAlignByTranslation) {
  const auto gt = wavy_trajectory(2);
  std::vector<StampedPose> est;
  for (const auto& p : gt) est.push_back({p.timestamp, Pose(p.pose.rotation(), p.pose.translation() + Vec3(1, 2, 3))});
  EXPECT_LT(compute_ate(est, gt).rmse, 1e-12);
}

TEST(ComputeAie, HandComputedTwoPatchFixture) {
  // patch 1: |r| = {2, 4} and {1, 3}; patch 2: {10} and {0, 6}
  // per (patch, frame) means: 3, 2, 10, 3 -> 18 / 4
  const std::vector<PatchErrorRecord> log{{1, 1, 3.0}, {2, 1, 2.0}, {1, 2, 10.0}, {2, 2, 3.0}};
  EXPECT_DOUBLE_EQ(compute_aie(log), 4.5);
  EXPECT_EQ(compute_aie({}), 0.0);
}

TEST(ComputeAie, MatchesPatchStatsMean) {
  PatchStats a;
  a.photometric_rows = 2;
  a.abs_photometric_sum = 2.0 + 4.0;
  PatchStats b;
  b.photometric_rows = 1;
  b.abs_photometric_sum = 10.0;
  const std::vector<PatchErrorRecord> log{{0, 1, a.mean_abs_photometric()}, {0, 2, b.mean_abs_photometric()}};
  EXPECT_DOUBLE_EQ(compute_aie(log), 6.5);
}
