#include <gtest/gtest.h>

#include "fastfusion/imu_preint.hpp"
#include "test_support.hpp"

using namespace fastfusion;
using fftest::rotation_error;

namespace {

const Vec3 kGravity(0, 0, -9.81);

std::vector<ImuSample> static_samples(const Mat3& R_wi, const Vec3& g, int n, double tau) {
  std::vector<ImuSample> s;
  for (int i = 0; i < n; ++i) s.push_back({i * tau, -(R_wi.transpose() * g), Vec3::Zero()});
  return s;
}

}  // namespace

TEST(Preintegrate, StaticSamplesCancelGravity) {
  const Mat3 R_prev = so3_exp(Vec3(0.3, -0.2, 1.0));
  PreintegrationInput in;
  in.rotation_prev = R_prev;
  in.imu_extrinsic = fftest::test_extrinsic();
  const Mat3 R_wi = R_prev * in.imu_extrinsic.rotation();
  for (int n : {2, 7, 40}) {
    const auto d = preintegrate(static_samples(R_wi, kGravity, n, 0.005), in);
    EXPECT_LT((d.delta_R - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LT(d.delta_v.norm(), 1e-10);
    EXPECT_LT(d.delta_t.norm(), 1e-10);
    EXPECT_NEAR(d.duration, n * 0.005, 1e-12);
    EXPECT_EQ(d.sample_count, n);
  }
}

TEST(Preintegrate, ConstantRateAboutZ) {
  std::vector<ImuSample> s;
  for (int i = 0; i < 100; ++i) s.push_back({i * 0.005, Vec3(0, 0, 9.81), Vec3(0, 0, 1)});
  const auto d = preintegrate(s, PreintegrationInput{});
  EXPECT_NEAR(d.duration, 0.5, 1e-12);
  EXPECT_LT(rotation_error(d.delta_R, so3_exp(Vec3(0, 0, 0.5))), 1e-6);
}

TEST(Preintegrate, MatchesDenseIntegrationOnSmoothMotion) {
  const Pose ext = fftest::test_extrinsic();
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto traj = fftest::random_smooth_trajectory(seed);
    const double t0 = 0.37 * seed, t1 = t0 + 0.1;
    const auto oracle = fftest::dense_integrate(traj, ext, kGravity, t0, t1);
    PreintegrationInput in;
    in.imu_extrinsic = ext;
    in.gravity = kGravity;
    in.rotation_prev = traj.pose(t0).rotation();
    in.velocity_prev = synth::imu_velocity(traj, t0, ext);
    in.end_time = t1;
    const auto samples = fftest::sample_imu(traj, ext, kGravity, t0, t1, 200.0);
    const auto d = preintegrate(samples, in);
    EXPECT_LT(rotation_error(d.delta_R, oracle.delta_R), 1e-5) << "seed " << seed;
    EXPECT_LT((d.delta_t - oracle.delta_t).norm(), 1e-5) << "seed " << seed;
    // the oracle itself against the closed-form trajectory
    const Pose a = traj.pose(t0), b = traj.pose(t1);
    EXPECT_LT(rotation_error(oracle.delta_R, b.rotation() * a.rotation().transpose()), 1e-7);
    EXPECT_LT((oracle.delta_t - (b.translation() - a.translation())).norm(), 1e-7);
  }
}

namespace {

struct Chained {
  MotionState split, direct;
};

Chained chain_two_intervals(ImuInterpolation mode) {
  const Pose ext = fftest::test_extrinsic();
  const auto traj = fftest::random_smooth_trajectory(21);
  const double t0 = 1.0, t1 = 1.05, t2 = 1.1;
  const auto all = fftest::sample_imu(traj, ext, kGravity, t0, t2, 200.0);
  const std::vector<ImuSample> first(all.begin(), all.begin() + 11);  // up to and including t1
  const std::vector<ImuSample> second(all.begin() + 10, all.end());

  MotionState s0{traj.pose(t0), synth::imu_velocity(traj, t0, ext)};
  auto input = [&](const MotionState& s, double end) {
    PreintegrationInput in;
    in.imu_extrinsic = ext;
    in.gravity = kGravity;
    in.rotation_prev = s.pose.rotation();
    in.velocity_prev = s.velocity;
    in.end_time = end;
    in.interpolation = mode;
    return in;
  };
  const MotionState s1 = predict_pose(s0, preintegrate(first, input(s0, t1)));
  const MotionState s2 = predict_pose(s1, preintegrate(second, input(s1, t2)));
  const MotionState direct = predict_pose(s0, preintegrate(all, input(s0, t2)));
  return {s2, direct};
}

}  // namespace

TEST(Preintegrate, ConcatenationConsistency) {
  const Chained c = chain_two_intervals(ImuInterpolation::Linear);
  EXPECT_LT(rotation_error(c.split.pose.rotation(), c.direct.pose.rotation()), 1e-8);
  EXPECT_LT((c.split.pose.translation() - c.direct.pose.translation()).norm(), 1e-8);
  EXPECT_LT((c.split.velocity - c.direct.velocity).norm(), 1e-8);
}

TEST(Preintegrate, ConcatenationWithCubicStencilAgreesToInterpolationError) {
  // the cubic stencil is one-sided at a split, so the two paths differ slightly
  const Chained c = chain_two_intervals(ImuInterpolation::Cubic);
  EXPECT_LT(rotation_error(c.split.pose.rotation(), c.direct.pose.rotation()), 1e-6);
  EXPECT_LT((c.split.pose.translation() - c.direct.pose.translation()).norm(), 1e-6);
  EXPECT_LT((c.split.velocity - c.direct.velocity).norm(), 1e-5);
}

TEST(Preintegrate, DeltaRotationIsOrthonormal) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0, 5);
  std::vector<ImuSample> s;
  for (int i = 0; i < 500; ++i) s.push_back({i * 0.005, Vec3(n(rng), n(rng), n(rng)), Vec3(n(rng), n(rng), n(rng))});
  const auto d = preintegrate(s, PreintegrationInput{});
  EXPECT_TRUE(Pose(d.delta_R, Vec3::Zero()).is_valid(1e-12));
}

TEST(Preintegrate, GravityContributionIsLinear) {
  // static samples integrated with a mismatched gravity: the residual
  // translation equals 1/2 (g_model - g_sensor) T^2 and scales linearly
  PreintegrationInput in;
  const auto samples = static_samples(Mat3::Identity(), kGravity, 20, 0.005);
  in.gravity = Vec3::Zero();
  const Vec3 base = preintegrate(samples, in).delta_t;
  in.gravity = kGravity;
  const Vec3 g1 = preintegrate(samples, in).delta_t - base;
  in.gravity = 2 * kGravity;
  const Vec3 g2 = preintegrate(samples, in).delta_t - base;
  EXPECT_LT((g2 - 2 * g1).norm(), 1e-12);
  EXPECT_LT((g1 - 0.5 * kGravity * 0.1 * 0.1).norm(), 1e-12);
}

TEST(Preintegrate, VariableStep) {
  const Pose ext = fftest::test_extrinsic();
  const auto traj = fftest::random_smooth_trajectory(8);
  std::vector<ImuSample> s;
  double t = 2.0;
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> jitter(0.004, 0.006);
  while (t < 2.1) {
    s.push_back(synth::imu_sample(traj, t, ext, kGravity));
    t += jitter(rng);
  }
  PreintegrationInput in;
  in.imu_extrinsic = ext;
  in.rotation_prev = traj.pose(2.0).rotation();
  in.velocity_prev = synth::imu_velocity(traj, 2.0, ext);
  in.end_time = 2.1;
  s.push_back(synth::imu_sample(traj, 2.1, ext, kGravity));
  const auto d = preintegrate(s, in);
  const auto oracle = fftest::dense_integrate(traj, ext, kGravity, 2.0, 2.1);
  EXPECT_LT(rotation_error(d.delta_R, oracle.delta_R), 2e-5);
  EXPECT_LT((d.delta_t - oracle.delta_t).norm(), 2e-5);
}

TEST(Preintegrate, Errors) {
  EXPECT_THROW(preintegrate({}, PreintegrationInput{}), EmptySamples);
  std::vector<ImuSample> s{{0.0, Vec3::Zero(), Vec3::Zero()}, {0.0, Vec3::Zero(), Vec3::Zero()}};
  EXPECT_THROW(preintegrate(s, PreintegrationInput{}), NonMonotonicTimestamps);
  s[1].timestamp = -1;
  EXPECT_THROW(preintegrate(s, PreintegrationInput{}), NonMonotonicTimestamps);
}

TEST(PredictPose, IdentityDeltaKeepsState) {
  MotionState s{exp_map(Twist(Vec3(0.1, 0.2, 0.3), Vec3(1, 2, 3))), Vec3(0.5, 0, -0.2)};
  const MotionState out = predict_pose(s, PreintegratedDelta::identity(0.033));
  EXPECT_LT((out.pose.rotation() - s.pose.rotation()).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_EQ(out.pose.translation(), s.pose.translation());
  EXPECT_EQ(out.velocity, s.velocity);
}

TEST(PredictPose, StaticDeltaKeepsState) {
  const Pose p = exp_map(Twist(Vec3(0.4, -0.1, 0.2), Vec3(0.3, 0.1, 1.0)));
  PreintegrationInput in;
  in.rotation_prev = p.rotation();
  const auto d = preintegrate(static_samples(p.rotation(), kGravity, 7, 0.005), in);
  const MotionState out = predict_pose({p, Vec3::Zero()}, d);
  EXPECT_LT(rotation_error(out.pose.rotation(), p.rotation()), 1e-10);
  EXPECT_LT((out.pose.translation() - p.translation()).norm(), 1e-10);
  EXPECT_LT(out.velocity.norm(), 1e-10);
}

TEST(PredictPose, ChainedOverThirtyFramesTracksGroundTruth) {
  const Pose ext = fftest::test_extrinsic();
  const auto traj = fftest::random_smooth_trajectory(31);
  const double rate = 30.0, imu_rate = 200.0, t0 = 0.5;
  const auto stream = fftest::sample_imu(traj, ext, kGravity, t0 - 0.05, t0 + 1.1, imu_rate);
  MotionState s{traj.pose(t0), synth::imu_velocity(traj, t0, ext)};
  for (int k = 1; k <= 30; ++k) {
    const double ta = t0 + (k - 1) / rate, tb = t0 + k / rate;
    PreintegrationInput in;
    in.imu_extrinsic = ext;
    in.gravity = kGravity;
    in.rotation_prev = s.pose.rotation();
    in.velocity_prev = s.velocity;
    in.end_time = tb;
    s = predict_pose(s, preintegrate(slice_interval(stream, ta, tb), in));
    EXPECT_LT((s.pose.translation() - traj.pose(tb).translation()).norm(), 1e-3) << "frame " << k;
  }
}

TEST(SliceInterval, InterpolatesBoundaries) {
  std::vector<ImuSample> s;
  for (int i = 0; i < 10; ++i) s.push_back({i * 0.1, Vec3(i, 0, 0), Vec3(0, 2.0 * i, 0)});
  const auto out = slice_interval(s, 0.25, 0.55);
  ASSERT_EQ(out.size(), 5u);
  EXPECT_DOUBLE_EQ(out.front().timestamp, 0.25);
  EXPECT_NEAR(out.front().accel.x(), 2.5, 1e-12);
  EXPECT_NEAR(out.back().gyro.y(), 11.0, 1e-12);
  EXPECT_DOUBLE_EQ(out[1].timestamp, 0.3);
  EXPECT_TRUE(slice_interval(s, 0.5, 0.5).empty());
}
