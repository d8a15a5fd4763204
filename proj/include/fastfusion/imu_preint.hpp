#pragma once

// Inter-frame IMU pre-integration and the pose/velocity prediction built on it.
//
// Samples are integrated in the world frame starting from the previous camera
// orientation composed with the IMU extrinsic. Between samples the signals are
// interpolated by a cubic through the neighbouring samples; the last sample is
// held until `end_time`.

#include <optional>
#include <span>
#include <vector>

#include "fastfusion/geometry.hpp"
#include "fastfusion/sensor_types.hpp"

namespace fastfusion {

struct ImuBias {
  Vec3 accel = Vec3::Zero();
  Vec3 gyro = Vec3::Zero();
};

struct PreintegratedDelta {
  Mat3 delta_R = Mat3::Identity();  // world-frame camera rotation increment: R_k = delta_R * R_{k-1}
  Vec3 delta_v = Vec3::Zero();      // change of the IMU-origin world velocity
  Vec3 delta_t = Vec3::Zero();      // world-frame camera displacement: t_k = delta_t + t_{k-1}
  double duration = 0.0;
  int sample_count = 0;

  // Parts of delta_v / delta_t contributed by the measured specific force
  // (gravity and initial velocity removed). They carry the attitude
  // sensitivity of the prediction.
  Vec3 force_delta_v = Vec3::Zero();
  Vec3 force_delta_t = Vec3::Zero();
  bool velocity_coupled = false;

  /// Constant-pose motion model used when no inertial data is available.
  static PreintegratedDelta identity(double duration) {
    PreintegratedDelta d;
    d.duration = duration;
    return d;
  }
};

/// Signal model between samples. Linear uses only the two samples bounding a
/// step, so splitting an interval and chaining is exact; cubic draws on the
/// neighbouring samples and is more accurate on fast motion.
enum class ImuInterpolation { Linear, Cubic };

struct PreintegrationInput {
  Pose imu_extrinsic;              // IMU -> camera
  Vec3 gravity = Vec3(0, 0, -9.81);
  Vec3 velocity_prev = Vec3::Zero();
  Mat3 rotation_prev = Mat3::Identity();  // camera-to-world rotation at the first sample
  std::optional<double> end_time;         // default: last sample held for the preceding step
  ImuBias bias;
  ImuInterpolation interpolation = ImuInterpolation::Cubic;
};

inline PreintegratedDelta preintegrate(std::span<const ImuSample> samples, const PreintegrationInput& in) {
  if (samples.empty()) throw EmptySamples("preintegrate: no samples");
  for (const auto& s : samples)
    if (!s.finite()) throw InvalidArgument("preintegrate: non-finite sample");
  for (std::size_t i = 1; i < samples.size(); ++i)
    if (!(samples[i].timestamp > samples[i - 1].timestamp))
      throw NonMonotonicTimestamps("preintegrate: timestamps not strictly increasing");

  double end = 0.0;
  if (in.end_time) {
    end = *in.end_time;
    if (end < samples.back().timestamp) throw NonMonotonicTimestamps("preintegrate: end_time before last sample");
  } else {
    if (samples.size() < 2) throw InvalidArgument("preintegrate: a single sample needs an explicit end_time");
    end = samples.back().timestamp + (samples.back().timestamp - samples[samples.size() - 2].timestamp);
  }
  const double start = samples.front().timestamp;
  if (!(end > start)) throw InvalidArgument("preintegrate: zero duration");

  const Mat3& R_ci = in.imu_extrinsic.rotation();
  const Vec3 t_ic = -(R_ci.transpose() * in.imu_extrinsic.translation());  // camera origin in IMU frame

  auto gyro = [&](std::size_t i) -> Vec3 { return samples[i].gyro - in.bias.gyro; };
  auto accel = [&](std::size_t i) -> Vec3 { return samples[i].accel - in.bias.accel; };

  // Lagrange interpolation of the signals through the stencil samples; each sample step is split into sub-steps evaluated
  // at their midpoints.
  auto interpolate = [&](std::size_t n, double t, Vec3& w, Vec3& a) {
    const bool cubic = in.interpolation == ImuInterpolation::Cubic;
    const std::size_t lo = cubic && n > 0 ? n - 1 : n;
    const std::size_t hi = std::min(samples.size() - 1, cubic ? n + 2 : n + 1);
    w.setZero();
    a.setZero();
    for (std::size_t i = lo; i <= hi; ++i) {
      double li = 1.0;
      for (std::size_t j = lo; j <= hi; ++j)
        if (j != i) li *= (t - samples[j].timestamp) / (samples[i].timestamp - samples[j].timestamp);
      w += li * gyro(i);
      a += li * accel(i);
    }
  };
  constexpr int kSubsteps = 4;
  const Mat3 R0 = orthonormalize(in.rotation_prev * R_ci);
  Mat3 R = R0;
  Vec3 v_force = Vec3::Zero();
  Vec3 p_force = Vec3::Zero();
  for (std::size_t n = 0; n < samples.size(); ++n) {
    const bool last = n + 1 == samples.size();
    const double t0 = samples[n].timestamp;
    const double t1 = last ? end : samples[n + 1].timestamp;
    const double h = (t1 - t0) / kSubsteps;
    if (!(h > 0.0)) continue;
    for (int k = 0; k < kSubsteps; ++k) {
      Vec3 w = gyro(n), a = accel(n);
      if (!last) interpolate(n, t0 + (k + 0.5) * h, w, a);  // held after the last sample
      const Mat3 R_mid = R * so3_exp(w * (0.5 * h));
      const Vec3 f = R_mid * a;
      p_force += v_force * h + 0.5 * f * h * h;
      v_force += f * h;
      R = orthonormalize(R_mid * so3_exp(w * (0.5 * h)));
    }
  }

  const double T = end - start;
  PreintegratedDelta d;
  d.duration = T;
  d.sample_count = static_cast<int>(samples.size());
  d.velocity_coupled = true;
  d.delta_R = orthonormalize(R * R_ci.transpose() * in.rotation_prev.transpose());
  d.force_delta_v = v_force;
  d.force_delta_t = p_force + (R - R0) * t_ic;
  d.delta_v = in.gravity * T + v_force;
  d.delta_t = in.velocity_prev * T + 0.5 * in.gravity * T * T + d.force_delta_t;
  return d;
}

struct MotionState {
  Pose pose;
  Vec3 velocity = Vec3::Zero();
};

/// Composition of the increment onto the previous state (rotation left-multiplied, translation added).
inline MotionState predict_pose(const MotionState& prev, const PreintegratedDelta& d) {
  MotionState out;
  out.pose = Pose(orthonormalize(d.delta_R * prev.pose.rotation()), d.delta_t + prev.pose.translation());
  out.velocity = prev.velocity + d.delta_v;
  return out;
}

/// Samples covering [t0, t1]: the stream is linearly interpolated at both
/// boundaries so the integration interval matches the camera interval.
/// `samples` must be time-sorted and bracket the interval where possible;
/// outside the data range the nearest sample is held.
inline std::vector<ImuSample> slice_interval(std::span<const ImuSample> samples, double t0, double t1) {
  std::vector<ImuSample> out;
  if (samples.empty() || !(t1 > t0)) return out;
  auto at = [&](double t) {
    if (t <= samples.front().timestamp) {
      ImuSample s = samples.front();
      s.timestamp = t;
      return s;
    }
    if (t >= samples.back().timestamp) {
      ImuSample s = samples.back();
      s.timestamp = t;
      return s;
    }
    std::size_t hi = 1;
    while (samples[hi].timestamp < t) ++hi;
    const ImuSample& a = samples[hi - 1];
    const ImuSample& b = samples[hi];
    const double w = (t - a.timestamp) / (b.timestamp - a.timestamp);
    ImuSample s;
    s.timestamp = t;
    s.accel = (1 - w) * a.accel + w * b.accel;
    s.gyro = (1 - w) * a.gyro + w * b.gyro;
    return s;
  };
  out.push_back(at(t0));
  for (const auto& s : samples)
    if (s.timestamp > t0 && s.timestamp < t1) out.push_back(s);
  out.push_back(at(t1));
  return out;
}

}  // namespace fastfusion
