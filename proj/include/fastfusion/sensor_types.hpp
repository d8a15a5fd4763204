#pragma once

#include "fastfusion/geometry.hpp"

namespace fastfusion {

struct Frame {
  double timestamp = 0.0;
  GrayImage intensity;  // [0, 255]
  DepthImage depth;     // meters, 0 = invalid
};

struct ImuSample {
  double timestamp = 0.0;
  Vec3 accel = Vec3::Zero();  // specific force, IMU frame, m/s^2
  Vec3 gyro = Vec3::Zero();   // body rate, IMU frame, rad/s

  bool finite() const { return std::isfinite(timestamp) && accel.allFinite() && gyro.allFinite(); }
};

struct SequenceConfig {
  CameraIntrinsics intrinsics;
  Pose imu_extrinsic;  // maps IMU-frame points into the camera frame
  Vec3 gravity_world{0.0, 0.0, -9.81};
  double imu_rate = 200.0;
  double camera_rate = 30.0;

  void validate() const {
    intrinsics.validate();
    if (!imu_extrinsic.is_valid(1e-6)) throw InvalidArgument("imu extrinsic is not a rigid transform");
    if (!(imu_rate > camera_rate)) throw InvalidArgument("imu_rate must exceed camera_rate");
    if (!gravity_world.allFinite()) throw InvalidArgument("gravity must be finite");
  }
};

}  // namespace fastfusion
