#pragma once

// Pinhole camera, rigid transforms on SO(3) x R^3, and depth-image geometry.

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <cstdint>
#include <string>

#include "fastfusion/errors.hpp"
#include "fastfusion/image.hpp"

namespace fastfusion {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;

struct CameraIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;
  double depth_scale = 5000.0;  // integer depth units per meter

  bool valid() const {
    return fx > 0 && fy > 0 && cx >= 0 && cx < width && cy >= 0 && cy < height && depth_scale > 0;
  }

  void validate() const {
    if (!valid()) throw InvalidArgument("invalid camera intrinsics");
  }

  bool in_image(const Vec2& px) const {
    return px.x() >= 0 && px.y() >= 0 && px.x() <= width - 1.0 && px.y() <= height - 1.0;
  }
};

inline Mat3 hat(const Vec3& w) {
  Mat3 m;
  m << 0, -w.z(), w.y(),  //
      w.z(), 0, -w.x(),   //
      -w.y(), w.x(), 0;
  return m;
}

/// Rodrigues formula; second-order series below 1e-8 rad.
inline Mat3 so3_exp(const Vec3& w) {
  const double theta2 = w.squaredNorm();
  const Mat3 W = hat(w);
  if (theta2 < 1e-16) return Mat3::Identity() + W + 0.5 * W * W;
  const double theta = std::sqrt(theta2);
  return Mat3::Identity() + (std::sin(theta) / theta) * W + ((1.0 - std::cos(theta)) / theta2) * W * W;
}

/// Rotation vector of R, angle in [0, pi].
inline Vec3 so3_log(const Mat3& R) {
  const Eigen::AngleAxisd aa(R);
  return aa.angle() * aa.axis();
}

/// Re-orthonormalize a rotation that has accumulated round-off.
inline Mat3 orthonormalize(const Mat3& R) {
  Eigen::Quaterniond q(R);
  q.normalize();
  return q.toRotationMatrix();
}

struct Twist {
  Vec3 rotational = Vec3::Zero();     // radians
  Vec3 translational = Vec3::Zero();  // meters

  Twist() = default;
  Twist(const Vec3& rot, const Vec3& trans) : rotational(rot), translational(trans) {}
  explicit Twist(const Vec6& v) : rotational(v.head<3>()), translational(v.tail<3>()) {}

  Vec6 vector() const {
    Vec6 v;
    v << rotational, translational;
    return v;
  }
  Twist operator-() const { return {-rotational, -translational}; }
  bool finite() const { return rotational.allFinite() && translational.allFinite(); }
};

/// Camera-to-world rigid transform.
class Pose {
 public:
  Pose() = default;
  Pose(const Mat3& rotation, const Vec3& translation) : rotation_(rotation), translation_(translation) {}

  static Pose identity() { return {}; }

  const Mat3& rotation() const { return rotation_; }
  const Vec3& translation() const { return translation_; }
  Mat3& rotation() { return rotation_; }
  Vec3& translation() { return translation_; }

  Vec3 operator*(const Vec3& p) const { return rotation_ * p + translation_; }
  Pose operator*(const Pose& b) const { return {rotation_ * b.rotation_, rotation_ * b.translation_ + translation_}; }

  Pose inverse() const {
    const Mat3 rt = rotation_.transpose();
    return {rt, -(rt * translation_)};
  }

  Eigen::Quaterniond quaternion() const { return Eigen::Quaterniond(rotation_).normalized(); }

  bool is_valid(double tol = 1e-9) const {
    if (!rotation_.allFinite() || !translation_.allFinite()) return false;
    const double ortho = (rotation_.transpose() * rotation_ - Mat3::Identity()).cwiseAbs().maxCoeff();
    return ortho <= tol && std::abs(rotation_.determinant() - 1.0) <= tol;
  }

 private:
  Mat3 rotation_ = Mat3::Identity();
  Vec3 translation_ = Vec3::Zero();
};

inline Pose compose(const Pose& a, const Pose& b) { return a * b; }
inline Pose inverse(const Pose& a) { return a.inverse(); }

/// SO(3) x R^3 exponential: rotation by Rodrigues, translation passes through.
inline Pose exp_map(const Twist& xi) { return {so3_exp(xi.rotational), xi.translational}; }

/// Product-group increment used by the filter: R <- Exp(dθ) R, t <- t + dt.
inline Pose retract(const Pose& p, const Twist& xi) {
  return {so3_exp(xi.rotational) * p.rotation(), p.translation() + xi.translational};
}

/// Inverse of retract: the increment that maps `from` onto `to`.
inline Twist local_difference(const Pose& to, const Pose& from) {
  return {so3_log(to.rotation() * from.rotation().transpose()), to.translation() - from.translation()};
}

inline Vec2 project(const CameraIntrinsics& k, const Vec3& p) {
  if (!(p.z() > 0)) throw NonPositiveDepth("project: point has z <= 0");
  return {k.fx * p.x() / p.z() + k.cx, k.fy * p.y() / p.z() + k.cy};
}

inline Vec3 unproject(const CameraIntrinsics& k, const Vec2& px, double depth) {
  if (!(depth > 0)) throw InvalidDepth("unproject: depth <= 0");
  return {(px.x() - k.cx) * depth / k.fx, (px.y() - k.cy) * depth / k.fy, depth};
}

/// d(pixel)/d(point) of the pinhole projection.
inline Eigen::Matrix<double, 2, 3> project_jacobian(const CameraIntrinsics& k, const Vec3& p) {
  const double iz = 1.0 / p.z();
  Eigen::Matrix<double, 2, 3> J;
  J << k.fx * iz, 0, -k.fx * p.x() * iz * iz,  //
      0, k.fy * iz, -k.fy * p.y() * iz * iz;
  return J;
}

struct NormalMap {
  Image<Vec3> normals;           // camera frame, unit length where valid
  Image<std::uint8_t> valid;
};

/// Normals from central-difference tangents of back-projected neighbours,
/// oriented toward the camera. A pixel is invalid when it or any of its four
/// neighbours has no depth, and along the image border.
inline NormalMap compute_normals(const DepthImage& depth, const CameraIntrinsics& k) {
  if (depth.width() != k.width || depth.height() != k.height)
    throw InvalidArgument("compute_normals: depth image does not match intrinsics");
  NormalMap out{Image<Vec3>(k.width, k.height, Vec3::Zero()), Image<std::uint8_t>(k.width, k.height, 0)};
  auto point = [&](int u, int v) { return unproject(k, Vec2(u, v), depth(u, v)); };
  for (int v = 1; v + 1 < k.height; ++v) {
    for (int u = 1; u + 1 < k.width; ++u) {
      if (!(depth(u, v) > 0 && depth(u - 1, v) > 0 && depth(u + 1, v) > 0 && depth(u, v - 1) > 0 &&
            depth(u, v + 1) > 0))
        continue;
      const Vec3 du = point(u + 1, v) - point(u - 1, v);
      const Vec3 dv = point(u, v + 1) - point(u, v - 1);
      Vec3 n = du.cross(dv);
      const double len = n.norm();
      if (!(len > 0)) continue;
      n /= len;
      if (n.dot(point(u, v)) > 0) n = -n;
      out.normals(u, v) = n;
      out.valid(u, v) = 1;
    }
  }
  return out;
}

}  // namespace fastfusion
