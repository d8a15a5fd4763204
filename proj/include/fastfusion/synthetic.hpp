#pragma once

// Analytic RGB-D-inertial scenes: textured primitives, C2 camera trajectories,
// exact IMU signals, and a ray-casting renderer.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "fastfusion/geometry.hpp"
#include "fastfusion/sensor_types.hpp"

namespace fastfusion::synth {

// ---------------------------------------------------------------------------
// Trajectory channels

struct Sinusoid {
  double amplitude = 0.0;
  double frequency_hz = 0.0;
  double phase = 0.0;  // radians
};

/// Scalar function of time with two continuous derivatives.
class Channel {
 public:
  struct Eval {
    double value = 0.0;
    double d1 = 0.0;
    double d2 = 0.0;
  };

  Channel() = default;

  /// c0 + c1 t + c2 t^2 + sum_i A_i sin(2 pi f_i t + phi_i)
  static Channel smooth(double c0, double c1 = 0.0, double c2 = 0.0, std::vector<Sinusoid> sines = {}) {
    Channel c;
    c.poly_ = {c0, c1, c2};
    c.sines_ = std::move(sines);
    return c;
  }

  /// Interpolating spline through (time, value) knots. Only "natural_cubic"
  /// yields a C2 curve; anything else is rejected.
  static Channel spline(std::vector<double> times, std::vector<double> values,
                        const std::string& interpolation = "natural_cubic") {
    if (interpolation != "natural_cubic")
      throw NonDifferentiableTrajectory("interpolation '" + interpolation + "' is not twice differentiable");
    if (times.size() != values.size() || times.size() < 2)
      throw InvalidArgument("spline needs at least two (time, value) knots");
    for (std::size_t i = 1; i < times.size(); ++i)
      if (!(times[i] > times[i - 1])) throw InvalidArgument("spline knot times must increase");
    Channel c;
    c.knots_t_ = std::move(times);
    c.knots_v_ = std::move(values);
    c.solve_natural_spline();
    return c;
  }

  Eval eval(double t) const {
    Eval e;
    e.value = poly_[0] + poly_[1] * t + poly_[2] * t * t;
    e.d1 = poly_[1] + 2 * poly_[2] * t;
    e.d2 = 2 * poly_[2];
    for (const auto& s : sines_) {
      const double w = 2 * M_PI * s.frequency_hz;
      const double arg = w * t + s.phase;
      e.value += s.amplitude * std::sin(arg);
      e.d1 += s.amplitude * w * std::cos(arg);
      e.d2 -= s.amplitude * w * w * std::sin(arg);
    }
    if (!knots_t_.empty()) {
      const Eval sp = eval_spline(t);
      e.value += sp.value;
      e.d1 += sp.d1;
      e.d2 += sp.d2;
    }
    return e;
  }

 private:
  void solve_natural_spline() {
    const std::size_t n = knots_t_.size();
    m_.assign(n, 0.0);  // second derivatives at knots, natural ends
    if (n < 3) return;
    std::vector<double> a(n, 0.0), b(n, 0.0), c(n, 0.0), d(n, 0.0);
    for (std::size_t i = 1; i + 1 < n; ++i) {
      const double h0 = knots_t_[i] - knots_t_[i - 1];
      const double h1 = knots_t_[i + 1] - knots_t_[i];
      a[i] = h0;
      b[i] = 2 * (h0 + h1);
      c[i] = h1;
      d[i] = 6 * ((knots_v_[i + 1] - knots_v_[i]) / h1 - (knots_v_[i] - knots_v_[i - 1]) / h0);
    }
    // Thomas algorithm on rows 1..n-2
    for (std::size_t i = 2; i + 1 < n; ++i) {
      const double w = a[i] / b[i - 1];
      b[i] -= w * c[i - 1];
      d[i] -= w * d[i - 1];
    }
    for (std::size_t i = n - 2; i >= 1; --i) {
      m_[i] = (d[i] - (i + 2 < n ? c[i] * m_[i + 1] : 0.0)) / b[i];
      if (i == 1) break;
    }
  }

  // Outside the knot range the spline continues with its end value and slope
  // (second derivative is zero at natural ends, so this stays C2).
  Eval eval_spline(double t) const {
    const std::size_t n = knots_t_.size();
    auto segment = [&](std::size_t i, double x) {
      const double h = knots_t_[i + 1] - knots_t_[i];
      const double A = (knots_t_[i + 1] - x) / h;
      const double B = (x - knots_t_[i]) / h;
      Eval e;
      e.value = A * knots_v_[i] + B * knots_v_[i + 1] + ((A * A * A - A) * m_[i] + (B * B * B - B) * m_[i + 1]) * h * h / 6;
      e.d1 = (knots_v_[i + 1] - knots_v_[i]) / h - (3 * A * A - 1) / 6 * h * m_[i] + (3 * B * B - 1) / 6 * h * m_[i + 1];
      e.d2 = A * m_[i] + B * m_[i + 1];
      return e;
    };
    if (t <= knots_t_.front()) {
      Eval e = segment(0, knots_t_.front());
      e.value += e.d1 * (t - knots_t_.front());
      e.d2 = 0.0;
      return e;
    }
    if (t >= knots_t_.back()) {
      Eval e = segment(n - 2, knots_t_.back());
      e.value += e.d1 * (t - knots_t_.back());
      e.d2 = 0.0;
      return e;
    }
    const auto it = std::upper_bound(knots_t_.begin(), knots_t_.end(), t);
    const std::size_t i = static_cast<std::size_t>(it - knots_t_.begin()) - 1;
    return segment(i, t);
  }

  std::array<double, 3> poly_{0.0, 0.0, 0.0};
  std::vector<Sinusoid> sines_;
  std::vector<double> knots_t_, knots_v_, m_;
};

inline Mat3 rot_x(double a) { return so3_exp(Vec3(a, 0, 0)); }
inline Mat3 rot_y(double a) { return so3_exp(Vec3(0, a, 0)); }
inline Mat3 rot_z(double a) { return so3_exp(Vec3(0, 0, a)); }

struct Kinematics {
  Pose pose;                          // camera-to-world
  Vec3 velocity = Vec3::Zero();       // world
  Vec3 acceleration = Vec3::Zero();   // world
  Vec3 omega_body = Vec3::Zero();     // camera frame
  Vec3 alpha_body = Vec3::Zero();     // camera frame
};

/// Camera trajectory: position channels (x, y, z) and Euler channels
/// (rx, ry, rz) with R(t) = base * Rz(rz) * Ry(ry) * Rx(rx).
struct Trajectory {
  Channel x, y, z, rx, ry, rz;
  Mat3 base = Mat3::Identity();

  Kinematics at(double t) const {
    const Channel::Eval ex = x.eval(t), ey = y.eval(t), ez = z.eval(t);
    const Channel::Eval ax = rx.eval(t), ay = ry.eval(t), az = rz.eval(t);
    const Mat3 Rx = rot_x(ax.value), Ry = rot_y(ay.value), Rz = rot_z(az.value);
    Kinematics k;
    k.pose = Pose(base * Rz * Ry * Rx, Vec3(ex.value, ey.value, ez.value));
    k.velocity = Vec3(ex.d1, ey.d1, ez.d1);
    k.acceleration = Vec3(ex.d2, ey.d2, ez.d2);

    const Vec3 ex_axis = Vec3::UnitX(), ey_axis = Vec3::UnitY(), ez_axis = Vec3::UnitZ();
    const Vec3 col_y = Rx.transpose() * ey_axis;
    const Vec3 col_z = Rx.transpose() * Ry.transpose() * ez_axis;
    k.omega_body = ex_axis * ax.d1 + col_y * ay.d1 + col_z * az.d1;
    // d/dt of the Euler-rate matrix columns; d(R_a(θ)^T)/dθ = -[a]x R_a(θ)^T
    const Vec3 dcol_y = -hat(ex_axis) * col_y * ax.d1;
    const Vec3 dcol_z = -hat(ex_axis) * col_z * ax.d1 + Rx.transpose() * (-hat(ey_axis) * Ry.transpose() * ez_axis) * ay.d1;
    k.alpha_body = ex_axis * ax.d2 + col_y * ay.d2 + col_z * az.d2 + dcol_y * ay.d1 + dcol_z * az.d1;
    return k;
  }

  Pose pose(double t) const { return at(t).pose; }
};

/// Exact IMU reading for an IMU rigidly attached through `imu_extrinsic`
/// (IMU -> camera).
inline ImuSample imu_sample(const Trajectory& traj, double t, const Pose& imu_extrinsic, const Vec3& gravity) {
  const Kinematics k = traj.at(t);
  const Mat3& R_wc = k.pose.rotation();
  const Mat3& R_ci = imu_extrinsic.rotation();
  const Vec3& t_ci = imu_extrinsic.translation();
  const Vec3 a_imu = k.acceleration +
                     R_wc * (k.alpha_body.cross(t_ci) + k.omega_body.cross(k.omega_body.cross(t_ci)));
  ImuSample s;
  s.timestamp = t;
  s.gyro = R_ci.transpose() * k.omega_body;
  s.accel = (R_wc * R_ci).transpose() * (a_imu - gravity);
  return s;
}

/// World velocity of the IMU origin.
inline Vec3 imu_velocity(const Trajectory& traj, double t, const Pose& imu_extrinsic) {
  const Kinematics k = traj.at(t);
  return k.velocity + k.pose.rotation() * k.omega_body.cross(imu_extrinsic.translation());
}

// ---------------------------------------------------------------------------
// Textures and primitives

namespace detail {
inline double lattice_value(std::int64_t x, std::int64_t y, std::int64_t z, std::uint64_t seed) {
  std::uint64_t h = seed * 0x9E3779B97F4A7C15ull;
  h ^= static_cast<std::uint64_t>(x) * 0xBF58476D1CE4E5B9ull;
  h = (h ^ (h >> 31)) * 0x94D049BB133111EBull;
  h ^= static_cast<std::uint64_t>(y) * 0xD6E8FEB86659FD93ull;
  h = (h ^ (h >> 29)) * 0xBF58476D1CE4E5B9ull;
  h ^= static_cast<std::uint64_t>(z) * 0x9E3779B97F4A7C15ull;
  h = (h ^ (h >> 32)) * 0x94D049BB133111EBull;
  h ^= h >> 29;
  return static_cast<double>(h >> 11) / static_cast<double>(1ull << 53) * 2.0 - 1.0;
}

inline double fade(double t) { return t * t * t * (t * (t * 6 - 15) + 10); }

/// C2 value noise in [-1, 1].
inline double value_noise(const Vec3& p, std::uint64_t seed) {
  const double fx = std::floor(p.x()), fy = std::floor(p.y()), fz = std::floor(p.z());
  const auto ix = static_cast<std::int64_t>(fx), iy = static_cast<std::int64_t>(fy), iz = static_cast<std::int64_t>(fz);
  const double u = fade(p.x() - fx), v = fade(p.y() - fy), w = fade(p.z() - fz);
  double acc = 0.0;
  for (int dz = 0; dz < 2; ++dz)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx) {
        const double wt = (dx ? u : 1 - u) * (dy ? v : 1 - v) * (dz ? w : 1 - w);
        acc += wt * lattice_value(ix + dx, iy + dy, iz + dz, seed);
      }
  return acc;
}
}  // namespace detail

/// Solid (3D) procedural texture evaluated at world points, clamped to [0, 255].
struct Texture {
  enum class Kind { Noise, Sines };
  struct Layer {
    Kind kind = Kind::Noise;
    double amplitude = 60.0;
    double scale = 0.05;  // meters per lattice cell / wavelength
    std::uint64_t seed = 1;
  };
  double base = 128.0;
  std::vector<Layer> layers;

  double eval(const Vec3& p) const {
    double v = base;
    for (const auto& l : layers) {
      if (l.kind == Kind::Noise) {
        v += l.amplitude * detail::value_noise(p / l.scale, l.seed);
      } else {
        const double k = 2 * M_PI / l.scale;
        v += l.amplitude * (std::sin(k * p.x()) + std::sin(k * p.y()) + std::sin(k * p.z())) / 3.0;
      }
    }
    return std::clamp(v, 0.0, 255.0);
  }
};

struct Primitive {
  enum class Kind { Rectangle, Box, Sphere };
  Kind kind = Kind::Rectangle;
  Vec3 center = Vec3::Zero();
  // Rectangle: normal and in-plane axis; non-positive half extents mean unbounded.
  Vec3 normal = Vec3::UnitZ();
  Vec3 axis_u = Vec3::UnitX();
  Eigen::Vector2d half_size{0.0, 0.0};
  // Box
  Vec3 half_extents = Vec3::Ones();
  Mat3 rotation = Mat3::Identity();  // box frame -> world
  // Sphere
  double radius = 1.0;
  Texture texture;

  /// Smallest ray parameter t > eps with o + t d on the surface.
  std::optional<double> intersect(const Vec3& o, const Vec3& d) const {
    constexpr double eps = 1e-9;
    switch (kind) {
      case Kind::Rectangle: {
        const double denom = normal.dot(d);
        if (std::abs(denom) < 1e-15) return std::nullopt;
        const double t = normal.dot(center - o) / denom;
        if (!(t > eps)) return std::nullopt;
        const Vec3 rel = o + t * d - center;
        const Vec3 axis_v = normal.cross(axis_u);
        if (half_size.x() > 0 && std::abs(axis_u.dot(rel)) > half_size.x()) return std::nullopt;
        if (half_size.y() > 0 && std::abs(axis_v.dot(rel)) > half_size.y()) return std::nullopt;
        return t;
      }
      case Kind::Box: {
        const Vec3 ol = rotation.transpose() * (o - center);
        const Vec3 dl = rotation.transpose() * d;
        double t_near = -std::numeric_limits<double>::infinity();
        double t_far = std::numeric_limits<double>::infinity();
        for (int i = 0; i < 3; ++i) {
          if (std::abs(dl[i]) < 1e-15) {
            if (std::abs(ol[i]) > half_extents[i]) return std::nullopt;
            continue;
          }
          double t0 = (-half_extents[i] - ol[i]) / dl[i];
          double t1 = (half_extents[i] - ol[i]) / dl[i];
          if (t0 > t1) std::swap(t0, t1);
          t_near = std::max(t_near, t0);
          t_far = std::min(t_far, t1);
        }
        if (t_near > t_far || t_far <= eps) return std::nullopt;
        return t_near > eps ? t_near : t_far;
      }
      case Kind::Sphere: {
        const Vec3 oc = o - center;
        const double a = d.squaredNorm();
        const double b = oc.dot(d);
        const double c = oc.squaredNorm() - radius * radius;
        const double disc = b * b - a * c;
        if (disc < 0) return std::nullopt;
        const double sq = std::sqrt(disc);
        const double t0 = (-b - sq) / a;
        const double t1 = (-b + sq) / a;
        if (t0 > eps) return t0;
        if (t1 > eps) return t1;
        return std::nullopt;
      }
    }
    return std::nullopt;
  }
};

struct Scene {
  std::vector<Primitive> primitives;
  double background = 0.0;

  struct Hit {
    double t = 0.0;
    Vec3 point = Vec3::Zero();
    const Primitive* primitive = nullptr;
  };

  std::optional<Hit> cast(const Vec3& o, const Vec3& d) const {
    std::optional<Hit> best;
    for (const auto& p : primitives) {
      const auto t = p.intersect(o, d);
      if (t && (!best || *t < best->t)) best = Hit{*t, o + *t * d, &p};
    }
    return best;
  }
};

// ---------------------------------------------------------------------------
// Rendering

struct RenderOptions {
  int supersample = 1;     // s x s intensity samples per pixel
  int blur_samples = 1;    // sub-poses averaged across the exposure
  double exposure = 0.0;   // seconds, centred on the frame timestamp
};

/// Ray-cast depth (distance along the optical axis, 0 on miss) and intensity.
inline void render_into(const Scene& scene, const CameraIntrinsics& K, const Pose& T_wc, int supersample,
                        GrayImage& intensity, DepthImage* depth) {
  const Mat3& R = T_wc.rotation();
  const Vec3& o = T_wc.translation();
  const int s = std::max(1, supersample);
  for (int v = 0; v < K.height; ++v) {
    for (int u = 0; u < K.width; ++u) {
      if (depth) {
        const Vec3 d_cam((u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0);  // unit z: ray parameter == depth
        const auto hit = scene.cast(o, R * d_cam);
        (*depth)(u, v) = hit ? static_cast<float>(hit->t) : 0.0f;
      }
      double acc = 0.0;
      for (int j = 0; j < s; ++j) {
        for (int i = 0; i < s; ++i) {
          const double su = u + (i + 0.5) / s - 0.5;
          const double sv = v + (j + 0.5) / s - 0.5;
          const Vec3 d_cam((su - K.cx) / K.fx, (sv - K.cy) / K.fy, 1.0);
          const auto hit = scene.cast(o, R * d_cam);
          acc += hit ? hit->primitive->texture.eval(hit->point) : scene.background;
        }
      }
      intensity(u, v) = static_cast<float>(acc / (s * s));
    }
  }
}

inline Frame render(const Scene& scene, const CameraIntrinsics& K, const Pose& T_wc, double timestamp,
                    int supersample = 1) {
  Frame f;
  f.timestamp = timestamp;
  f.intensity = GrayImage(K.width, K.height, 0.0f);
  f.depth = DepthImage(K.width, K.height, 0.0f);
  render_into(scene, K, T_wc, supersample, f.intensity, &f.depth);
  return f;
}

/// Frame at time t; with blur enabled the intensity is the mean of renders at
/// evenly spaced sub-poses across the exposure, depth comes from the centre pose.
inline Frame render_at(const Scene& scene, const CameraIntrinsics& K, const Trajectory& traj, double t,
                       const RenderOptions& opt) {
  Frame f = render(scene, K, traj.pose(t), t, opt.supersample);
  if (opt.blur_samples > 1 && opt.exposure > 0) {
    GrayImage acc(K.width, K.height, 0.0f);
    GrayImage tmp(K.width, K.height, 0.0f);
    for (int i = 0; i < opt.blur_samples; ++i) {
      const double ti = t - 0.5 * opt.exposure + opt.exposure * (i + 0.5) / opt.blur_samples;
      render_into(scene, K, traj.pose(ti), opt.supersample, tmp, nullptr);
      for (std::size_t k = 0; k < acc.size(); ++k) acc.data()[k] += tmp.data()[k];
    }
    for (std::size_t k = 0; k < acc.size(); ++k) f.intensity.data()[k] = acc.data()[k] / opt.blur_samples;
  }
  return f;
}

}  // namespace fastfusion::synth
