#pragma once

#include <unistd.h>

#include <filesystem>
#include <functional>
#include <random>
#include <string>

#include "fastfusion/imu_preint.hpp"
#include "fastfusion/patch.hpp"
#include "fastfusion/synthetic.hpp"
#include "fastfusion/synthetic_io.hpp"

namespace fftest {

using namespace fastfusion;

/// Hand-held-like motion: a few sinusoids per channel with random phases.
inline synth::Trajectory random_smooth_trajectory(std::uint64_t seed, double amp_pos = 0.2, double amp_rot = 0.3) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ph(0, 2 * M_PI), fr(0.2, 1.2), sc(0.5, 1.0);
  auto chan = [&](double amp) {
    std::vector<synth::Sinusoid> s;
    for (int i = 0; i < 3; ++i) s.push_back({amp * sc(rng) / (i + 1), fr(rng) * (i + 1), ph(rng)});
    return synth::Channel::smooth(0.0, 0.0, 0.0, s);
  };
  synth::Trajectory t;
  t.x = chan(amp_pos);
  t.y = chan(amp_pos);
  t.z = chan(amp_pos);
  t.rx = chan(amp_rot);
  t.ry = chan(amp_rot);
  t.rz = chan(amp_rot);
  return t;
}

inline Pose test_extrinsic() {
  return Pose(so3_exp(Vec3(0.05, -0.1, 0.02)), Vec3(0.03, -0.01, 0.02));
}

/// Camera-frame displacement and rotation over [t0, t1] obtained by a dense
/// explicit integration of the analytic IMU signals (rate `hz`), sampling the
/// signals at sub-step midpoints. Independent of the library integrator.
struct DenseResult {
  Mat3 delta_R;
  Vec3 delta_t;
  Vec3 delta_v;
};

inline DenseResult dense_integrate(const synth::Trajectory& traj, const Pose& ext, const Vec3& g, double t0,
                                   double t1, double hz = 20000.0) {
  const int steps = static_cast<int>(std::ceil((t1 - t0) * hz));
  const double h = (t1 - t0) / steps;
  const Mat3 Rwc0 = traj.pose(t0).rotation();
  const Mat3& Rci = ext.rotation();
  const Vec3 t_ic = -(Rci.transpose() * ext.translation());
  Mat3 R = Rwc0 * Rci;
  const Mat3 R0 = R;
  Vec3 v = synth::imu_velocity(traj, t0, ext);
  const Vec3 v0 = v;
  Vec3 p = Vec3::Zero();
  for (int i = 0; i < steps; ++i) {
    const double tm = t0 + (i + 0.5) * h;
    const ImuSample s = synth::imu_sample(traj, tm, ext, g);
    // rotation at the midpoint, then the full step
    const Mat3 Rm = R * so3_exp(s.gyro * (0.5 * h));
    const Vec3 a = Rm * s.accel + g;
    p += v * h + 0.5 * a * h * h;
    v += a * h;
    R = Rm * so3_exp(s.gyro * (0.5 * h));
  }
  DenseResult r;
  r.delta_R = R * Rci.transpose() * Rwc0.transpose();
  r.delta_t = p + (R - R0) * t_ic;
  r.delta_v = v - v0;
  return r;
}

inline std::vector<ImuSample> sample_imu(const synth::Trajectory& traj, const Pose& ext, const Vec3& g, double t0,
                                         double t1, double hz) {
  std::vector<ImuSample> out;
  const int n = static_cast<int>(std::llround((t1 - t0) * hz));
  for (int i = 0; i <= n; ++i) out.push_back(synth::imu_sample(traj, t0 + i / hz, ext, g));
  return out;
}

inline CameraIntrinsics vga() { return {500, 500, 320, 240, 640, 480, 5000}; }

/// 10x10 source patch at (u0, v0) seen from the identity pose; depth per column.
inline WorldPatch column_patch(int u0, int v0, const std::function<double(int)>& depth_of_col, Vec3 normal = Vec3(0, 0, -1)) {
  Patch p;
  p.id = 1;
  p.anchor = Vec2(u0 + 5, v0 + 5);
  for (int r = 0; r < 10; ++r)
    for (int c = 0; c < 10; ++c) {
      PatchPixel px;
      px.pixel = Vec2(u0 + c, v0 + r);
      px.depth = depth_of_col(c);
      px.intensity = 100;
      px.normal = normal;
      px.valid_depth = true;
      p.pixels.push_back(px);
    }
  return back_project(p, Pose::identity(), vga());
}

/// Camera inside a textured box looking into a corner: three orthogonal
/// walls constrain every degree of freedom.
struct RoomScene {
  CameraIntrinsics K{150, 150, 79.5, 59.5, 160, 120, 5000};
  synth::Scene scene;

  RoomScene() {
    synth::Primitive box;
    box.kind = synth::Primitive::Kind::Box;
    box.center = Vec3(0.3, 0.2, 1.0);
    box.half_extents = Vec3(1.6, 1.3, 2.2);
    box.texture.base = 128;
    box.texture.layers.push_back({synth::Texture::Kind::Sines, 120, 0.45, 11});
    scene.primitives.push_back(box);
  }

  Pose pose0() const { return Pose(so3_exp(Vec3(0.35, 0.45, 0.0)), Vec3::Zero()); }
  Frame render(const Pose& p) const { return synth::render(scene, K, p, 0.0, 3); }
};

inline double rotation_error(const Mat3& a, const Mat3& b) { return so3_log(a * b.transpose()).norm(); }

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("fastfusion_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

/// Small room sequence (96x72) for end-to-end runs; `trajectory` is a spec
/// trajectory block.
inline nlohmann::json tiny_spec(const std::string& name, double duration, const nlohmann::json& trajectory) {
  nlohmann::json j = nlohmann::json::parse(R"({
    "seed": 4, "start_time": 5.0, "camera_rate": 30,
    "camera": {"fx": 80, "fy": 80, "cx": 47.5, "cy": 35.5, "width": 96, "height": 72},
    "imu": {"rate": 200, "gravity": [0, 9.81, 0],
            "extrinsic": {"quaternion": [0, 0.01, 0, 0.99995], "translation": [0.03, 0, 0]}},
    "render": {"supersample": 2},
    "scene": {"primitives": [
      {"type": "box", "center": [0, 0, 1.0], "half_extents": [1.6, 1.2, 2.0],
       "texture": {"base": 128, "layers": [{"kind": "noise", "amplitude": 100, "scale": 0.08, "seed": 3},
                                           {"kind": "sines", "amplitude": 30, "scale": 0.5}]}},
      {"type": "sphere", "center": [0.3, 0.2, 2.0], "radius": 0.3,
       "texture": {"base": 90, "layers": [{"kind": "noise", "amplitude": 80, "scale": 0.05, "seed": 5}]}}
    ]},
    "pipeline": {
      "patches": {"budget": 25, "min_spacing": 10},
      "tsdf": {"origin": [-1.7, -1.3, -0.2], "dims": [43, 33, 41], "voxel_size": 0.08}
    }
  })");
  j["name"] = name;
  j["duration"] = duration;
  j["trajectory"] = trajectory;
  return j;
}

/// Renders a tiny sequence into `dir` and returns the path of its config.json.
inline std::filesystem::path make_tiny_sequence(const std::filesystem::path& dir, const std::string& name,
                                                double duration, const nlohmann::json& trajectory) {
  const auto spec = fastfusion::synth::parse_spec(tiny_spec(name, duration, trajectory));
  fastfusion::synth::generate_sequence(spec, dir);
  return dir / "config.json";
}

}  // namespace fftest
