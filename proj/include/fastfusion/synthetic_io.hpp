#pragma once

// Scene/trajectory spec files and on-disk generation of synthetic sequences in
// the TUM layout.
//
// Spec schema (JSON):
//   name, seed, duration, start_time, camera_rate
//   camera:     { fx, fy, cx, cy, width, height, depth_scale }
//   imu:        { rate, extrinsic: pose, gravity: [3], accel_noise_std, gyro_noise_std }
//   render:     { supersample, blur_samples, exposure }
//   scene:      { background, primitives: [ primitive... ] }
//   trajectory: { base_rotation: rotation vector [3] | matrix [9], x, y, z, rx, ry, rz: channel }
//   pipeline:   object copied verbatim into the generated config.json
//
//   primitive:  { type: rectangle, center, normal, axis_u, half_size: [2], texture }
//             | { type: box, center, half_extents, rotation: [3], texture }
//             | { type: sphere, center, radius, texture }
//   texture:    { base, layers: [ { kind: noise|sines, amplitude, scale, seed } ] }
//   channel:    number
//             | { constant, rate, quadratic, sines: [ [amplitude, frequency_hz, phase] ] }
//             | { knots: [ [t, value] ], interpolation: natural_cubic }

#include <cstdio>
#include <random>

#include "fastfusion/frame_io.hpp"
#include "fastfusion/synthetic.hpp"

namespace fastfusion::synth {

using nlohmann::json;

struct SyntheticSpec {
  std::string name = "synthetic";
  std::uint64_t seed = 1;
  double duration = 2.0;
  double start_time = 1.0;
  SequenceConfig config;
  double accel_noise_std = 0.0;
  double gyro_noise_std = 0.0;
  RenderOptions render;
  Scene scene;
  Trajectory trajectory;
  json pipeline = json::object();

  int frame_count() const { return static_cast<int>(std::floor(duration * config.camera_rate + 1e-9)); }
  double frame_time(int k) const { return start_time + k / config.camera_rate; }
};

namespace detail {

template <typename Fn>
void for_each_key(const json& j, const std::string& where, Fn&& fn) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!fn(it.key(), *it)) throw ConfigError("unknown key '" + it.key() + "' in " + where);
}

inline Mat3 rotation_from(const json& j) {
  if (j.is_array() && j.size() == 3) return so3_exp(json_util::vec3(j));
  if (j.is_array() && j.size() == 9) {
    Mat3 R;
    for (int i = 0; i < 9; ++i) R(i / 3, i % 3) = j[i].get<double>();
    if (!Pose(R, Vec3::Zero()).is_valid(1e-6)) throw ConfigError("rotation matrix is not orthonormal");
    return R;
  }
  throw ConfigError("rotation must be a rotation vector [3] or a matrix [9]");
}

inline Channel channel(const json& j, const std::string& where) {
  if (j.is_number()) return Channel::smooth(j.get<double>());
  if (j.contains("knots")) {
    std::vector<double> t, v;
    std::string interp = "natural_cubic";
    for_each_key(j, where, [&](const std::string& k, const json& val) {
      if (k == "knots") {
        for (const auto& kv : val) {
          if (!kv.is_array() || kv.size() != 2) throw ConfigError(where + ": knots must be [t, value] pairs");
          t.push_back(kv[0].get<double>());
          v.push_back(kv[1].get<double>());
        }
      } else if (k == "interpolation") {
        interp = val.get<std::string>();
      } else {
        return false;
      }
      return true;
    });
    return Channel::spline(t, v, interp);
  }
  double c0 = 0, c1 = 0, c2 = 0;
  std::vector<Sinusoid> sines;
  for_each_key(j, where, [&](const std::string& k, const json& val) {
    if (k == "constant") c0 = val.get<double>();
    else if (k == "rate") c1 = val.get<double>();
    else if (k == "quadratic") c2 = val.get<double>();
    else if (k == "sines") {
      for (const auto& s : val) {
        if (!s.is_array() || s.size() != 3) throw ConfigError(where + ": sines are [amplitude, frequency_hz, phase]");
        sines.push_back({s[0].get<double>(), s[1].get<double>(), s[2].get<double>()});
      }
    } else {
      return false;
    }
    return true;
  });
  return Channel::smooth(c0, c1, c2, std::move(sines));
}

inline Texture texture(const json& j) {
  Texture t;
  for_each_key(j, "texture", [&](const std::string& k, const json& val) {
    if (k == "base") t.base = val.get<double>();
    else if (k == "layers") {
      for (const auto& l : val) {
        Texture::Layer layer;
        for_each_key(l, "texture layer", [&](const std::string& lk, const json& lv) {
          if (lk == "kind") {
            const auto kind = lv.get<std::string>();
            if (kind == "noise") layer.kind = Texture::Kind::Noise;
            else if (kind == "sines") layer.kind = Texture::Kind::Sines;
            else throw ConfigError("unknown texture kind '" + kind + "'");
          } else if (lk == "amplitude") layer.amplitude = lv.get<double>();
          else if (lk == "scale") layer.scale = lv.get<double>();
          else if (lk == "seed") layer.seed = lv.get<std::uint64_t>();
          else return false;
          return true;
        });
        if (!(layer.scale > 0)) throw ConfigError("texture scale must be positive");
        t.layers.push_back(layer);
      }
    } else {
      return false;
    }
    return true;
  });
  return t;
}

inline Primitive primitive(const json& j) {
  Primitive p;
  if (!j.contains("type")) throw ConfigError("primitive without type");
  const auto type = j.at("type").get<std::string>();
  if (type == "rectangle" || type == "plane") p.kind = Primitive::Kind::Rectangle;
  else if (type == "box") p.kind = Primitive::Kind::Box;
  else if (type == "sphere") p.kind = Primitive::Kind::Sphere;
  else throw ConfigError("unknown primitive type '" + type + "'");
  for_each_key(j, "primitive", [&](const std::string& k, const json& v) {
    if (k == "type") return true;
    if (k == "center") p.center = json_util::vec3(v);
    else if (k == "normal") p.normal = json_util::vec3(v).normalized();
    else if (k == "axis_u") p.axis_u = json_util::vec3(v).normalized();
    else if (k == "half_size") p.half_size = {v.at(0).get<double>(), v.at(1).get<double>()};
    else if (k == "half_extents") p.half_extents = json_util::vec3(v);
    else if (k == "rotation") p.rotation = rotation_from(v);
    else if (k == "radius") p.radius = v.get<double>();
    else if (k == "texture") p.texture = texture(v);
    else return false;
    return true;
  });
  if (p.kind == Primitive::Kind::Rectangle) {
    // make the in-plane axis orthogonal to the normal
    p.axis_u = (p.axis_u - p.axis_u.dot(p.normal) * p.normal);
    if (p.axis_u.norm() < 1e-9) p.axis_u = p.normal.unitOrthogonal();
    p.axis_u.normalize();
  }
  return p;
}

}  // namespace detail

inline SyntheticSpec parse_spec(const json& j) {
  SyntheticSpec s;
  try {
    detail::for_each_key(j, "scene spec", [&](const std::string& k, const json& v) {
      if (k == "name") s.name = v.get<std::string>();
      else if (k == "seed") s.seed = v.get<std::uint64_t>();
      else if (k == "duration") s.duration = v.get<double>();
      else if (k == "start_time") s.start_time = v.get<double>();
      else if (k == "camera_rate") s.config.camera_rate = v.get<double>();
      else if (k == "camera") s.config.intrinsics = json_util::intrinsics(v);
      else if (k == "imu") {
        detail::for_each_key(v, "imu", [&](const std::string& ik, const json& iv) {
          if (ik == "rate") s.config.imu_rate = iv.get<double>();
          else if (ik == "extrinsic") s.config.imu_extrinsic = json_util::pose(iv);
          else if (ik == "gravity") s.config.gravity_world = json_util::vec3(iv);
          else if (ik == "accel_noise_std") s.accel_noise_std = iv.get<double>();
          else if (ik == "gyro_noise_std") s.gyro_noise_std = iv.get<double>();
          else return false;
          return true;
        });
      } else if (k == "render") {
        detail::for_each_key(v, "render", [&](const std::string& rk, const json& rv) {
          if (rk == "supersample") s.render.supersample = rv.get<int>();
          else if (rk == "blur_samples") s.render.blur_samples = rv.get<int>();
          else if (rk == "exposure") s.render.exposure = rv.get<double>();
          else return false;
          return true;
        });
      } else if (k == "scene") {
        detail::for_each_key(v, "scene", [&](const std::string& sk, const json& sv) {
          if (sk == "background") s.scene.background = sv.get<double>();
          else if (sk == "primitives")
            for (const auto& p : sv) s.scene.primitives.push_back(detail::primitive(p));
          else return false;
          return true;
        });
      } else if (k == "trajectory") {
        detail::for_each_key(v, "trajectory", [&](const std::string& tk, const json& tv) {
          if (tk == "base_rotation") s.trajectory.base = detail::rotation_from(tv);
          else if (tk == "x") s.trajectory.x = detail::channel(tv, "trajectory.x");
          else if (tk == "y") s.trajectory.y = detail::channel(tv, "trajectory.y");
          else if (tk == "z") s.trajectory.z = detail::channel(tv, "trajectory.z");
          else if (tk == "rx") s.trajectory.rx = detail::channel(tv, "trajectory.rx");
          else if (tk == "ry") s.trajectory.ry = detail::channel(tv, "trajectory.ry");
          else if (tk == "rz") s.trajectory.rz = detail::channel(tv, "trajectory.rz");
          else return false;
          return true;
        });
      } else if (k == "pipeline") {
        if (!v.is_object()) throw ConfigError("pipeline overrides must be an object");
        s.pipeline = v;
      } else {
        return false;
      }
      return true;
    });
  } catch (const json::exception& e) {
    throw ConfigError(std::string("scene spec: ") + e.what());
  }
  if (!(s.duration > 0)) throw ConfigError("duration must be positive");
  try {
    s.config.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  return s;
}

inline SyntheticSpec load_spec(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingFile("missing scene spec " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_spec(j);
}

/// Peak camera angular speed (rad/s) and linear speed (m/s) sampled at `rate`.
inline std::pair<double, double> peak_speeds(const SyntheticSpec& s, double rate = 200.0) {
  double w = 0, v = 0;
  const double t_end = s.frame_time(std::max(0, s.frame_count() - 1));
  for (double t = s.start_time; t <= t_end + 1e-12; t += 1.0 / rate) {
    const Kinematics k = s.trajectory.at(t);
    w = std::max(w, k.omega_body.norm());
    v = std::max(v, k.velocity.norm());
  }
  return {w, v};
}

/// Sequence labelled fast when peak angular speed > 1 rad/s or linear speed > 1 m/s.
inline std::string motion_label(double peak_w, double peak_v) {
  return (peak_w > 1.0 || peak_v > 1.0) ? "fast" : "slow";
}

inline std::vector<ImuSample> imu_stream(const SyntheticSpec& s) {
  std::mt19937_64 rng(s.seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  const double margin = 0.1;
  const double t0 = s.start_time - margin;
  const double t1 = s.frame_time(std::max(0, s.frame_count() - 1)) + margin;
  std::vector<ImuSample> out;
  for (int n = 0;; ++n) {
    const double t = t0 + n / s.config.imu_rate;
    if (t > t1) break;
    ImuSample m = imu_sample(s.trajectory, t, s.config.imu_extrinsic, s.config.gravity_world);
    if (s.accel_noise_std > 0 || s.gyro_noise_std > 0) {
      for (int i = 0; i < 3; ++i) m.accel[i] += s.accel_noise_std * unit(rng);
      for (int i = 0; i < 3; ++i) m.gyro[i] += s.gyro_noise_std * unit(rng);
    }
    out.push_back(m);
  }
  return out;
}

struct GenerationResult {
  int frames = 0;
  int imu_samples = 0;
  SequenceMetadata metadata;
};

/// Writes rgb/, depth/, rgb.txt, depth.txt, imu.txt, groundtruth.txt,
/// sequence.json and config.json into `out_dir`.
inline GenerationResult generate_sequence(const SyntheticSpec& s, const fs::path& out_dir) {
  fs::create_directories(out_dir / "rgb");
  fs::create_directories(out_dir / "depth");
  const CameraIntrinsics& K = s.config.intrinsics;

  std::ofstream rgb_list(out_dir / "rgb.txt"), depth_list(out_dir / "depth.txt");
  if (!rgb_list || !depth_list) throw SequenceError("cannot write into " + out_dir.string());
  rgb_list << "# timestamp filename\n";
  depth_list << "# timestamp filename\n";

  GenerationResult res;
  std::vector<StampedPose> gt;
  for (int k = 0; k < s.frame_count(); ++k) {
    const double t = s.frame_time(k);
    const Frame f = render_at(s.scene, K, s.trajectory, t, s.render);
    char name[64];
    std::snprintf(name, sizeof name, "%06d.png", k);
    save_intensity(out_dir / "rgb" / name, f.intensity);
    save_depth(out_dir / "depth" / name, f.depth, K.depth_scale);
    char line[128];
    std::snprintf(line, sizeof line, "%.9f rgb/%s\n", t, name);
    rgb_list << line;
    std::snprintf(line, sizeof line, "%.9f depth/%s\n", t, name);
    depth_list << line;
    gt.push_back({t, s.trajectory.pose(t)});
    ++res.frames;
  }
  write_tum_trajectory(out_dir / "groundtruth.txt", gt, 9);

  std::ofstream imu_out(out_dir / "imu.txt");
  imu_out << "# timestamp ax ay az gx gy gz\n";
  for (const auto& m : imu_stream(s)) {
    char line[256];
    std::snprintf(line, sizeof line, "%.9f %.12f %.12f %.12f %.12f %.12f %.12f\n", m.timestamp, m.accel.x(),
                  m.accel.y(), m.accel.z(), m.gyro.x(), m.gyro.y(), m.gyro.z());
    imu_out << line;
    ++res.imu_samples;
  }

  const auto [peak_w, peak_v] = peak_speeds(s);
  const Mat3 R0t = s.trajectory.pose(s.start_time).rotation().transpose();
  SequenceMetadata& m = res.metadata;
  m.name = s.name;
  m.config = s.config;
  m.config.gravity_world = R0t * s.config.gravity_world;  // expressed in the first camera frame
  m.initial_velocity = R0t * imu_velocity(s.trajectory, s.start_time, s.config.imu_extrinsic);
  m.motion = motion_label(peak_w, peak_v);
  m.peak_angular_velocity = peak_w;
  m.peak_linear_velocity = peak_v;
  std::ofstream(out_dir / "sequence.json") << to_json(m).dump(2) << "\n";

  json cfg = {{"schema_version", 1}, {"sequence_dir", "."}, {"groundtruth", "groundtruth.txt"}};
  for (auto it = s.pipeline.begin(); it != s.pipeline.end(); ++it) cfg[it.key()] = *it;
  std::ofstream(out_dir / "config.json") << cfg.dump(2) << "\n";
  return res;
}

}  // namespace fastfusion::synth
